"""
The feature-interaction branches, the shared top layer and the logit heads.

All forward functions take a `params` mapping from parameter names to
:class:`~.Matrix` values and read the parameters they need by name, so the
same functions serve training (taped variables) and inference (constants).
Parameter names are hierarchical::

    efgc/group<i>/layer<k>/W, efgc/group<i>/layer<k>/b, efgc/reduce/W, ...
    deep/layer<k>/W, deep/layer<k>/b
    cross/layer<l>/expert<k>/U, cross/layer<l>/expert<k>/V,
    cross/layer<l>/bias, cross/layer<l>/gate, cross/layer<l>/w,
    cross/reduce/W, cross/reduce/b
    top/layer<k>/W, top/layer<k>/b
    head/<branch>/W, head/<branch>/b

"""

from collections import namedtuple

import numpy as np

from .errors import ConfigError
from .immutable import ImmutableObject, as_sizes, operator_count
from .numerics import (affine, concat_cols, matmul, mul, add, relu, sigmoid,
                       slice_cols, softmax_rows, transpose)

EFGC = 'efgc'
DEEP = 'deep'
CROSS = 'cross'
FUSION = 'fusion'
BRANCHES = (EFGC, DEEP, CROSS)
HEADS = (FUSION, EFGC, DEEP, CROSS)

# Names used in printed tables
DISPLAY_NAMES = {FUSION: 'MBC', EFGC: 'EFGC', DEEP: 'Deep', CROSS: 'Cross'}

CROSS_STYLES = ('mixture', 'vector')

BranchOutput = namedtuple('BranchOutput', ['branch', 'latent', 'logit', 'probability'])
BranchOutput.__doc__ = """
The outputs of one head: the B x d latent z, and the B x 1 logit and
probability (the sigmoid of the logit).
"""

class EfgcConfig(ImmutableObject):
    """
    Layer sizes of the EFGC branch: the hidden sizes of every group MLP and
    the width of the reduction layer applied to their concatenation.

    >>> from mbcnet import EfgcConfig
    >>> EfgcConfig()
    EfgcConfig((1024, 128), 512)

    """
    __slots__ = ()

    def _typecheck(self, hidden=(1024, 128), reduce=512):
        return (as_sizes(hidden, 'model.efgc.hidden'),
                operator_count(reduce, 'model.efgc.reduce'))

    @property
    def hidden(self):
        return self.args[0]

    @property
    def reduce(self):
        return self.args[1]

    def to_dict(self):
        return {'hidden': list(self.hidden), 'reduce': self.reduce}

    @classmethod
    def from_dict(cls, d):
        return cls(**_checked_keys(d, 'model.efgc', ('hidden', 'reduce')))

class CrossConfig(ImmutableObject):
    """
    Shape of the low-rank Cross branch.

    `style` is ``'mixture'`` for the gated mixture of low-rank experts, or
    ``'vector'`` for the original cross layer ``x0*(xl@w) + b + xl``, which
    ignores `num_experts` and `rank`.

    >>> from mbcnet import CrossConfig
    >>> CrossConfig()
    CrossConfig(2, 2, 16, 512, 'mixture')

    """
    __slots__ = ()

    def _typecheck(self, num_experts=2, layers=2, rank=16, reduce=512, style='mixture'):
        if style not in CROSS_STYLES:
            raise ConfigError('model.cross.style', f"must be one of {', '.join(CROSS_STYLES)}, got {style!r}")
        return (operator_count(num_experts, 'model.cross.num_experts'),
                operator_count(layers, 'model.cross.layers', minimum=0),
                operator_count(rank, 'model.cross.rank'),
                operator_count(reduce, 'model.cross.reduce'),
                style)

    num_experts = property(lambda self: self.args[0])
    layers = property(lambda self: self.args[1])
    rank = property(lambda self: self.args[2])
    reduce = property(lambda self: self.args[3])
    style = property(lambda self: self.args[4])

    def to_dict(self):
        return {'num_experts': self.num_experts, 'layers': self.layers,
                'rank': self.rank, 'reduce': self.reduce, 'style': self.style}

    @classmethod
    def from_dict(cls, d):
        return cls(**_checked_keys(d, 'model.cross',
                                   ('num_experts', 'layers', 'rank', 'reduce', 'style')))

class DeepConfig(ImmutableObject):
    """
    Hidden sizes of the Deep branch MLP. The last size is its output width.
    """
    __slots__ = ()

    def _typecheck(self, hidden=(2048, 1024, 512, 512, 512)):
        return (as_sizes(hidden, 'model.deep.hidden'),)

    @property
    def hidden(self):
        return self.args[0]

    @property
    def out_width(self):
        return self.hidden[-1]

    def to_dict(self):
        return {'hidden': list(self.hidden)}

    @classmethod
    def from_dict(cls, d):
        return cls(**_checked_keys(d, 'model.deep', ('hidden',)))

class SharedTopConfig(ImmutableObject):
    """
    Hidden sizes of the shared top MLP. The last size is the latent width d.
    """
    __slots__ = ()

    def _typecheck(self, hidden=(512, 256, 128)):
        hidden = as_sizes(hidden, 'model.top.hidden')
        if hidden[-1] < 2:
            raise ConfigError('model.top.hidden', f"the latent width must be >= 2, got {hidden[-1]}")
        return (hidden,)

    @property
    def hidden(self):
        return self.args[0]

    @property
    def d(self):
        return self.hidden[-1]

    def to_dict(self):
        return {'hidden': list(self.hidden)}

    @classmethod
    def from_dict(cls, d):
        return cls(**_checked_keys(d, 'model.top', ('hidden',)))

def _checked_keys(d, section, allowed):
    if not isinstance(d, dict):
        raise ConfigError(section, f"must be a mapping, got {type(d).__name__}")
    unknown = set(d) - set(allowed)
    if unknown:
        raise ConfigError(section, f"unknown keys {sorted(unknown)}")
    return d

# Initializers

def he_uniform(rng, fan_in, fan_out):
    bound = np.sqrt(6/fan_in)
    return rng.uniform(-bound, bound, (fan_in, fan_out))

def xavier_normal(rng, fan_in, fan_out):
    return rng.normal(0.0, np.sqrt(2/(fan_in + fan_out)), (fan_in, fan_out))

def init_mlp(rng, prefix, in_width, sizes):
    params = {}
    for k, out_width in enumerate(sizes):
        params[f'{prefix}/layer{k}/W'] = he_uniform(rng, in_width, out_width)
        params[f'{prefix}/layer{k}/b'] = np.zeros((1, out_width))
        in_width = out_width
    return params

def init_linear(rng, prefix, in_width, out_width):
    return {f'{prefix}/W': he_uniform(rng, in_width, out_width),
            f'{prefix}/b': np.zeros((1, out_width))}

def init_efgc(rng, group_widths, config):
    params = {}
    for i, width in enumerate(group_widths):
        params.update(init_mlp(rng, f'efgc/group{i}', width, config.hidden))
    params.update(init_linear(rng, 'efgc/reduce', len(group_widths)*config.hidden[-1],
                              config.reduce))
    return params

def init_deep(rng, width, config):
    return init_mlp(rng, 'deep', width, config.hidden)

def init_cross(rng, width, config):
    params = {}
    for l in range(config.layers):
        prefix = f'cross/layer{l}'
        if config.style == 'vector':
            params[f'{prefix}/w'] = xavier_normal(rng, width, 1)
        else:
            for k in range(config.num_experts):
                params[f'{prefix}/expert{k}/U'] = xavier_normal(rng, width, config.rank)
                params[f'{prefix}/expert{k}/V'] = xavier_normal(rng, width, config.rank)
            params[f'{prefix}/gate'] = xavier_normal(rng, width, config.num_experts)
        params[f'{prefix}/bias'] = np.zeros((1, width))
    params.update(init_linear(rng, 'cross/reduce', width, config.reduce))
    return params

def init_shared_top(rng, width, config):
    return init_mlp(rng, 'top', width, config.hidden)

def init_heads(rng, d, heads=HEADS):
    params = {}
    for head in heads:
        params.update(init_linear(rng, f'head/{head}', d, 1))
    return params

# Forward

def mlp_forward(x, params, prefix, n_layers):
    """
    An MLP with ReLU between layers and a linear last layer.
    """
    for k in range(n_layers):
        x = affine(x, params[f'{prefix}/layer{k}/W'], params[f'{prefix}/layer{k}/b'])
        if k < n_layers - 1:
            x = relu(x)
    return x

def efgc_forward(groups, params, config):
    """
    h^EFGC: every group matrix goes through its own MLP, and the
    concatenated group outputs are reduced by one linear layer.
    """
    if not groups:
        raise ConfigError('groups', "the EFGC branch needs at least one group")
    crossed = [mlp_forward(g, params, f'efgc/group{i}', len(config.hidden))
               for i, g in enumerate(groups)]
    return affine(concat_cols(crossed), params['efgc/reduce/W'], params['efgc/reduce/b'])

def deep_forward(e, params, config):
    """
    h^Deep: the Deep branch MLP applied to all concatenated embeddings.
    """
    return mlp_forward(e, params, 'deep', len(config.hidden))

def original_cross_layer(x0, xl, w, b):
    """
    The un-factored cross layer ``x0*(xl@w) + b + xl`` with `w` an F x 1
    column.

    >>> from mbcnet.branches import original_cross_layer
    >>> original_cross_layer([[1, 2]], [[1, 2]], [[1], [0]], [[0, 0]])
    Matrix([[2.0, 4.0]])

    """
    return add(add(mul(x0, matmul(xl, w)), b), xl)

def cross_layer(x0, xl, params, prefix, num_experts=None):
    """
    One gated mixture-of-low-rank-experts cross layer.

    Expert ``k`` computes ``x0*((xl@V_k)@U_k.T + bias)``; the experts are
    mixed with the row-wise softmax of ``xl@gate`` and the result is added
    to `xl`.
    """
    if num_experts is None:
        num_experts = sum(1 for name in params if name.startswith(f'{prefix}/expert')
                          and name.endswith('/U'))
    bias = params[f'{prefix}/bias']
    gate = softmax_rows(matmul(xl, params[f'{prefix}/gate']))
    out = xl
    for k in range(num_experts):
        low = matmul(matmul(xl, params[f'{prefix}/expert{k}/V']),
                     transpose(params[f'{prefix}/expert{k}/U']))
        expert = mul(x0, add(low, bias))
        out = add(out, mul(slice_cols(gate, k, k + 1), expert))
    return out

def cross_forward(e, params, config):
    """
    h^Cross: `config.layers` cross layers with x0 fixed to the input,
    followed by one linear reduction.
    """
    xl = e
    for l in range(config.layers):
        prefix = f'cross/layer{l}'
        if config.style == 'vector':
            xl = original_cross_layer(e, xl, params[f'{prefix}/w'], params[f'{prefix}/bias'])
        else:
            xl = cross_layer(e, xl, params, prefix, config.num_experts)
    return affine(xl, params['cross/reduce/W'], params['cross/reduce/b'])

def shared_top(h, params, config):
    """
    f_theta: the single top MLP applied with the same parameters to every
    branch's output.
    """
    return mlp_forward(h, params, 'top', len(config.hidden))

def branch_logit(z, params, head):
    """
    Return the logit and probability of `head` for the latent `z`.
    """
    logit = affine(z, params[f'head/{head}/W'], params[f'head/{head}/b'])
    return logit, sigmoid(logit)
