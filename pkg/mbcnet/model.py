"""
The full multi-branch model.

:class:`MBCNet` owns the parameter arrays and wires the pieces together:
embeddings feed the EFGC branch (through the feature groups) and the Deep
and Cross branches (through the concatenation of all fields); each branch
output goes through the shared top MLP; the fusion latent is the mean of the
branch latents; and every latent has its own logit head.

Any subset of at least two branches can be active. Removing a branch drops
its parameters, its head, and its transformation matrices.

"""

import logging

import numpy as np

from .branches import (BRANCHES, CROSS, DEEP, EFGC, FUSION, HEADS, BranchOutput,
                       CrossConfig, DeepConfig, EfgcConfig, SharedTopConfig,
                       branch_logit, cross_forward, deep_forward,
                       efgc_forward, init_cross, init_deep, init_efgc,
                       init_heads, init_shared_top, shared_top)
from .cooperation import (branch_pairs, fuse, init_transforms, orthogonality_gap,
                          total_loss, transform_name)
from .errors import ConfigError
from .features import concat_all, embed_batch, group_concat, init_embeddings
from .immutable import ImmutableObject
from .numerics import Tape, constant

logger = logging.getLogger(__name__)

PROFILES = {
    'desk': {
        'efgc': EfgcConfig((64, 16), 32),
        'deep': DeepConfig((128, 64, 32)),
        'cross': CrossConfig(2, 2, 4, 32),
        'top': SharedTopConfig((32, 16, 8)),
    },
    'paper': {
        'efgc': EfgcConfig(),
        'deep': DeepConfig(),
        'cross': CrossConfig(),
        'top': SharedTopConfig(),
    },
}

SECTIONS = {'efgc': EfgcConfig, 'deep': DeepConfig, 'cross': CrossConfig, 'top': SharedTopConfig}

# Component of each parameter-name prefix, for parameter accounting
COMPONENTS = {
    'embedding': 'embeddings',
    'efgc': 'efgc',
    'deep': 'deep',
    'cross': 'cross',
    'top': 'shared_top',
    'head': 'heads',
    'coop': 'transforms',
}

class ModelConfig(ImmutableObject):
    """
    The model architecture.

    `profile` (``'desk'`` or ``'paper'``) supplies the layer sizes of every
    section that is given as `None`. `branches` lists the active branches.

    >>> from mbcnet import ModelConfig
    >>> ModelConfig('desk').top.d
    8
    >>> ModelConfig('paper').deep.hidden
    (2048, 1024, 512, 512, 512)

    """
    __slots__ = ()

    def _typecheck(self, profile='desk', efgc=None, deep=None, cross=None, top=None,
                   branches=BRANCHES):
        if profile not in PROFILES:
            raise ConfigError('model.profile', f"must be one of {', '.join(PROFILES)}, got {profile!r}")
        sections = {}
        for name, value in zip(SECTIONS, (efgc, deep, cross, top)):
            if value is None:
                value = PROFILES[profile][name]
            elif isinstance(value, dict):
                value = SECTIONS[name].from_dict(value)
            elif not isinstance(value, SECTIONS[name]):
                raise TypeError(f"model.{name} must be a {SECTIONS[name].__name__}")
            sections[name] = value
        if isinstance(branches, str) or not hasattr(branches, '__iter__'):
            raise TypeError("model.branches must be a sequence of branch names")
        branches = tuple(branches)
        for b in branches:
            if b not in BRANCHES:
                raise ConfigError('model.branches', f"unknown branch {b!r}, expected one of {', '.join(BRANCHES)}")
        if len(set(branches)) != len(branches):
            raise ConfigError('model.branches', "branches must be unique")
        if len(branches) < 2:
            raise ConfigError('model.branches',
                              f"at least 2 branches are needed for cooperation, got {len(branches)}")
        # Canonical order
        branches = tuple(b for b in BRANCHES if b in branches)
        return (profile, sections['efgc'], sections['deep'], sections['cross'],
                sections['top'], branches)

    profile = property(lambda self: self.args[0])
    efgc = property(lambda self: self.args[1])
    deep = property(lambda self: self.args[2])
    cross = property(lambda self: self.args[3])
    top = property(lambda self: self.args[4])
    branches = property(lambda self: self.args[5])

    @property
    def heads(self):
        return (FUSION,) + self.branches

    def reduction_widths(self):
        widths = {EFGC: self.efgc.reduce, DEEP: self.deep.out_width, CROSS: self.cross.reduce}
        return {b: widths[b] for b in self.branches}

    def validate(self, schema, groups):
        """
        Check the architecture against the feature schema and groups.
        """
        if EFGC in self.branches:
            groups.validate(schema)
        widths = self.reduction_widths()
        if len(set(widths.values())) != 1:
            raise ConfigError('model', "the branch output widths must agree so one shared top "
                              f"layer applies, got {widths}")
        if CROSS in self.branches and self.cross.style == 'mixture' and self.cross.rank > schema.width:
            raise ConfigError('model.cross.rank',
                              f"must be <= the input width {schema.width}, got {self.cross.rank}")
        return self

    def to_dict(self):
        return {'profile': self.profile, 'efgc': self.efgc.to_dict(),
                'deep': self.deep.to_dict(), 'cross': self.cross.to_dict(),
                'top': self.top.to_dict(), 'branches': list(self.branches)}

    @classmethod
    def from_dict(cls, d):
        if not isinstance(d, dict):
            raise ConfigError('model', "must be a mapping")
        unknown = set(d) - {'profile', 'branches', *SECTIONS}
        if unknown:
            raise ConfigError('model', f"unknown keys {sorted(unknown)}")
        return cls(**d)

def count_parameters(params):
    """
    Number of scalar parameters per model component, plus ``'total'``.
    """
    counts = {component: 0 for component in COMPONENTS.values()}
    for name, value in params.items():
        component = COMPONENTS.get(name.split('/')[0], 'other')
        counts[component] = counts.get(component, 0) + int(np.size(value))
    counts['total'] = sum(counts.values())
    return counts

class MBCNet:
    """
    The multi-branch model: a schema, feature groups, an architecture and
    the parameter arrays.

    Use :meth:`init` for a freshly initialized model. :meth:`forward` and
    :meth:`loss` never mutate `params`.
    """
    def __init__(self, schema, groups, config, params):
        config.validate(schema, groups)
        self.schema = schema
        self.groups = groups
        self.config = config
        self.params = params

    @classmethod
    def init(cls, schema, groups, config, seed=0):
        """
        Initialize all parameters from `seed`.
        """
        config.validate(schema, groups)
        rng = np.random.default_rng(seed)
        params = init_embeddings(schema, rng)
        F = schema.width
        if EFGC in config.branches:
            params.update(init_efgc(rng, groups.widths(schema), config.efgc))
        if DEEP in config.branches:
            params.update(init_deep(rng, F, config.deep))
        if CROSS in config.branches:
            params.update(init_cross(rng, F, config.cross))
        width = next(iter(config.reduction_widths().values()))
        params.update(init_shared_top(rng, width, config.top))
        params.update(init_heads(rng, config.top.d, config.heads))
        params.update(init_transforms(config.branches, config.top.d))
        return cls(schema, groups, config, params)

    def __repr__(self):
        return f"<MBCNet {'+'.join(self.config.branches)}, {count_parameters(self.params)['total']} parameters>"

    @property
    def branches(self):
        return self.config.branches

    def parameter_counts(self):
        return count_parameters(self.params)

    def check_params(self):
        """
        Raise :class:`~.ConfigError` unless `params` has exactly the
        parameters (names and shapes) this architecture needs.
        """
        expected = MBCNet.init(self.schema, self.groups, self.config).params
        if set(expected) != set(self.params):
            missing = sorted(set(expected) - set(self.params))
            extra = sorted(set(self.params) - set(expected))
            raise ConfigError('model', f"parameters do not match the architecture "
                              f"(missing {missing[:3]}, unexpected {extra[:3]})")
        for name, value in expected.items():
            if np.shape(self.params[name]) != value.shape:
                raise ConfigError('model', f"parameter {name!r} has shape {np.shape(self.params[name])}, "
                                  f"expected {value.shape}")
        return self

    def forward(self, batch, values=None):
        """
        Compute every head on `batch`.

        `values` maps parameter names to Matrix values (taped variables for
        training); it defaults to constants wrapping `params`. Returns a dict
        from head to :class:`~.BranchOutput`, fusion first.
        """
        if values is None:
            values = {name: constant(v) for name, v in self.params.items()}
        config = self.config
        embeddings = embed_batch(batch, values, self.schema)
        h = {}
        if EFGC in config.branches:
            h[EFGC] = efgc_forward(group_concat(embeddings, self.groups, self.schema), values, config.efgc)
        if DEEP in config.branches or CROSS in config.branches:
            e = concat_all(embeddings)
            if DEEP in config.branches:
                h[DEEP] = deep_forward(e, values, config.deep)
            if CROSS in config.branches:
                h[CROSS] = cross_forward(e, values, config.cross)
        latents = {b: shared_top(h[b], values, config.top) for b in config.branches}
        latents = {FUSION: fuse(list(latents.values())), **latents}
        outputs = {}
        for head in HEADS:
            if head in latents:
                logit, p = branch_logit(latents[head], values, head)
                outputs[head] = BranchOutput(head, latents[head], logit, p)
        return outputs

    def loss(self, batch, coop, variant='moderate'):
        """
        Record the objective of `batch` on a fresh tape and differentiate it.

        Returns the :class:`~.LossBreakdown` and a dict of gradients, one per
        parameter.
        """
        tape = Tape()
        values = {name: tape.variable(v, name) for name, v in self.params.items()}
        outputs = self.forward(batch, values)
        breakdown = total_loss(outputs, batch.labels, coop, values, variant)
        grads = tape.backward(breakdown.total)
        return breakdown, grads

    def predict(self, batch):
        """
        Probabilities of every head on `batch`, as 1-D arrays.
        """
        return {head: out.probability.value.reshape(-1)
                for head, out in self.forward(batch).items()}

    def orthogonality_gaps(self):
        """
        ``||W W^T - I||_F`` of every transformation matrix, by pair name.
        """
        return {f'{i}-{j}': orthogonality_gap(self.params[transform_name(i, j)])
                for i, j in branch_pairs(self.branches)}

    def copy(self):
        return MBCNet(self.schema, self.groups, self.config,
                      {name: value.copy() for name, value in self.params.items()})

    def with_params(self, params):
        return MBCNet(self.schema, self.groups, self.config, params)
