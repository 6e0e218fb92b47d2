"""
How the branches cooperate.

Two regularizers act on top of the per-head CTR losses:

- Branch co-teaching. On a sample where branch ``i`` is strong (its BCE is
  below ``-log(0.5)``) and branch ``j`` is weak (its BCE is above it), the
  stop-gradient probability of ``i`` is used as a soft label for ``j``. The
  summed soft-label losses are divided by the number of selected
  (sample, pair) entries.

- Moderate differentiation. Each unordered pair of branches owns one
  d x d matrix ``W``; the reverse direction uses its transpose. The loss
  asks ``z_i @ W`` to match ``z_j`` while keeping ``W`` orthogonal, so the
  branch latents may differ, but only by a rotation.

The fusion head takes the mean of the branch latents and takes part in the
CTR loss only.

"""

import logging
from collections import namedtuple
from itertools import combinations

import numpy as np

from .branches import BRANCHES, HEADS
from .errors import ConfigError
from .immutable import ImmutableObject, as_float
from .numerics import (EPS_PROB, Matrix, add, bce, bce_value, clip, clip_min,
                       concat_cols, divide, fsum, l2_sq, matmul, mean_all,
                       mean_cols_stack, row_norms, scale, stop_gradient, sub,
                       take_rows, transpose)

logger = logging.getLogger(__name__)

# The strong/weak threshold: the BCE of an uninformative prediction p = 0.5.
TAU = -float(np.log(np.float64(0.5)))
EPS_COUNT = 1e-8

NO_DISCRIMINATION = 'no_discrimination'
WEAK_TO_STRONG = 'weak_to_strong'
STRONG_TO_WEAK = 'strong_to_weak'
MAX_DIFFERENCE = 'max_difference'
MIN_DIFFERENCE = 'min_difference'
MODERATE = 'moderate'
VARIANTS = (NO_DISCRIMINATION, WEAK_TO_STRONG, STRONG_TO_WEAK,
            MAX_DIFFERENCE, MIN_DIFFERENCE, MODERATE)

MDR_NORMS = ('squared', 'euclidean')

class CoopConfig(ImmutableObject):
    """
    Weights and settings of the cooperation losses.

    `alpha` weights the co-teaching loss and `beta` the differentiation
    loss. `mdr_norm` is ``'squared'`` (squared Frobenius norms) or
    ``'euclidean'`` (per-sample unsquared norms). `max_diff_floor` bounds
    the negated latent distance of the max-difference variant from below.

    >>> from mbcnet import CoopConfig
    >>> CoopConfig()
    CoopConfig(0.1, 0.1, 'squared', -10.0)

    """
    __slots__ = ()

    def _typecheck(self, alpha=0.1, beta=0.1, mdr_norm='squared', max_diff_floor=-10.0):
        alpha = as_float(alpha, 'coop.alpha', minimum=0.0)
        beta = as_float(beta, 'coop.beta', minimum=0.0)
        if mdr_norm not in MDR_NORMS:
            raise ConfigError('coop.mdr_norm', f"must be one of {', '.join(MDR_NORMS)}, got {mdr_norm!r}")
        max_diff_floor = as_float(max_diff_floor, 'coop.max_diff_floor')
        if max_diff_floor > 0:
            raise ConfigError('coop.max_diff_floor', f"must be <= 0, got {max_diff_floor}")
        return (alpha, beta, mdr_norm, max_diff_floor)

    alpha = property(lambda self: self.args[0])
    beta = property(lambda self: self.args[1])
    mdr_norm = property(lambda self: self.args[2])
    max_diff_floor = property(lambda self: self.args[3])

    @property
    def threshold(self):
        return TAU

    @property
    def eps_count(self):
        return EPS_COUNT

    def to_dict(self):
        return {'alpha': self.alpha, 'beta': self.beta, 'mdr_norm': self.mdr_norm,
                'max_diff_floor': self.max_diff_floor}

    @classmethod
    def from_dict(cls, d):
        if not isinstance(d, dict):
            raise ConfigError('coop', "must be a mapping")
        unknown = set(d) - {'alpha', 'beta', 'mdr_norm', 'max_diff_floor'}
        if unknown:
            raise ConfigError('coop', f"unknown keys {sorted(unknown)}")
        return cls(**d)

def check_variant(variant):
    if variant not in VARIANTS:
        raise ConfigError('train.variant', f"unknown variant {variant!r}, expected one of {', '.join(VARIANTS)}")
    return variant

def branch_pairs(branches):
    """
    The unordered branch pairs, in branch order.

    >>> from mbcnet.cooperation import branch_pairs
    >>> branch_pairs(['efgc', 'deep', 'cross'])
    [('efgc', 'deep'), ('efgc', 'cross'), ('deep', 'cross')]

    """
    return list(combinations(branches, 2))

def transform_name(i, j):
    return f'coop/W/{i}-{j}'

def init_transforms(branches, d):
    """
    One d x d identity matrix per unordered branch pair.
    """
    return {transform_name(i, j): np.eye(d) for i, j in branch_pairs(branches)}

def transform(params, i, j):
    """
    W^ij. Only one matrix is stored per pair; W^ji is its transpose.
    """
    name = transform_name(i, j)
    if name in params:
        return params[name]
    return transpose(params[transform_name(j, i)])

def orthogonality_gap(W):
    """
    ``||W @ W.T - I||_F`` of a plain array.
    """
    W = np.asarray(W)
    return float(np.linalg.norm(W @ W.T - np.eye(W.shape[0])))

def _values(p):
    return (p.value if isinstance(p, Matrix) else np.asarray(p, dtype=np.float64)).reshape(-1)

def classify_disagreement(p_i, p_j, y, tau=TAU):
    """
    Return the boolean vectors ``(I_ij, I_ji)``.

    ``I_ij`` is true where branch i is strong and branch j is weak, with
    strict inequalities on both sides of `tau`, so a prediction of exactly
    0.5 is never strong or weak.

    >>> from mbcnet.cooperation import classify_disagreement
    >>> I_ij, I_ji = classify_disagreement([0.9, 0.9, 0.5], [0.3, 0.9, 0.1], [1, 1, 1])
    >>> I_ij.tolist(), I_ji.tolist()
    ([True, False, False], [False, False, False])

    """
    y = _values(y)
    loss_i = bce_value(_values(p_i), y)
    loss_j = bce_value(_values(p_j), y)
    return (loss_i < tau) & (loss_j > tau), (loss_j < tau) & (loss_i > tau)

class DisagreementMask:
    """
    The indicators of every ordered branch pair on one batch.

    `indicators` maps ``(teacher, student)`` to a boolean vector, true on the
    samples where the teacher is strong and the student weak.
    """
    def __init__(self, indicators):
        self.indicators = indicators

    @classmethod
    def from_probabilities(cls, probabilities, y, tau=TAU, force=False):
        """
        Classify every pair of `probabilities` (a dict from branch to B x 1
        probabilities). With `force`, every indicator is true.
        """
        indicators = {}
        for i, j in branch_pairs(list(probabilities)):
            if force:
                n = len(_values(probabilities[i]))
                I_ij = I_ji = np.ones(n, dtype=bool)
            else:
                I_ij, I_ji = classify_disagreement(probabilities[i], probabilities[j], y, tau)
            indicators[i, j] = I_ij
            indicators[j, i] = I_ji
        return cls(indicators)

    @property
    def count(self):
        """
        C, the number of true entries over all ordered pairs.
        """
        return int(sum(int(v.sum()) for v in self.indicators.values()))

    def __repr__(self):
        return f"DisagreementMask(count={self.count})"

def bct_loss(probabilities, y, variant=STRONG_TO_WEAK, tau=TAU, teachers=None):
    """
    The branch co-teaching loss, as a 1 x 1 Matrix.

    `probabilities` maps each cooperating branch to its B x 1 probability
    matrix. For every ordered pair ``(i, j)`` and every sample where i is
    strong and j is weak, the BCE of ``p_j`` against the soft label
    ``stop_gradient(p_i)`` is added; the sum is divided by ``C + 1e-8``.

    With ``variant='weak_to_strong'`` the weak prediction becomes the soft
    label for the strong branch instead, and with
    ``variant='no_discrimination'`` every sample is selected in both
    directions. Returns an untaped zero when nothing is selected.

    `teachers`, if given, maps the same branches to the probabilities used
    for the selection and the soft labels, for instance values frozen at
    another parameter point when checking gradients numerically.

    >>> from mbcnet.cooperation import bct_loss
    >>> round(bct_loss({'efgc': [[0.9]], 'deep': [[0.3]]}, [1]).item(), 4)
    1.1192

    """
    probabilities = {b: (p if isinstance(p, Matrix) else Matrix(p))
                     for b, p in probabilities.items()}
    teachers = probabilities if teachers is None else {
        b: (p if isinstance(p, Matrix) else Matrix(p)) for b, p in teachers.items()}
    y = _values(y)
    mask = DisagreementMask.from_probabilities(teachers, y, tau,
                                               force=variant == NO_DISCRIMINATION)
    pieces = []
    for i, j in branch_pairs(list(probabilities)):
        for teacher, student in ((i, j), (j, i)):
            idx = np.flatnonzero(mask.indicators[teacher, student])
            if not idx.size:
                continue
            if variant == WEAK_TO_STRONG:
                teacher, student = student, teacher
            label = clip(stop_gradient(take_rows(teachers[teacher], idx)),
                         EPS_PROB, 1 - EPS_PROB)
            pieces.append(transpose(bce(take_rows(probabilities[student], idx), label)))
    count = mask.count
    if not pieces:
        return Matrix([[0.0]])
    return divide(fsum(concat_cols(pieces)), count + EPS_COUNT)

def _pair_distance(a, b, norm):
    # Per-batch mean of the squared (or unsquared) residual norm
    r = sub(a, b)
    if norm == 'euclidean':
        return mean_all(row_norms(r))
    return divide(l2_sq(r), r.rows)

def mdr_loss(latents, params, norm='squared'):
    """
    The moderate-differentiation loss, as a 1 x 1 Matrix.

    For every ordered pair ``i != j`` of the branches in `latents`, adds

    .. code:: python

       ||z_i @ W_ij - z_j||**2 + ||z_i @ W_ij @ W_ij.T - z_i||**2

    averaged over the batch, and divides by K(K - 1). `params` supplies the
    transformation matrices (see :func:`transform`).

    >>> from mbcnet.cooperation import mdr_loss
    >>> import numpy as np
    >>> mdr_loss({'efgc': [[1, 0]], 'deep': [[0, 1]]},
    ...          {'coop/W/efgc-deep': np.eye(2)}).item()
    2.0

    """
    latents = {b: (z if isinstance(z, Matrix) else Matrix(z)) for b, z in latents.items()}
    params = {n: (w if isinstance(w, Matrix) else Matrix(w)) for n, w in params.items()}
    branches = list(latents)
    K = len(branches)
    terms = []
    for i in branches:
        for j in branches:
            if i == j:
                continue
            W = transform(params, i, j)
            mapped = matmul(latents[i], W)
            terms.append(_pair_distance(mapped, latents[j], norm))
            terms.append(_pair_distance(matmul(mapped, transpose(W)), latents[i], norm))
    total = terms[0]
    for t in terms[1:]:
        total = add(total, t)
    return divide(total, K*(K - 1))

def latent_distance(latents):
    """
    Mean over ordered pairs ``i != j`` of the batch-averaged squared distance
    ``||z_i - z_j||**2``.
    """
    latents = {b: (z if isinstance(z, Matrix) else Matrix(z)) for b, z in latents.items()}
    branches = list(latents)
    K = len(branches)
    terms = [_pair_distance(latents[i], latents[j], 'squared')
             for i in branches for j in branches if i != j]
    total = terms[0]
    for t in terms[1:]:
        total = add(total, t)
    return divide(total, K*(K - 1))

def fuse(latents):
    """
    z^fusion, the elementwise mean of the branch latents.
    """
    return mean_cols_stack(list(latents))

LossBreakdown = namedtuple('LossBreakdown',
                           ['total', 'ctr', 'bct', 'mdr', 'count', 'head_ctr', 'clipped'])
LossBreakdown.__doc__ = """
The training objective of one batch.

`total` is the taped 1 x 1 Matrix to differentiate. `ctr`, `bct` and `mdr`
are the unweighted components as floats, with ``total == ctr + alpha*bct +
beta*mdr``. `count` is C, `head_ctr` maps each head to its mean BCE, and
`clipped` tells whether the max-difference floor was active.
"""

def total_loss(outputs, y, config, params, variant=MODERATE):
    """
    The training objective of one batch.

    `outputs` maps each head (fusion plus the active branches) to its
    :class:`~.BranchOutput`. The objective is the sum of the per-head mean
    BCE plus ``alpha*L_BCT + beta*L_MDR``; a term whose weight is zero is
    not computed and reported as 0.
    """
    check_variant(variant)
    y_matrix = Matrix(_values(y).reshape((-1, 1)))
    head_losses = {}
    ctr = None
    for head in HEADS:
        if head not in outputs:
            continue
        loss = mean_all(bce(outputs[head].probability, y_matrix))
        head_losses[head] = loss.item()
        ctr = loss if ctr is None else add(ctr, loss)

    branches = [b for b in BRANCHES if b in outputs]
    total = ctr
    bct_value = mdr_value = 0.0
    count = 0
    clipped = False
    if config.alpha != 0:
        probabilities = {b: outputs[b].probability for b in branches}
        bct = bct_loss(probabilities, y, variant=STRONG_TO_WEAK if variant == MODERATE else variant)
        count = DisagreementMask.from_probabilities(
            probabilities, y, force=variant == NO_DISCRIMINATION).count
        bct_value = bct.item()
        total = add(total, scale(bct, config.alpha))
    if config.beta != 0:
        latents = {b: outputs[b].latent for b in branches}
        if variant == MAX_DIFFERENCE:
            distance = scale(latent_distance(latents), -1.0)
            clipped = distance.item() < config.max_diff_floor
            if clipped:
                logger.info("max_difference distance %g clipped at %g",
                            distance.item(), config.max_diff_floor)
            mdr = clip_min(distance, config.max_diff_floor)
        elif variant == MIN_DIFFERENCE:
            mdr = latent_distance(latents)
        else:
            mdr = mdr_loss(latents, params, config.mdr_norm)
        mdr_value = mdr.item()
        total = add(total, scale(mdr, config.beta))
    return LossBreakdown(total, ctr.item(), bct_value, mdr_value, count, head_losses, clipped)

def variant_total_loss(variant, outputs, y, config, params):
    """
    :func:`total_loss` for a named cooperation variant.

    ``strong_to_weak`` and ``moderate`` are the default objective;
    ``no_discrimination`` and ``weak_to_strong`` change the co-teaching
    selection; ``max_difference`` and ``min_difference`` replace the
    differentiation loss with the (negated, floored) or plain mean pairwise
    latent distance.
    """
    return total_loss(outputs, y, config, params, variant=check_variant(variant))

