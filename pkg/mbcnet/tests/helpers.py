import numpy as np
import pytest

from hypothesis.strategies import (composite, floats, integers, lists,
                                   sampled_from)
from hypothesis.extra.numpy import arrays

from ..branches import BRANCHES, CrossConfig, DeepConfig, EfgcConfig, SharedTopConfig
from ..config import DataConfig, RunConfig
from ..cooperation import CoopConfig, bct_loss, total_loss
from ..features import FeatureField, FeatureSchema, GroupSpec
from ..model import MBCNet, ModelConfig
from ..numerics import add, scale
from ..synthetic import GeneratorConfig, PlantedPair, generate_datasets
from ..training import TrainConfig

# A schema with one field of every kind, small enough that every gradient
# entry can be checked numerically.

TINY_SCHEMA = FeatureSchema([
    FeatureField('user_id', 'categorical', 7, 3),
    FeatureField('item_id', 'categorical', 9, 3),
    FeatureField('tags', 'multi_valued', 5, 2),
    FeatureField('price', 'numerical', embed_dim=2),
])

TINY_GROUPS = GroupSpec([
    ('user_item', ['user_id', 'item_id']),
    ('item_profile', ['item_id', 'tags', 'price']),
])

TINY_MODEL = ModelConfig('desk', efgc=EfgcConfig((6, 4), 5), deep=DeepConfig((8, 5)),
                         cross=CrossConfig(2, 2, 3, 5), top=SharedTopConfig((6, 4)))

TINY_GENERATOR = GeneratorConfig(planted=[PlantedPair(('user_id', 'item_id'), 2.0)],
                                 base_rate=0.3, n_train=400, n_val=200, n_test=200,
                                 n_categories=3, seed=1)

def tiny_config(**sections):
    """
    A RunConfig on the tiny schema. Keyword arguments replace sections, and
    ``train``/``coop`` may also be given as dicts of changed settings.
    """
    config = RunConfig(TINY_SCHEMA, TINY_GROUPS, TINY_MODEL,
                       TrainConfig(batch_size=32, max_epochs=2, patience=2, lr=0.01),
                       CoopConfig(), DataConfig(generator=TINY_GENERATOR))
    for name, value in sections.items():
        if isinstance(value, dict):
            value = getattr(config, name).replace(**value)
        config = config.replace(**{name: value})
    return config.validate()

def tiny_data(generator=TINY_GENERATOR):
    return generate_datasets(TINY_SCHEMA, generator)

def tiny_model(seed=0, config=TINY_MODEL):
    return MBCNet.init(TINY_SCHEMA, TINY_GROUPS, config, seed=seed)

def frozen_objective(model, batch, coop, variant='moderate'):
    """
    The training objective of `model` on `batch` as a function of the
    parameter values, with the co-teaching soft labels frozen at the
    current parameters.

    Central differences perturb the teacher probabilities as well, which the
    stop-gradient hides from the analytic gradient, so the numerical side of
    a gradient check has to hold them fixed.
    """
    frozen = {b: out.probability for b, out in model.forward(batch).items() if b in BRANCHES}
    no_bct = coop.replace(alpha=0.0)

    def f(values):
        outputs = model.forward(batch, values)
        total = total_loss(outputs, batch.labels, no_bct, values, variant).total
        if coop.alpha == 0:
            return total
        students = {b: outputs[b].probability for b in frozen}
        bct_variant = 'strong_to_weak' if variant == 'moderate' else variant
        bct = bct_loss(students, batch.labels, bct_variant, teachers=frozen)
        return add(total, scale(bct, coop.alpha))

    return f

# Hypothesis strategies

GRID = [k/20 for k in range(1, 20)]

probabilities = floats(1e-3, 1 - 1e-3)
labels = integers(0, 1)

def matrices(rows=integers(1, 5), cols=integers(1, 5), elements=floats(-3, 3)):
    @composite
    def _matrices(draw):
        return draw(arrays(np.float64, (draw(rows), draw(cols)), elements=elements))
    return _matrices()

@composite
def probability_batches(draw, branches=BRANCHES, max_size=8, grid=False):
    """
    A dict of B x 1 branch probabilities and a label vector of length B.
    """
    B = draw(integers(1, max_size))
    element = sampled_from(GRID) if grid else probabilities
    p = {b: np.array(draw(lists(element, min_size=B, max_size=B))).reshape((-1, 1))
         for b in branches}
    y = np.array(draw(lists(labels, min_size=B, max_size=B)))
    return p, y

def brute_force_auc(scores, y):
    """
    The fraction of (positive, negative) pairs ranked correctly, ties
    counting one half.
    """
    pos = [s for s, l in zip(scores, y) if l == 1]
    neg = [s for s, l in zip(scores, y) if l == 0]
    total = 0.0
    for a in pos:
        for b in neg:
            total += 1.0 if a > b else 0.5 if a == b else 0.0
    return total/(len(pos)*len(neg))

# Slow tests only run with ``pytest --run-slow``
slow = pytest.mark.slow
