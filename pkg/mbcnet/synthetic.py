"""
Synthetic click data with planted field-pair interactions.

Labels are Bernoulli draws from a logistic model whose logit is

.. code:: python

   logit(base_rate) + sum(field effects) + sum(planted pair terms)

A field effect is a random per-id offset (mean-pooled for multi-valued
fields, a random linear form for numerical fields). A planted pair term for
fields ``(f, g)`` is ``strength*table[id_f, id_g]`` with `table` a random
lookup, optionally restricted to samples of one category. The lookup form
keeps the signal out of reach of any single branch's functional form.

Everything is drawn from one seeded PCG64 generator in a fixed order, so a
``(schema, config, seed)`` triple always produces the same files.

"""

import json
import logging
import os
from collections import namedtuple

import numpy as np
from scipy.special import expit, logit

from .errors import ConfigError, UndefinedAUCError
from .features import (CATEGORICAL, MULTI_VALUED, NUMERICAL, Dataset,
                       MultiValued, write_csv)
from .immutable import ImmutableObject, as_float, operator_count

logger = logging.getLogger(__name__)

SPLITS = ('train', 'val', 'test')

class PlantedPair(ImmutableObject):
    """
    A planted interaction between two categorical fields.

    >>> from mbcnet import PlantedPair
    >>> PlantedPair(('user_id', 'item_id'), 2.0)
    PlantedPair(('user_id', 'item_id'), 2.0, None)

    """
    __slots__ = ()

    def _typecheck(self, fields, strength=1.0, category=None):
        if isinstance(fields, str) or not hasattr(fields, '__iter__'):
            raise TypeError("PlantedPair fields must be a pair of field names")
        fields = tuple(fields)
        if len(fields) != 2 or not all(isinstance(f, str) for f in fields):
            raise ConfigError('data.generator.planted', f"expected a pair of field names, got {fields!r}")
        if fields[0] == fields[1]:
            raise ConfigError('data.generator.planted', f"a pair needs two distinct fields, got {fields!r}")
        strength = as_float(strength, 'data.generator.planted.strength', minimum=0.0)
        if category is not None:
            category = operator_count(category, 'data.generator.planted.category', minimum=0)
        return (fields, strength, category)

    @property
    def fields(self):
        return self.args[0]

    @property
    def strength(self):
        return self.args[1]

    @property
    def category(self):
        return self.args[2]

    def to_dict(self):
        d = {'fields': list(self.fields), 'strength': self.strength}
        if self.category is not None:
            d['category'] = self.category
        return d

    @classmethod
    def from_dict(cls, d):
        if not isinstance(d, dict):
            raise ConfigError('data.generator.planted', f"expected a mapping, got {d!r}")
        return cls(**d)

class GeneratorConfig(ImmutableObject):
    """
    Settings of the synthetic data generator.

    `field_effect_scale` is the standard deviation of the per-id field
    effects (0 disables them). Samples get a category tag drawn uniformly
    from ``range(n_categories)``. Multi-valued fields get between 0 and
    `max_multi` ids per sample.
    """
    __slots__ = ()

    def _typecheck(self, planted=(), base_rate=0.2, field_effect_scale=0.3,
                   n_train=20000, n_val=4000, n_test=4000, n_categories=1,
                   max_multi=3, seed=0):
        planted = tuple(p if isinstance(p, PlantedPair) else PlantedPair.from_dict(p)
                        for p in planted)
        base_rate = as_float(base_rate, 'data.generator.base_rate')
        if not 0 < base_rate < 1:
            raise ConfigError('data.generator.base_rate', f"must be in (0, 1), got {base_rate}")
        field_effect_scale = as_float(field_effect_scale, 'data.generator.field_effect_scale',
                                      minimum=0.0)
        n_train = operator_count(n_train, 'data.generator.n_train')
        n_val = operator_count(n_val, 'data.generator.n_val')
        n_test = operator_count(n_test, 'data.generator.n_test')
        n_categories = operator_count(n_categories, 'data.generator.n_categories')
        max_multi = operator_count(max_multi, 'data.generator.max_multi')
        seed = operator_count(seed, 'data.generator.seed', minimum=0)
        for p in planted:
            if p.category is not None and p.category >= n_categories:
                raise ConfigError('data.generator.planted',
                                  f"category {p.category} >= n_categories {n_categories}")
        return (planted, base_rate, field_effect_scale, n_train, n_val, n_test,
                n_categories, max_multi, seed)

    planted = property(lambda self: self.args[0])
    base_rate = property(lambda self: self.args[1])
    field_effect_scale = property(lambda self: self.args[2])
    n_train = property(lambda self: self.args[3])
    n_val = property(lambda self: self.args[4])
    n_test = property(lambda self: self.args[5])
    n_categories = property(lambda self: self.args[6])
    max_multi = property(lambda self: self.args[7])
    seed = property(lambda self: self.args[8])

    def sizes(self):
        return {'train': self.n_train, 'val': self.n_val, 'test': self.n_test}

    def validate(self, schema):
        for p in self.planted:
            for f in p.fields:
                if f not in schema.names:
                    raise ConfigError('data.generator.planted', f"unknown field {f!r}")
                if schema.field(f).kind != CATEGORICAL:
                    raise ConfigError('data.generator.planted',
                                      f"planted fields must be categorical, {f!r} is {schema.field(f).kind}")
        return self

    def to_dict(self):
        return {
            'planted': [p.to_dict() for p in self.planted],
            'base_rate': self.base_rate,
            'field_effect_scale': self.field_effect_scale,
            'n_train': self.n_train,
            'n_val': self.n_val,
            'n_test': self.n_test,
            'n_categories': self.n_categories,
            'max_multi': self.max_multi,
            'seed': self.seed,
        }

    @classmethod
    def from_dict(cls, d):
        if not isinstance(d, dict):
            raise ConfigError('data.generator', "must be a mapping")
        unknown = set(d) - set(cls().to_dict())
        if unknown:
            raise ConfigError('data.generator', f"unknown keys {sorted(unknown)}")
        return cls(**d)

class GroundTruth:
    """
    The generating model of a synthetic dataset. :meth:`logit` is the
    Bayes-optimal scorer.
    """
    def __init__(self, schema, config, intercept, field_effects, interactions):
        self.schema = schema
        self.config = config
        self.intercept = intercept
        self.field_effects = field_effects
        self.interactions = interactions

    def logit(self, dataset):
        z = np.full(len(dataset), self.intercept)
        for f in self.schema:
            effect = self.field_effects[f.name]
            col = dataset.columns[f.name]
            if f.kind == CATEGORICAL:
                z += effect[col]
            elif f.kind == MULTI_VALUED:
                lengths = np.diff(col.offsets)
                sums = np.zeros(len(dataset))
                np.add.at(sums, np.repeat(np.arange(len(dataset)), lengths), effect[col.ids])
                z += sums/np.maximum(lengths, 1)
            else:
                z += col @ effect
        for pair, table in zip(self.config.planted, self.interactions):
            f, g = pair.fields
            term = pair.strength*table[dataset.columns[f], dataset.columns[g]]
            if pair.category is not None:
                term = np.where(dataset.categories == pair.category, term, 0.0)
            z += term
        return z

    def probability(self, dataset):
        return expit(self.logit(dataset))

SyntheticData = namedtuple('SyntheticData', ['train', 'val', 'test', 'truth'])

def _draw_truth(schema, config, rng):
    field_effects = {}
    for f in schema:
        n = f.embed_dim if f.kind == NUMERICAL else f.vocab_size
        field_effects[f.name] = rng.normal(0.0, 1.0, n)*config.field_effect_scale
    interactions = []
    for pair in config.planted:
        f, g = (schema.field(name) for name in pair.fields)
        interactions.append(rng.normal(0.0, 1.0, (f.vocab_size, g.vocab_size)))
    return GroundTruth(schema, config, float(logit(config.base_rate)), field_effects, interactions)

def _draw_split(schema, config, truth, n, rng):
    columns = {}
    for f in schema:
        if f.kind == CATEGORICAL:
            columns[f.name] = rng.integers(0, f.vocab_size, n)
        elif f.kind == MULTI_VALUED:
            lengths = rng.integers(0, config.max_multi + 1, n)
            offsets = np.concatenate([[0], np.cumsum(lengths)])
            columns[f.name] = MultiValued(offsets, rng.integers(0, f.vocab_size, offsets[-1]))
        else:
            columns[f.name] = rng.normal(0.0, 1.0, (n, f.embed_dim))
    categories = rng.integers(0, config.n_categories, n)
    placeholder = Dataset(schema, columns, np.zeros(n, dtype=np.int64), categories)
    p = truth.probability(placeholder)
    labels = (rng.random(n) < p).astype(np.int64)
    return Dataset(schema, columns, labels, categories)

def generate_datasets(schema, config, seed=None):
    """
    Draw the train, validation and test splits in memory.

    Returns a :class:`SyntheticData` of three datasets and the
    :class:`GroundTruth`. `seed` defaults to ``config.seed``.
    """
    config.validate(schema)
    seed = config.seed if seed is None else operator_count(seed, 'seed', minimum=0)
    rng = np.random.default_rng(seed)
    truth = _draw_truth(schema, config, rng)
    splits = [_draw_split(schema, config, truth, n, rng) for n in config.sizes().values()]
    return SyntheticData(*splits, truth)

def bayes_optimal_auc(truth, dataset):
    """
    AUC of the generating logit on `dataset`, or None for a single-class
    dataset.
    """
    from .evaluation import auc

    try:
        return auc(truth.logit(dataset), dataset.labels)
    except UndefinedAUCError:
        return None

def generate_synthetic(schema, config, out_dir, seed=None):
    """
    Write ``train.csv``, ``val.csv``, ``test.csv`` and ``ground_truth.json``
    into `out_dir`, returning the :class:`SyntheticData`.

    The sidecar records the generator settings, the seed, the positive rate
    of each split, and the AUC of the Bayes-optimal scorer on each split.
    """
    data = generate_datasets(schema, config, seed)
    seed = config.seed if seed is None else seed
    os.makedirs(out_dir, exist_ok=True)
    summary = {'seed': seed, 'generator': config.to_dict(), 'intercept': data.truth.intercept,
               'splits': {}}
    for name, dataset in zip(SPLITS, data[:3]):
        path = os.path.join(out_dir, f'{name}.csv')
        write_csv(path, dataset)
        summary['splits'][name] = {
            'samples': len(dataset),
            'positive_rate': float(dataset.labels.mean()),
            'bayes_optimal_auc': bayes_optimal_auc(data.truth, dataset),
        }
        logger.info("wrote %d samples to %s", len(dataset), path)
    summary['bayes_optimal_test_auc'] = summary['splits']['test']['bayes_optimal_auc']
    with open(os.path.join(out_dir, 'ground_truth.json'), 'w') as f:
        json.dump(summary, f, indent=2, sort_keys=True)
        f.write('\n')
    return data
