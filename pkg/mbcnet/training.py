"""
Adam and the training loop.

Training is fully determined by the run configuration, the seed and the
data: the parameters are initialized and the epochs shuffled from two
streams spawned from ``train.seed``, and metric timestamps are logical steps
unless wall-clock timestamps are requested.

A checkpoint taken at any step stores the shuffling RNG state at the start
of the current epoch together with the offset of the next batch, so resuming
replays the same permutation and continues with exactly the batches the
interrupted run would have seen.

"""

import logging
import os
from collections import namedtuple

import numpy as np

from .checkpoint import Checkpoint, checkpoint_save, schema_hash
from .cooperation import check_variant
from .errors import ConfigError, DataError, NaNGradientError, SchemaMismatchError
from .evaluation import evaluate
from .features import batch_bounds, thin_positives
from .immutable import ImmutableObject, as_float, operator_count
from .metrics import MetricsWriter
from .model import MBCNet

logger = logging.getLogger(__name__)

class TrainConfig(ImmutableObject):
    """
    Training settings.

    `patience` is the number of epochs without a validation AUC improvement
    after which training stops. `density` keeps that fraction of the
    positive training samples (1 keeps all of them).

    >>> from mbcnet import TrainConfig
    >>> TrainConfig().lr
    0.001
    >>> TrainConfig(patience=0)
    Traceback (most recent call last):
    ...
    mbcnet.errors.ConfigError: train.patience: must be >= 1, got 0

    """
    __slots__ = ()

    def _typecheck(self, batch_size=256, max_epochs=10, patience=2, lr=1e-3, seed=0,
                   variant='moderate', density=1.0, record_timestamps=False,
                   eval_batch_size=4096):
        batch_size = operator_count(batch_size, 'train.batch_size')
        max_epochs = operator_count(max_epochs, 'train.max_epochs')
        patience = operator_count(patience, 'train.patience')
        lr = as_float(lr, 'train.lr')
        if not lr > 0:
            raise ConfigError('train.lr', f"must be > 0, got {lr}")
        seed = operator_count(seed, 'train.seed', minimum=0)
        if not isinstance(variant, str):
            raise TypeError(f"train.variant must be a string, not {type(variant).__name__}")
        check_variant(variant)
        density = as_float(density, 'train.density')
        if not 0 < density <= 1:
            raise ConfigError('train.density', f"must be in (0, 1], got {density}")
        if not isinstance(record_timestamps, bool):
            raise TypeError("train.record_timestamps must be true or false")
        eval_batch_size = operator_count(eval_batch_size, 'train.eval_batch_size')
        return (batch_size, max_epochs, patience, lr, seed, variant, density,
                record_timestamps, eval_batch_size)

    batch_size = property(lambda self: self.args[0])
    max_epochs = property(lambda self: self.args[1])
    patience = property(lambda self: self.args[2])
    lr = property(lambda self: self.args[3])
    seed = property(lambda self: self.args[4])
    variant = property(lambda self: self.args[5])
    density = property(lambda self: self.args[6])
    record_timestamps = property(lambda self: self.args[7])
    eval_batch_size = property(lambda self: self.args[8])

    _keys = ('batch_size', 'max_epochs', 'patience', 'lr', 'seed', 'variant', 'density',
             'record_timestamps', 'eval_batch_size')

    def to_dict(self):
        return dict(zip(self._keys, self.args))

    @classmethod
    def from_dict(cls, d):
        if not isinstance(d, dict):
            raise ConfigError('train', "must be a mapping")
        unknown = set(d) - set(cls._keys)
        if unknown:
            raise ConfigError('train', f"unknown keys {sorted(unknown)}")
        return cls(**d)

class AdamState:
    """
    Adam hyperparameters, step count and per-parameter moment buffers.
    """
    def __init__(self, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8, step=0, m=None, v=None):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step = step
        self.m = m if m is not None else {}
        self.v = v if v is not None else {}

    @classmethod
    def for_params(cls, params, **kwargs):
        return cls(m={n: np.zeros_like(p) for n, p in params.items()},
                   v={n: np.zeros_like(p) for n, p in params.items()}, **kwargs)

    def hyperparameters(self):
        return {'lr': self.lr, 'beta1': self.beta1, 'beta2': self.beta2,
                'eps': self.eps, 'step': self.step}

def adam_step(params, grads, state):
    """
    Update `params` in place with one bias-corrected Adam step.

    Parameters missing from `grads` are left alone. Raises
    :class:`~.NaNGradientError` (before changing anything) if a gradient
    has a NaN or infinite entry.
    """
    for name, g in grads.items():
        if name in params and not np.all(np.isfinite(g)):
            raise NaNGradientError(name, state.step + 1)
    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            continue
        if g.shape != p.shape:
            raise ValueError(f"gradient of {name!r} has shape {g.shape}, parameter has {p.shape}")
        m = state.m.setdefault(name, np.zeros_like(p))
        v = state.v.setdefault(name, np.zeros_like(p))
        m *= b1
        m += (1 - b1)*g
        v *= b2
        v += (1 - b2)*g*g
        m_hat = m/(1 - b1**t)
        v_hat = v/(1 - b2**t)
        p -= state.lr*m_hat/(np.sqrt(v_hat) + state.eps)
    return params

TrainResult = namedtuple('TrainResult', ['model', 'best', 'last', 'records'])
TrainResult.__doc__ = """
The outcome of :func:`train`: the model with the best validation
parameters, the best and last :class:`~.Checkpoint`, and the metrics
records emitted by this call.
"""

def _copy(params):
    return {name: value.copy() for name, value in params.items()}

def _step_values(model, breakdown):
    values = {'loss': breakdown.total.item(), 'ctr': breakdown.ctr,
              'bct': breakdown.bct, 'mdr': breakdown.mdr, 'count': breakdown.count}
    for head, loss in breakdown.head_ctr.items():
        values[f'ctr/{head}'] = loss
    for pair, gap in model.orthogonality_gaps().items():
        values[f'wgap/{pair}'] = gap
    if breakdown.clipped:
        values['clipped'] = True
    return values

def _val_values(report, best_auc, bad_epochs):
    values = {'auc': report.auc, 'logloss': report.logloss,
              'best_auc': best_auc, 'bad_epochs': bad_epochs}
    for head, (auc, logloss) in report.heads.items():
        values[f'auc/{head}'] = auc
        values[f'logloss/{head}'] = logloss
    return values

def train(config, train_data, val_data, *, metrics=None, resume=None, max_steps=None,
          out_dir=None):
    """
    Train a model for the run configuration `config`.

    Each epoch visits `train_data` in a fresh seeded permutation, then
    scores `val_data`; training stops after `config.train.patience` epochs
    without an improvement of the validation AUC of the fusion head, or
    after `config.train.max_epochs` epochs, or (for interrupted runs) after
    `max_steps` optimizer steps in total.

    `metrics` is a :class:`~.MetricsWriter` receiving one ``train`` record
    per step and one ``val`` record per epoch. `resume` is a
    :class:`~.Checkpoint` to continue from. With `out_dir`, ``last.ckpt``
    and ``best.ckpt`` are written there.

    Returns a :class:`TrainResult`.
    """
    tc = config.train
    schema = config.schema
    for name, data in (('train', train_data), ('val', val_data)):
        if data.schema != schema:
            raise DataError(f"the {name} data was read with a different schema than the configuration")
    digest = schema_hash(schema)
    train_data = thin_positives(train_data, tc.density, tc.seed)
    n = len(train_data)
    if n == 0:
        raise DataError("the training data is empty")

    init_seq, shuffle_seq = np.random.SeedSequence(tc.seed).spawn(2)
    model = MBCNet.init(schema, config.groups, config.model, seed=init_seq)
    rng = np.random.default_rng(shuffle_seq)
    state = AdamState.for_params(model.params, lr=tc.lr)
    step = epoch = batch_start = 0
    best_auc = None
    best_step = best_epoch = 0
    bad_epochs = 0
    best_params = _copy(model.params)

    if resume is not None:
        if resume.schema_hash != digest:
            raise SchemaMismatchError(resume.schema_hash, digest)
        model = model.with_params(_copy(resume.params)).check_params()
        meta = resume.meta
        adam = meta['adam']
        state = AdamState(adam['lr'], adam['beta1'], adam['beta2'], adam['eps'], adam['step'],
                          _copy(resume.m), _copy(resume.v))
        step, epoch, batch_start = meta['step'], meta['epoch'], meta['batch']
        best_auc, bad_epochs = meta['best_auc'], meta['bad_epochs']
        best_step, best_epoch = meta['best_step'], meta['best_epoch']
        best_params = _copy(resume.best_params)
        rng.bit_generator.state = meta['rng']
        logger.info("resuming at step %d (epoch %d, batch %d)", step, epoch, batch_start)
        if meta.get('done'):
            epoch = tc.max_epochs

    writer = metrics if metrics is not None else MetricsWriter(record_timestamps=tc.record_timestamps)
    first_record = len(writer.records)

    def snapshot(epoch_rng_state, batch, done):
        meta = {'step': step, 'epoch': epoch, 'batch': batch, 'best_auc': best_auc,
                'best_step': best_step, 'best_epoch': best_epoch, 'bad_epochs': bad_epochs,
                'rng': epoch_rng_state, 'adam': state.hyperparameters(), 'done': done,
                'config': config.to_dict()}
        return Checkpoint(digest, _copy(model.params), meta, _copy(state.m), _copy(state.v),
                          _copy(best_params))

    def best_checkpoint():
        meta = {'step': best_step, 'epoch': best_epoch, 'best_auc': best_auc,
                'config': config.to_dict()}
        return Checkpoint(digest, _copy(best_params), meta)

    def finish(last):
        best = best_checkpoint()
        if out_dir is not None:
            checkpoint_save(os.path.join(out_dir, 'last.ckpt'), last)
            checkpoint_save(os.path.join(out_dir, 'best.ckpt'), best)
        return TrainResult(model.with_params(_copy(best_params)), best, last,
                           writer.records[first_record:])

    bounds = batch_bounds(n, tc.batch_size)
    while epoch < tc.max_epochs:
        epoch_rng_state = rng.bit_generator.state
        order = rng.permutation(n)
        ctr_sum = 0.0
        for b in range(batch_start, len(bounds)):
            if max_steps is not None and step >= max_steps:
                logger.info("stopping at step %d (max_steps)", step)
                return finish(snapshot(epoch_rng_state, b, False))
            start, stop = bounds[b]
            batch = train_data.batch(order[start:stop])
            breakdown, grads = model.loss(batch, config.coop, tc.variant)
            adam_step(model.params, grads, state)
            step += 1
            ctr_sum += breakdown.ctr
            writer.emit('train', step, epoch, _step_values(model, breakdown))
            logger.debug("step %d: loss %.6f (ctr %.6f, bct %.6f, mdr %.6f, C=%d)", step,
                         breakdown.total.item(), breakdown.ctr, breakdown.bct, breakdown.mdr,
                         breakdown.count)
        steps_this_epoch = len(bounds) - batch_start
        batch_start = 0

        report = evaluate(model, val_data, tc.eval_batch_size)
        if best_auc is None or report.auc > best_auc:
            best_auc = report.auc
            best_step, best_epoch = step, epoch
            best_params = _copy(model.params)
            bad_epochs = 0
        else:
            bad_epochs += 1
        writer.emit('val', step, epoch, _val_values(report, best_auc, bad_epochs))
        logger.info("epoch %d: train ctr %.5f, val auc %.5f, logloss %.5f (best auc %.5f)",
                    epoch, ctr_sum/max(steps_this_epoch, 1), report.auc, report.logloss, best_auc)
        epoch += 1
        if out_dir is not None:
            checkpoint_save(os.path.join(out_dir, 'last.ckpt'),
                            snapshot(rng.bit_generator.state, 0, False))
        if bad_epochs >= tc.patience:
            logger.info("early stopping after epoch %d: no val auc improvement for %d epochs",
                        epoch - 1, bad_epochs)
            break
    return finish(snapshot(rng.bit_generator.state, 0, True))
