import numpy as np

from pytest import approx, raises

from .. import training
from ..checkpoint import Checkpoint, checkpoint_load
from ..cooperation import CoopConfig
from ..errors import ConfigError, DataError, NaNGradientError, SchemaMismatchError
from ..evaluation import EvalReport
from ..features import FeatureField, FeatureSchema
from ..metrics import MetricsWriter
from ..training import AdamState, TrainConfig, adam_step, train
from .helpers import TINY_SCHEMA, tiny_config, tiny_data

def test_train_config():
    config = TrainConfig(batch_size=32, lr=0.01, variant='no_discrimination', density=0.5)
    assert TrainConfig.from_dict(config.to_dict()) == config
    assert type(config)(*config.args) == config
    assert TrainConfig(lr=1).lr == 1.0

    raises(ConfigError, lambda: TrainConfig(lr=0))
    raises(ConfigError, lambda: TrainConfig(batch_size=0))
    raises(ConfigError, lambda: TrainConfig(density=0))
    raises(ConfigError, lambda: TrainConfig(density=1.5))
    raises(ConfigError, lambda: TrainConfig(seed=-1))
    raises(ConfigError, lambda: TrainConfig(variant='cooperative'))
    raises(ConfigError, lambda: TrainConfig.from_dict({'epochs': 3}))
    raises(TypeError, lambda: TrainConfig(variant=3))
    raises(TypeError, lambda: TrainConfig(record_timestamps='yes'))
    raises(TypeError, lambda: TrainConfig(max_epochs=2.5))

def test_adam_step():
    g = np.array([[0.5, -0.1]])
    params = {'w': np.array([[1.0, -2.0]]), 'frozen': np.array([[3.0]])}
    state = AdamState.for_params(params, lr=0.1)
    adam_step(params, {'w': g}, state)
    # The first bias-corrected step moves by lr*g/(|g| + eps)
    expected = np.array([[1.0, -2.0]]) - 0.1*g/(np.abs(g) + 1e-8)
    assert params['w'] == approx(expected, rel=1e-14)
    assert np.allclose(state.m['w'], 0.1*g, rtol=1e-15)
    assert np.allclose(state.v['w'], 0.001*g*g, rtol=1e-12)
    adam_step(params, {'w': g}, state)
    # A constant gradient keeps the same step size
    expected = expected - 0.1*g/(np.abs(g) + 1e-8)
    assert params['w'] == approx(expected, rel=1e-12)
    assert state.step == 2
    assert params['frozen'].tolist() == [[3.0]]
    assert state.hyperparameters() == {'lr': 0.1, 'beta1': 0.9, 'beta2': 0.999,
                                       'eps': 1e-8, 'step': 2}

def test_adam_rejects_nan():
    params = {'a': np.array([[1.0]]), 'b': np.array([[2.0, 3.0]])}
    state = AdamState.for_params(params)
    with raises(NaNGradientError) as exc:
        adam_step(params, {'a': np.array([[0.5]]), 'b': np.array([[np.nan, 1.0]])}, state)
    assert exc.value.name == 'b'
    assert exc.value.step == 1
    # Nothing was updated
    assert params['a'].tolist() == [[1.0]]
    assert np.all(state.m['a'] == 0)
    assert state.step == 0
    raises(NaNGradientError, lambda: adam_step(params, {'a': np.array([[np.inf]])}, state))

def test_adam_shape_mismatch():
    params = {'a': np.zeros((2, 2))}
    raises(ValueError, lambda: adam_step(params, {'a': np.zeros((1, 2))}, AdamState()))

def test_train_records():
    config = tiny_config()
    data = tiny_data()
    result = train(config, data.train, data.val)
    steps_per_epoch = -(-400//32)
    train_records = [r for r in result.records if r.phase == 'train']
    val_records = [r for r in result.records if r.phase == 'val']
    assert len(val_records) == 2
    assert len(train_records) == 2*steps_per_epoch
    assert [r.step for r in train_records] == list(range(1, 2*steps_per_epoch + 1))
    assert all(r.timestamp == r.step for r in result.records)
    assert [r.epoch for r in val_records] == [0, 1]
    values = train_records[0].values
    for key in ('loss', 'ctr', 'bct', 'mdr', 'count', 'ctr/fusion', 'ctr/cross',
                'wgap/efgc-deep', 'wgap/deep-cross'):
        assert key in values
    assert values['loss'] == approx(values['ctr'] + 0.1*values['bct'] + 0.1*values['mdr'])
    val = val_records[-1].values
    assert {'auc', 'logloss', 'best_auc', 'bad_epochs', 'auc/fusion', 'auc/efgc',
            'logloss/deep'} <= set(val)
    assert val['best_auc'] == max(r.values['auc'] for r in val_records)

    assert result.last.meta['done']
    assert result.last.meta['step'] == 2*steps_per_epoch
    assert result.best.meta['best_auc'] == val['best_auc']
    assert result.model.params.keys() == result.best.params.keys()
    assert all(np.array_equal(result.model.params[n], result.best.params[n])
               for n in result.best.params)

def test_train_learns():
    config = tiny_config(train={'max_epochs': 4, 'patience': 4})
    data = tiny_data()
    result = train(config, data.train, data.val)
    ctr = {}
    for r in result.records:
        if r.phase == 'train':
            ctr.setdefault(r.epoch, []).append(r.values['ctr'])
    assert np.mean(ctr[3]) < np.mean(ctr[0])
    # Training moved the pair transforms off the identity
    last_step = result.records[-2].values
    assert all(last_step[f'wgap/{pair}'] > 0 for pair in ('efgc-deep', 'efgc-cross', 'deep-cross'))

def _fake_evaluate(aucs):
    aucs = iter(aucs)

    def evaluate(model, dataset, batch_size=4096):
        auc = next(aucs)
        return EvalReport(auc, 0.5, {'fusion': (auc, 0.5)}, len(dataset))

    return evaluate

def test_early_stopping(monkeypatch):
    monkeypatch.setattr(training, 'evaluate', _fake_evaluate([0.6, 0.7, 0.65, 0.66, 0.8]))
    config = tiny_config(train={'max_epochs': 10, 'patience': 2, 'batch_size': 100})
    data = tiny_data()
    result = train(config, data.train, data.val)
    val = [r for r in result.records if r.phase == 'val']
    assert [r.values['auc'] for r in val] == [0.6, 0.7, 0.65, 0.66]
    assert [r.values['bad_epochs'] for r in val] == [0, 0, 1, 2]
    assert [r.values['best_auc'] for r in val] == [0.6, 0.7, 0.7, 0.7]
    assert result.best.meta == {'step': 8, 'epoch': 1, 'best_auc': 0.7,
                                'config': config.to_dict()}
    assert result.last.meta['step'] == 16
    assert result.last.meta['done']

def test_max_epochs(monkeypatch):
    monkeypatch.setattr(training, 'evaluate', _fake_evaluate([0.5, 0.6, 0.7, 0.8]))
    config = tiny_config(train={'max_epochs': 3, 'patience': 1, 'batch_size': 200})
    data = tiny_data()
    result = train(config, data.train, data.val)
    assert result.best.meta['epoch'] == 2
    assert result.best.meta['best_auc'] == 0.7
    assert result.last.meta['step'] == 6

def test_train_deterministic(tmp_path):
    config = tiny_config()
    data = tiny_data()
    runs = []
    for name in ('a', 'b'):
        out = tmp_path/name
        out.mkdir()
        with MetricsWriter(out/'metrics.jsonl') as metrics:
            train(config, data.train, data.val, metrics=metrics, out_dir=str(out))
        runs.append(out)
    for name in ('metrics.jsonl', 'last.ckpt', 'best.ckpt'):
        assert (runs[0]/name).read_bytes() == (runs[1]/name).read_bytes(), name

def test_train_seed_changes_run():
    data = tiny_data()
    a = train(tiny_config(train={'seed': 1, 'max_epochs': 1}), data.train, data.val)
    b = train(tiny_config(train={'seed': 2, 'max_epochs': 1}), data.train, data.val)
    assert not np.array_equal(a.last.params['deep/layer0/W'], b.last.params['deep/layer0/W'])

def _resume_equivalence(interrupt):
    # 400 samples in batches of 4 for 2 epochs: 200 steps
    config = tiny_config(train={'batch_size': 4, 'max_epochs': 2})
    data = tiny_data()
    full = train(config, data.train, data.val)
    assert full.last.meta['step'] == 200

    first = train(config, data.train, data.val, max_steps=interrupt)
    assert first.last.meta['step'] == interrupt
    assert not first.last.meta['done']
    checkpoint = Checkpoint.from_bytes(first.last.to_bytes())
    second = train(config, data.train, data.val, resume=checkpoint)

    assert ([r.to_json() for r in first.records + second.records]
            == [r.to_json() for r in full.records])
    for name, value in full.last.params.items():
        assert np.array_equal(second.last.params[name], value), name
        assert np.array_equal(second.last.m[name], full.last.m[name]), name
        assert np.array_equal(second.best.params[name], full.best.params[name]), name
    assert second.last.meta == full.last.meta

def test_resume_mid_epoch():
    _resume_equivalence(37)

def test_resume_at_epoch_boundary():
    _resume_equivalence(100)

def test_resume_finished_run():
    config = tiny_config(train={'max_epochs': 1})
    data = tiny_data()
    result = train(config, data.train, data.val)
    again = train(config, data.train, data.val, resume=result.last)
    assert again.records == []
    assert all(np.array_equal(again.last.params[n], result.last.params[n])
               for n in result.last.params)

def test_resume_schema_mismatch():
    config = tiny_config(train={'max_epochs': 1})
    data = tiny_data()
    result = train(config, data.train, data.val, max_steps=2)
    checkpoint = result.last
    checkpoint.schema_hash = '0'*64
    raises(SchemaMismatchError, lambda: train(config, data.train, data.val, resume=checkpoint))

def test_train_wrong_schema():
    schema = FeatureSchema([*TINY_SCHEMA.fields[:3], FeatureField('price', 'numerical', embed_dim=3)])
    data = tiny_data()
    other = data.val.take(np.arange(10))
    other.schema = schema
    raises(DataError, lambda: train(tiny_config(), data.train, other))

def test_checkpoint_files(tmp_path):
    config = tiny_config(train={'max_epochs': 1})
    data = tiny_data()
    result = train(config, data.train, data.val, out_dir=str(tmp_path))
    last = checkpoint_load(tmp_path/'last.ckpt', TINY_SCHEMA)
    best = checkpoint_load(tmp_path/'best.ckpt', TINY_SCHEMA)
    assert last.meta == result.last.meta
    assert set(last.meta) == {'step', 'epoch', 'batch', 'best_auc', 'best_step', 'best_epoch',
                              'bad_epochs', 'rng', 'adam', 'done', 'config'}
    assert set(best.meta) == {'step', 'epoch', 'best_auc', 'config'}
    assert best.m == {} and best.best_params == {}
    assert last.m.keys() == last.params.keys() == last.best_params.keys()

def test_zero_beta_keeps_transforms():
    config = tiny_config(coop=CoopConfig(0.1, 0.0), train={'max_epochs': 1})
    data = tiny_data()
    result = train(config, data.train, data.val)
    for name, value in result.last.params.items():
        if name.startswith('coop/'):
            assert np.array_equal(value, np.eye(4)), name
    train_records = [r for r in result.records if r.phase == 'train']
    assert all(r.values['mdr'] == 0.0 for r in train_records)
    assert all(r.values['wgap/efgc-deep'] == 0.0 for r in train_records)
    assert any(r.values['bct'] > 0 for r in train_records)

def test_zero_alpha():
    config = tiny_config(coop=CoopConfig(0.0, 0.1), train={'max_epochs': 1})
    data = tiny_data()
    result = train(config, data.train, data.val)
    train_records = [r for r in result.records if r.phase == 'train']
    assert all(r.values['bct'] == 0.0 and r.values['count'] == 0 for r in train_records)
    assert all(r.values['loss'] == approx(r.values['ctr'] + 0.1*r.values['mdr'])
               for r in train_records)

def test_zero_weights_is_plain_ctr_training():
    data = tiny_data()
    plain = train(tiny_config(coop=CoopConfig(0.0, 0.0), train={'max_epochs': 1}),
                  data.train, data.val)
    for r in plain.records:
        if r.phase == 'train':
            assert r.values['loss'] == r.values['ctr']

def test_density():
    data = tiny_data()
    runs = {}
    for density in (1.0, 0.5):
        config = tiny_config(train={'density': density, 'max_epochs': 1, 'batch_size': 1000})
        result = train(config, data.train, data.val)
        assert result.last.meta['step'] == 1
        runs[density] = [r for r in result.records if r.phase == 'train'][0].values
    # Fewer positives pull the mean loss toward the negatives
    assert runs[0.5]['ctr'] != runs[1.0]['ctr']
