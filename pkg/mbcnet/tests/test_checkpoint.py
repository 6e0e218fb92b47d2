import struct

import numpy as np

from hypothesis import given
from hypothesis.strategies import integers

from pytest import raises

from ..checkpoint import (FORMAT_VERSION, MAGIC, Checkpoint, checkpoint_load,
                          checkpoint_save, schema_hash)
from ..errors import (CheckpointError, CheckpointVersionError,
                      CorruptCheckpointError, SchemaMismatchError)
from ..features import FeatureField, FeatureSchema
from .helpers import TINY_SCHEMA

def _checkpoint():
    rng = np.random.default_rng(0)
    params = {'a/W': rng.normal(size=(3, 2)), 'a/b': np.zeros((1, 2)), 'e': np.array([[np.pi]])}
    m = {n: rng.normal(size=p.shape) for n, p in params.items()}
    v = {n: rng.random(p.shape) for n, p in params.items()}
    best = {n: p + 1 for n, p in params.items()}
    meta = {'step': 12, 'epoch': 1, 'best_auc': None, 'rng': {'state': 2**100}}
    return Checkpoint(schema_hash(TINY_SCHEMA), params, meta, m, v, best)

def _assert_same(a, b):
    assert a.schema_hash == b.schema_hash
    assert a.meta == b.meta
    assert a.version == b.version
    for x, y in ((a.params, b.params), (a.m, b.m), (a.v, b.v), (a.best_params, b.best_params)):
        assert x.keys() == y.keys()
        for name in x:
            assert np.array_equal(x[name], y[name]), name
            assert y[name].dtype == np.float64

def test_schema_hash():
    digest = schema_hash(TINY_SCHEMA)
    assert len(digest) == 64
    assert schema_hash(FeatureSchema.from_dict(TINY_SCHEMA.to_dict())) == digest
    other = FeatureSchema([*TINY_SCHEMA.fields[:3], FeatureField('price', 'numerical', embed_dim=3)])
    assert schema_hash(other) != digest

def test_round_trip(tmp_path):
    checkpoint = _checkpoint()
    data = checkpoint.to_bytes()
    assert data[:4] == MAGIC
    assert struct.unpack('<I', data[4:8]) == (FORMAT_VERSION,)
    _assert_same(Checkpoint.from_bytes(data), checkpoint)

    path = tmp_path/'last.ckpt'
    checkpoint_save(path, checkpoint)
    assert path.read_bytes() == data
    _assert_same(checkpoint_load(path, TINY_SCHEMA), checkpoint)
    assert 'step=12' in repr(checkpoint)

def test_params_only():
    checkpoint = Checkpoint(schema_hash(TINY_SCHEMA), {'w': np.eye(2)})
    read = Checkpoint.from_bytes(checkpoint.to_bytes())
    assert read.meta == {} and read.m == {} and read.v == {} and read.best_params == {}
    assert np.array_equal(read.params['w'], np.eye(2))

def test_non_matrix_tensor():
    checkpoint = Checkpoint(schema_hash(TINY_SCHEMA), {'w': np.zeros(3)})
    raises(ValueError, lambda: checkpoint.to_bytes())

def test_bad_magic():
    data = b'XXXX' + _checkpoint().to_bytes()[4:]
    raises(CorruptCheckpointError, lambda: Checkpoint.from_bytes(data))

def test_version():
    data = bytearray(_checkpoint().to_bytes())
    data[4:8] = struct.pack('<I', FORMAT_VERSION + 1)
    with raises(CheckpointVersionError) as exc:
        Checkpoint.from_bytes(bytes(data))
    assert exc.value.found == FORMAT_VERSION + 1
    assert exc.value.expected == FORMAT_VERSION

@given(integers(0, 1000))
def test_truncated(cut):
    data = _checkpoint().to_bytes()
    cut = min(cut, len(data) - 1)
    # Every proper prefix is rejected
    raises(CorruptCheckpointError, lambda: Checkpoint.from_bytes(data[:cut]))

def test_trailing_bytes():
    data = _checkpoint().to_bytes() + b'\x00'
    raises(CorruptCheckpointError, lambda: Checkpoint.from_bytes(data))

def test_bad_metadata():
    checkpoint = Checkpoint(schema_hash(TINY_SCHEMA), {}, {'a': 1})
    data = checkpoint.to_bytes().replace(b'{"a":1}', b'{"a":1]')
    raises(CorruptCheckpointError, lambda: Checkpoint.from_bytes(data))

def test_schema_mismatch(tmp_path):
    path = tmp_path/'last.ckpt'
    checkpoint_save(path, _checkpoint())
    other = FeatureSchema([*TINY_SCHEMA.fields[:3], FeatureField('price', 'numerical', embed_dim=3)])
    with raises(SchemaMismatchError) as exc:
        checkpoint_load(path, other)
    assert exc.value.found == schema_hash(TINY_SCHEMA)
    assert exc.value.expected == schema_hash(other)
    assert isinstance(exc.value, CheckpointError)
    # Without a schema nothing is checked
    checkpoint_load(path)
