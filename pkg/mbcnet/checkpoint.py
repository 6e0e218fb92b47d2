"""
Checkpoint files.

A checkpoint holds everything needed to resume training exactly: the
parameters, the Adam moment buffers, the best parameters seen so far, and a
JSON metadata block with the step and epoch counters, the batch offset
within the epoch, the early-stopping state and the shuffling RNG state.

The binary layout is, with every integer little-endian::

    magic           4 bytes   b"MBCK"
    version         u32
    schema hash     32 bytes  sha256 of the canonical schema JSON
    metadata size   u32
    metadata        UTF-8 JSON with sorted keys
    tensor count    u32
    tensors         name size (u16), UTF-8 name, rows (u32), cols (u32),
                    rows*cols little-endian float64 values in row-major order

Tensor names are the parameter names, ``adam/m/<name>`` and
``adam/v/<name>`` for the moment buffers, and ``best/<name>`` for the best
parameters.

"""

import hashlib
import json
import struct

import numpy as np

from .errors import (CheckpointVersionError, CorruptCheckpointError,
                     SchemaMismatchError)

MAGIC = b'MBCK'
FORMAT_VERSION = 1

M_PREFIX = 'adam/m/'
V_PREFIX = 'adam/v/'
BEST_PREFIX = 'best/'

def schema_hash(schema):
    """
    Hex sha256 of the canonical JSON form of `schema`.
    """
    text = json.dumps(schema.to_dict(), sort_keys=True, separators=(',', ':'))
    return hashlib.sha256(text.encode('utf-8')).hexdigest()

class Checkpoint:
    """
    The contents of a checkpoint file.

    `params`, `m`, `v` and `best_params` map names to 2-D float arrays, and
    `meta` is a JSON-serializable dict.
    """
    def __init__(self, schema_hash, params, meta=None, m=None, v=None,
                 best_params=None, version=FORMAT_VERSION):
        self.schema_hash = schema_hash
        self.params = params
        self.meta = meta or {}
        self.m = m or {}
        self.v = v or {}
        self.best_params = best_params or {}
        self.version = version

    def __repr__(self):
        return (f"<Checkpoint v{self.version} step={self.meta.get('step')} "
                f"{len(self.params)} parameters, schema {self.schema_hash[:12]}>")

    def tensors(self):
        """
        All tensors in file order, as ``(name, array)`` pairs.
        """
        yield from self.params.items()
        for name, value in self.m.items():
            yield M_PREFIX + name, value
        for name, value in self.v.items():
            yield V_PREFIX + name, value
        for name, value in self.best_params.items():
            yield BEST_PREFIX + name, value

    def to_bytes(self):
        chunks = [MAGIC, struct.pack('<I', self.version), bytes.fromhex(self.schema_hash)]
        meta = json.dumps(self.meta, sort_keys=True, separators=(',', ':')).encode('utf-8')
        chunks += [struct.pack('<I', len(meta)), meta]
        tensors = list(self.tensors())
        chunks.append(struct.pack('<I', len(tensors)))
        for name, value in tensors:
            value = np.asarray(value, dtype=np.float64)
            if value.ndim != 2:
                raise ValueError(f"checkpoint tensor {name!r} must be 2-D, got shape {value.shape}")
            encoded = name.encode('utf-8')
            chunks += [struct.pack('<H', len(encoded)), encoded,
                       struct.pack('<II', *value.shape),
                       np.ascontiguousarray(value).astype('<f8').tobytes()]
        return b''.join(chunks)

    @classmethod
    def from_bytes(cls, data):
        reader = _Reader(data)
        if reader.read(4) != MAGIC:
            raise CorruptCheckpointError("not a checkpoint file (bad magic bytes)")
        version, = reader.unpack('<I')
        if version != FORMAT_VERSION:
            raise CheckpointVersionError(version, FORMAT_VERSION)
        digest = reader.read(32).hex()
        meta_size, = reader.unpack('<I')
        try:
            meta = json.loads(reader.read(meta_size).decode('utf-8'))
        except (UnicodeDecodeError, json.JSONDecodeError) as e:
            raise CorruptCheckpointError(f"unreadable checkpoint metadata: {e}") from None
        count, = reader.unpack('<I')
        params, m, v, best = {}, {}, {}, {}
        for _ in range(count):
            size, = reader.unpack('<H')
            try:
                name = reader.read(size).decode('utf-8')
            except UnicodeDecodeError:
                raise CorruptCheckpointError("unreadable tensor name") from None
            rows, cols = reader.unpack('<II')
            value = np.frombuffer(reader.read(8*rows*cols), dtype='<f8')
            value = value.astype(np.float64).reshape((rows, cols))
            for prefix, target in ((M_PREFIX, m), (V_PREFIX, v), (BEST_PREFIX, best)):
                if name.startswith(prefix):
                    target[name[len(prefix):]] = value
                    break
            else:
                params[name] = value
        if reader.offset != len(data):
            raise CorruptCheckpointError(f"{len(data) - reader.offset} unexpected trailing bytes")
        return cls(digest, params, meta, m, v, best, version)

class _Reader:
    def __init__(self, data):
        self.data = data
        self.offset = 0

    def read(self, n):
        if self.offset + n > len(self.data):
            raise CorruptCheckpointError(
                f"checkpoint is truncated (needed {n} bytes at offset {self.offset}, "
                f"file has {len(self.data)})")
        chunk = self.data[self.offset:self.offset + n]
        self.offset += n
        return chunk

    def unpack(self, fmt):
        return struct.unpack(fmt, self.read(struct.calcsize(fmt)))

def checkpoint_save(path, checkpoint):
    with open(path, 'wb') as f:
        f.write(checkpoint.to_bytes())

def checkpoint_load(path, schema=None):
    """
    Read a checkpoint file.

    If `schema` is given, raise :class:`~.SchemaMismatchError` unless the
    checkpoint was written for it.
    """
    with open(path, 'rb') as f:
        checkpoint = Checkpoint.from_bytes(f.read())
    if schema is not None:
        expected = schema_hash(schema)
        if checkpoint.schema_hash != expected:
            raise SchemaMismatchError(checkpoint.schema_hash, expected)
    return checkpoint
