"""
Line-delimited metrics records.

Every record is one JSON object per line with sorted keys::

    {"epoch": 1, "format": 1, "metrics": {...}, "phase": "train", "step": 12, "timestamp": 12}

`timestamp` is the logical step counter unless wall-clock timestamps were
requested, so that two identical runs write identical files.

"""

import json
import time
from collections import namedtuple

import numpy as np

FORMAT_VERSION = 1
PHASES = ('train', 'val', 'test')

class MetricsRecord(namedtuple('MetricsRecord', ['timestamp', 'phase', 'step', 'epoch', 'values'])):
    """
    One metrics record. `values` maps metric names to numbers (or `None`).

    >>> from mbcnet.metrics import MetricsRecord
    >>> MetricsRecord(3, 'train', 3, 0, {'loss': 0.5}).to_json()
    '{"epoch": 0, "format": 1, "metrics": {"loss": 0.5}, "phase": "train", "step": 3, "timestamp": 3}'

    """
    __slots__ = ()

    def __new__(cls, timestamp, phase, step, epoch, values):
        if phase not in PHASES:
            raise ValueError(f"phase must be one of {', '.join(PHASES)}, got {phase!r}")
        values = {str(k): _plain(v) for k, v in values.items()}
        return super().__new__(cls, timestamp, phase, int(step), int(epoch), values)

    def to_json(self):
        return json.dumps({'timestamp': self.timestamp, 'phase': self.phase,
                           'step': self.step, 'epoch': self.epoch,
                           'format': FORMAT_VERSION, 'metrics': self.values},
                          sort_keys=True)

    @classmethod
    def from_json(cls, line):
        d = json.loads(line)
        if d.get('format') != FORMAT_VERSION:
            raise ValueError(f"unsupported metrics format {d.get('format')!r}")
        return cls(d['timestamp'], d['phase'], d['step'], d['epoch'], d['metrics'])

def _plain(v):
    if v is None or isinstance(v, (bool, str)):
        return v
    if isinstance(v, (int, np.integer)):
        return int(v)
    return float(v)

class MetricsWriter:
    """
    Collects records and, if `path` is given, appends them to a file as
    they arrive.
    """
    def __init__(self, path=None, record_timestamps=False, mode='w'):
        self.path = path
        self.record_timestamps = record_timestamps
        self.records = []
        self._file = open(path, mode) if path is not None else None

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    def close(self):
        if self._file is not None:
            self._file.close()
            self._file = None

    def emit(self, phase, step, epoch, values):
        timestamp = time.time() if self.record_timestamps else int(step)
        record = MetricsRecord(timestamp, phase, step, epoch, values)
        self.write(record)
        return record

    def write(self, record):
        self.records.append(record)
        if self._file is not None:
            self._file.write(record.to_json() + '\n')
            self._file.flush()

def read_metrics(path):
    with open(path) as f:
        return [MetricsRecord.from_json(line) for line in f if line.strip()]
