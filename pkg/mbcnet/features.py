"""
Feature schema, domain-driven feature groups, datasets and embeddings.

A :class:`FeatureSchema` is the ordered list of input fields. Each field is
categorical (one id per sample), multi-valued (a possibly empty list of ids
per sample) or numerical (a fixed-width vector of floats per sample). A
:class:`GroupSpec` names the subsets of fields that the EFGC branch crosses
together.

Datasets are held in memory as column arrays. Multi-valued columns use a
compressed layout (`offsets`, `ids`) where the ids of sample ``k`` are
``ids[offsets[k]:offsets[k + 1]]``.

"""

import csv
import logging
from collections import namedtuple

import numpy as np

from .errors import ConfigError, DataAbortError, DataError
from .immutable import ImmutableObject, operator_count
from .numerics import Matrix, concat_cols, lookup, matmul, add

logger = logging.getLogger(__name__)

CATEGORICAL = 'categorical'
MULTI_VALUED = 'multi_valued'
NUMERICAL = 'numerical'
KINDS = (CATEGORICAL, MULTI_VALUED, NUMERICAL)

LABEL_COLUMN = 'label'
CATEGORY_COLUMN = 'category'
# Files with more than this fraction of rejected rows are not loaded at all.
MAX_BAD_ROW_FRACTION = 0.01

class FeatureField(ImmutableObject):
    """
    One input field.

    `vocab_size` is required for categorical and multi-valued fields, and
    must be omitted for numerical fields, whose `embed_dim` is the width of
    the value vector.

    >>> from mbcnet import FeatureField
    >>> FeatureField('user_id', 'categorical', 1000, 8)
    FeatureField('user_id', 'categorical', 1000, 8)
    >>> FeatureField('price', 'numerical', embed_dim=4)
    FeatureField('price', 'numerical', None, 4)

    """
    __slots__ = ()

    def _typecheck(self, name, kind=CATEGORICAL, vocab_size=None, embed_dim=8):
        if not isinstance(name, str):
            raise TypeError(f"field name must be a string, not {type(name).__name__}")
        if not name or name in (LABEL_COLUMN, CATEGORY_COLUMN):
            raise ConfigError('schema', f"invalid field name {name!r}")
        if kind not in KINDS:
            raise ConfigError(f'schema.{name}.kind', f"must be one of {', '.join(KINDS)}, got {kind!r}")
        if kind == NUMERICAL:
            if vocab_size is not None:
                raise ConfigError(f'schema.{name}.vocab_size', "numerical fields have no vocabulary")
        else:
            if vocab_size is None:
                raise ConfigError(f'schema.{name}.vocab_size', f"required for {kind} fields")
            vocab_size = operator_count(vocab_size, f'schema.{name}.vocab_size')
        embed_dim = operator_count(embed_dim, f'schema.{name}.embed_dim')
        return (name, kind, vocab_size, embed_dim)

    @property
    def name(self):
        return self.args[0]

    @property
    def kind(self):
        return self.args[1]

    @property
    def vocab_size(self):
        return self.args[2]

    @property
    def embed_dim(self):
        return self.args[3]

    def to_dict(self):
        d = {'name': self.name, 'kind': self.kind}
        if self.vocab_size is not None:
            d['vocab_size'] = self.vocab_size
        d['embed_dim'] = self.embed_dim
        return d

    @classmethod
    def from_dict(cls, d):
        if not isinstance(d, dict) or 'name' not in d:
            raise ConfigError('schema', f"every field needs at least a name, got {d!r}")
        unknown = set(d) - {'name', 'kind', 'vocab_size', 'embed_dim'}
        if unknown:
            raise ConfigError(f"schema.{d['name']}", f"unknown keys {sorted(unknown)}")
        return cls(**d)

class FeatureSchema(ImmutableObject):
    """
    The ordered list of input fields.

    >>> from mbcnet import FeatureSchema, FeatureField
    >>> schema = FeatureSchema([FeatureField('a', 'categorical', 10, 3),
    ...                         FeatureField('b', 'multi_valued', 20, 5)])
    >>> schema.width
    8
    >>> schema.names
    ('a', 'b')

    """
    __slots__ = ()

    def _typecheck(self, fields):
        if isinstance(fields, FeatureField) or not hasattr(fields, '__iter__'):
            raise TypeError("FeatureSchema expects a sequence of FeatureField")
        fields = tuple(fields)
        for f in fields:
            if not isinstance(f, FeatureField):
                raise TypeError(f"expected FeatureField, got {type(f).__name__}")
        if len(fields) < 2:
            raise ConfigError('schema', f"at least 2 fields are required, got {len(fields)}")
        seen = set()
        for f in fields:
            if f.name in seen:
                raise ConfigError('schema', f"duplicate field name {f.name!r}")
            seen.add(f.name)
        return (fields,)

    @property
    def fields(self):
        return self.args[0]

    @property
    def names(self):
        return tuple(f.name for f in self.fields)

    @property
    def width(self):
        """
        F, the sum of all embedding widths.
        """
        return sum(f.embed_dim for f in self.fields)

    def __len__(self):
        return len(self.fields)

    def __iter__(self):
        return iter(self.fields)

    def field(self, name):
        for f in self.fields:
            if f.name == name:
                return f
        raise KeyError(name)

    def index(self, name):
        return self.names.index(name)

    def column_offsets(self):
        """
        Map each field name to its (start, stop) columns in the concatenated
        embedding.
        """
        offsets = {}
        start = 0
        for f in self.fields:
            offsets[f.name] = (start, start + f.embed_dim)
            start += f.embed_dim
        return offsets

    def to_dict(self):
        return [f.to_dict() for f in self.fields]

    @classmethod
    def from_dict(cls, d):
        if not isinstance(d, list):
            raise ConfigError('schema', "must be a list of fields")
        return cls([FeatureField.from_dict(f) for f in d])

class GroupSpec(ImmutableObject):
    """
    The feature groups crossed by the EFGC branch.

    `groups` is a sequence of ``(name, fields)`` pairs. A field may appear in
    more than one group. The field names are checked against a schema with
    :meth:`validate`.

    >>> from mbcnet import GroupSpec
    >>> spec = GroupSpec([('user_item', ['user_id', 'item_id'])])
    >>> spec.names
    ('user_item',)
    >>> spec.groups[0][1]
    ('user_id', 'item_id')

    """
    __slots__ = ()

    def _typecheck(self, groups):
        if isinstance(groups, (str, bytes)) or not hasattr(groups, '__iter__'):
            raise TypeError("GroupSpec expects a sequence of (name, fields) pairs")
        canonical = []
        for group in groups:
            name, fields = group
            if not isinstance(name, str):
                raise TypeError(f"group name must be a string, not {type(name).__name__}")
            if isinstance(fields, str) or not hasattr(fields, '__iter__'):
                raise TypeError(f"group {name!r}: fields must be a sequence of field names")
            fields = tuple(fields)
            if not all(isinstance(f, str) for f in fields):
                raise TypeError(f"group {name!r}: field names must be strings")
            if len(fields) < 2:
                raise ConfigError(f'groups.{name}', f"a group needs at least 2 fields, got {len(fields)}")
            canonical.append((name, fields))
        if not canonical:
            raise ConfigError('groups', "at least one group is required")
        names = [name for name, _ in canonical]
        if len(set(names)) != len(names):
            raise ConfigError('groups', "group names must be unique")
        return (tuple(canonical),)

    @property
    def groups(self):
        return self.args[0]

    @property
    def names(self):
        return tuple(name for name, _ in self.groups)

    def __len__(self):
        return len(self.groups)

    def validate(self, schema):
        """
        Raise :class:`~.ConfigError` unless every group field is in `schema`.
        """
        known = set(schema.names)
        for name, fields in self.groups:
            for f in fields:
                if f not in known:
                    raise ConfigError(f'groups.{name}', f"unknown field {f!r}")
        return self

    def widths(self, schema):
        return tuple(sum(schema.field(f).embed_dim for f in fields)
                     for _, fields in self.groups)

    def to_dict(self):
        return [{'name': name, 'fields': list(fields)} for name, fields in self.groups]

    @classmethod
    def from_dict(cls, d):
        if not isinstance(d, list):
            raise ConfigError('groups', "must be a list of groups")
        pairs = []
        for g in d:
            if not isinstance(g, dict) or set(g) != {'name', 'fields'}:
                raise ConfigError('groups', f"each group needs exactly 'name' and 'fields', got {g!r}")
            pairs.append((g['name'], g['fields']))
        return cls(pairs)

MultiValued = namedtuple('MultiValued', ['offsets', 'ids'])
MultiValued.__doc__ = """
A multi-valued column: the ids of sample k are ids[offsets[k]:offsets[k+1]].
"""

def _take_multi(column, idx):
    starts = column.offsets[idx]
    lengths = column.offsets[idx + 1] - starts
    offsets = np.concatenate([[0], np.cumsum(lengths)]).astype(np.int64)
    positions = np.repeat(starts - offsets[:-1], lengths) + np.arange(offsets[-1])
    return MultiValued(offsets, column.ids[positions])

def ceiling(a, b):
    """
    Returns ceil(a/b)
    """
    return -(-a//b)

def batch_bounds(n, batch_size):
    """
    Partition ``range(n)`` into consecutive ``(start, stop)`` batches.

    The last batch is kept even when it is short.

    >>> from mbcnet.features import batch_bounds
    >>> batch_bounds(10, 4)
    [(0, 4), (4, 8), (8, 10)]

    """
    batch_size = operator_count(batch_size, 'batch_size')
    return [(k*batch_size, min((k + 1)*batch_size, n))
            for k in range(ceiling(n, batch_size))]

class Dataset:
    """
    An in-memory set of samples for a schema.

    `columns` maps every schema field name to its column: an integer array
    of shape (N,) for categorical fields, a :class:`MultiValued` for
    multi-valued fields, and a float array of shape (N, embed_dim) for
    numerical fields. `labels` are 0/1 and `categories` is an optional
    integer tag per sample. `rows` is the index of each sample in the
    dataset it was originally taken from (default: its own position), used
    to name samples in errors.
    """
    def __init__(self, schema, columns, labels, categories=None, *, rows=None):
        self.schema = schema
        labels = np.asarray(labels, dtype=np.int64).reshape(-1)
        n = len(labels)
        if np.any((labels != 0) & (labels != 1)):
            raise DataError("labels must be 0 or 1", field=LABEL_COLUMN)
        canonical = {}
        for f in schema:
            if f.name not in columns:
                raise DataError("missing column", field=f.name)
            col = columns[f.name]
            if f.kind == CATEGORICAL:
                col = np.asarray(col, dtype=np.int64).reshape(-1)
                size = len(col)
            elif f.kind == MULTI_VALUED:
                col = MultiValued(np.asarray(col[0], dtype=np.int64),
                                  np.asarray(col[1], dtype=np.int64))
                size = len(col.offsets) - 1
            else:
                col = np.asarray(col, dtype=np.float64).reshape((-1, f.embed_dim))
                size = len(col)
            if size != n:
                raise DataError(f"column has {size} samples, expected {n}", field=f.name)
            canonical[f.name] = col
        if categories is not None:
            categories = np.asarray(categories, dtype=np.int64).reshape(-1)
            if len(categories) != n:
                raise DataError(f"column has {len(categories)} samples, expected {n}",
                                field=CATEGORY_COLUMN)
        self.columns = canonical
        self.labels = labels
        self.categories = categories
        self.rows = np.arange(n) if rows is None else np.asarray(rows, dtype=np.int64).reshape(-1)
        if len(self.rows) != n:
            raise DataError(f"got {len(self.rows)} row indices, expected {n}")

    def __len__(self):
        return len(self.labels)

    def __repr__(self):
        return f"<{type(self).__name__} of {len(self)} samples, {len(self.schema)} fields>"

    def take(self, idx, cls=None):
        """
        Return the samples `idx` (an integer array) as a new dataset.
        """
        idx = np.asarray(idx, dtype=np.int64)
        columns = {}
        for f in self.schema:
            col = self.columns[f.name]
            columns[f.name] = _take_multi(col, idx) if f.kind == MULTI_VALUED else col[idx]
        categories = None if self.categories is None else self.categories[idx]
        return (cls or Dataset)(self.schema, columns, self.labels[idx], categories,
                                rows=self.rows[idx])

    def batch(self, idx):
        return self.take(idx, Batch)

    def batches(self, batch_size, order=None):
        """
        Yield :class:`Batch` objects of `batch_size` samples, visiting the
        samples in `order` (default: file order).
        """
        if order is None:
            order = np.arange(len(self))
        for start, stop in batch_bounds(len(self), batch_size):
            yield self.batch(order[start:stop])

    def validate_ids(self):
        """
        Raise :class:`~.DataError` naming the field and dataset row of the
        first id outside its vocabulary.
        """
        for f in self.schema:
            if f.kind == NUMERICAL:
                continue
            col = self.columns[f.name]
            ids = col if f.kind == CATEGORICAL else col.ids
            bad = np.flatnonzero((ids < 0) | (ids >= f.vocab_size))
            if bad.size:
                k = int(bad[0])
                if f.kind == MULTI_VALUED:
                    k = int(np.searchsorted(col.offsets, k, side='right')) - 1
                raise DataError(f"id {int(ids[bad[0]])} outside vocabulary of size {f.vocab_size}",
                                field=f.name, row=int(self.rows[k]))

class Batch(Dataset):
    """
    A non-empty slice of a :class:`Dataset` processed in one training step.
    """
    def __init__(self, schema, columns, labels, categories=None, *, rows=None):
        super().__init__(schema, columns, labels, categories, rows=rows)
        if len(self) < 1:
            raise DataError("a batch must contain at least one sample")

    def label_matrix(self):
        return Matrix(self.labels.astype(np.float64).reshape((-1, 1)))

def init_embeddings(schema, rng):
    """
    Initial embedding parameters for `schema`.

    Tables are drawn uniformly from ``[-1/sqrt(d), 1/sqrt(d)]``. Numerical
    fields get a square affine map started at the identity.
    """
    params = {}
    for f in schema:
        if f.kind == NUMERICAL:
            params[f'embedding/{f.name}/W'] = np.eye(f.embed_dim)
            params[f'embedding/{f.name}/b'] = np.zeros((1, f.embed_dim))
        else:
            bound = 1/np.sqrt(f.embed_dim)
            params[f'embedding/{f.name}'] = rng.uniform(-bound, bound, (f.vocab_size, f.embed_dim))
    return params

def embed_batch(batch, params, schema=None):
    """
    Embed every field of `batch`, returning one B x embed_dim Matrix per
    field in schema order.

    `params` maps parameter names to Matrix values (taped variables when
    training). Multi-valued fields are mean-pooled over the ids present;
    an empty list embeds to the zero vector.
    """
    schema = schema or batch.schema
    batch.validate_ids()
    B = len(batch)
    embeddings = []
    for f in schema:
        col = batch.columns[f.name]
        if f.kind == CATEGORICAL:
            e = lookup(params[f'embedding/{f.name}'], col)
        elif f.kind == MULTI_VALUED:
            lengths = np.diff(col.offsets)
            segments = np.repeat(np.arange(B), lengths)
            weights = np.repeat(1/np.maximum(lengths, 1), lengths)
            e = lookup(params[f'embedding/{f.name}'], col.ids, n_rows=B,
                       segments=segments, weights=weights)
        else:
            e = add(matmul(Matrix(col), params[f'embedding/{f.name}/W']),
                    params[f'embedding/{f.name}/b'])
        embeddings.append(e)
    return embeddings

def group_concat(embeddings, spec, schema):
    """
    Build the input matrix of every EFGC group by concatenating its member
    field embeddings, in group order.
    """
    return [concat_cols([embeddings[schema.index(f)] for f in fields])
            for _, fields in spec.groups]

def concat_all(embeddings):
    """
    Concatenate all field embeddings in schema order. This is the shared
    input of the Deep and Cross branches.
    """
    return concat_cols(list(embeddings))

def _parse_row(schema, row, line, has_category):
    values = {}
    for f in schema:
        cell = row[f.name]
        if cell is None:
            raise DataError("missing value", field=f.name, row=line)
        cell = cell.strip()
        try:
            if f.kind == CATEGORICAL:
                v = int(cell)
                if not 0 <= v < f.vocab_size:
                    raise DataError(f"id {v} outside vocabulary of size {f.vocab_size}",
                                    field=f.name, row=line)
            elif f.kind == MULTI_VALUED:
                v = [int(x) for x in cell.split('|')] if cell else []
                for x in v:
                    if not 0 <= x < f.vocab_size:
                        raise DataError(f"id {x} outside vocabulary of size {f.vocab_size}",
                                        field=f.name, row=line)
            else:
                v = [float(x) for x in cell.split('|')] if cell else []
                if len(v) != f.embed_dim:
                    raise DataError(f"expected {f.embed_dim} values, got {len(v)}",
                                    field=f.name, row=line)
                if not np.all(np.isfinite(v)):
                    raise DataError("values must be finite", field=f.name, row=line)
        except ValueError as e:
            if isinstance(e, DataError):
                raise
            raise DataError(f"cannot parse {cell!r}", field=f.name, row=line) from None
        values[f.name] = v
    label = (row[LABEL_COLUMN] or '').strip()
    if label not in ('0', '1'):
        raise DataError(f"label must be 0 or 1, got {label!r}", field=LABEL_COLUMN, row=line)
    category = None
    if has_category:
        try:
            category = int((row[CATEGORY_COLUMN] or '').strip())
        except ValueError:
            raise DataError(f"cannot parse {row[CATEGORY_COLUMN]!r}",
                            field=CATEGORY_COLUMN, row=line) from None
    return values, int(label), category

def _check_header(reader, path, schema):
    header = reader.fieldnames or []
    for name in (*schema.names, LABEL_COLUMN):
        if name not in header:
            raise DataError(f"{path}: missing column", field=name, row=1)
    return CATEGORY_COLUMN in header

def _from_parsed(schema, parsed, has_category, cls=None, start=0):
    columns = {}
    for f in schema:
        cells = [values[f.name] for values, _, _ in parsed]
        if f.kind == CATEGORICAL:
            columns[f.name] = np.array(cells, dtype=np.int64)
        elif f.kind == MULTI_VALUED:
            offsets = np.concatenate([[0], np.cumsum([len(c) for c in cells])])
            ids = np.array([x for c in cells for x in c], dtype=np.int64)
            columns[f.name] = MultiValued(offsets, ids)
        else:
            columns[f.name] = np.array(cells, dtype=np.float64).reshape((-1, f.embed_dim))
    labels = np.array([label for _, label, _ in parsed], dtype=np.int64)
    categories = np.array([c for _, _, c in parsed], dtype=np.int64) if has_category else None
    return (cls or Dataset)(schema, columns, labels, categories,
                            rows=np.arange(start, start + len(parsed)))

def read_dataset(path, schema):
    """
    Read a CSV file into a :class:`Dataset`.

    The header must contain every schema field and a ``label`` column, and
    may contain a ``category`` column. Rejected rows are logged and skipped;
    if more than 1% of the rows are rejected the whole file is refused with
    :class:`~.DataAbortError`.
    """
    with open(path, newline='') as f:
        reader = csv.DictReader(f)
        has_category = _check_header(reader, path, schema)

        parsed = []
        errors = []
        total = 0
        for line, row in enumerate(reader, start=2):
            total += 1
            try:
                parsed.append(_parse_row(schema, row, line, has_category))
            except DataError as e:
                errors.append(e)

    if errors:
        if len(errors) > MAX_BAD_ROW_FRACTION*total:
            raise DataAbortError(path, errors, total, MAX_BAD_ROW_FRACTION)
        for e in errors:
            logger.warning("%s: rejected %s", path, e)

    data = _from_parsed(schema, parsed, has_category)
    logger.info("read %d samples from %s", len(data), path)
    return data

def ingest_csv(path, schema, batch_size):
    """
    Yield the samples of a CSV file as batches of `batch_size`, in file
    order, while the file is being read.

    The format and row checks are those of :func:`read_dataset`, except that
    rejected rows are logged as they are met. The 1% limit can only be
    checked once the whole file has been read, so :class:`~.DataAbortError`
    is raised in place of the last batch, after the earlier ones have been
    yielded.
    """
    batch_size = operator_count(batch_size, 'batch_size')
    with open(path, newline='') as f:
        reader = csv.DictReader(f)
        has_category = _check_header(reader, path, schema)

        pending = []
        errors = []
        total = 0
        start = 0
        for line, row in enumerate(reader, start=2):
            total += 1
            try:
                pending.append(_parse_row(schema, row, line, has_category))
            except DataError as e:
                errors.append(e)
                logger.warning("%s: rejected %s", path, e)
                continue
            if len(pending) == batch_size:
                yield _from_parsed(schema, pending, has_category, Batch, start)
                start += len(pending)
                pending = []

    if len(errors) > MAX_BAD_ROW_FRACTION*total:
        raise DataAbortError(path, errors, total, MAX_BAD_ROW_FRACTION)
    if pending:
        yield _from_parsed(schema, pending, has_category, Batch, start)
    logger.info("read %d samples from %s", start + len(pending), path)

def write_csv(path, dataset):
    """
    Write `dataset` in the format read by :func:`read_dataset`.
    """
    schema = dataset.schema
    header = [*schema.names, LABEL_COLUMN]
    if dataset.categories is not None:
        header.append(CATEGORY_COLUMN)
    with open(path, 'w', newline='') as f:
        writer = csv.writer(f, lineterminator='\n')
        writer.writerow(header)
        for k in range(len(dataset)):
            row = []
            for field in schema:
                col = dataset.columns[field.name]
                if field.kind == CATEGORICAL:
                    row.append(str(int(col[k])))
                elif field.kind == MULTI_VALUED:
                    ids = col.ids[col.offsets[k]:col.offsets[k + 1]]
                    row.append('|'.join(str(int(x)) for x in ids))
                else:
                    row.append('|'.join(repr(float(x)) for x in col[k]))
            row.append(str(int(dataset.labels[k])))
            if dataset.categories is not None:
                row.append(str(int(dataset.categories[k])))
            writer.writerow(row)

def thin_positives(dataset, ratio, seed):
    """
    Keep every negative sample and a seeded random `ratio` of the positive
    ones, preserving sample order.

    Used to study how the model behaves as clicks get sparser.
    """
    if not 0 < ratio <= 1:
        raise ConfigError('train.density', f"must be in (0, 1], got {ratio}")
    if ratio == 1:
        return dataset
    positives = np.flatnonzero(dataset.labels == 1)
    rng = np.random.default_rng(seed)
    kept = rng.choice(positives, size=int(round(ratio*len(positives))), replace=False)
    keep = np.sort(np.concatenate([np.flatnonzero(dataset.labels == 0), kept]))
    logger.info("kept %d of %d positive samples (density %g)", len(kept), len(positives), ratio)
    return dataset.take(keep)
