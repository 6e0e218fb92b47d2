"""
Exceptions raised by mbcnet.

Each exception subclasses the builtin exception that a caller would naturally
catch for it (`ValueError` for bad values, `FloatingPointError` for
non-finite gradients), and keeps the data that produced it as attributes so
that callers (and tests) do not have to parse messages.

"""

class MBCError(Exception):
    """
    Base class for all mbcnet exceptions.
    """

class ShapeError(MBCError, ValueError):
    """
    Exception raised when the operands of a matrix operation have
    incompatible shapes.

    >>> from mbcnet.errors import ShapeError
    >>> print(ShapeError('matmul', (2, 3), (2, 3)))
    shape mismatch in matmul: (2, 3) and (2, 3) are not compatible

    """
    def __init__(self, op, shape1, shape2):
        super().__init__(op, shape1, shape2)
        self.op = op
        self.shape1 = shape1
        self.shape2 = shape2

    def __str__(self):
        return f"shape mismatch in {self.op}: {self.shape1} and {self.shape2} are not compatible"

class ConfigError(MBCError, ValueError):
    """
    Exception raised for an invalid run configuration.

    `field` is the dotted path of the offending setting, for instance
    `coop.alpha` or `groups`.

    >>> from mbcnet.errors import ConfigError
    >>> print(ConfigError('train.patience', 'must be >= 1, got 0'))
    train.patience: must be >= 1, got 0

    """
    def __init__(self, field, message):
        super().__init__(field, message)
        self.field = field
        self.message = message

    def __str__(self):
        return f"{self.field}: {self.message}"

class DataError(MBCError, ValueError):
    """
    Exception raised for malformed or out-of-range data.

    `field` and `row` are `None` when they are not known. `row` is a 1-based
    line number for CSV input (the header is line 1), and the 0-based index
    of the sample in its source dataset for in-memory data.
    """
    def __init__(self, message, *, field=None, row=None):
        super().__init__(message)
        self.message = message
        self.field = field
        self.row = row

    def __str__(self):
        where = []
        if self.field is not None:
            where.append(f"field {self.field!r}")
        if self.row is not None:
            where.append(f"row {self.row}")
        if where:
            return f"{', '.join(where)}: {self.message}"
        return self.message

class DataAbortError(DataError):
    """
    Exception raised when too many rows of a data file are rejected.

    `errors` is the list of per-row :class:`DataError` instances.
    """
    def __init__(self, path, errors, total, limit):
        self.path = path
        self.errors = errors
        self.total = total
        self.limit = limit
        super().__init__(f"{path}: rejected {len(errors)} of {total} rows (more than {limit:.0%})")

class CheckpointError(MBCError):
    """
    Base class for errors reading a checkpoint file.
    """

class CorruptCheckpointError(CheckpointError, ValueError):
    """
    Exception raised when a checkpoint file is truncated or malformed.
    """

class CheckpointVersionError(CheckpointError, ValueError):
    """
    Exception raised when a checkpoint has an unsupported format version.
    """
    def __init__(self, found, expected):
        super().__init__(found, expected)
        self.found = found
        self.expected = expected

    def __str__(self):
        return f"checkpoint format version {self.found} is not supported (expected {self.expected})"

class SchemaMismatchError(CheckpointError, ValueError):
    """
    Exception raised when a checkpoint was written for a different feature
    schema than the one it is loaded against.
    """
    def __init__(self, found, expected):
        super().__init__(found, expected)
        self.found = found
        self.expected = expected

    def __str__(self):
        return f"checkpoint schema hash {self.found[:12]} does not match the configured schema {self.expected[:12]}"

class UndefinedAUCError(MBCError, ValueError):
    """
    Exception raised when AUC is requested for labels of a single class.
    """
    def __init__(self, positives, negatives):
        super().__init__(positives, negatives)
        self.positives = positives
        self.negatives = negatives

    def __str__(self):
        return (f"AUC is undefined without both classes "
                f"({self.positives} positive, {self.negatives} negative labels)")

class NaNGradientError(MBCError, FloatingPointError):
    """
    Exception raised when a gradient contains NaN or infinite values.
    """
    def __init__(self, name, step):
        super().__init__(name, step)
        self.name = name
        self.step = step

    def __str__(self):
        return f"non-finite gradient for parameter {self.name!r} at step {self.step}"
