import inspect
import operator

class classproperty(object):
    def __init__(self, f):
        self.f = f
    def __get__(self, obj, owner):
        return self.f(owner)

class ImmutableObject:
    """
    Base class for immutable configuration objects.

    Subclasses of this class are immutable objects. They all have the `.args`
    attribute, which gives the full necessary data to recreate the object,
    via,

    .. code:: python

       type(obj)(*obj.args) == obj

    All classes that subclass `ImmutableObject` should define the `_typecheck`
    method. `_typecheck(self, *args)` should do type checking and basic
    canonicalization, and either return a tuple of the new arguments for the
    class or raise an exception. Type checking means raising `TypeError` for
    inputs that are never meaningful (for instance a float layer width) and
    `ConfigError` for values that are the right type but out of range (for
    instance a zero layer width). Basic canonicalization means, for instance,
    converting lists of layer sizes into tuples of `int`. The
    `ImmutableObject` base constructor automatically sets `.args` to the
    arguments returned by this method.

    Subclasses that are read from the run configuration file also define
    `to_dict()` and `from_dict()`, and `from_dict(obj.to_dict()) == obj`
    always holds.

    >>> from mbcnet import DeepConfig
    >>> DeepConfig((128, 64, 32))
    DeepConfig((128, 64, 32))
    >>> DeepConfig([128, 64, 32]).args
    ((128, 64, 32),)

    """
    __slots__ = ('args',)

    def __init__(self, *args, **kwargs):
        """
        This method should be called by subclasses (via super()) after type-checking
        """
        args = self._typecheck(*args, **kwargs)
        self.args = args

    @classproperty
    def __signature__(self):
        """
        Allow Python 3's inspect.signature to give a useful signature for
        ImmutableObject subclasses.
        """
        sig = inspect.signature(self._typecheck)
        d = dict(sig.parameters)
        d.pop('self')
        return inspect.Signature(d.values())

    def __repr__(self):
        return f"{self.__class__.__name__}({', '.join(map(repr, self.args))})"

    def __str__(self):
        return f"{self.__class__.__name__}({', '.join(map(str, self.args))})"

    def __eq__(self, other):
        if not isinstance(other, ImmutableObject):
            return False
        return type(self) is type(other) and self.args == other.args

    def __hash__(self):
        return hash((type(self).__name__, self.args))

    def replace(self, **changes):
        """
        Return a copy of `self` with some constructor arguments replaced.

        >>> from mbcnet import CoopConfig
        >>> CoopConfig().replace(alpha=0.0).alpha
        0.0

        """
        params = list(inspect.signature(self._typecheck).parameters)
        kwargs = dict(zip(params, self.args))
        unknown = set(changes) - set(kwargs)
        if unknown:
            raise TypeError(f"{type(self).__name__} has no argument(s) {sorted(unknown)}")
        kwargs.update(changes)
        return type(self)(**kwargs)

def operator_count(n, name='value', *, minimum=1):
    """
    Convert `n` into a count using `__index__()` or raise an exception.

    This is the same as `operator.index()` except it disallows boolean types
    and values below `minimum`. Counts appear all over the configuration
    (layer widths, vocabulary sizes, batch sizes), and a `True` that slips
    into one of them is always a mistake.

    >>> from mbcnet.immutable import operator_count
    >>> operator_count(3)
    3
    >>> operator_count(1.0)
    Traceback (most recent call last):
    ...
    TypeError: 'float' object cannot be interpreted as an integer
    >>> operator_count(True)
    Traceback (most recent call last):
    ...
    TypeError: 'bool' object cannot be interpreted as an integer
    >>> operator_count(0, 'embed_dim')
    Traceback (most recent call last):
    ...
    mbcnet.errors.ConfigError: embed_dim: must be >= 1, got 0

    """
    from .errors import ConfigError

    if isinstance(n, bool):
        raise TypeError("'bool' object cannot be interpreted as an integer")
    n = operator.index(n)
    if n < minimum:
        raise ConfigError(name, f"must be >= {minimum}, got {n}")
    return n

def as_sizes(sizes, name, *, allow_empty=False):
    """
    Canonicalize a sequence of layer sizes into a tuple of positive ints.

    >>> from mbcnet.immutable import as_sizes
    >>> as_sizes([64, 16], 'hidden')
    (64, 16)

    """
    from .errors import ConfigError

    if isinstance(sizes, (str, bytes)) or not hasattr(sizes, '__iter__'):
        raise TypeError(f"{name}: expected a sequence of integers, not {type(sizes).__name__}")
    sizes = tuple(operator_count(s, name) for s in sizes)
    if not sizes and not allow_empty:
        raise ConfigError(name, "must not be empty")
    return sizes

def as_float(x, name, *, minimum=None):
    """
    Canonicalize a real-valued setting into a Python `float`.
    """
    from .errors import ConfigError

    if isinstance(x, bool) or not isinstance(x, (int, float)) and not hasattr(x, '__float__'):
        raise TypeError(f"{name}: expected a number, not {type(x).__name__}")
    x = float(x)
    if x != x:
        raise ConfigError(name, "must not be NaN")
    if minimum is not None and x < minimum:
        raise ConfigError(name, f"must be >= {minimum}, got {x}")
    return x
