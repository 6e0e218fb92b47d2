"""
Dense 2-D matrices with reverse-mode gradient accumulation.

Every value in mbcnet is a 2-D float64 :class:`Matrix`. The batch dimension
is always the rows and the feature dimension the columns. A matrix is either
a constant (``tape is None``) or a node recorded on a :class:`Tape`.
Operations on constants are plain numpy computations and record nothing;
operations with at least one taped operand record a node holding the
forward value and a vector-Jacobian product closure. :meth:`Tape.backward`
walks the recorded nodes in reverse order.

>>> from mbcnet.numerics import Tape, matmul, sum_all
>>> tape = Tape()
>>> x = tape.variable([[3.0]], 'x')
>>> y = sum_all(matmul(x, x))
>>> grads = tape.backward(y)
>>> grads['x']
array([[6.]])

"""

import math
from collections import namedtuple

import numpy as np
from scipy.special import expit

from .errors import ShapeError

# Probabilities are clamped to [EPS_PROB, 1 - EPS_PROB] before any log.
EPS_PROB = 1e-7

StopGradientMarker = namedtuple('StopGradientMarker', ['wrapped'])
StopGradientMarker.__doc__ = """
Marks a tape node whose gradient is not propagated to `wrapped`.

`wrapped` is the node id of the value the marker was created from.
"""

def as_matrix(value, name='value'):
    """
    Cast `value` as a 2-D float64 numpy array.

    Scalars become 1 x 1 and 1-D sequences become a single column, so that a
    vector of per-sample values is always a B x 1 matrix.

    >>> from mbcnet.numerics import as_matrix
    >>> as_matrix(2).shape
    (1, 1)
    >>> as_matrix([1, 2, 3]).shape
    (3, 1)

    """
    if isinstance(value, Matrix):
        return value.value
    a = np.asarray(value, dtype=np.float64)
    if a.ndim == 0:
        a = a.reshape((1, 1))
    elif a.ndim == 1:
        a = a.reshape((-1, 1))
    elif a.ndim != 2:
        raise ShapeError(name, a.shape, '2-D')
    return a

def broadcast_shapes(op, shape1, shape2):
    """
    Broadcast two 2-D shapes together.

    Only size-1 axes broadcast, as in numpy, so a 1 x n bias row broadcasts
    against a B x n batch and a B x 1 gate column against a B x n expert
    output. Raises :class:`~.ShapeError` naming `op` otherwise.

    >>> from mbcnet.numerics import broadcast_shapes
    >>> broadcast_shapes('add', (4, 3), (1, 3))
    (4, 3)
    >>> broadcast_shapes('add', (4, 3), (4, 2))
    Traceback (most recent call last):
    ...
    mbcnet.errors.ShapeError: shape mismatch in add: (4, 3) and (4, 2) are not compatible

    """
    broadcasted = []
    for a, b in zip(shape1, shape2):
        if a == b or b == 1:
            broadcasted.append(a)
        elif a == 1:
            broadcasted.append(b)
        else:
            raise ShapeError(op, tuple(shape1), tuple(shape2))
    return tuple(broadcasted)

def _unbroadcast(grad, shape):
    # Sum the gradient over the axes that were broadcast in the forward pass
    if grad.shape[0] != shape[0]:
        grad = grad.sum(axis=0, keepdims=True)
    if grad.shape[1] != shape[1]:
        grad = grad.sum(axis=1, keepdims=True)
    return grad

class Node:
    """
    A recorded operation on a :class:`Tape`.

    `inputs` holds the node ids of the taped operands, with `None` in the
    positions of constant operands. `vjp` maps the gradient of the node's
    value to a tuple of gradients, one per operand. Leaves (variables) and
    stop-gradient markers have ``vjp = None``.
    """
    __slots__ = ('id', 'op', 'inputs', 'value', 'vjp', 'grad', 'name', 'marker')

    def __init__(self, id, op, inputs, value, vjp, name=None, marker=None):
        self.id = id
        self.op = op
        self.inputs = inputs
        self.value = value
        self.vjp = vjp
        self.grad = None
        self.name = name
        self.marker = marker

    def __repr__(self):
        return f"Node({self.id}, {self.op!r}, inputs={self.inputs})"

class Matrix:
    """
    A dense 2-D matrix of 64-bit floats, optionally recorded on a tape.

    Matrices support ``@``, ``+``, ``-``, ``*`` (elementwise, broadcasting
    size-1 axes) and unary ``-``, and `.T` for the transpose.

    >>> from mbcnet.numerics import Matrix
    >>> Matrix([[1, 2]]) @ Matrix([[3], [4]])
    Matrix([[11.0]])

    """
    __slots__ = ('value', 'tape', 'node')

    def __init__(self, value, tape=None, node=None):
        self.value = as_matrix(value)
        self.tape = tape
        self.node = node

    @property
    def shape(self):
        return self.value.shape

    @property
    def rows(self):
        return self.value.shape[0]

    @property
    def cols(self):
        return self.value.shape[1]

    @property
    def T(self):
        return transpose(self)

    def item(self):
        """
        Return the value of a 1 x 1 matrix as a Python float.
        """
        if self.shape != (1, 1):
            raise ShapeError('item', self.shape, (1, 1))
        return float(self.value[0, 0])

    def numpy(self):
        return self.value

    def __repr__(self):
        return f"Matrix({self.value.tolist()!r})"

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __neg__(self):
        return scale(self, -1.0)

def constant(value):
    """
    Wrap `value` as a constant (untaped) Matrix.
    """
    if isinstance(value, Matrix):
        return Matrix(value.value)
    return Matrix(value)

def _lift(x):
    return x if isinstance(x, Matrix) else Matrix(x)

class Tape:
    """
    An ordered record of operations for reverse-mode differentiation.

    Nodes are appended in evaluation order, so every node's inputs precede
    it. A tape is used from a single thread; independent tapes share
    nothing.
    """
    def __init__(self):
        self.nodes = []
        self.markers = []

    def __len__(self):
        return len(self.nodes)

    def variable(self, value, name=None):
        """
        Record a leaf whose gradient is wanted, returning it as a Matrix.

        The array is copied, so later in-place updates of a parameter do not
        change values recorded on the tape.
        """
        value = np.array(as_matrix(value, name or 'variable'), dtype=np.float64)
        node = Node(len(self.nodes), 'variable', (), value, None, name=name)
        self.nodes.append(node)
        return Matrix(value, self, node.id)

    def record(self, op, inputs, value, vjp):
        node_inputs = tuple(x.node if x.tape is self else None for x in inputs)
        node = Node(len(self.nodes), op, node_inputs, value, vjp)
        self.nodes.append(node)
        return Matrix(value, self, node.id)

    def stop_gradient(self, x):
        marker = StopGradientMarker(x.node)
        node = Node(len(self.nodes), 'stop_gradient', (x.node,), x.value, None,
                    marker=marker)
        self.nodes.append(node)
        self.markers.append(marker)
        return Matrix(x.value, self, node.id)

    def backward(self, root):
        """
        Accumulate gradients of the scalar `root` into every node.

        Returns a dict mapping each named variable to its gradient. Every
        node's `grad` buffer is populated afterwards; nodes that `root` does
        not depend on (including anything recorded after it and anything
        behind a stop-gradient marker) get an all-zero buffer.

        """
        if not isinstance(root, Matrix) or root.tape is not self:
            raise ValueError("backward() root must be a Matrix recorded on this tape")
        if root.shape != (1, 1):
            raise ShapeError('backward', root.shape, (1, 1))

        grads = [None]*len(self.nodes)
        grads[root.node] = np.ones((1, 1))
        for i in range(root.node, -1, -1):
            g = grads[i]
            node = self.nodes[i]
            if g is None or node.vjp is None:
                continue
            for input_id, input_grad in zip(node.inputs, node.vjp(g)):
                if input_id is None or input_grad is None:
                    continue
                if grads[input_id] is None:
                    grads[input_id] = np.array(input_grad, dtype=np.float64)
                else:
                    grads[input_id] = grads[input_id] + input_grad

        named = {}
        for node, g in zip(self.nodes, grads):
            node.grad = np.zeros_like(node.value) if g is None else g
            if node.op == 'variable' and node.name is not None:
                named[node.name] = node.grad
        return named

    def grad(self, x):
        """
        Return the gradient buffer of `x` after :meth:`backward`.
        """
        g = self.nodes[x.node].grad
        if g is None:
            raise ValueError("backward() has not been run on this tape")
        return g

def backward(tape, root):
    """
    Module-level spelling of :meth:`Tape.backward`.
    """
    return tape.backward(root)

def record(op, inputs, value, vjp):
    """
    Return `value` as a Matrix, recording it on the operands' tape if any.

    `inputs` is the list of operand matrices and `vjp(g)` must return one
    gradient (or `None`) per operand. This is how every operation in this
    module is defined, and can be used to define new ones.
    """
    tape = None
    for x in inputs:
        if x.tape is not None:
            if tape is not None and x.tape is not tape:
                raise ValueError(f"{op}: operands are recorded on different tapes")
            tape = x.tape
    if tape is None:
        return Matrix(value)
    return tape.record(op, inputs, value, vjp)

def stop_gradient(x):
    """
    Return `x` unchanged, but block gradient flow back into it.
    """
    x = _lift(x)
    if x.tape is None:
        return x
    return x.tape.stop_gradient(x)

def matmul(a, b):
    """
    Matrix product ``a @ b``.

    >>> from mbcnet.numerics import matmul
    >>> matmul([[1, 2]], [[3], [4]])
    Matrix([[11.0]])

    """
    a, b = _lift(a), _lift(b)
    if a.cols != b.rows:
        raise ShapeError('matmul', a.shape, b.shape)
    A, B = a.value, b.value
    return record('matmul', [a, b], A @ B,
                  lambda g: (g @ B.T, A.T @ g))

def add(a, b):
    a, b = _lift(a), _lift(b)
    sa, sb = a.shape, b.shape
    broadcast_shapes('add', sa, sb)
    return record('add', [a, b], a.value + b.value,
                  lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))

def sub(a, b):
    a, b = _lift(a), _lift(b)
    sa, sb = a.shape, b.shape
    broadcast_shapes('sub', sa, sb)
    return record('sub', [a, b], a.value - b.value,
                  lambda g: (_unbroadcast(g, sa), -_unbroadcast(g, sb)))

def mul(a, b):
    """
    Elementwise product, broadcasting size-1 axes.
    """
    a, b = _lift(a), _lift(b)
    A, B = a.value, b.value
    broadcast_shapes('mul', A.shape, B.shape)
    return record('mul', [a, b], A*B,
                  lambda g: (_unbroadcast(g*B, A.shape), _unbroadcast(g*A, B.shape)))

def scale(a, c):
    """
    Multiply `a` by the Python scalar `c`.
    """
    a = _lift(a)
    c = float(c)
    return record('scale', [a], a.value*c, lambda g: (g*c,))

def divide(a, c):
    """
    Divide `a` by the Python scalar `c`.
    """
    a = _lift(a)
    c = float(c)
    return record('divide', [a], a.value/c, lambda g: (g/c,))

def transpose(a):
    a = _lift(a)
    return record('transpose', [a], a.value.T.copy(), lambda g: (g.T,))

def sigmoid(x):
    """
    Elementwise logistic function ``1/(1 + exp(-x))``.

    >>> from mbcnet.numerics import sigmoid
    >>> sigmoid([[0.0, 2.0]]).value.round(6).tolist()
    [[0.5, 0.880797]]

    """
    x = _lift(x)
    s = expit(x.value)
    return record('sigmoid', [x], s, lambda g: (g*s*(1 - s),))

def relu(x):
    x = _lift(x)
    X = x.value
    return record('relu', [x], np.maximum(X, 0.0), lambda g: (g*(X > 0),))

def softmax_rows(x):
    """
    Softmax across the columns of every row.
    """
    x = _lift(x)
    X = x.value
    e = np.exp(X - X.max(axis=1, keepdims=True))
    s = e/e.sum(axis=1, keepdims=True)
    return record('softmax_rows', [x], s,
                  lambda g: (s*(g - (g*s).sum(axis=1, keepdims=True)),))

def row_norms(x):
    """
    Euclidean norm of every row, as a B x 1 matrix.

    The gradient at a zero row is taken to be zero.
    """
    x = _lift(x)
    X = x.value
    n = np.sqrt((X*X).sum(axis=1, keepdims=True))

    def vjp(g):
        safe = np.where(n > 0, n, 1.0)
        return (np.where(n > 0, g*X/safe, 0.0),)

    return record('row_norms', [x], n, vjp)

def clip_min(x, lo):
    """
    Elementwise ``max(x, lo)``; no gradient flows where the floor is active.
    """
    x = _lift(x)
    X = x.value
    lo = float(lo)
    return record('clip_min', [x], np.maximum(X, lo), lambda g: (g*(X > lo),))

def clip(x, lo, hi):
    """
    Elementwise clip to ``[lo, hi]``; no gradient flows where a bound is
    active.
    """
    x = _lift(x)
    X = x.value
    return record('clip', [x], np.clip(X, lo, hi), lambda g: (g*((X > lo) & (X < hi)),))

def clamp_probability(p):
    return np.clip(p, EPS_PROB, 1 - EPS_PROB)

def bce_value(p, y):
    """
    Elementwise binary cross entropy on plain arrays, with the probability
    clamp applied. `y` may be a soft label in [0, 1].

    This is the single definition of BCE used by the loss, the
    strong/weak classification, and the LogLoss metric.

    >>> from mbcnet.numerics import bce_value
    >>> round(float(bce_value(0.9, 1.0)), 6)
    0.105361

    """
    p = clamp_probability(np.asarray(p, dtype=np.float64))
    y = np.asarray(y, dtype=np.float64)
    return -(y*np.log(p) + (1 - y)*np.log(1 - p))

def bce(p, y):
    """
    Elementwise binary cross entropy ``-[y log p + (1-y) log(1-p)]``.

    `p` is clamped to ``[EPS_PROB, 1 - EPS_PROB]`` first. `y` may be a
    Matrix (for instance a stop-gradient soft label), an array, or a scalar,
    and must broadcast against `p`.

    >>> from mbcnet.numerics import bce
    >>> bce([[0.5], [0.9]], [[0.0], [1.0]]).value.ravel().round(6).tolist()
    [0.693147, 0.105361]

    """
    p, y = _lift(p), _lift(y)
    broadcast_shapes('bce', p.shape, y.shape)
    P, Y = p.value, y.value
    Pc = clamp_probability(P)
    loss = -(Y*np.log(Pc) + (1 - Y)*np.log(1 - Pc))

    def vjp(g):
        inside = (P >= EPS_PROB) & (P <= 1 - EPS_PROB)
        dp = g*inside*(Pc - Y)/(Pc*(1 - Pc))
        dy = g*(np.log(1 - Pc) - np.log(Pc))
        return (_unbroadcast(dp, P.shape), _unbroadcast(dy, Y.shape))

    return record('bce', [p, y], loss, vjp)

def concat_cols(matrices):
    """
    Concatenate matrices with equal row counts along the columns.
    """
    matrices = [_lift(m) for m in matrices]
    if not matrices:
        raise ValueError("concat_cols() needs at least one matrix")
    rows = matrices[0].rows
    for m in matrices[1:]:
        if m.rows != rows:
            raise ShapeError('concat_cols', matrices[0].shape, m.shape)
    widths = [m.cols for m in matrices]
    bounds = np.cumsum([0] + widths)

    def vjp(g):
        return tuple(g[:, bounds[k]:bounds[k + 1]] for k in range(len(widths)))

    return record('concat_cols', matrices,
                  np.concatenate([m.value for m in matrices], axis=1), vjp)

def slice_cols(x, start, stop):
    x = _lift(x)
    if not 0 <= start <= stop <= x.cols:
        raise ShapeError('slice_cols', x.shape, (start, stop))
    cols = x.cols

    def vjp(g):
        full = np.zeros((g.shape[0], cols))
        full[:, start:stop] = g
        return (full,)

    return record('slice_cols', [x], x.value[:, start:stop].copy(), vjp)

def take_rows(x, idx):
    """
    Select the rows `idx` (an integer array) of `x`.
    """
    x = _lift(x)
    idx = np.asarray(idx, dtype=np.intp)
    shape = x.shape

    def vjp(g):
        full = np.zeros(shape)
        np.add.at(full, idx, g)
        return (full,)

    return record('take_rows', [x], x.value[idx], vjp)

def mean_cols_stack(matrices):
    """
    Elementwise mean of same-shaped matrices.

    The mean is accumulated incrementally (``m += (x - m)/k``), so that the
    mean of identical matrices is that matrix bit for bit.

    >>> from mbcnet.numerics import mean_cols_stack
    >>> mean_cols_stack([[[1, 3]], [[3, 5]]])
    Matrix([[2.0, 4.0]])

    """
    matrices = [_lift(m) for m in matrices]
    if not matrices:
        raise ValueError("mean_cols_stack() needs at least one matrix")
    shape = matrices[0].shape
    for m in matrices[1:]:
        if m.shape != shape:
            raise ShapeError('mean_cols_stack', shape, m.shape)
    mean = matrices[0].value.copy()
    for k, m in enumerate(matrices[1:], start=2):
        mean += (m.value - mean)/k
    n = len(matrices)
    return record('mean_cols_stack', matrices, mean,
                  lambda g: tuple(g/n for _ in range(n)))

def sum_all(x):
    """
    Sum of all entries, as a 1 x 1 matrix.
    """
    x = _lift(x)
    shape = x.shape
    return record('sum_all', [x], np.array([[x.value.sum()]]),
                  lambda g: (np.full(shape, g[0, 0]),))

def fsum(x):
    """
    Sum of all entries computed with `math.fsum`, as a 1 x 1 matrix.

    The result is the correctly rounded sum, independent of the order of the
    entries.
    """
    x = _lift(x)
    shape = x.shape
    return record('fsum', [x], np.array([[math.fsum(x.value.ravel().tolist())]]),
                  lambda g: (np.full(shape, g[0, 0]),))

def mean_all(x):
    """
    Mean of all entries, as a 1 x 1 matrix.
    """
    x = _lift(x)
    shape = x.shape
    n = x.value.size
    return record('mean_all', [x], np.array([[x.value.sum()/n]]),
                  lambda g: (np.full(shape, g[0, 0]/n),))

def l2_sq(x):
    """
    Squared Frobenius norm, as a 1 x 1 matrix.
    """
    x = _lift(x)
    X = x.value
    return record('l2_sq', [x], np.array([[(X*X).sum()]]),
                  lambda g: (2*g[0, 0]*X,))

def affine(x, W, b=None):
    """
    ``x @ W + b`` with the 1 x n bias row broadcast over the batch.
    """
    out = matmul(x, W)
    if b is not None:
        out = add(out, b)
    return out

def lookup(table, ids, n_rows=None, segments=None, weights=None):
    """
    Gather (and optionally pool) rows of an embedding table.

    Without `segments`, output row ``k`` is ``table[ids[k]]``. With
    `segments`, output row ``s`` is ``sum(weights[k]*table[ids[k]])`` over
    the ``k`` with ``segments[k] == s``; rows with no entries are zero.
    Gradients are scattered back only into the looked-up table rows.
    """
    table = _lift(table)
    T = table.value
    ids = np.asarray(ids, dtype=np.intp)
    if ids.size and (ids.min() < 0 or ids.max() >= T.shape[0]):
        raise ShapeError('lookup', T.shape, (int(ids.min()), int(ids.max())))
    if segments is None:
        def vjp(g):
            full = np.zeros_like(T)
            np.add.at(full, ids, g)
            return (full,)
        return record('lookup', [table], T[ids], vjp)

    segments = np.asarray(segments, dtype=np.intp)
    weights = np.ones(ids.shape) if weights is None else np.asarray(weights, dtype=np.float64)
    out = np.zeros((n_rows, T.shape[1]))
    np.add.at(out, segments, weights[:, None]*T[ids])

    def vjp(g):
        full = np.zeros_like(T)
        np.add.at(full, ids, weights[:, None]*g[segments])
        return (full,)

    return record('lookup', [table], out, vjp)

def grad_check_errors(f, theta, h=1e-5, *, entries=None, seed=0, floor=1e-8):
    """
    Compare analytic gradients of `f` against central differences.

    `f` takes a dict mapping names to Matrix values and returns a 1 x 1
    Matrix. `theta` maps the same names to arrays. Returns a dict mapping
    each name to the largest relative error over its entries,

    .. code:: python

       |analytic - numeric| / max(|analytic|, |numeric|, floor)

    If `entries` is given, only that many randomly chosen entries (seeded
    by `seed`) of each tensor are perturbed.
    """
    theta = {name: as_matrix(value, name) for name, value in theta.items()}
    tape = Tape()
    variables = {name: tape.variable(value, name) for name, value in theta.items()}
    analytic = tape.backward(f(variables))

    rng = np.random.default_rng(seed)
    errors = {}
    for name, value in theta.items():
        flat = np.arange(value.size)
        if entries is not None and entries < value.size:
            flat = np.sort(rng.choice(value.size, size=entries, replace=False))
        worst = 0.0
        for k in flat:
            i, j = divmod(int(k), value.shape[1])
            values = {}
            for sign in (1, -1):
                perturbed = dict(theta)
                moved = value.copy()
                moved[i, j] += sign*h
                perturbed[name] = moved
                values[sign] = f({n: constant(v) for n, v in perturbed.items()}).item()
            numeric = (values[1] - values[-1])/(2*h)
            a = analytic[name][i, j]
            err = abs(a - numeric)/max(abs(a), abs(numeric), floor)
            worst = max(worst, err)
        errors[name] = worst
    return errors

def grad_check(f, theta, h=1e-5, **kwargs):
    """
    Largest relative gradient error of `f` at `theta`; see
    :func:`grad_check_errors`.

    >>> from mbcnet.numerics import grad_check, matmul, sum_all
    >>> f = lambda v: sum_all(matmul(v['x'], v['w']))
    >>> grad_check(f, {'x': [[1.0, 2.0]], 'w': [[3.0], [4.0]]}) < 1e-8
    True

    """
    errors = grad_check_errors(f, theta, h, **kwargs)
    return max(errors.values(), default=0.0)
