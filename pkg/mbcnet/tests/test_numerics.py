import numpy as np

from hypothesis import given
from hypothesis.strategies import floats, integers, lists

from pytest import raises

from ..errors import ShapeError
from ..numerics import (EPS_PROB, Matrix, StopGradientMarker, Tape, add, affine,
                        as_matrix, backward, bce, bce_value, broadcast_shapes,
                        clip, clip_min, concat_cols, constant, divide, fsum,
                        grad_check, grad_check_errors, l2_sq, lookup, matmul,
                        mean_all, mean_cols_stack, mul, record, relu,
                        row_norms, scale, sigmoid, slice_cols, softmax_rows,
                        stop_gradient, sub, sum_all, take_rows, transpose)
from .helpers import matrices

def test_as_matrix():
    assert as_matrix(2.0).shape == (1, 1)
    assert as_matrix([1, 2, 3]).shape == (3, 1)
    assert as_matrix([[1, 2, 3]]).shape == (1, 3)
    assert as_matrix([[1]]).dtype == np.float64
    raises(ShapeError, lambda: as_matrix(np.zeros((2, 2, 2))))

def test_broadcast_shapes():
    assert broadcast_shapes('add', (4, 3), (4, 3)) == (4, 3)
    assert broadcast_shapes('add', (4, 3), (1, 3)) == (4, 3)
    assert broadcast_shapes('mul', (4, 1), (4, 3)) == (4, 3)
    assert broadcast_shapes('mul', (1, 1), (4, 3)) == (4, 3)
    with raises(ShapeError) as exc:
        broadcast_shapes('add', (4, 3), (4, 2))
    assert exc.value.op == 'add'
    assert exc.value.shape1 == (4, 3)
    assert exc.value.shape2 == (4, 2)
    assert isinstance(exc.value, ValueError)

@given(integers(1, 4), integers(1, 4))
def test_broadcast_shapes_hypothesis(rows, cols):
    for s1, s2 in [((rows, cols), (1, cols)), ((rows, cols), (rows, 1)),
                   ((1, 1), (rows, cols))]:
        assert broadcast_shapes('add', s1, s2) == np.broadcast_shapes(s1, s2)

def test_constants_record_nothing():
    a = constant([[1.0, 2.0]])
    b = a + a
    assert b.tape is None
    assert b.node is None
    assert np.array_equal(b.value, [[2.0, 4.0]])

def test_matrix_operators():
    tape = Tape()
    x = tape.variable([[1.0, 2.0]], 'x')
    y = (x @ Matrix([[1.0], [1.0]]))*3
    assert y.tape is tape
    assert y.item() == 9.0
    z = -x + 1
    assert np.array_equal(z.value, [[0.0, -1.0]])
    assert np.array_equal(x.T.value, [[1.0], [2.0]])
    assert repr(Matrix([[1, 2]])) == 'Matrix([[1.0, 2.0]])'
    raises(ShapeError, lambda: Matrix([[1.0, 2.0]]).item())

def test_shape_errors():
    raises(ShapeError, lambda: matmul([[1.0, 2.0]], [[1.0, 2.0]]))
    raises(ShapeError, lambda: add(np.zeros((2, 3)), np.zeros((3, 2))))
    raises(ShapeError, lambda: concat_cols([np.zeros((2, 1)), np.zeros((3, 1))]))
    raises(ShapeError, lambda: mean_cols_stack([np.zeros((2, 1)), np.zeros((2, 2))]))
    raises(ShapeError, lambda: slice_cols(np.zeros((2, 2)), 1, 3))
    raises(ShapeError, lambda: lookup(np.zeros((3, 2)), [0, 3]))
    raises(ShapeError, lambda: lookup(np.zeros((3, 2)), [-1]))

def test_different_tapes():
    a = Tape().variable([[1.0]], 'a')
    b = Tape().variable([[1.0]], 'b')
    raises(ValueError, lambda: add(a, b))

def test_backward_non_scalar_root():
    tape = Tape()
    x = tape.variable([[1.0, 2.0]], 'x')
    raises(ShapeError, lambda: tape.backward(mul(x, x)))
    raises(ValueError, lambda: tape.backward(constant([[1.0]])))

def test_backward_unreachable_is_zero():
    tape = Tape()
    x = tape.variable([[1.0, 2.0]], 'x')
    unused = tape.variable([[5.0]], 'unused')
    y = sum_all(mul(x, x))
    after = scale(unused, 2.0)
    grads = backward(tape, y)
    assert np.array_equal(grads['x'], [[2.0, 4.0]])
    assert np.array_equal(grads['unused'], [[0.0]])
    assert np.array_equal(tape.grad(after), [[0.0]])
    assert np.array_equal(tape.grad(y), [[1.0]])

def test_grad_before_backward():
    tape = Tape()
    x = tape.variable([[1.0]], 'x')
    raises(ValueError, lambda: tape.grad(x))

def test_variable_copies():
    value = np.array([[1.0, 2.0]])
    tape = Tape()
    x = tape.variable(value, 'x')
    value[0, 0] = 10.0
    assert x.value[0, 0] == 1.0

def test_stop_gradient():
    tape = Tape()
    x = tape.variable([[3.0]], 'x')
    y = mul(stop_gradient(x), x)
    grads = tape.backward(y)
    # d/dx (sg(x)*x) = sg(x) = 3, not 2x = 6
    assert grads['x'][0, 0] == 3.0
    assert len(tape.markers) == 1
    assert isinstance(tape.markers[0], StopGradientMarker)
    assert tape.markers[0].wrapped == x.node

def test_stop_gradient_constant():
    c = constant([[1.0]])
    assert stop_gradient(c).tape is None

def test_stop_gradient_blocks_everything_behind_it():
    tape = Tape()
    x = tape.variable([[2.0]], 'x')
    w = tape.variable([[5.0]], 'w')
    hidden = mul(x, w)
    y = sum_all(mul(stop_gradient(hidden), x))
    grads = tape.backward(y)
    assert grads['x'][0, 0] == 10.0
    assert grads['w'][0, 0] == 0.0

def test_record_custom_op():
    tape = Tape()
    x = tape.variable([[2.0]], 'x')
    cube = record('cube', [x], x.value**3, lambda g: (3*g*x.value**2,))
    assert tape.backward(cube)['x'][0, 0] == 12.0
    assert record('cube', [constant([[2.0]])], np.array([[8.0]]), None).tape is None

def test_sigmoid_extremes():
    s = sigmoid([[-1000.0, 0.0, 1000.0]]).value
    assert np.all(np.isfinite(s))
    assert s[0, 1] == 0.5

def test_softmax_rows():
    s = softmax_rows([[1.0, 2.0, 3.0], [1000.0, 1000.0, 1000.0]]).value
    assert np.allclose(s.sum(axis=1), 1.0)
    assert np.allclose(s[1], 1/3)

def test_row_norms_zero_row():
    tape = Tape()
    x = tape.variable([[3.0, 4.0], [0.0, 0.0]], 'x')
    n = row_norms(x)
    assert np.array_equal(n.value, [[5.0], [0.0]])
    grads = tape.backward(sum_all(n))
    assert np.allclose(grads['x'], [[0.6, 0.8], [0.0, 0.0]])

def test_clip_gradients():
    tape = Tape()
    x = tape.variable([[-2.0, 0.5, 2.0]], 'x')
    grads = tape.backward(sum_all(clip(x, 0.0, 1.0)))
    assert np.array_equal(grads['x'], [[0.0, 1.0, 0.0]])

    tape = Tape()
    x = tape.variable([[-20.0, -5.0]], 'x')
    y = clip_min(x, -10.0)
    assert np.array_equal(y.value, [[-10.0, -5.0]])
    grads = tape.backward(sum_all(y))
    assert np.array_equal(grads['x'], [[0.0, 1.0]])

def test_bce_clamp():
    # The clamp keeps the loss finite at p = 0 and p = 1
    loss = bce([[0.0], [1.0]], [[1.0], [0.0]]).value
    assert np.all(np.isfinite(loss))
    assert np.allclose(loss, -np.log(EPS_PROB))

    tape = Tape()
    p = tape.variable([[0.0], [0.5]], 'p')
    grads = tape.backward(sum_all(bce(p, [[1.0], [1.0]])))
    # No gradient flows where the clamp is active
    assert grads['p'][0, 0] == 0.0
    assert grads['p'][1, 0] == -2.0

@given(lists(floats(0, 1), min_size=1, max_size=10), lists(floats(0, 1), min_size=1, max_size=10))
def test_bce_matches_bce_value(p, y):
    n = min(len(p), len(y))
    p = np.array(p[:n]).reshape((-1, 1))
    y = np.array(y[:n]).reshape((-1, 1))
    assert np.array_equal(bce(p, y).value, bce_value(p, y))

def test_mean_cols_stack_idempotent():
    rng = np.random.default_rng(0)
    z = rng.normal(size=(5, 4))
    for k in range(1, 5):
        assert np.array_equal(mean_cols_stack([z]*k).value, z)

def test_mean_cols_stack_gradient():
    tape = Tape()
    a = tape.variable([[1.0, 2.0]], 'a')
    b = tape.variable([[3.0, 4.0]], 'b')
    c = tape.variable([[5.0, 6.0]], 'c')
    grads = tape.backward(sum_all(mean_cols_stack([a, b, c])))
    for name in 'abc':
        assert np.allclose(grads[name], 1/3)

def test_fsum():
    x = np.array([[1e16, 1.0, -1e16, 1.0]])
    assert fsum(x).item() == 2.0
    assert sum_all(x).value.shape == (1, 1)

def test_take_rows_repeated():
    tape = Tape()
    x = tape.variable([[1.0], [2.0], [3.0]], 'x')
    grads = tape.backward(sum_all(take_rows(x, [0, 0, 2])))
    assert np.array_equal(grads['x'], [[2.0], [0.0], [1.0]])

def test_lookup_pooled():
    table = np.arange(8.0).reshape((4, 2))
    # Sample 0 pools ids 1 and 3, sample 1 is empty, sample 2 has id 0
    out = lookup(table, [1, 3, 0], n_rows=3, segments=[0, 0, 2],
                 weights=[0.5, 0.5, 1.0])
    assert np.array_equal(out.value, [[4.0, 5.0], [0.0, 0.0], [0.0, 1.0]])

    tape = Tape()
    t = tape.variable(table, 't')
    grads = tape.backward(sum_all(lookup(t, [1, 1, 2])))
    assert np.array_equal(grads['t'], [[0, 0], [2, 2], [1, 1], [0, 0]])

@given(matrices(), matrices())
def test_elementwise_gradients(a, b):
    rows, cols = a.shape
    b = b[:1, :1]*np.ones((rows, cols)) + 0.5
    theta = {'a': a, 'b': b}
    for f in [lambda v: sum_all(add(v['a'], v['b'])),
              lambda v: sum_all(sub(v['a'], v['b'])),
              lambda v: sum_all(mul(v['a'], v['b'])),
              lambda v: l2_sq(sub(v['a'], v['b'])),
              lambda v: mean_all(mul(sigmoid(v['a']), v['b'])),
              lambda v: sum_all(mul(softmax_rows(v['a']), v['b'])),
              lambda v: mean_all(divide(scale(v['a'], 3.0), 2.0)),
              lambda v: sum_all(mean_cols_stack([v['a'], v['b']])),
              lambda v: fsum(concat_cols([v['a'], transpose(transpose(v['b']))])),
              ]:
        assert grad_check(f, theta, floor=1e-3) < 1e-5

@given(matrices(rows=integers(1, 4), cols=integers(2, 4)))
def test_matmul_gradients(x):
    rng = np.random.default_rng(0)
    W = rng.normal(size=(x.shape[1], 3))
    b = rng.normal(size=(1, 3))
    theta = {'x': x, 'W': W, 'b': b}
    f = lambda v: l2_sq(affine(v['x'], v['W'], v['b']))
    assert grad_check(f, theta, floor=1e-3) < 1e-5
    g = lambda v: sum_all(slice_cols(matmul(v['x'], v['W']), 1, 3))
    assert grad_check(g, theta, floor=1e-3) < 1e-5

def test_broadcast_gradients():
    rng = np.random.default_rng(1)
    theta = {'x': rng.normal(size=(4, 3)), 'row': rng.normal(size=(1, 3)),
             'col': rng.normal(size=(4, 1))}
    f = lambda v: l2_sq(mul(add(v['x'], v['row']), v['col']))
    errors = grad_check_errors(f, theta, floor=1e-3)
    assert set(errors) == {'x', 'row', 'col'}
    assert max(errors.values()) < 1e-6

def test_relu_and_row_norm_gradients():
    rng = np.random.default_rng(2)
    # Away from the kinks
    x = rng.uniform(0.1, 1.0, size=(3, 4))*np.where(rng.random((3, 4)) < 0.5, -1, 1)
    theta = {'x': x}
    assert grad_check(lambda v: sum_all(relu(v['x'])), theta, floor=1e-3) < 1e-6
    assert grad_check(lambda v: mean_all(row_norms(v["x"])), theta, floor=1e-3) < 1e-6
    assert grad_check(lambda v: mean_all(bce(sigmoid(v["x"]), 0.3)), theta, floor=1e-3) < 1e-6

def test_grad_check_sampled_entries():
    rng = np.random.default_rng(3)
    theta = {'W': rng.normal(size=(10, 10))}
    f = lambda v: l2_sq(v['W'])
    assert grad_check(f, theta, entries=5, seed=1, floor=1e-3) < 1e-6

def test_grad_check_catches_wrong_gradient():
    def wrong(v):
        x = v['x']
        return record('wrong_square', [x], x.value**2, lambda g: (g*x.value,))
    assert grad_check(wrong, {'x': [[2.0]]}) > 0.4
