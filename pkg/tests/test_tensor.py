import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from ignn_solver import tensor as T
from ignn_solver.errors import DomainError, NumericError, ShapeError


def test_affine_identity_left_factor():
    out = T.affine(np.eye(2), np.array([[2.0, 0.0], [0.0, 3.0]]), np.zeros(2))
    np.testing.assert_array_equal(out, [[2.0, 0.0], [0.0, 3.0]])


def test_affine_sum_plus_bias():
    np.testing.assert_array_equal(T.affine(np.array([[1.0, 1.0]]), np.array([[1.0], [1.0]]), np.array([5.0])), [[7.0]])


def test_affine_swap_matches_brute_force():
    x = np.array([[1.0, 2.0], [3.0, 4.0]])
    w = np.array([[0.0, 1.0], [1.0, 0.0]])
    b = np.array([1.0, 1.0])
    brute = [[sum(x[i, k] * w[k, j] for k in range(2)) + b[j] for j in range(2)] for i in range(2)]
    np.testing.assert_array_equal(T.affine(x, w, b), brute)
    np.testing.assert_array_equal(brute, [[3.0, 2.0], [5.0, 4.0]])


def test_affine_shape_error_names_both_shapes():
    with pytest.raises(ShapeError, match=r"\(2, 3\).*\(2, 2\)"):
        T.affine(np.ones((2, 3)), np.ones((2, 2)), np.zeros(2))
    with pytest.raises(ShapeError):
        T.affine(np.ones((2, 2)), np.ones((2, 2)), np.zeros(3))


def test_softmax_examples():
    np.testing.assert_allclose(T.softmax(np.array([0.0, 0.0])), [0.5, 0.5], atol=1e-15)
    np.testing.assert_allclose(T.softmax(np.array([1000.0, 1000.0, 1000.0])), [1 / 3] * 3, atol=1e-15)
    np.testing.assert_allclose(T.softmax(np.array([0.0, np.log(3.0)])), [0.25, 0.75], atol=1e-15)


def test_softmax_empty_is_domain_error():
    with pytest.raises(DomainError):
        T.softmax(np.array([]))


@given(arrays(np.float64, st.integers(1, 8), elements=st.floats(-50, 50)), st.floats(-100, 100))
def test_softmax_simplex_and_shift_invariance(v, c):
    p = T.softmax(v)
    assert np.all(p > 0)
    assert abs(p.sum() - 1.0) < 1e-12
    np.testing.assert_allclose(T.softmax(v + c), p, rtol=1e-9, atol=1e-12)


def test_masked_softmax_ignores_padding():
    p = T.masked_softmax(np.array([0.0, np.log(3.0), 50.0]), 2)
    np.testing.assert_allclose(p[:2], [0.25, 0.75], atol=1e-15)
    assert p[2] == 0.0


def test_grad_check_quadratic():
    assert T.grad_check(lambda x: T.total(T.mul(x, x)), np.array([[1.0, 2.0]]), 1e-5) < 1e-6


def test_grad_check_softmax_dot():
    c = np.array([0.3, -1.2, 2.0, 0.7])
    f = lambda x: T.total(T.mul(T.softmax(T.reshape(x, (4,))), c))
    assert T.grad_check(f, np.array([[0.1, -0.4, 0.9, 0.2]]), 1e-5) < 1e-6


def test_grad_check_constant_function():
    assert T.grad_check(lambda x: np.array(3.0), np.ones((2, 2)), 1e-5) == 0.0


def test_grad_check_rejects_bad_eps_and_nonfinite():
    with pytest.raises(DomainError):
        T.grad_check(lambda x: T.total(x), np.ones((1, 1)), 1e-2)
    with pytest.raises(NumericError):
        T.grad_check(lambda x: np.array(np.inf), np.ones((1, 1)), 1e-5)


def test_nonfinite_result_raises():
    with pytest.raises(NumericError):
        T.div(np.ones((1, 1)), np.zeros((1, 1)))


def test_relu_subgradient_at_zero_is_zero():
    tape = T.Tape()
    x = tape.leaf(np.array([[-1.0, 0.0, 2.0]]))
    g = tape.backward(T.total(T.relu(x)))
    np.testing.assert_array_equal(g[x], [[0.0, 0.0, 1.0]])


def _composite(params):
    w, b, v = params

    def f(x):
        h = T.tanh(T.affine(x, w, b))
        r = T.relu(T.affine(h, v, np.zeros(v.shape[1])))
        p = T.softmax(T.reshape(T.mean_rows(r), (v.shape[1],)))
        return T.add(T.fro_norm(h), T.total(T.mul(p, np.arange(v.shape[1]) + 1.0)))

    return f


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_composite_gradient_matches_finite_differences(seed):
    rng = np.random.default_rng(seed)
    x = rng.uniform(-1, 1, (3, 4))
    w, b, v = rng.uniform(-1, 1, (4, 5)), rng.uniform(-1, 1, 5), rng.uniform(-1, 1, (5, 3))
    f = _composite((w, b, v))
    # relu kinks make finite differences meaningless at points too close to 0
    h = np.tanh(x @ w + b)
    if np.min(np.abs(h @ v)) < 1e-4:
        return
    assert T.grad_check(f, x, 1e-6) < 1e-5


@given(st.integers(0, 2**31 - 1))
def test_matmul_associativity(seed):
    rng = np.random.default_rng(seed)
    a, b, c = rng.standard_normal((4, 5)), rng.standard_normal((5, 3)), rng.standard_normal((3, 6))
    left = T.matmul(T.matmul(a, b), c)
    right = T.matmul(a, T.matmul(b, c))
    assert np.linalg.norm(left - right) <= 1e-10 * max(np.linalg.norm(left), 1e-300)


def test_backward_is_idempotent():
    rng = np.random.default_rng(0)
    tape = T.Tape()
    x = tape.leaf(rng.standard_normal((3, 3)))
    y = T.fro_norm(T.tanh(T.matmul(x, x)))
    g1, g2 = tape.backward(y), tape.backward(y)
    assert np.array_equal(g1[x], g2[x])


def test_backward_requires_scalar():
    tape = T.Tape()
    x = tape.leaf(np.ones((2, 2)))
    with pytest.raises(ShapeError):
        tape.backward(T.tanh(x))


def test_untraced_ops_return_arrays():
    out = T.add(np.ones((2, 2)), 1.0)
    assert isinstance(out, np.ndarray) and not isinstance(out, T.Var)


def test_broadcast_gradient_reduces_to_operand_shape():
    tape = T.Tape()
    x = tape.leaf(np.ones((3, 2)))
    b = tape.leaf(np.array([1.0, 2.0]))
    g = tape.backward(T.total(T.mul(x, b)))
    np.testing.assert_array_equal(g[b], [3.0, 3.0])
    np.testing.assert_array_equal(g[x], np.tile([1.0, 2.0], (3, 1)))


def test_weighted_sum_gradients():
    rng = np.random.default_rng(1)
    mats = [rng.standard_normal((2, 3)) for _ in range(3)]
    tape = T.Tape()
    w = tape.leaf(np.array([0.2, 0.3, 0.5]))
    g = tape.backward(T.total(T.weighted_sum(w, mats)))
    np.testing.assert_allclose(g[w], [m.sum() for m in mats])
