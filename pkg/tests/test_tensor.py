import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from clqg import tensor as T
from clqg.optim import AdamState, NonFiniteGradientError, adam_step
from tests.gradcheck import check_gradients


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def test_matmul_identity_and_scalar(rng):
    a = rng.normal(size=(3, 3))
    with T.precision(np.float64):
        np.testing.assert_array_equal(T.matmul(np.eye(3), a).data, a)
    assert T.matmul([[2.0]], [[3.0]]).data.tolist() == [[6.0]]


def test_matmul_matches_triple_loop(rng):
    a, b = rng.normal(size=(4, 5)), rng.normal(size=(5, 3))
    expected = np.zeros((4, 3))
    for i in range(4):
        for j in range(3):
            for k in range(5):
                expected[i, j] += a[i, k] * b[k, j]
    with T.precision(np.float64):
        got = T.matmul(a, b).data
    np.testing.assert_allclose(got, expected, atol=1e-6)


def test_matmul_shape_error_names_both_shapes():
    with pytest.raises(T.DimensionError, match=r"\(2, 3\).*\(4, 5\)"):
        T.matmul(np.ones((2, 3)), np.ones((4, 5)))


def test_matmul_associativity(rng):
    for _ in range(10):
        a, b, c = rng.normal(size=(3, 4)), rng.normal(size=(4, 2)), rng.normal(size=(2, 5))
        with T.precision(np.float64):
            left = T.matmul(T.matmul(a, b), c).data
            right = T.matmul(a, T.matmul(b, c)).data
        np.testing.assert_allclose(left, right, atol=1e-5)


def test_softmax_examples():
    np.testing.assert_allclose(T.softmax([0.0, 0.0, 0.0]).data, [1 / 3] * 3, atol=1e-7)
    np.testing.assert_array_equal(T.softmax(np.array([0.0, -np.inf])).data, [1.0, 0.0])
    out = T.softmax(np.array([[-np.inf, -np.inf], [1.0, 2.0]])).data
    assert out[0].tolist() == [0.0, 0.0]
    assert not np.isnan(out).any()


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-50, 50), min_size=1, max_size=12), st.floats(-100, 100))
def test_softmax_sums_to_one_and_is_shift_invariant(xs, c):
    x = np.array(xs)
    with T.precision(np.float64):
        p = T.softmax(x).data
        q = T.softmax(x + c).data
    assert abs(p.sum() - 1.0) < 1e-6
    assert (p >= 0).all()
    np.testing.assert_allclose(p, q, atol=1e-6)


def test_softmax_bad_axis():
    with pytest.raises(T.DimensionError):
        T.softmax(np.zeros((2, 2)), axis=3)


def test_cross_entropy_examples(rng):
    logits = np.zeros((1, 8))
    assert math.isclose(T.cross_entropy(logits, [3]).item(), math.log(8), rel_tol=1e-6)

    peaked = np.zeros((1, 5))
    peaked[0, 2] = 30.0
    with T.precision(np.float64):
        assert T.cross_entropy(peaked, [2]).item() < 1e-9

    x = rng.normal(size=(3, 5))
    targets = [4, 0, 2]
    oracle = 0.0
    for row, t in zip(x, targets):
        oracle += -(row[t] - math.log(sum(math.exp(v) for v in row)))
    with T.precision(np.float64):
        assert abs(T.cross_entropy(x, targets).item() - oracle / 3) < 1e-6


def test_cross_entropy_excludes_padding(rng):
    x = rng.normal(size=(4, 6))
    with T.precision(np.float64):
        full = T.cross_entropy(x[:2], [1, 2]).item()
        padded = T.cross_entropy(x, [1, 2, 0, 0], pad_id=0).item()
    assert abs(full - padded) < 1e-12


def test_cross_entropy_all_padding_is_an_error():
    with pytest.raises(ValueError, match="padding"):
        T.cross_entropy(np.zeros((2, 3)), [0, 0], pad_id=0)


def test_backward_examples(rng):
    x = T.parameter(rng.normal(size=(3, 4)))
    T.tsum(x).backward()
    np.testing.assert_array_equal(x.grad, np.ones((3, 4)))

    y = T.parameter(rng.normal(size=5))
    T.tsum(y * y).backward()
    np.testing.assert_allclose(y.grad, 2 * y.data, rtol=1e-6)


def test_backward_accumulates_without_zeroing(rng):
    x = T.parameter(rng.normal(size=4))
    loss = T.tsum(x * 3.0)
    loss.backward()
    loss.backward()
    np.testing.assert_allclose(x.grad, 6.0 * np.ones(4))


def test_backward_rejects_non_scalar():
    x = T.parameter(np.ones(3))
    with pytest.raises(T.DimensionError):
        (x * 2.0).backward()


def test_every_reachable_parameter_gets_a_grad(rng):
    a, b = T.parameter(rng.normal(size=(2, 3))), T.parameter(rng.normal(size=(3, 2)))
    unused = T.parameter(np.ones(2))
    T.tsum(T.matmul(a, b)).backward()
    assert a.grad is not None and b.grad is not None and unused.grad is None


def test_no_grad_builds_no_graph(rng):
    a = T.parameter(rng.normal(size=3))
    with T.no_grad():
        out = a * 2.0
    assert out._backward is None


# gradient checks ----------------------------------------------------------

GRAD_CASES = {
    "add_broadcast": (lambda a, b: T.tsum(T.add(a, b) * a), [(3, 4), (4,)]),
    "sub": (lambda a, b: T.tsum(T.sub(a, b) * T.sub(a, b)), [(2, 3), (2, 3)]),
    "mul": (lambda a, b: T.tsum(T.mul(a, b)), [(3, 2), (1, 2)]),
    "div": (lambda a, b: T.tsum(T.div(a, T.exp(b))), [(2, 3), (2, 3)]),
    "exp_log": (lambda a: T.tsum(T.log(T.exp(a) + 1.0)), [(3, 3)]),
    "relu": (lambda a: T.tsum(T.relu(a) * a), [(4, 3)]),
    "matmul": (lambda a, b: T.tsum(T.matmul(a, b) * T.matmul(a, b)), [(3, 4), (4, 2)]),
    "batched_matmul": (lambda a, b: T.tsum(T.exp(T.matmul(a, b) * 0.1)), [(2, 3, 4), (4, 5)]),
    "linear": (lambda x, w, b: T.tsum(T.relu(T.linear(x, w, b)) * 1.5), [(2, 3, 4), (4, 5), (5,)]),
    "softmax": (lambda a, w: T.tsum(T.softmax(a, axis=-1) * w), [(3, 5), (3, 5)]),
    "softmax_axis0": (lambda a, w: T.tsum(T.softmax(a, axis=0) * w), [(4, 2), (4, 2)]),
    "log_softmax": (lambda a, w: T.tsum(T.log_softmax(a) * w), [(2, 6), (2, 6)]),
    "layer_norm": (lambda x, g, b, w: T.tsum(T.layer_norm(x, g, b) * w), [(3, 6), (6,), (6,), (3, 6)]),
    "reshape_transpose": (lambda a, w: T.tsum(T.transpose(T.reshape(a, (3, 2, 2)), (2, 0, 1)) * w),
                          [(4, 3), (2, 3, 2)]),
    "swapaxes": (lambda a, w: T.tsum(T.swapaxes(a, 0, 2) * w), [(2, 3, 4), (4, 3, 2)]),
    "concat": (lambda a, b, w: T.tsum(T.concat([a, b], axis=1) * w), [(2, 3), (2, 2), (2, 5)]),
    "mean": (lambda a: T.tsum(T.mean(a * a, axis=1)), [(3, 4)]),
    "sum_axis": (lambda a, w: T.tsum(T.tsum(a, axis=0) * w), [(3, 4), (4,)]),
    "cross_entropy": (lambda a: T.cross_entropy(a, [1, 3, 0, 2], pad_id=0), [(4, 5)]),
}


@pytest.mark.parametrize("name", sorted(GRAD_CASES))
def test_gradients_match_finite_differences(name):
    fn, shapes = GRAD_CASES[name]
    for seed in range(20):
        err = check_gradients(fn, shapes, seed)
        assert err < 1e-5, f"{name} seed {seed}: max relative error {err:.2e}"


def test_embedding_gradient():
    ids = np.array([[0, 2, 2], [1, 0, 3]])
    for seed in range(20):
        err = check_gradients(lambda table, w: T.tsum(T.embedding(table, ids) * w), [(4, 3), (2, 3, 3)], seed)
        assert err < 1e-5


def test_masked_softmax_gradient():
    mask = np.array([[0.0, -np.inf, 0.0], [-np.inf, -np.inf, -np.inf]])
    for seed in range(20):
        err = check_gradients(lambda a, w: T.tsum(T.softmax(a + mask) * w), [(2, 3), (2, 3)], seed)
        assert err < 1e-5


# Adam -----------------------------------------------------------------------

def test_adam_zero_gradient_is_identity():
    p = T.parameter(np.array([1.0, -2.0, 3.0]))
    state = AdamState()
    for _ in range(25):
        adam_step([p], [np.zeros(3)], state, lr=0.1)
    np.testing.assert_array_equal(p.data, np.array([1.0, -2.0, 3.0], dtype=np.float32))
    assert state.step_count == 25


def test_adam_first_step_has_magnitude_lr():
    # m1 = 0.1, v1 = 0.001; bias-corrected m/sqrt(v) = 1, so the step is lr*1/(1+eps)
    with T.precision(np.float64):
        p = T.parameter(np.array([0.5]))
    state = AdamState()
    adam_step([p], [np.array([1.0])], state, lr=1e-3)
    step = 0.5 - p.data[0]
    assert abs(step - 1e-3) / 1e-3 < 0.01


def test_adam_minimises_square():
    with T.precision(np.float64):
        w = T.parameter(np.array([1.0]))
    state = AdamState()
    previous = abs(w.data[0])
    for _ in range(10):
        adam_step([w], [2 * w.data.copy()], state, lr=0.1)
        assert abs(w.data[0]) < previous
        previous = abs(w.data[0])


def test_adam_rejects_non_finite_gradient():
    p = T.parameter(np.ones(2))
    state = AdamState()
    with pytest.raises(NonFiniteGradientError, match="enc.pri"):
        adam_step([p], [np.array([np.nan, 1.0])], state, lr=0.1, group="enc.pri")
    assert state.step_count == 0
    np.testing.assert_array_equal(p.data, np.ones(2, dtype=np.float32))


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 40))
def test_adam_zero_gradients_any_step_count(steps):
    p = T.parameter(np.array([0.25, -1.5]))
    state = AdamState()
    for _ in range(steps):
        adam_step([p], [None], state, lr=1.0)
    np.testing.assert_array_equal(p.data, np.array([0.25, -1.5], dtype=np.float32))
