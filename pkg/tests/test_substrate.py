import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from relmod import substrate as sb
from relmod.substrate import DiffTensor

from conftest import fd_check


def P(x):
    return sb.parameter(np.asarray(x, dtype=np.float64))


# ---------------------------------------------------------------- matmul


def test_matmul_identity_and_scalar():
    B = np.array([[1.0, 2.0], [3.0, 4.0]])
    assert np.array_equal((DiffTensor(np.eye(2)) @ DiffTensor(B)).data, B)
    assert (DiffTensor([[2.0]]) @ DiffTensor([[3.0]])).data.tolist() == [[6.0]]


def test_matmul_shape_mismatch_reports_both_shapes():
    with pytest.raises(ValueError, match=r"\(3, 4\).*\(3, 2\)"):
        sb.matmul(DiffTensor(np.zeros((3, 4))), DiffTensor(np.zeros((3, 2))))


def test_matmul_grad_vs_finite_differences(rng):
    a, b = P(rng.normal(size=(3, 4))), P(rng.normal(size=(4, 2)))
    assert fd_check(lambda: sb.sum_(sb.tanh(a @ b)), [a, b]) < 1e-6


def test_batched_matmul_grad_broadcasts_weight(rng):
    x, w = P(rng.normal(size=(2, 3, 4))), P(rng.normal(size=(4, 5)))
    assert fd_check(lambda: sb.sum_(sb.square(x @ w)), [x, w]) < 1e-6


# ---------------------------------------------------------------- softmax


def test_softmax_uniform_and_analytic():
    assert np.allclose(sb.softmax(DiffTensor([[0.0, 0.0, 0.0]])).data, [[1 / 3] * 3])
    assert np.allclose(sb.softmax(DiffTensor([[0.0, math.log(2)]])).data, [[1 / 3, 2 / 3]])


def test_softmax_masked_entry_against_direct_computation():
    out = sb.softmax(DiffTensor([[5.0, 7.0, 1.0]]), mask=np.array([[True, False, True]])).data[0]
    e5, e1 = math.exp(5.0), math.exp(1.0)
    expected = [e5 / (e5 + e1), 0.0, e1 / (e5 + e1)]
    assert out[1] == 0.0
    assert np.allclose(out, expected, atol=1e-15)
    assert out[0] == pytest.approx(0.982, abs=5e-4) and out[2] == pytest.approx(0.018, abs=5e-4)


def test_softmax_fully_masked_row_rejected():
    with pytest.raises(ValueError, match="masked"):
        sb.softmax(DiffTensor([[1.0, 2.0]]), mask=np.array([[False, False]]))


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 8), st.integers(1, 8), st.integers(0, 10_000))
def test_softmax_rows_sum_to_one_masked_zero(r, c, seed):
    rng = np.random.default_rng(seed)
    mask = rng.random((r, c)) < 0.6
    mask[np.arange(r), rng.integers(0, c, size=r)] = True
    out = sb.softmax(DiffTensor(rng.normal(scale=5, size=(r, c))), mask=mask).data
    assert np.all(out[~mask] == 0.0)
    assert np.all(out[mask] > 0)
    assert np.allclose(out.sum(axis=1), 1.0, atol=1e-6)


# ---------------------------------------------------------------- elementwise and reductions


def test_elementwise_basics():
    assert np.all(sb.tanh(DiffTensor(np.zeros((2, 3)))).data == 0)
    L, h = 5, 3
    parts = [DiffTensor(np.ones((L, h))) for _ in range(3)]
    assert sb.concat(parts, axis=-1).shape == (L, 3 * h)
    assert sb.frobenius(DiffTensor([[0.0, 1.0], [1.0, 0.0]])).item() == pytest.approx(math.sqrt(2))


def test_incompatible_shapes_rejected():
    with pytest.raises(ValueError):
        sb.add(DiffTensor(np.ones((2, 3))), DiffTensor(np.ones((4,))))
    with pytest.raises(ValueError):
        sb.concat([DiffTensor(np.ones((2, 3))), DiffTensor(np.ones((3, 3)))], axis=-1)


OPS = {
    "tanh": lambda x, y: sb.tanh(x),
    "sigmoid": lambda x, y: sb.sigmoid(x),
    "add_bias": lambda x, y: x + y[0],
    "mul": lambda x, y: x * y,
    "div": lambda x, y: x / (sb.square(y) + 1.0),
    "concat": lambda x, y: sb.concat([x, y, x], axis=-1),
    "sum_axis0": lambda x, y: sb.sum_(x * y, axis=0),
    "weighted_sum": lambda x, y: sb.weighted_sum(sb.softmax(y), x, axis=-1),
    "frobenius": lambda x, y: sb.frobenius(x - y),
    "frobenius_rows": lambda x, y: sb.frobenius(x.reshape(1, *x.shape) + y, axes=(-2, -1)),
    "softmax_masked": lambda x, y: sb.softmax(x, mask=np.eye(*x.shape, dtype=bool) | (np.arange(x.shape[1]) == 0)) * y,
    "log_softmax": lambda x, y: sb.log_softmax(x) * y,
    "transpose_matmul": lambda x, y: sb.transpose(x) @ y,
    "getitem": lambda x, y: x[:, ::2] * 3.0 + y[0:1, ::2],
    "gather_rows": lambda x, y: x[np.array([0, 0, x.shape[0] - 1])],
    "stack": lambda x, y: sb.stack([x, y], axis=1),
    "mean": lambda x, y: sb.mean(x * y, axis=1),
    "masked_fill": lambda x, y: sb.masked_fill(x, np.arange(x.shape[1]) % 2 == 0, 0.0) * y,
}


@pytest.mark.parametrize("name", sorted(OPS))
@settings(max_examples=15, deadline=None)
@given(rows=st.integers(1, 8), cols=st.integers(1, 8), seed=st.integers(0, 10_000))
def test_op_gradients_match_finite_differences(name, rows, cols, seed):
    rng = np.random.default_rng(seed)
    x, y = P(rng.normal(size=(rows, cols))), P(rng.normal(size=(rows, cols)))
    w = DiffTensor(rng.normal(size=OPS[name](x, y).shape))
    assert fd_check(lambda: sb.sum_(OPS[name](x, y) * w), [x, y]) < 1e-4


# ---------------------------------------------------------------- cross entropy


def test_cross_entropy_uniform_is_log_classes():
    for L in (1, 2, 7, 40):
        assert sb.cross_entropy(DiffTensor(np.zeros(L)), 3 % L).item() == pytest.approx(math.log(L))


def test_cross_entropy_saturates():
    # log(1 + 3 e^-20) ~ 6.2e-9; with five or more rivals it would exceed 1e-8
    logits = np.zeros(4)
    logits[2] = 20.0
    assert sb.cross_entropy(DiffTensor(logits), 2).item() < 1e-8


def test_cross_entropy_matches_direct_formula(rng):
    logits = rng.normal(scale=3, size=7)
    for t in range(7):
        direct = -math.log(math.exp(logits[t]) / sum(math.exp(v) for v in logits))
        assert abs(sb.cross_entropy(DiffTensor(logits), t).item() - direct) < 1e-10


def test_cross_entropy_rejects_bad_target():
    with pytest.raises(ValueError):
        sb.cross_entropy(DiffTensor(np.zeros(4)), 4)
    with pytest.raises(ValueError):
        sb.cross_entropy(DiffTensor(np.zeros((2, 4))), np.array([0, 1]), mask=np.array([[1, 1, 0, 0], [0, 0, 1, 1]], bool))


def test_cross_entropy_grad(rng):
    x = P(rng.normal(size=(3, 5)))
    mask = np.ones((3, 5), bool)
    mask[0, 4] = False
    assert fd_check(lambda: sb.sum_(sb.cross_entropy(x, np.array([1, 4, 0]), mask=mask)), [x]) < 1e-6


# ---------------------------------------------------------------- backward


def test_backward_sum_gives_ones():
    w = P(np.arange(6.0).reshape(2, 3))
    sb.backward(sb.sum_(w))
    assert np.array_equal(w.grad, np.ones((2, 3)))


def test_backward_squared_norm():
    w = P([[3.0, 4.0]])
    sb.backward(sb.square(sb.frobenius(w)))
    assert np.allclose(w.grad, [[6.0, 8.0]])


def test_backward_rejects_non_scalar():
    with pytest.raises(ValueError, match="scalar"):
        sb.backward(P(np.ones(3)) * 2.0)


def test_unreachable_leaf_has_zero_grad():
    used, unused = P(np.ones(2)), P(np.ones(3))
    sb.backward(sb.sum_(used))
    assert np.array_equal(unused.grad, np.zeros(3))


def test_shared_parameter_accumulates():
    w = P([2.0])
    sb.backward(sb.sum_(w * w + w * 3.0))
    assert w.grad.tolist() == [7.0]


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 6), st.integers(1, 6), st.integers(0, 10_000))
def test_backward_is_additive(r, c, seed):
    rng = np.random.default_rng(seed)
    w = P(rng.normal(size=(r, c)))
    m = DiffTensor(rng.normal(size=(c, r)))

    def l1():
        return sb.sum_(sb.tanh(w @ m))

    def l2():
        return sb.frobenius(w * w)

    sb.backward(l1() + l2())
    together = w.grad.copy()
    w.zero_grad()
    sb.backward(l1())
    sb.backward(l2())
    assert np.allclose(together, w.grad, atol=1e-10, rtol=0)


def test_no_grad_records_nothing():
    w = P([1.0])
    with sb.no_grad():
        out = w * 2.0
    assert not out.requires_grad


# ---------------------------------------------------------------- adam


def test_adam_zero_grads_leave_params():
    w = P([1.0, -2.0])
    state = sb.AdamState(lr=0.1)
    sb.adam_step([w], state)
    assert w.data.tolist() == [1.0, -2.0]
    assert state.step == 1


def test_adam_first_step_moves_by_lr():
    w = P([0.5])
    w.grad = np.array([1.0])
    sb.adam_step([w], sb.AdamState(lr=0.1))
    assert w.data[0] == pytest.approx(0.5 - 0.1, abs=1e-6)
    assert w.grad.tolist() == [0.0]


def test_adam_decreases_convex_scalar():
    w = P([1.0])
    state = sb.AdamState(lr=0.05)
    prev = abs(w.data[0])
    for _ in range(10):
        sb.backward(sb.sum_(sb.square(w)))
        sb.adam_step([w], state)
        assert abs(w.data[0]) < prev
        prev = abs(w.data[0])
    assert state.step == 10


def test_adam_rejects_missing_grad():
    with pytest.raises(ValueError, match="no gradient"):
        sb.adam_step([DiffTensor([1.0])], sb.AdamState())


def test_float32_precision_is_preserved():
    w = sb.parameter(np.ones((2, 2)), dtype=np.float32)
    out = sb.tanh(w @ w + 1.0) * 0.5
    assert out.dtype == np.float32
    sb.backward(sb.sum_(out))
    assert w.grad.dtype == np.float32
