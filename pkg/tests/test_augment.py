import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from relmod import substrate as sb
from relmod.augment import AugmentParams, augment_context, plausible_hidden, plausible_span_loss
from relmod.substrate import DiffTensor

from conftest import fd_check


def _params(rng, h=4):
    p = AugmentParams.init(rng, h)
    for t in (p.b1, p.b2):
        t.data = rng.normal(size=t.shape)
    return p


def test_zero_weights_give_zero_hidden(rng):
    p = _params(rng)
    p.w1.data[:] = 0.0
    p.b1.data[:] = 0.0
    S, _ = plausible_hidden(DiffTensor(rng.normal(size=(2, 5, 4))), p)
    assert np.all(S.data == 0.0)


def test_hidden_in_open_unit_interval(rng):
    S, E = plausible_hidden(DiffTensor(rng.normal(scale=3, size=(3, 7, 4))), _params(rng))
    assert np.all(np.abs(S.data) < 1) and np.all(np.abs(E.data) < 1)


def test_width_mismatch_rejected(rng):
    with pytest.raises(ValueError):
        plausible_hidden(DiffTensor(np.zeros((1, 3, 5))), _params(rng))
    with pytest.raises(ValueError):
        augment_context(DiffTensor(np.zeros((3, 4))), DiffTensor(np.zeros((2, 4))), DiffTensor(np.zeros((3, 4))),
                        _params(rng))


@pytest.mark.parametrize("L", [1, 3, 9])
def test_selection_block_returns_context(rng, L):
    h = 4
    p = _params(rng, h)
    p.w.data = np.vstack([np.eye(h), np.zeros((2 * h, h))])
    C = DiffTensor(rng.normal(size=(L, h)))
    S, E = plausible_hidden(C, p)
    X = augment_context(C, S, E, p)
    assert X.shape == (L, h)
    assert np.array_equal(X.data, C.data)


@settings(max_examples=25, deadline=None)
@given(a=st.floats(-3, 3), b=st.floats(-3, 3), seed=st.integers(0, 10_000))
def test_projection_superposition(a, b, seed):
    rng = np.random.default_rng(seed)
    p = _params(rng)
    C1, C2, S, E = (rng.normal(size=(5, 4)) for _ in range(4))

    def X(c, s, e):
        return augment_context(DiffTensor(c), DiffTensor(s), DiffTensor(e), p).data

    combined = X(a * C1 + b * C2, (a + b) * S, (a + b) * E)
    assert np.allclose(combined, a * X(C1, S, E) + b * X(C2, S, E), atol=1e-9, rtol=0)


def test_hidden_grads(rng):
    p = _params(rng)
    C = sb.parameter(rng.normal(size=(2, 3, 4)))
    w = DiffTensor(rng.normal(size=(2, 3, 4)))

    def loss():
        S, E = plausible_hidden(C, p)
        return sb.sum_(S * w) + sb.sum_(sb.square(E))

    assert fd_check(loss, [C, p.w1, p.b1, p.w2, p.b2]) < 1e-6


def test_augment_grads(rng):
    p = _params(rng)
    C = sb.parameter(rng.normal(size=(2, 3, 4)))

    def loss():
        S, E = plausible_hidden(C, p)
        return sb.sum_(sb.tanh(augment_context(C, S, E, p)))

    assert fd_check(loss, [C, p.w, p.w1, p.b2]) < 1e-6


# ---------------------------------------------------------------- auxiliary loss


def _flat_loss(L, start, end, rng, mask=None):
    p = _params(rng)
    p.s_proj.data[:] = 0.0
    p.e_proj.data[:] = 0.0
    S = DiffTensor(rng.normal(size=(1, L, 4)))
    mask = np.ones((1, L), bool) if mask is None else mask
    return plausible_span_loss(S, S, mask, np.array([start]), np.array([end]), p).item()


@pytest.mark.parametrize("L", [1, 2, 5, 30])
def test_uniform_logits_give_two_log_length(rng, L):
    assert _flat_loss(L, 0, L - 1, rng) == pytest.approx(2 * math.log(L), abs=1e-12)


def test_uniform_logits_count_only_unmasked(rng):
    mask = np.array([[True, True, True, False, False]])
    assert _flat_loss(5, 1, 2, rng, mask) == pytest.approx(2 * math.log(3), abs=1e-12)


def test_dominated_target_has_tiny_loss(rng):
    p = _params(rng)
    L = 6
    # one-hot hidden feature on target rows, projection scaled so target logit = +20
    S = np.zeros((1, L, 4))
    S[0, 2, 0] = 1.0
    E = np.zeros((1, L, 4))
    E[0, 4, 1] = 1.0
    p.s_proj.data = np.array([[20.0], [0.0], [0.0], [0.0]])
    p.e_proj.data = np.array([[0.0], [20.0], [0.0], [0.0]])
    loss = plausible_span_loss(DiffTensor(S), DiffTensor(E), np.ones((1, L), bool), np.array([2]), np.array([4]), p)
    # 2 * log(1 + 5 e^-20) ~ 2.06e-8
    assert loss.item() < 1e-7


def test_span_free_batch_is_zero(rng):
    p = _params(rng)
    S = DiffTensor(rng.normal(size=(3, 4, 4)))
    loss = plausible_span_loss(S, S, np.ones((3, 4), bool), np.full(3, -1), np.full(3, -1), p)
    assert loss.item() == 0.0


def test_span_outside_mask_rejected(rng):
    p = _params(rng)
    S = DiffTensor(rng.normal(size=(1, 4, 4)))
    mask = np.array([[True, True, False, False]])
    with pytest.raises(ValueError):
        plausible_span_loss(S, S, mask, np.array([1]), np.array([2]), p)


def _per_example_loss(S, E, mask, start, end, p):
    """Plain numpy: -log softmax at the target, over unmasked positions only."""
    def ce(logits, t):
        live = logits[mask]
        return -(logits[t] - live.max() - math.log(np.exp(live - live.max()).sum()))

    s = (S @ p.s_proj.data)[:, 0]
    e = (E @ p.e_proj.data)[:, 0]
    return ce(s, start) + ce(e, end)


def test_mixed_batch_matches_per_example_sum(rng):
    p = _params(rng)
    B, L = 4, 6
    S, E = rng.normal(size=(B, L, 4)), rng.normal(size=(B, L, 4))
    mask = np.ones((B, L), bool)
    mask[1, 4:] = False
    mask[3, 2:] = False
    start = np.array([1, 3, -1, 0])
    end = np.array([2, 3, -1, 1])
    got = plausible_span_loss(DiffTensor(S), DiffTensor(E), mask, start, end, p).item()
    want = sum(_per_example_loss(S[b], E[b], mask[b], start[b], end[b], p) for b in range(B) if start[b] >= 0)
    assert got == pytest.approx(want, abs=1e-12)
    assert got > 0


def test_aux_loss_grads(rng):
    p = _params(rng)
    C = sb.parameter(rng.normal(size=(3, 5, 4)))
    mask = np.ones((3, 5), bool)
    mask[2, 3:] = False

    def loss():
        S, E = plausible_hidden(C, p)
        return plausible_span_loss(S, E, mask, np.array([0, -1, 1]), np.array([3, -1, 2]), p)

    assert fd_check(loss, [C, p.w1, p.b1, p.w2, p.b2, p.s_proj, p.e_proj]) < 1e-6


@settings(max_examples=40, deadline=None)
@given(B=st.integers(1, 4), L=st.integers(1, 7), seed=st.integers(0, 10_000))
def test_aux_loss_non_negative(B, L, seed):
    rng = np.random.default_rng(seed)
    p = _params(rng)
    S, E = DiffTensor(rng.normal(scale=4, size=(B, L, 4))), DiffTensor(rng.normal(scale=4, size=(B, L, 4)))
    start = rng.integers(-1, L, size=B)
    end = np.where(start < 0, -1, np.minimum(start + rng.integers(0, 3, size=B), L - 1))
    loss = plausible_span_loss(S, E, np.ones((B, L), bool), start, end, p).item()
    assert loss >= 0
    if (start < 0).all():
        assert loss == 0
