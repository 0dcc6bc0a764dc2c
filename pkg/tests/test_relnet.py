import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from relmod import substrate as sb
from relmod.relnet import (NAHeadParams, RelNetParams, joint_loss, na_logit, pair_scores, relate,
                           relation_forward, summarize)
from relmod.substrate import DiffTensor

from conftest import fd_check
from oracles import dense_tanh, relation_loop

NAMES = ("g1_w", "g1_b", "g2_w", "g2_b", "f1_w", "f1_b", "f2_w", "f2_b", "w_g", "w_f")


def _params(rng, h=3, d_g=4, d_r=3, d_f=5, d_z=2):
    p = RelNetParams.init(rng, h, d_g, d_r, d_f, d_z)
    for name in NAMES:
        t = getattr(p, name)
        t.data = rng.normal(size=t.shape)
    return p


def _raw(p):
    return {name: getattr(p, name).data for name in NAMES}


def _inputs(rng, n, h=3, B=1):
    return DiffTensor(rng.normal(size=(B, n, h))), DiffTensor(rng.normal(size=(B, 2, h)))


def test_shapes(rng):
    p = _params(rng)
    O, q = _inputs(rng, 4, B=2)
    out = relation_forward(O, q, p)
    assert out.G.shape == (2, 4, 4, 3)
    assert out.omega.shape == (2, 4, 4) and out.r.shape == (2, 4, 3)
    assert out.F.shape == (2, 4, 2) and out.gamma.shape == (2, 4) and out.z.shape == (2, 2)


def test_wrong_question_object_count_rejected(rng):
    p = _params(rng)
    O, _ = _inputs(rng, 3)
    for k in (1, 3):
        with pytest.raises(ValueError, match="2 question objects"):
            pair_scores(O, DiffTensor(np.ones((1, k, 3))), p)


def test_pair_scores_match_per_pair_loop(rng):
    p = _params(rng)
    O, q = _inputs(rng, 3)
    G = pair_scores(O, q, p).data[0]
    raw = _raw(p)
    for i in range(3):
        for j in range(3):
            x = np.concatenate([O.data[0, i], O.data[0, j], q.data[0, 0], q.data[0, 1]])
            want = dense_tanh(dense_tanh(x, raw["g1_w"], raw["g1_b"]), raw["g2_w"], raw["g2_b"])
            assert np.allclose(G[i, j], want, atol=1e-12, rtol=0)


def test_identical_objects_give_identical_scores(rng):
    p = _params(rng)
    row = rng.normal(size=3)
    O = DiffTensor(np.tile(row, (1, 5, 1)))
    G = pair_scores(O, _inputs(rng, 1)[1], p).data[0]
    assert np.all(G == G[0, 0])


def test_single_object(rng):
    p = _params(rng)
    out = relation_forward(*_inputs(rng, 1), p)
    assert out.omega.data.tolist() == [[[1.0]]]
    assert np.array_equal(out.r.data[0, 0], out.G.data[0, 0, 0])
    assert out.gamma.data.tolist() == [[1.0]]
    raw = _raw(p)
    f = dense_tanh(dense_tanh(out.r.data[0, 0], raw["f1_w"], raw["f1_b"]), raw["f2_w"], raw["f2_b"])
    assert np.allclose(out.z.data[0], f, atol=1e-12)


def test_equal_scores_give_uniform_weights(rng):
    p = _params(rng)
    p.w_g.data[:] = 0.0
    G = DiffTensor(rng.normal(size=(1, 4, 4, 3)))
    omega, r = relate(G, p)
    assert np.allclose(omega.data, 0.25, atol=1e-15)
    assert np.allclose(r.data, G.data.mean(axis=2), atol=1e-12)


@pytest.mark.parametrize("n", [1, 2, 5])
def test_identical_relations_summarize_to_single(rng, n):
    p = _params(rng)
    r0 = rng.normal(size=3)
    _, z1, _ = summarize(DiffTensor(r0.reshape(1, 1, 3)), p)
    _, zn, _ = summarize(DiffTensor(np.tile(r0, (1, n, 1))), p)
    assert np.allclose(zn.data, z1.data, atol=1e-12)


def test_matches_explicit_loop_on_100_instances():
    rng = np.random.default_rng(2024)
    for _ in range(100):
        n = int(rng.integers(1, 7))
        h = int(rng.integers(1, 5))
        dims = rng.integers(1, 6, size=4)
        p = _params(rng, h, *map(int, dims))
        O, q = _inputs(rng, n, h)
        got = relation_forward(O, q, p)
        want = relation_loop(O.data[0], q.data[0, 0], q.data[0, 1], _raw(p))
        for key, attr in (("G", "G"), ("omega", "omega"), ("r", "r"), ("F", "F"), ("gamma", "gamma"), ("z", "z")):
            assert np.allclose(getattr(got, attr).data[0], want[key], atol=1e-9, rtol=0), key


@settings(max_examples=30, deadline=None)
@given(n=st.integers(1, 6), seed=st.integers(0, 10_000), pooled=st.booleans())
def test_object_permutation_invariance(n, seed, pooled):
    rng = np.random.default_rng(seed)
    p = _params(rng)
    head = NAHeadParams.init(rng, 2 + (3 if pooled else 0))
    head.b.data = rng.normal(size=1)
    O, q = _inputs(rng, n)
    ctx = DiffTensor(rng.normal(size=(1, 3))) if pooled else None
    perm = rng.permutation(n)
    a = relation_forward(O, q, p)
    b = relation_forward(DiffTensor(O.data[:, perm]), q, p)
    assert np.allclose(a.z.data, b.z.data, atol=1e-9, rtol=0)
    na_a = na_logit(a.z, ctx, head, pooled).data
    na_b = na_logit(b.z, ctx, head, pooled).data
    assert np.allclose(na_a, na_b, atol=1e-9, rtol=0)


@settings(max_examples=30, deadline=None)
@given(n=st.integers(1, 6), seed=st.integers(0, 10_000))
def test_weights_sum_to_one(n, seed):
    rng = np.random.default_rng(seed)
    out = relation_forward(*_inputs(rng, n, B=2), _params(rng))
    assert np.allclose(out.omega.data.sum(axis=-1), 1.0, atol=1e-6)
    assert np.allclose(out.gamma.data.sum(axis=-1), 1.0, atol=1e-6)


# ---------------------------------------------------------------- no-answer head


def test_zero_head_returns_bias(rng):
    head = NAHeadParams.init(rng, 2)
    head.w.data[:] = 0.0
    head.b.data[:] = 1.75
    assert na_logit(DiffTensor(rng.normal(size=(3, 2))), None, head).data.tolist() == [1.75] * 3


def test_na_logit_deterministic(rng):
    p = _params(rng)
    head = NAHeadParams.init(rng, 2)
    O, q = _inputs(rng, 4)
    first = na_logit(relation_forward(O, q, p).z, None, head).data
    second = na_logit(relation_forward(O, q, p).z, None, head).data
    assert first.tobytes() == second.tobytes()


def test_flag_input_mismatch_rejected(rng):
    z = DiffTensor(np.ones((1, 2)))
    with pytest.raises(ValueError, match="pooled"):
        na_logit(z, DiffTensor(np.ones((1, 3))), NAHeadParams.init(rng, 5), use_pooled_summary=False)
    with pytest.raises(ValueError, match="pooled"):
        na_logit(z, None, NAHeadParams.init(rng, 5), use_pooled_summary=True)


def test_full_chain_grads(rng):
    p = _params(rng)
    head = NAHeadParams.init(rng, 2 + 3)
    O = sb.parameter(rng.normal(size=(2, 3, 3)))
    q = sb.parameter(rng.normal(size=(2, 2, 3)))
    ctx = sb.parameter(rng.normal(size=(2, 3)))

    def loss():
        z = relation_forward(O, q, p).z
        return sb.sum_(sb.square(na_logit(z, ctx, head, use_pooled_summary=True)))

    tensors = [O, q, ctx, head.w, head.b] + [getattr(p, n) for n in NAMES]
    assert fd_check(loss, tensors) < 1e-6


# ---------------------------------------------------------------- joint loss


def test_joint_loss_of_zeros_is_zero():
    z = DiffTensor(0.0)
    assert joint_loss(z, z, z, z, z).item() == 0.0


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(0, 50), min_size=5, max_size=5), st.floats(0, 3))
def test_joint_loss_is_hand_sum(parts, lam):
    s, e, aux, pc, pq = parts
    got = joint_loss(DiffTensor(s), DiffTensor(e), DiffTensor(aux), DiffTensor(pc), DiffTensor(pq), lam).item()
    assert abs(got - (s + e + lam * aux + pc + pq)) <= 1e-12 * max(1.0, abs(got))
