"""Relation network over context objects, guided by two question objects.

For every ordered pair (i, j), including i == j, a shared two-layer tanh
perceptron scores ``[o_i; o_j; q0; q1]``. Per-object relation vectors are
softmax-weighted sums over j, a second perceptron summarizes each of them,
and a softmax over objects pools the summaries into ``z``. A linear head maps
``z`` (optionally with a pooled context vector) to one no-answer logit.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import substrate as sb
from .substrate import DiffTensor


@dataclass
class RelNetParams:
    g1_w: DiffTensor  # 4h x d_g
    g1_b: DiffTensor
    g2_w: DiffTensor  # d_g x d_r
    g2_b: DiffTensor
    f1_w: DiffTensor  # d_r x d_f
    f1_b: DiffTensor
    f2_w: DiffTensor  # d_f x d_z
    f2_b: DiffTensor
    w_g: DiffTensor   # d_r x 1
    w_f: DiffTensor   # d_z x 1

    @classmethod
    def init(cls, rng, hidden: int, d_g: int, d_r: int, d_f: int, d_z: int, dtype=np.float64) -> "RelNetParams":
        def w(*shape):
            return sb.parameter(sb.init_weight(rng, shape, dtype=dtype), dtype=dtype)

        def zeros(n):
            return sb.parameter(np.zeros(n), dtype=dtype)

        return cls(
            g1_w=w(4 * hidden, d_g), g1_b=zeros(d_g),
            g2_w=w(d_g, d_r), g2_b=zeros(d_r),
            f1_w=w(d_r, d_f), f1_b=zeros(d_f),
            f2_w=w(d_f, d_z), f2_b=zeros(d_z),
            w_g=w(d_r, 1), w_f=w(d_z, 1),
        )

    @property
    def hidden(self) -> int:
        return self.g1_w.shape[0] // 4


@dataclass
class NAHeadParams:
    w: DiffTensor  # d_in x 1
    b: DiffTensor  # scalar bias, shape (1,)

    @classmethod
    def init(cls, rng, d_in: int, dtype=np.float64) -> "NAHeadParams":
        return cls(
            w=sb.parameter(sb.init_weight(rng, (d_in, 1), dtype=dtype), dtype=dtype),
            b=sb.parameter(np.zeros(1), dtype=dtype),
        )


@dataclass
class RelationOutput:
    G: DiffTensor       # B x n x n x d_r
    omega: DiffTensor   # B x n x n
    r: DiffTensor       # B x n x d_r
    F: DiffTensor       # B x n x d_z
    gamma: DiffTensor   # B x n
    z: DiffTensor       # B x d_z
    na: DiffTensor | None = None  # B


def pair_scores(O: DiffTensor, question_objects: DiffTensor, params: RelNetParams) -> DiffTensor:
    """G[b, i, j] = g(concat(o_i, o_j, q0, q1)) for all ordered pairs.

    The first layer is applied blockwise: concat(...) @ W1 equals the sum of
    the four block products, which avoids materializing B x n x n x 4h.
    """
    if question_objects.ndim != 3 or question_objects.shape[1] != 2:
        raise ValueError(f"pair_scores: expected exactly 2 question objects, got shape {question_objects.shape}")
    B, n, h = O.shape
    if params.hidden != h or question_objects.shape[2] != h:
        raise ValueError(f"pair_scores: object width {h} vs relation input {params.hidden}")
    w = params.g1_w
    left = O @ w[0:h]                  # B x n x d_g
    right = O @ w[h:2 * h]
    q = question_objects[:, 0:1, :] @ w[2 * h:3 * h] + question_objects[:, 1:2, :] @ w[3 * h:4 * h]  # B x 1 x d_g
    d_g = w.shape[1]
    pre = (left.reshape(B, n, 1, d_g) + right.reshape(B, 1, n, d_g)) + (q.reshape(B, 1, 1, d_g) + params.g1_b)
    hidden = sb.tanh(pre)
    return sb.tanh(hidden @ params.g2_w + params.g2_b)


def relate(G: DiffTensor, params: RelNetParams) -> tuple[DiffTensor, DiffTensor]:
    B, n, _, d_r = G.shape
    omega = sb.softmax((G @ params.w_g).reshape(B, n, n))
    r = sb.weighted_sum(omega.reshape(B, n, n, 1), G, axis=2)
    return omega, r


def summarize(r: DiffTensor, params: RelNetParams) -> tuple[DiffTensor, DiffTensor, DiffTensor]:
    """Returns (gamma, z, F) with F the per-object summaries."""
    B, n, _ = r.shape
    F = sb.tanh(sb.tanh(r @ params.f1_w + params.f1_b) @ params.f2_w + params.f2_b)
    gamma = sb.softmax((F @ params.w_f).reshape(B, n))
    z = sb.weighted_sum(gamma.reshape(B, n, 1), F, axis=1)
    return gamma, z, F


def na_logit(z: DiffTensor, pooled_context: DiffTensor | None, params: NAHeadParams,
             use_pooled_summary: bool = False) -> DiffTensor:
    if use_pooled_summary != (pooled_context is not None):
        raise ValueError("na_logit: pooled_context must be given exactly when use_pooled_summary is on")
    feats = sb.concat([z, pooled_context], axis=-1) if use_pooled_summary else z
    if feats.shape[-1] != params.w.shape[0]:
        raise ValueError(f"na_logit: feature width {feats.shape[-1]} vs head input {params.w.shape[0]}")
    return (feats @ params.w).reshape(feats.shape[0]) + params.b


def relation_forward(O: DiffTensor, question_objects: DiffTensor, params: RelNetParams) -> RelationOutput:
    G = pair_scores(O, question_objects, params)
    omega, r = relate(G, params)
    gamma, z, F = summarize(r, params)
    return RelationOutput(G=G, omega=omega, r=r, F=F, gamma=gamma, z=z)


def masked_mean(C: DiffTensor, mask: np.ndarray) -> DiffTensor:
    """Mean of C over unmasked positions: B x L x h -> B x h."""
    m = np.asarray(mask, dtype=C.dtype)
    inv = 1.0 / np.maximum(m.sum(axis=1, keepdims=True), 1.0)
    return sb.sum_(C * m[..., None], axis=1) * inv


def joint_loss(start_ce: DiffTensor, end_ce: DiffTensor, aux: DiffTensor | float = 0.0,
               penalty_context: DiffTensor | float = 0.0, penalty_question: DiffTensor | float = 0.0,
               lambda_aux: float = 1.0) -> DiffTensor:
    """start_CE + end_CE + lambda_aux * aux + both orthogonality penalties."""
    total = start_ce + end_ce
    return total + aux * lambda_aux + penalty_context + penalty_question
