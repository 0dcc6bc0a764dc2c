"""A small trainable reader producing question/context encodings and span logits.

Layer 1 is a bidirectional GRU shared by question and context. The context
then attends over the question (context-to-question attention), and a
second bidirectional GRU over ``[C1; C~; C1*C~]`` yields ``C``; a separate
second layer over the question yields ``Q``. Both outputs have width ``h``
(``h/2`` per direction).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import substrate as sb
from .data import EncodedBatch
from .substrate import DiffTensor

NO_ANSWER = None


@dataclass
class GRUParams:
    w_x: DiffTensor   # in x 3H, gate order (reset, update, candidate)
    b_x: DiffTensor   # 3H
    w_h: DiffTensor   # H x 3H
    b_h: DiffTensor   # 3H

    @classmethod
    def init(cls, rng, d_in: int, hidden: int, dtype=np.float64) -> "GRUParams":
        return cls(
            w_x=sb.parameter(sb.init_weight(rng, (d_in, 3 * hidden), dtype=dtype), dtype=dtype),
            b_x=sb.parameter(np.zeros(3 * hidden), dtype=dtype),
            w_h=sb.parameter(sb.init_weight(rng, (hidden, 3 * hidden), dtype=dtype), dtype=dtype),
            b_h=sb.parameter(np.zeros(3 * hidden), dtype=dtype),
        )


@dataclass
class BiGRUParams:
    fw: GRUParams
    bw: GRUParams

    @classmethod
    def init(cls, rng, d_in: int, hidden: int, dtype=np.float64) -> "BiGRUParams":
        return cls(GRUParams.init(rng, d_in, hidden, dtype), GRUParams.init(rng, d_in, hidden, dtype))


@dataclass
class ReaderParams:
    embedding: DiffTensor  # V x e
    layer1: BiGRUParams
    context_layer2: BiGRUParams
    question_layer2: BiGRUParams
    w_start: DiffTensor    # h x 1
    w_end: DiffTensor      # h x 1

    @classmethod
    def init(cls, rng, vocab_size: int, embed: int, hidden: int, dtype=np.float64) -> "ReaderParams":
        if hidden % 2:
            raise ValueError("reader hidden size must be even (split across two directions)")
        half = hidden // 2
        return cls(
            embedding=sb.parameter(rng.normal(0.0, 1.0, size=(vocab_size, embed)), dtype=dtype),
            layer1=BiGRUParams.init(rng, embed, half, dtype),
            context_layer2=BiGRUParams.init(rng, 3 * hidden, half, dtype),
            question_layer2=BiGRUParams.init(rng, hidden, half, dtype),
            w_start=sb.parameter(sb.init_weight(rng, (hidden, 1), dtype=dtype), dtype=dtype),
            w_end=sb.parameter(sb.init_weight(rng, (hidden, 1), dtype=dtype), dtype=dtype),
        )

    @property
    def hidden(self) -> int:
        return self.w_start.shape[0]


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def gru_scan(xp: DiffTensor, w_h: DiffTensor, b_h: DiffTensor, mask: np.ndarray,
             reverse: bool = False) -> DiffTensor:
    """Masked GRU recurrence over precomputed input projections ``xp`` (B x L x 3H).

    Masked steps carry the state through unchanged and emit zeros, so
    trailing padding never affects real positions in either direction.
    """
    B, L, H3 = xp.shape
    H = H3 // 3
    if w_h.shape != (H, H3) or b_h.shape != (H3,):
        raise ValueError(f"gru_scan: w_h {w_h.shape} / b_h {b_h.shape} do not fit H={H}")
    X, W, bias = xp.data, w_h.data, b_h.data
    m = np.asarray(mask, dtype=X.dtype)[..., None]
    steps = range(L - 1, -1, -1) if reverse else range(L)
    h = np.zeros((B, H), dtype=X.dtype)
    cache = []
    out = np.zeros((B, L, H), dtype=X.dtype)
    for t in steps:
        hl = h @ W + bias
        r = _sigmoid(X[:, t, :H] + hl[:, :H])
        u = _sigmoid(X[:, t, H:2 * H] + hl[:, H:2 * H])
        hn = hl[:, 2 * H:]
        n = np.tanh(X[:, t, 2 * H:] + r * hn)
        h_new = (1.0 - u) * n + u * h
        cache.append((t, h, r, u, n, hn))
        mt = m[:, t]
        h = mt * h_new + (1.0 - mt) * h
        out[:, t] = mt * h

    def backward(g):
        dX = np.zeros_like(X)
        dW = np.zeros_like(W)
        db = np.zeros_like(bias)
        dh = np.zeros((B, H), dtype=X.dtype)
        for t, h_prev, r, u, n, hn in reversed(cache):
            mt = m[:, t]
            total = dh + mt * g[:, t]
            dh_new = mt * total
            dh_prev = (1.0 - mt) * total + dh_new * u
            dn = dh_new * (1.0 - u) * (1.0 - n * n)
            du = dh_new * (h_prev - n) * u * (1.0 - u)
            dr = dn * hn * r * (1.0 - r)
            dhl = np.concatenate([dr, du, dn * r], axis=1)
            dX[:, t] = np.concatenate([dr, du, dn], axis=1)
            dW += h_prev.T @ dhl
            db += dhl.sum(axis=0)
            dh = dh_prev + dhl @ W.T
        return dX, dW, db

    return sb.make_op(out, (xp, w_h, b_h), backward)


def bigru(p: BiGRUParams, x: DiffTensor, mask: np.ndarray) -> DiffTensor:
    fw = gru_scan(x @ p.fw.w_x + p.fw.b_x, p.fw.w_h, p.fw.b_h, mask)
    bw = gru_scan(x @ p.bw.w_x + p.bw.b_x, p.bw.w_h, p.bw.b_h, mask, reverse=True)
    return sb.concat([fw, bw], axis=-1)


def encode(batch: EncodedBatch, params: ReaderParams) -> tuple[DiffTensor, DiffTensor]:
    """Contextual encodings ``Q`` (B x Lq x h) and ``C`` (B x Lc x h)."""
    vocab_size = params.embedding.shape[0]
    for ids in (batch.question_ids, batch.context_ids):
        if ids.size and (ids.max() >= vocab_size or ids.min() < 0):
            raise ValueError(f"token id out of range for vocabulary of size {vocab_size}")
    q_mask, c_mask = batch.question_mask, batch.context_mask
    q1 = bigru(params.layer1, params.embedding[batch.question_ids], q_mask)
    c1 = bigru(params.layer1, params.embedding[batch.context_ids], c_mask)
    scores = (c1 @ sb.swapaxes(q1)) * (1.0 / np.sqrt(params.hidden))
    att = sb.softmax(scores, mask=q_mask[:, None, :])
    c2q = att @ q1
    C = bigru(params.context_layer2, sb.concat([c1, c2q, c1 * c2q], axis=-1), c_mask)
    Q = bigru(params.question_layer2, q1, q_mask)
    return Q, C


def span_logits(C: DiffTensor, mask: np.ndarray, params: ReaderParams,
                na: DiffTensor | None = None) -> tuple[DiffTensor, DiffTensor]:
    """Start/end logits of width Lc + 1; the last column is the no-answer slot.

    Padded positions are set to -1e30. The no-answer slot carries ``na`` (B,)
    or zero when no no-answer scorer is attached.
    """
    B, L, _ = C.shape
    if mask.shape != (B, L):
        raise ValueError(f"span_logits: mask {mask.shape} does not match C {C.shape}")
    if na is None:
        na = DiffTensor(np.zeros(B, dtype=C.dtype))
    slot = na.reshape(B, 1)
    out = []
    for w in (params.w_start, params.w_end):
        raw = sb.masked_fill((C @ w).reshape(B, L), mask)
        out.append(sb.concat([raw, slot], axis=1))
    return out[0], out[1]


def best_span(start: np.ndarray, end: np.ndarray, length: int, max_span_len: int = 15) -> tuple[tuple[int, int], float]:
    """Argmax of start[i] + end[j] over 0 <= i <= j < length, j - i < max_span_len.

    Ties resolve to the smallest i, then the smallest j.
    """
    if length < 1:
        raise ValueError("best_span: empty context")
    s = np.asarray(start[:length], dtype=np.float64)
    e = np.asarray(end[:length], dtype=np.float64)
    scores = s[:, None] + e[None, :]
    i_idx, j_idx = np.indices(scores.shape)
    band = (j_idx >= i_idx) & (j_idx - i_idx < max_span_len)
    scores = np.where(band, scores, -np.inf)
    flat = int(np.argmax(scores))
    i, j = divmod(flat, length)
    return (i, j), float(scores[i, j])


def predict_span(start: np.ndarray, end: np.ndarray, tau: float = 0.0, length: int | None = None,
                 max_span_len: int = 15):
    """Best span, or NO_ANSWER when the no-answer score beats it by more than ``tau``.

    ``start``/``end`` are one row of :func:`span_logits` output; the no-answer
    slot is their last entry. ``length`` is the number of real positions
    (defaults to all but the slot).
    """
    start = np.asarray(start)
    end = np.asarray(end)
    if length is None:
        length = start.shape[-1] - 1
    span, score = best_span(start, end, length, max_span_len)
    na_score = float(start[-1]) + float(end[-1])
    if na_score - score > tau:
        return NO_ANSWER
    return span


def predict_batch(start: np.ndarray, end: np.ndarray, lengths: np.ndarray, tau: float = 0.0,
                  max_span_len: int = 15) -> list:
    return [predict_span(start[b], end[b], tau, int(lengths[b]), max_span_len) for b in range(start.shape[0])]
