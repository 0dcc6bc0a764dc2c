"""Plausible-answer start/end layers and the augmented context ``X = [C;S;E]W``."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import substrate as sb
from .substrate import DiffTensor


@dataclass
class AugmentParams:
    w1: DiffTensor      # h x h
    b1: DiffTensor      # h
    w2: DiffTensor
    b2: DiffTensor
    w: DiffTensor       # 3h x h, no bias unless b is set
    s_proj: DiffTensor  # h x 1
    e_proj: DiffTensor
    b: DiffTensor | None = None

    @classmethod
    def init(cls, rng, hidden: int, bias: bool = False, dtype=np.float64) -> "AugmentParams":
        def w(*shape):
            return sb.parameter(sb.init_weight(rng, shape, dtype=dtype), dtype=dtype)

        def zeros(n):
            return sb.parameter(np.zeros(n), dtype=dtype)

        return cls(
            w1=w(hidden, hidden), b1=zeros(hidden),
            w2=w(hidden, hidden), b2=zeros(hidden),
            w=w(3 * hidden, hidden),
            s_proj=w(hidden, 1), e_proj=w(hidden, 1),
            b=zeros(hidden) if bias else None,
        )


def plausible_hidden(C: DiffTensor, params: AugmentParams) -> tuple[DiffTensor, DiffTensor]:
    """S = tanh(C W1 + b1), E = tanh(C W2 + b2)."""
    if C.shape[-1] != params.w1.shape[0]:
        raise ValueError(f"plausible_hidden: C width {C.shape[-1]} vs W1 {params.w1.shape}")
    S = sb.tanh(C @ params.w1 + params.b1)
    E = sb.tanh(C @ params.w2 + params.b2)
    return S, E


def augment_context(C: DiffTensor, S: DiffTensor, E: DiffTensor, params: AugmentParams) -> DiffTensor:
    if not (C.shape == S.shape == E.shape):
        raise ValueError(f"augment_context: shapes differ C{C.shape} S{S.shape} E{E.shape}")
    X = sb.concat([C, S, E], axis=-1) @ params.w
    if params.b is not None:
        X = X + params.b
    return X


def plausible_span_loss(S: DiffTensor, E: DiffTensor, mask: np.ndarray, start: np.ndarray,
                        end: np.ndarray, params: AugmentParams) -> DiffTensor:
    """Summed start + end cross-entropy over examples that carry a span.

    ``start``/``end`` are (B,) with -1 marking examples without a span; those
    contribute exactly 0.
    """
    B, L, _ = S.shape
    start = np.asarray(start, dtype=np.int64)
    end = np.asarray(end, dtype=np.int64)
    has = start >= 0
    rows = np.arange(B)
    if np.any(has & ((end < start) | (end >= L))) or not mask[rows[has], start[has]].all() \
            or not mask[rows[has], end[has]].all():
        raise ValueError("plausible_span_loss: span outside the unmasked context")
    if not has.any():
        return sb.sum_(S * 0.0)
    weight = has.astype(S.dtype)
    total = None
    for hidden, proj, tgt in ((S, params.s_proj, start), (E, params.e_proj, end)):
        logits = (hidden @ proj).reshape(B, L)
        ce = sb.cross_entropy(logits, np.where(has, tgt, 0), mask=mask)
        term = sb.sum_(ce * weight)
        total = term if total is None else total + term
    return total
