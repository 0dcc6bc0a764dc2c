"""Multi-head self-attentive pooling into semantic objects, with the head
orthogonality penalty ``alpha * ||A A^T - I||``."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import substrate as sb
from .substrate import DiffTensor


@dataclass
class ExtractorParams:
    w3: DiffTensor  # h x h
    w4: DiffTensor  # n x h
    activation: str = "tanh"

    @classmethod
    def init(cls, rng, hidden: int, heads: int, activation: str = "tanh", dtype=np.float64) -> "ExtractorParams":
        if heads < 1:
            raise ValueError("extractor needs at least one head")
        if activation not in sb.ACTIVATIONS:
            raise ValueError(f"unknown activation {activation!r}")
        return cls(
            w3=sb.parameter(sb.init_weight(rng, (hidden, hidden), dtype=dtype), dtype=dtype),
            w4=sb.parameter(sb.init_weight(rng, (heads, hidden), dtype=dtype), dtype=dtype),
            activation=activation,
        )

    @property
    def heads(self) -> int:
        return self.w4.shape[0]


@dataclass
class ObjectSet:
    A: DiffTensor  # B x n x L
    O: DiffTensor  # B x n x h


def attention_matrix(X: DiffTensor, mask: np.ndarray, params: ExtractorParams) -> DiffTensor:
    """A = softmax(W4 sigma(W3 X^T)) row-wise over tokens, per batch element.

    ``X`` is B x L x h and ``mask`` B x L; returns B x n x L.
    """
    mask = np.asarray(mask, dtype=bool)
    if X.ndim != 3 or mask.shape != X.shape[:2]:
        raise ValueError(f"attention_matrix: X {X.shape} / mask {mask.shape}")
    if X.shape[1] < 1 or not mask.any(axis=1).all():
        raise ValueError("attention_matrix: every input needs at least one unmasked token")
    act = sb.ACTIVATIONS[params.activation]
    hidden = act(X @ sb.transpose(params.w3))            # rows of sigma(W3 X^T)^T
    scores = sb.swapaxes(hidden @ sb.transpose(params.w4))  # B x n x L
    return sb.softmax(scores, mask=mask[:, None, :])


def extract(A: DiffTensor, X: DiffTensor) -> DiffTensor:
    if A.shape[-1] != X.shape[-2]:
        raise ValueError(f"extract: A {A.shape} does not fit X {X.shape}")
    return A @ X


def extract_objects(X: DiffTensor, mask: np.ndarray, params: ExtractorParams) -> ObjectSet:
    A = attention_matrix(X, mask, params)
    return ObjectSet(A=A, O=extract(A, X))


def orthogonality_penalty(A: DiffTensor, alpha: float, squared: bool = False) -> DiffTensor:
    """alpha * ||A A^T - I||_F per batch element (B,), or for a single n x L matrix."""
    n = A.shape[-2]
    gram = A @ sb.swapaxes(A)
    diff = gram - np.eye(n, dtype=A.dtype)
    if squared:
        norm = sb.sum_(sb.square(diff), axis=(-2, -1))
    else:
        norm = sb.frobenius(diff, axes=(-2, -1))
    return norm * alpha
