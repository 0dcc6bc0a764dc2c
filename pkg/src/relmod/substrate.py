"""Dense reverse-mode autodiff on top of numpy, plus Adam.

Every op returns a new :class:`DiffTensor`; when any input requires a
gradient, the output records its parents and a closure mapping the output
gradient to one gradient per parent. :func:`backward` walks that graph in
reverse topological order. Leaf tensors marked trainable accumulate into
``.grad`` across calls until cleared.
"""

from __future__ import annotations

import contextlib
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

NEG_INF = -1e30

_grad_enabled = True

BackwardFn = Callable[[np.ndarray], Sequence["np.ndarray | None"]]


class DiffTensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "name")
    __array_priority__ = 1000

    def __init__(self, data, requires_grad: bool = False, name: str | None = None, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if not np.issubdtype(arr.dtype, np.floating):
            arr = arr.astype(np.float64)
        self.data = arr
        self.requires_grad = requires_grad
        self.grad = np.zeros_like(arr) if requires_grad else None
        self._parents: tuple[DiffTensor, ...] = ()
        self._backward: BackwardFn | None = None
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def is_leaf(self) -> bool:
        return not self._parents

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float("nan")

    def zero_grad(self) -> None:
        if self.requires_grad:
            self.grad = np.zeros_like(self.data)

    def detach(self) -> "DiffTensor":
        return DiffTensor(self.data)

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"DiffTensor(shape={self.shape}{tag}, requires_grad={self.requires_grad})"

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        return transpose(self, axes or None)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis=axis, keepdims=keepdims)


def as_tensor(x, dtype=None) -> DiffTensor:
    if isinstance(x, DiffTensor):
        return x
    return DiffTensor(np.asarray(x, dtype=dtype))


def make_op(data: np.ndarray, parents: Sequence[DiffTensor], backward: BackwardFn) -> DiffTensor:
    """Wrap a forward result; record the graph edge only if a parent needs it."""
    out = DiffTensor(data)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out.grad = None
        out._parents = tuple(parents)
        out._backward = backward
    return out


@contextlib.contextmanager
def no_grad():
    """Evaluate without recording the graph."""
    global _grad_enabled
    prev, _grad_enabled = _grad_enabled, False
    try:
        yield
    finally:
        _grad_enabled = prev


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _pair(a, b) -> tuple[DiffTensor, DiffTensor]:
    # plain constants adopt the tensor's precision
    if isinstance(a, DiffTensor) and not isinstance(b, DiffTensor):
        return a, DiffTensor(np.asarray(b, dtype=a.dtype))
    if isinstance(b, DiffTensor) and not isinstance(a, DiffTensor):
        return DiffTensor(np.asarray(a, dtype=b.dtype)), b
    return as_tensor(a), as_tensor(b)


def _check_broadcast(a: DiffTensor, b: DiffTensor, op: str) -> tuple[int, ...]:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ValueError(f"{op}: incompatible shapes {a.shape} and {b.shape}") from None


# ---------------------------------------------------------------- elementwise


def add(a, b) -> DiffTensor:
    a, b = _pair(a, b)
    _check_broadcast(a, b, "add")
    return make_op(a.data + b.data, (a, b),
                   lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b) -> DiffTensor:
    a, b = _pair(a, b)
    _check_broadcast(a, b, "sub")
    return make_op(a.data - b.data, (a, b),
                   lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a, b) -> DiffTensor:
    a, b = _pair(a, b)
    _check_broadcast(a, b, "mul")
    return make_op(a.data * b.data, (a, b),
                   lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)))


def div(a, b) -> DiffTensor:
    a, b = _pair(a, b)
    _check_broadcast(a, b, "div")
    out = a.data / b.data

    def backward(g):
        return _unbroadcast(g / b.data, a.shape), _unbroadcast(-g * out / b.data, b.shape)

    return make_op(out, (a, b), backward)


def tanh(x: DiffTensor) -> DiffTensor:
    out = np.tanh(x.data)
    return make_op(out, (x,), lambda g: (g * (1.0 - out * out),))


def sigmoid(x: DiffTensor) -> DiffTensor:
    out = 0.5 * (1.0 + np.tanh(0.5 * x.data))
    return make_op(out, (x,), lambda g: (g * out * (1.0 - out),))


def relu(x: DiffTensor) -> DiffTensor:
    pos = x.data > 0
    return make_op(np.where(pos, x.data, 0.0), (x,), lambda g: (g * pos,))


def exp(x: DiffTensor) -> DiffTensor:
    out = np.exp(x.data)
    return make_op(out, (x,), lambda g: (g * out,))


def log(x: DiffTensor) -> DiffTensor:
    return make_op(np.log(x.data), (x,), lambda g: (g / x.data,))


def square(x: DiffTensor) -> DiffTensor:
    return make_op(x.data * x.data, (x,), lambda g: (2.0 * g * x.data,))


def masked_fill(x: DiffTensor, mask: np.ndarray, value: float = NEG_INF) -> DiffTensor:
    """Keep entries where ``mask`` is true, replace the rest with ``value``."""
    keep = np.broadcast_to(np.asarray(mask, dtype=bool), x.shape)
    out = np.where(keep, x.data, np.asarray(value, dtype=x.dtype))
    return make_op(out, (x,), lambda g: (np.where(keep, g, 0.0),))


ACTIVATIONS: dict[str, Callable[[DiffTensor], DiffTensor]] = {
    "tanh": tanh,
    "sigmoid": sigmoid,
    "relu": relu,
}


# ---------------------------------------------------------------- linear algebra


def matmul(a, b) -> DiffTensor:
    a, b = _pair(a, b)
    if a.ndim < 2 or b.ndim < 2:
        raise ValueError(f"matmul: operands must be at least 2-D, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ValueError(f"matmul: inner dimensions differ, got {a.shape} and {b.shape}")
    out = a.data @ b.data

    def backward(g):
        ga = g @ np.swapaxes(b.data, -1, -2)
        if b.ndim == 2:
            # fold batch dims into rows: one GEMM instead of a batched reduction
            gb = a.data.reshape(-1, a.shape[-1]).T @ g.reshape(-1, g.shape[-1])
        else:
            gb = np.swapaxes(a.data, -1, -2) @ g
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return make_op(out, (a, b), backward)


# ---------------------------------------------------------------- shape ops


def reshape(x: DiffTensor, shape) -> DiffTensor:
    src = x.shape
    return make_op(x.data.reshape(shape), (x,), lambda g: (g.reshape(src),))


def transpose(x: DiffTensor, axes=None) -> DiffTensor:
    if axes is None:
        axes = tuple(reversed(range(x.ndim)))
    axes = tuple(a % x.ndim for a in axes)
    inv = tuple(np.argsort(axes))
    return make_op(np.transpose(x.data, axes), (x,), lambda g: (np.transpose(g, inv),))


def swapaxes(x: DiffTensor, a: int = -1, b: int = -2) -> DiffTensor:
    axes = list(range(x.ndim))
    axes[a], axes[b] = axes[b], axes[a]
    return transpose(x, axes)


def _is_basic_index(idx) -> bool:
    parts = idx if isinstance(idx, tuple) else (idx,)
    return all(isinstance(p, (int, np.integer, slice)) or p is None or p is Ellipsis for p in parts)


def getitem(x: DiffTensor, idx) -> DiffTensor:
    out = x.data[idx]
    basic = _is_basic_index(idx)

    def backward(g):
        full = np.zeros_like(x.data)
        if basic:
            full[idx] += g
        else:
            np.add.at(full, idx, g)
        return (full,)

    return make_op(np.array(out, copy=True), (x,), backward)


def concat(xs: Sequence[DiffTensor], axis: int = -1) -> DiffTensor:
    xs = [as_tensor(x) for x in xs]
    if not xs:
        raise ValueError("concat: empty input")
    ax = axis % xs[0].ndim
    ref = xs[0].shape
    for x in xs[1:]:
        if x.ndim != len(ref) or any(s != r for i, (s, r) in enumerate(zip(x.shape, ref)) if i != ax):
            raise ValueError(f"concat: incompatible shapes {[t.shape for t in xs]} along axis {axis}")
    sizes = [x.shape[ax] for x in xs]
    cuts = np.cumsum(sizes)[:-1]
    out = np.concatenate([x.data for x in xs], axis=ax)
    return make_op(out, xs, lambda g: tuple(np.split(g, cuts, axis=ax)))


def stack(xs: Sequence[DiffTensor], axis: int = 0) -> DiffTensor:
    xs = [as_tensor(x) for x in xs]
    shapes = {x.shape for x in xs}
    if len(shapes) != 1:
        raise ValueError(f"stack: shapes differ {sorted(shapes)}")
    out = np.stack([x.data for x in xs], axis=axis)
    ax = axis % out.ndim
    return make_op(out, xs, lambda g: tuple(np.moveaxis(g, ax, 0)))


# ---------------------------------------------------------------- reductions


def sum_(x: DiffTensor, axis=None, keepdims: bool = False) -> DiffTensor:
    out = x.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape).copy(),)

    return make_op(out, (x,), backward)


def mean(x: DiffTensor, axis=None, keepdims: bool = False) -> DiffTensor:
    n = x.data.size if axis is None else np.prod([x.shape[a] for a in np.atleast_1d(axis)])
    return mul(sum_(x, axis=axis, keepdims=keepdims), 1.0 / float(n))


def weighted_sum(w: DiffTensor, x: DiffTensor, axis: int) -> DiffTensor:
    """Sum of ``w * x`` over ``axis``; ``w`` broadcasts against ``x``."""
    return sum_(mul(w, x), axis=axis)


def frobenius(x: DiffTensor, axes: tuple[int, int] | None = None) -> DiffTensor:
    """sqrt of the sum of squares over ``axes`` (all axes when None)."""
    out = np.sqrt((x.data * x.data).sum(axis=axes))

    def backward(g):
        denom = out if axes is None else np.expand_dims(out, axes)
        gg = g if axes is None else np.expand_dims(g, axes)
        safe = np.where(denom > 0, denom, 1.0)
        return (np.where(denom > 0, gg * x.data / safe, 0.0),)

    return make_op(out, (x,), backward)


# ---------------------------------------------------------------- softmax family


def _masked_logits(x: np.ndarray, mask) -> tuple[np.ndarray, np.ndarray | None]:
    if mask is None:
        return x, None
    keep = np.broadcast_to(np.asarray(mask, dtype=bool), x.shape)
    if not keep.any(axis=-1).all():
        raise ValueError("softmax: a row has every entry masked")
    return x + np.where(keep, 0.0, NEG_INF).astype(x.dtype), keep


def softmax(x: DiffTensor, mask=None) -> DiffTensor:
    """Softmax over the last axis; masked entries come out exactly 0."""
    z, keep = _masked_logits(x.data, mask)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    if keep is not None:
        e = e * keep
    out = e / e.sum(axis=-1, keepdims=True)

    def backward(g):
        return (out * (g - (g * out).sum(axis=-1, keepdims=True)),)

    return make_op(out, (x,), backward)


softmax_rows = softmax


def log_softmax(x: DiffTensor, mask=None) -> DiffTensor:
    z, keep = _masked_logits(x.data, mask)
    z = z - z.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=-1, keepdims=True))
    out = z - lse
    probs = np.exp(out)

    def backward(g):
        return (g - probs * g.sum(axis=-1, keepdims=True),)

    return make_op(out, (x,), backward)


def cross_entropy(logits: DiffTensor, target, mask=None) -> DiffTensor:
    """Per-row ``-log softmax(logits)[target]``.

    ``logits`` is ``(..., C)`` and ``target`` an int array of shape ``(...)``;
    the result has shape ``(...)`` (a scalar for a single row).
    """
    target = np.asarray(target, dtype=np.int64)
    n_cls = logits.shape[-1]
    if target.shape != logits.shape[:-1]:
        raise ValueError(f"cross_entropy: target shape {target.shape} vs logits {logits.shape}")
    if np.any(target < 0) or np.any(target >= n_cls):
        raise ValueError(f"cross_entropy: target out of range [0, {n_cls})")
    if mask is not None:
        keep = np.broadcast_to(np.asarray(mask, dtype=bool), logits.shape)
        if not np.take_along_axis(keep, target[..., None], axis=-1).all():
            raise ValueError("cross_entropy: target falls on a masked position")
    z, _ = _masked_logits(logits.data, mask)
    z = z - z.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=-1))
    picked = np.take_along_axis(z, target[..., None], axis=-1)[..., 0]
    out = lse - picked
    probs = np.exp(z - lse[..., None])

    def backward(g):
        grad = probs.copy()
        np.put_along_axis(grad, target[..., None],
                          np.take_along_axis(grad, target[..., None], axis=-1) - 1.0, axis=-1)
        return (grad * np.asarray(g)[..., None],)

    return make_op(out, (logits,), backward)


# ---------------------------------------------------------------- engine


def _topo_order(root: DiffTensor) -> list[DiffTensor]:
    order: list[DiffTensor] = []
    seen: set[int] = set()
    stack: list[tuple[DiffTensor, bool]] = [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: DiffTensor) -> None:
    """Accumulate d(loss)/d(leaf) into every reachable trainable leaf."""
    if loss.data.size != 1:
        raise ValueError(f"backward: loss must be scalar, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    if loss.is_leaf:
        loss.grad = loss.grad + np.ones_like(loss.data)
        return
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(_topo_order(loss)):
        g = grads.pop(id(node), None)
        if g is None or node.is_leaf:
            continue
        for p, pg in zip(node._parents, node._backward(g)):
            if pg is None or not p.requires_grad:
                continue
            if p.is_leaf:
                p.grad = p.grad + pg if p.grad is not None else np.array(pg, copy=True)
            else:
                key = id(p)
                grads[key] = grads[key] + pg if key in grads else pg


def parameter(data, name: str | None = None, dtype=np.float64) -> DiffTensor:
    return DiffTensor(np.asarray(data, dtype=dtype), requires_grad=True, name=name)


# ---------------------------------------------------------------- optimizer


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict[int, np.ndarray] = field(default_factory=dict)
    v: dict[int, np.ndarray] = field(default_factory=dict)


def adam_step(params: Iterable[DiffTensor], state: AdamState) -> None:
    """One bias-corrected Adam update; clears the grads afterwards."""
    params = list(params)
    for i, p in enumerate(params):
        if p.grad is None:
            raise ValueError(f"adam_step: parameter {p.name or i} has no gradient")
    state.step += 1
    t = state.step
    c1 = 1.0 - state.beta1 ** t
    c2 = 1.0 - state.beta2 ** t
    for i, p in enumerate(params):
        g = p.grad
        m = state.m.get(i)
        if m is None or m.shape != p.shape:
            m = np.zeros_like(p.data)
            state.v[i] = np.zeros_like(p.data)
        v = state.v[i]
        m = state.beta1 * m + (1.0 - state.beta1) * g
        v = state.beta2 * v + (1.0 - state.beta2) * g * g
        state.m[i], state.v[i] = m, v
        p.data = p.data - state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
        p.grad = np.zeros_like(p.data)


# ---------------------------------------------------------------- checking


def numeric_grad(f: Callable[[], float], x: DiffTensor, step: float = 1e-5) -> np.ndarray:
    """Central finite differences of scalar ``f`` w.r.t. every entry of ``x``."""
    out = np.zeros_like(x.data)
    flat = x.data.reshape(-1)
    gout = out.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        fp = f()
        flat[i] = orig - step
        fm = f()
        flat[i] = orig
        gout[i] = (fp - fm) / (2.0 * step)
    return out


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-12) -> float:
    """Tensor-wise relative error ``max|a - n| / max(max|a|, max|n|)``.

    Entrywise ratios blow up on near-zero components where finite differences
    are pure round-off; scaling by the tensor's largest entry does not.
    """
    if analytic.size == 0:
        return 0.0
    scale = max(float(np.max(np.abs(analytic))), float(np.max(np.abs(numeric))), floor)
    return float(np.max(np.abs(analytic - numeric))) / scale


# ---------------------------------------------------------------- parameter plumbing


def init_weight(rng: np.random.Generator, shape, fan_in: int | None = None, dtype=np.float64) -> np.ndarray:
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)); fan_in defaults to shape[0]."""
    fan_in = fan_in or shape[0]
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


def named_tensors(obj, prefix: str = "") -> list[tuple[str, DiffTensor]]:
    """Walk a (nested) dataclass of DiffTensors in field order."""
    from dataclasses import fields, is_dataclass

    out: list[tuple[str, DiffTensor]] = []
    for f in fields(obj):
        val = getattr(obj, f.name)
        name = f"{prefix}{f.name}"
        if isinstance(val, DiffTensor):
            out.append((name, val))
        elif is_dataclass(val):
            out.extend(named_tensors(val, name + "."))
    return out
