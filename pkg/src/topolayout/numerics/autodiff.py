"""Tensor-level reverse-mode automatic differentiation on float64 numpy arrays.

Every op records its parents and a closure mapping the output gradient to
parent gradients. ``backward`` walks the recorded graph in reverse
topological order and accumulates gradients additively at fan-out.
"""
from __future__ import annotations

import contextlib
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy import sparse

_grad_enabled = True


class NumericalError(FloatingPointError):
    """Raised when an op produces NaN/Inf values."""

    def __init__(self, op: str, where: str = "forward"):
        super().__init__(f"non-finite values in {where} of op '{op}'")
        self.op = op
        self.where = where


@contextlib.contextmanager
def no_grad():
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def grad_enabled() -> bool:
    return _grad_enabled


class Tensor:
    __slots__ = ("data", "requires_grad", "parents", "backward_fn", "name", "op")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.parents: tuple[Tensor, ...] = ()
        self.backward_fn: Callable | None = None
        self.name = name
        self.op = "leaf"

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def __len__(self) -> int:
        return len(self.data)

    def __repr__(self) -> str:
        return f"Tensor(op={self.op}, shape={self.shape}, requires_grad={self.requires_grad})"

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float("nan")

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

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _all_finite(a: np.ndarray) -> bool:
    # one reduction is enough unless the sum overflows or hits a non-finite entry
    total = np.add.reduce(a, axis=None) if a.size else 0.0
    return bool(np.isfinite(total)) or bool(np.all(np.isfinite(a)))


def _scatter_add(idx: np.ndarray, vals: np.ndarray, n: int) -> np.ndarray:
    """``out[idx[k]] += vals[k]`` for every k, summed in order of k."""
    if len(idx) == 0:
        return np.zeros((n,) + vals.shape[1:])
    flat = vals.reshape(len(idx), -1)
    m = sparse.csr_matrix((np.ones(len(idx)), (idx, np.arange(len(idx)))), shape=(n, len(idx)))
    return np.asarray(m @ flat).reshape((n,) + vals.shape[1:])


# ops that only move values around cannot turn finite inputs into non-finite outputs
_COPY_OPS = frozenset({"concat", "cols", "reshape", "transpose", "take_rows", "segment_max", "scatter_rows"})


def _make(op: str, out: np.ndarray, parents: Sequence[Tensor], backward_fn: Callable) -> Tensor:
    if op not in _COPY_OPS and not _all_finite(out):
        raise NumericalError(op)
    t = Tensor(out)
    t.op = op
    if _grad_enabled and any(p.requires_grad for p in parents):
        t.requires_grad = True
        t.parents = tuple(parents)
        t.backward_fn = backward_fn
    return t


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


# ---------------------------------------------------------------- elementwise


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _make("add", a.data + b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _make("sub", a.data - b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _make("mul", a.data * b.data, (a, b),
                 lambda g: (_unbroadcast(g * b.data, a.shape) if a.requires_grad else None,
                            _unbroadcast(g * a.data, b.shape) if b.requires_grad else None))


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data / b.data
    return _make("div", out, (a, b),
                 lambda g: (_unbroadcast(g / b.data, a.shape),
                            _unbroadcast(-g * out / b.data, b.shape)))


def neg(a) -> Tensor:
    a = as_tensor(a)
    return _make("neg", -a.data, (a,), lambda g: (-g,))


def square(a) -> Tensor:
    a = as_tensor(a)
    return _make("square", a.data * a.data, (a,), lambda g: (2.0 * a.data * g,))


def relu(a) -> Tensor:
    a = as_tensor(a)
    out = np.maximum(a.data, 0.0)
    return _make("relu", out, (a,), lambda g: (np.where(out > 0.0, g, 0.0),))


def _sigmoid_np(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    s = _sigmoid_np(a.data)
    return _make("sigmoid", s, (a,), lambda g: (g * s * (1.0 - s),))


def tanh(a) -> Tensor:
    a = as_tensor(a)
    t = np.tanh(a.data)
    return _make("tanh", t, (a,), lambda g: (g * (1.0 - t * t),))


def exp(a) -> Tensor:
    a = as_tensor(a)
    e = np.exp(a.data)
    return _make("exp", e, (a,), lambda g: (g * e,))


def log(a) -> Tensor:
    a = as_tensor(a)
    return _make("log", np.log(a.data), (a,), lambda g: (g / a.data,))


def sqrt(a) -> Tensor:
    a = as_tensor(a)
    s = np.sqrt(a.data)
    return _make("sqrt", s, (a,), lambda g: (g * 0.5 / s,))


# ----------------------------------------------------------------- reductions


def sum(a, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    a = as_tensor(a)
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _make("sum", np.asarray(out), (a,), bw)


def mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    n = a.data.size if axis is None else a.shape[axis]
    return sum(a, axis=axis, keepdims=keepdims) * (1.0 / n)


# --------------------------------------------------------------- linear algebra


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _make("matmul", a.data @ b.data, (a, b),
                 lambda g: (g @ b.data.T if a.requires_grad else None,
                            a.data.T @ g if b.requires_grad else None))


# ----------------------------------------------------------- shape / indexing


def concat(xs: Iterable[Tensor], axis: int = 1) -> Tensor:
    xs = [as_tensor(x) for x in xs]
    sizes = [x.shape[axis] for x in xs]
    splits = np.cumsum(sizes)[:-1]

    def bw(g):
        return tuple(np.split(g, splits, axis=axis))

    return _make("concat", np.concatenate([x.data for x in xs], axis=axis), xs, bw)


def cols(a, start: int, stop: int) -> Tensor:
    """Column slice ``a[:, start:stop]``."""
    a = as_tensor(a)

    def bw(g):
        full = np.zeros_like(a.data)
        full[:, start:stop] = g
        return (full,)

    return _make("cols", a.data[:, start:stop], (a,), bw)


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    return _make("reshape", a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),))


def transpose(a) -> Tensor:
    a = as_tensor(a)
    return _make("transpose", a.data.T.copy(), (a,), lambda g: (g.T,))


def take_rows(a, idx) -> Tensor:
    """Gather rows ``a[idx]``; gradients scatter-add back."""
    a = as_tensor(a)
    idx = np.asarray(idx, dtype=np.int64)

    def bw(g):
        return (_scatter_add(idx, g, a.shape[0]),)

    return _make("take_rows", a.data[idx], (a,), bw)


def segment_sum(a, seg, n: int) -> Tensor:
    """Sum rows of ``a`` into ``n`` buckets given by ``seg`` (scatter-add)."""
    a = as_tensor(a)
    seg = np.asarray(seg, dtype=np.int64)
    if len(seg) and (seg.min() < 0 or seg.max() >= n):
        raise IndexError("segment id out of range")
    out = _scatter_add(seg, a.data, n)
    return _make("segment_sum", out, (a,), lambda g: (g[seg],))


def segment_max(a, offsets) -> Tensor:
    """Column-wise max over contiguous row segments ``[offsets[k], offsets[k+1])``.

    The gradient is routed to the first row attaining the max.
    """
    a = as_tensor(a)
    offsets = np.asarray(offsets, dtype=np.int64)
    starts = offsets[:-1]
    if np.any(np.diff(offsets) <= 0):
        raise ValueError("segment_max needs nonempty segments")
    out = np.maximum.reduceat(a.data, starts, axis=0)

    def bw(g):
        seg = np.repeat(np.arange(len(starts)), np.diff(offsets))
        rows = np.arange(a.shape[0])[:, None]
        hit_row = np.where(a.data == out[seg], rows, a.shape[0])
        first = np.minimum.reduceat(hit_row, starts, axis=0)  # (S, D) row of first max
        full = np.zeros_like(a.data)
        cols = np.broadcast_to(np.arange(a.shape[1]), first.shape)
        full[first, cols] = g
        return (full,)

    return _make("segment_max", out, (a,), bw)


def scatter_rows(base, idx, rows) -> Tensor:
    """Copy of ``base`` with ``base[idx] = rows``; other rows pass through untouched."""
    base, rows = as_tensor(base), as_tensor(rows)
    idx = np.asarray(idx, dtype=np.int64)
    out = base.data.copy()
    out[idx] = rows.data

    def bw(g):
        gb = g.copy()
        gb[idx] = 0.0
        return (gb, g[idx])

    return _make("scatter_rows", out, (base, rows), bw)


# --------------------------------------------------------- softmax & friends


def log_softmax(a, axis: int = -1) -> Tensor:
    a = as_tensor(a)
    m = a.data.max(axis=axis, keepdims=True)
    z = a.data - m
    lse = np.log(np.exp(z).sum(axis=axis, keepdims=True))
    out = z - lse
    sm = np.exp(out)
    return _make("log_softmax", out, (a,),
                 lambda g: (g - sm * g.sum(axis=axis, keepdims=True),))


def softmax(a, axis: int = -1) -> Tensor:
    a = as_tensor(a)
    z = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=axis, keepdims=True)
    return _make("softmax", s, (a,),
                 lambda g: (s * (g - (g * s).sum(axis=axis, keepdims=True)),))


def l2_normalize(a, eps: float = 1e-12) -> Tensor:
    """Row-wise x / max(||x||, eps)."""
    a = as_tensor(a)
    norm = np.sqrt((a.data * a.data).sum(axis=1, keepdims=True))
    den = np.maximum(norm, eps)
    out = a.data / den
    clipped = norm < eps

    def bw(g):
        proj = (g * out).sum(axis=1, keepdims=True)
        ga = (g - out * proj) / den
        return (np.where(clipped, g / den, ga),)

    return _make("l2_normalize", out, (a,), bw)


def stop_gradient(a) -> Tensor:
    return Tensor(as_tensor(a).data)


# ------------------------------------------------------------------- backward


def topological_order(loss: Tensor) -> list[Tensor]:
    """Ops reachable from ``loss`` (through grad-requiring edges), parents first."""
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: Tensor, wrt: Iterable[str] | None = None) -> dict[str, np.ndarray]:
    """Gradients of a scalar ``loss`` w.r.t. every named leaf it depends on.

    Names listed in ``wrt`` but unreachable from the loss get zero gradients
    (shapes must then be recoverable, so pass a ParamStore as ``wrt``).
    """
    if loss.data.size != 1:
        raise ValueError(f"loss must be scalar, got shape {loss.shape}")
    named: dict[str, np.ndarray] = {}
    if loss.requires_grad:
        grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
        for node in reversed(topological_order(loss)):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node.name is not None and not node.parents:
                named[node.name] = named[node.name] + g if node.name in named else g
            if node.backward_fn is None:
                continue
            for p, pg in zip(node.parents, node.backward_fn(g)):
                if not p.requires_grad or pg is None:
                    continue
                if not np.all(np.isfinite(pg)):
                    raise NumericalError(node.op, where="backward")
                k = id(p)
                grads[k] = grads[k] + pg if k in grads else pg
    if wrt is not None:
        shapes = getattr(wrt, "shapes", None)
        for name in wrt:
            if name not in named:
                shape = shapes()[name] if shapes else None
                named[name] = np.zeros(shape if shape is not None else ())
    return named
