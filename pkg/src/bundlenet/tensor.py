"""Dense float64 tensors with reverse-mode autodiff and an Adam optimizer.

The engine is define-by-run: every operation returns a new Tensor that
remembers its parents and a closure propagating gradients to them. Calling
``backward()`` on a scalar loss walks the graph in reverse topological order
and accumulates ``.grad`` on every node that requires gradients.

Selection ops (``min_over_rows``, ``kth_smallest_over_rows``) follow the
subgradient convention: the gradient flows only to the selected element,
with ties broken by the lowest index.
"""

from __future__ import annotations

import math
from contextlib import contextmanager
from typing import Callable, Optional, Sequence

import numpy as np

LEAKY_SLOPE = 0.01

_grad_enabled = True


@contextmanager
def no_grad():
    """Disable graph recording inside the block (evaluation fast path)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def grad_enabled() -> bool:
    return _grad_enabled


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible for an op."""


class DomainError(ValueError):
    """Raised when an op is evaluated outside its mathematical domain."""


class Tensor:
    """A float64 ndarray plus the bookkeeping needed for backprop.

    ``op`` is the kind of the operation that produced this tensor (None for
    leaves), ``parents`` the input tensors. The linked structure of
    (op, parents) records is the computation graph; ``_toposort`` linearizes
    it on demand.
    """

    __slots__ = ("data", "grad", "requires_grad", "op", "parents", "_backward")

    def __init__(self, data, requires_grad: bool = False,
                 op: Optional[str] = None, parents: tuple = ()):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = requires_grad
        self.op = op
        self.parents = parents
        self._backward: Optional[Callable[[], None]] = None

    # ------------------------------------------------------------------
    # basic queries
    # ------------------------------------------------------------------
    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() on tensor of shape {self.data.shape}")
        return float(self.data.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        return self.data

    def all_finite(self) -> bool:
        """Checked query for the NaN/Inf invariant."""
        return bool(np.isfinite(self.data).all())

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, op={self.op!r}, requires_grad={self.requires_grad})"

    # ------------------------------------------------------------------
    # graph construction helpers
    # ------------------------------------------------------------------
    def _accumulate(self, g: np.ndarray):
        if self.grad is None:
            self.grad = np.array(g, dtype=np.float64, copy=True)
        else:
            self.grad += g

    def zero_grad(self):
        self.grad = None

    def _toposort(self) -> list["Tensor"]:
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
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
                if id(p) not in seen:
                    stack.append((p, False))
        return order

    def backward(self):
        """Reverse-mode sweep from a scalar loss node."""
        if self.data.size != 1:
            raise ShapeError(
                f"backward() requires a scalar loss, got shape {self.data.shape}")
        order = self._toposort()
        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward()

    # ------------------------------------------------------------------
    # operator sugar
    # ------------------------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __neg__(self):
        return mul(self, -1.0)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def parameter(data) -> Tensor:
    """Leaf tensor that receives gradients."""
    return Tensor(np.array(data, dtype=np.float64), requires_grad=True)


def _make(data: np.ndarray, op: str, parents: Sequence[Tensor],
          backward: Callable[[Tensor], None]) -> Tensor:
    """Wrap an op result; record the node only when grads are on and needed."""
    if _grad_enabled and any(p.requires_grad for p in parents):
        out = Tensor(data, requires_grad=True, op=op, parents=tuple(parents))
        out._backward = lambda: backward(out)
        return out
    return Tensor(data, op=op)


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum gradient over dimensions that were broadcast in the forward pass."""
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def _check_broadcast(kind: str, a: Tensor, b: Tensor):
    try:
        np.broadcast_shapes(a.data.shape, b.data.shape)
    except ValueError:
        raise ShapeError(f"{kind}: incompatible shapes {a.data.shape} and {b.data.shape}")


# ----------------------------------------------------------------------
# elementwise arithmetic
# ----------------------------------------------------------------------
def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("add", a, b)

    def bwd(out):
        if a.requires_grad:
            a._accumulate(_unbroadcast(out.grad, a.data.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(out.grad, b.data.shape))

    return _make(a.data + b.data, "add", (a, b), bwd)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("sub", a, b)

    def bwd(out):
        if a.requires_grad:
            a._accumulate(_unbroadcast(out.grad, a.data.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(-out.grad, b.data.shape))

    return _make(a.data - b.data, "sub", (a, b), bwd)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("mul", a, b)

    def bwd(out):
        if a.requires_grad:
            a._accumulate(_unbroadcast(out.grad * b.data, a.data.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(out.grad * a.data, b.data.shape))

    return _make(a.data * b.data, "mul", (a, b), bwd)


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("div", a, b)

    def bwd(out):
        if a.requires_grad:
            a._accumulate(_unbroadcast(out.grad / b.data, a.data.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(-out.grad * a.data / (b.data * b.data),
                                       b.data.shape))

    return _make(a.data / b.data, "div", (a, b), bwd)


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.data.shape[1] != b.data.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {a.data.shape} and {b.data.shape}")

    def bwd(out):
        if a.requires_grad:
            a._accumulate(out.grad @ b.data.T)
        if b.requires_grad:
            b._accumulate(a.data.T @ out.grad)

    return _make(a.data @ b.data, "matmul", (a, b), bwd)


# ----------------------------------------------------------------------
# elementwise nonlinearities
# ----------------------------------------------------------------------
def exp(a) -> Tensor:
    a = as_tensor(a)
    val = np.exp(a.data)

    def bwd(out):
        if a.requires_grad:
            a._accumulate(out.grad * val)

    return _make(val, "exp", (a,), bwd)


def log(a) -> Tensor:
    a = as_tensor(a)
    if np.any(a.data <= 0):
        raise DomainError("log: non-positive input")

    def bwd(out):
        if a.requires_grad:
            a._accumulate(out.grad / a.data)

    return _make(np.log(a.data), "log", (a,), bwd)


def tanh(a) -> Tensor:
    a = as_tensor(a)
    val = np.tanh(a.data)

    def bwd(out):
        if a.requires_grad:
            a._accumulate(out.grad * (1.0 - val * val))

    return _make(val, "tanh", (a,), bwd)


def leaky_relu(a, slope: float = LEAKY_SLOPE) -> Tensor:
    a = as_tensor(a)
    mask = a.data > 0

    def bwd(out):
        if a.requires_grad:
            a._accumulate(out.grad * np.where(mask, 1.0, slope))

    return _make(np.where(mask, a.data, slope * a.data), "leaky_relu", (a,), bwd)


def square(a) -> Tensor:
    a = as_tensor(a)

    def bwd(out):
        if a.requires_grad:
            a._accumulate(out.grad * 2.0 * a.data)

    return _make(a.data * a.data, "square", (a,), bwd)


def sqrt(a) -> Tensor:
    a = as_tensor(a)
    if np.any(a.data <= 0):
        raise DomainError("sqrt: non-positive input")
    val = np.sqrt(a.data)

    def bwd(out):
        if a.requires_grad:
            a._accumulate(out.grad * 0.5 / val)

    return _make(val, "sqrt", (a,), bwd)


# ----------------------------------------------------------------------
# reductions
# ----------------------------------------------------------------------
def tsum(a) -> Tensor:
    a = as_tensor(a)

    def bwd(out):
        if a.requires_grad:
            a._accumulate(np.full_like(a.data, float(out.grad)))

    return _make(np.sum(a.data), "sum", (a,), bwd)


def tmean(a) -> Tensor:
    a = as_tensor(a)
    n = a.data.size

    def bwd(out):
        if a.requires_grad:
            a._accumulate(np.full_like(a.data, float(out.grad) / n))

    return _make(np.mean(a.data), "mean", (a,), bwd)


# ----------------------------------------------------------------------
# structural ops
# ----------------------------------------------------------------------
def concat(tensors: Sequence, axis: int = 1) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    sizes = [t.data.shape[axis] for t in ts]
    offsets = np.cumsum([0] + sizes)

    def bwd(out):
        for t, lo, hi in zip(ts, offsets[:-1], offsets[1:]):
            if t.requires_grad:
                idx = [slice(None)] * out.grad.ndim
                idx[axis] = slice(lo, hi)
                t._accumulate(out.grad[tuple(idx)])

    return _make(np.concatenate([t.data for t in ts], axis=axis), "concat", ts, bwd)


def slice_cols(a, start: int, stop: int) -> Tensor:
    a = as_tensor(a)
    if a.data.ndim != 2:
        raise ShapeError(f"slice: expected 2-d input, got shape {a.data.shape}")
    if not (0 <= start <= stop <= a.data.shape[1]):
        raise ShapeError(f"slice: range [{start}:{stop}) out of bounds for {a.data.shape}")

    def bwd(out):
        if a.requires_grad:
            g = np.zeros_like(a.data)
            g[:, start:stop] = out.grad
            a._accumulate(g)

    return _make(a.data[:, start:stop].copy(), "slice", (a,), bwd)


def permute_columns(a, perm: np.ndarray) -> Tensor:
    a = as_tensor(a)
    perm = np.asarray(perm, dtype=np.intp)
    if a.data.ndim != 2 or perm.shape != (a.data.shape[1],):
        raise ShapeError(
            f"permute_columns: perm of length {perm.size} vs shape {a.data.shape}")
    inv = np.argsort(perm)

    def bwd(out):
        if a.requires_grad:
            a._accumulate(out.grad[:, inv])

    return _make(a.data[:, perm], "permute_columns", (a,), bwd)


def pairwise_sq_dists(a, b) -> Tensor:
    """All squared Euclidean distances between rows of a (n×d) and b (m×d)."""
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.data.shape[1] != b.data.shape[1]:
        raise ShapeError(
            f"pairwise_sq_dists: incompatible shapes {a.data.shape} and {b.data.shape}")
    val = _sq_dists(a.data, b.data)

    def bwd(out):
        g = out.grad
        if a.requires_grad:
            a._accumulate(2.0 * (g.sum(axis=1, keepdims=True) * a.data - g @ b.data))
        if b.requires_grad:
            b._accumulate(2.0 * (g.sum(axis=0)[:, None] * b.data - g.T @ a.data))

    return _make(val, "pairwise_sq_dists", (a, b), bwd)


def _sq_dists(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    # direct differences (chunked to bound temporaries): exact zeros for
    # identical rows, which the self-comparison contracts rely on
    n, d = a.shape
    m = b.shape[0]
    out = np.empty((n, m))
    block = max(1, 10_000_000 // max(m * d, 1))
    for lo in range(0, n, block):
        hi = min(lo + block, n)
        diff = a[lo:hi, None, :] - b[None, :, :]
        out[lo:hi] = np.einsum("ijk,ijk->ij", diff, diff)
    return out


def min_over_rows(a) -> Tensor:
    """Row-wise minimum of a 2-d tensor; subgradient to the argmin only."""
    a = as_tensor(a)
    if a.data.ndim != 2:
        raise ShapeError(f"min_over_rows: expected 2-d input, got {a.data.shape}")
    idx = np.argmin(a.data, axis=1)  # lowest index on ties
    rows = np.arange(a.data.shape[0])

    def bwd(out):
        if a.requires_grad:
            g = np.zeros_like(a.data)
            g[rows, idx] = out.grad
            a._accumulate(g)

    return _make(a.data[rows, idx], "min_over_rows", (a,), bwd)


def kth_smallest_over_rows(a, k: int) -> Tensor:
    """Row-wise k-th smallest value (1-based k); subgradient to that entry."""
    a = as_tensor(a)
    if a.data.ndim != 2:
        raise ShapeError(f"kth_smallest_over_rows: expected 2-d input, got {a.data.shape}")
    if not (1 <= k <= a.data.shape[1]):
        raise ShapeError(f"kth_smallest_over_rows: k={k} out of range for {a.data.shape}")
    # stable argsort keeps the lowest original index among ties
    idx = np.argsort(a.data, axis=1, kind="stable")[:, k - 1]
    rows = np.arange(a.data.shape[0])

    def bwd(out):
        if a.requires_grad:
            g = np.zeros_like(a.data)
            g[rows, idx] = out.grad
            a._accumulate(g)

    return _make(a.data[rows, idx], "kth_smallest", (a,), bwd)


# ----------------------------------------------------------------------
# dispatch table (uniform entry point, handy for op-generic tests)
# ----------------------------------------------------------------------
_OPS = {
    "matmul": matmul,
    "add": add,
    "sub": sub,
    "mul": mul,
    "div": div,
    "exp": exp,
    "log": log,
    "tanh": tanh,
    "leaky_relu": leaky_relu,
    "sum": tsum,
    "mean": tmean,
    "square": square,
    "sqrt": sqrt,
    "concat": concat,
    "slice": slice_cols,
    "permute_columns": permute_columns,
    "pairwise_sq_dists": pairwise_sq_dists,
    "min_over_rows": min_over_rows,
    "kth_smallest_over_rows": kth_smallest_over_rows,
}


def forward_op(kind: str, *inputs, **kwargs) -> Tensor:
    """Apply the named op; records a graph node when gradients are enabled."""
    if kind not in _OPS:
        raise ValueError(f"unknown op kind {kind!r}")
    if kind == "concat":
        return concat(inputs[0] if len(inputs) == 1 else list(inputs), **kwargs)
    return _OPS[kind](*inputs, **kwargs)


OP_KINDS = tuple(_OPS)


# ----------------------------------------------------------------------
# optimizer
# ----------------------------------------------------------------------
class Adam:
    """Adam with bias correction; one slot pair per parameter tensor."""

    def __init__(self, params: Sequence[Tensor], lr: float = 1e-4,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        if lr <= 0:
            raise ValueError("learning_rate must be positive")
        self.params = list(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step_count = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def step(self):
        self.step_count += 1
        b1, b2 = self.beta1, self.beta2
        bc1 = 1.0 - b1 ** self.step_count
        bc2 = 1.0 - b2 ** self.step_count
        for i, p in enumerate(self.params):
            if p.grad is None:
                raise ValueError(f"Adam.step: parameter {i} has no gradient")
            g = p.grad
            self.m[i] = b1 * self.m[i] + (1.0 - b1) * g
            self.v[i] = b2 * self.v[i] + (1.0 - b2) * (g * g)
            m_hat = self.m[i] / bc1
            v_hat = self.v[i] / bc2
            p.data -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)

    def zero_grad(self):
        for p in self.params:
            p.grad = None


def finite_difference_grad(f: Callable[[np.ndarray], float], x: np.ndarray,
                           h: float = 1e-5) -> np.ndarray:
    """Central-difference gradient of a scalar function; test oracle."""
    x = np.asarray(x, dtype=np.float64)
    g = np.zeros_like(x)
    flat = x.reshape(-1)
    gf = g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = f(x)
        flat[i] = orig - h
        fm = f(x)
        flat[i] = orig
        gf[i] = (fp - fm) / (2.0 * h)
    return g


def relative_error(a: np.ndarray, b: np.ndarray, floor: float = 1e-4) -> float:
    """Max elementwise relative difference; the denominator floor keeps
    central-difference roundoff on near-zero entries from dominating."""
    num = np.abs(a - b)
    den = np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)
    return float((num / den).max()) if a.size else 0.0
