"""Dense-tensor reverse-mode automatic differentiation on numpy arrays.

Values are float64 throughout. Operations build a define-by-run tape: each
result remembers its parents and a vector-Jacobian product closure.
``backward`` walks the tape once in reverse topological order and accumulates
gradients into every reachable node that requires them. Tensors are treated
as immutable values; every operation allocates a new node, and the tape is
rebuilt from scratch on each forward pass.
"""

from __future__ import annotations

import math
from contextlib import contextmanager

import numpy as np
from scipy.special import expit

from .errors import ContractError, DimensionError

LOG_2PI = math.log(2.0 * math.pi)

_grad_enabled = True


@contextmanager
def no_grad():
    """Disable tape recording inside the block (inference and scoring paths)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


class Tensor:
    """A float64 n-d array plus an optional position on the gradient tape."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_vjp")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self._parents: tuple[Tensor, ...] = ()
        self._vjp = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self) -> str:
        tag = ", grad" if self.requires_grad else ""
        return f"Tensor(shape={self.data.shape}{tag})"

    # -- operator sugar -------------------------------------------------
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

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return tmean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _record(out: Tensor, parents: tuple[Tensor, ...], vjp) -> Tensor:
    out.requires_grad = True
    out._parents = parents
    out._vjp = vjp
    return out


def _tracked(*ts: Tensor) -> bool:
    return _grad_enabled and any(t.requires_grad for t in ts)


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a gradient over the axes numpy broadcasting introduced."""
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def custom(data: np.ndarray, inputs: tuple[Tensor, ...], vjp) -> Tensor:
    """Record an externally computed result on the tape.

    ``vjp(grad_out)`` must return one gradient per input (``None`` to skip).
    Used for fused primitives whose backward pass is hand-derived.
    """
    out = Tensor(data)
    if _tracked(*inputs):
        _record(out, tuple(inputs), vjp)
    return out


# -- elementwise arithmetic ---------------------------------------------


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = Tensor(a.data + b.data)
    if _tracked(a, b):
        _record(out, (a, b), lambda g: (_unbroadcast(g, a.data.shape),
                                        _unbroadcast(g, b.data.shape)))
    return out


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = Tensor(a.data - b.data)
    if _tracked(a, b):
        _record(out, (a, b), lambda g: (_unbroadcast(g, a.data.shape),
                                        _unbroadcast(-g, b.data.shape)))
    return out


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = Tensor(a.data * b.data)
    if _tracked(a, b):
        _record(out, (a, b), lambda g: (_unbroadcast(g * b.data, a.data.shape),
                                        _unbroadcast(g * a.data, b.data.shape)))
    return out


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = Tensor(a.data / b.data)
    if _tracked(a, b):
        def vjp(g):
            return (_unbroadcast(g / b.data, a.data.shape),
                    _unbroadcast(-g * a.data / (b.data * b.data), b.data.shape))
        _record(out, (a, b), vjp)
    return out


def neg(a) -> Tensor:
    a = as_tensor(a)
    out = Tensor(-a.data)
    if _tracked(a):
        _record(out, (a,), lambda g: (-g,))
    return out


def exp(a) -> Tensor:
    a = as_tensor(a)
    out = Tensor(np.exp(a.data))
    if _tracked(a):
        _record(out, (a,), lambda g: (g * out.data,))
    return out


def log(a) -> Tensor:
    a = as_tensor(a)
    out = Tensor(np.log(a.data))
    if _tracked(a):
        _record(out, (a,), lambda g: (g / a.data,))
    return out


def tanh(a) -> Tensor:
    a = as_tensor(a)
    out = Tensor(np.tanh(a.data))
    if _tracked(a):
        _record(out, (a,), lambda g: (g * (1.0 - out.data * out.data),))
    return out


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    out = Tensor(expit(a.data))
    if _tracked(a):
        _record(out, (a,), lambda g: (g * out.data * (1.0 - out.data),))
    return out


def clip(a, lo: float, hi: float) -> Tensor:
    """Hard clip with straight-through gradient inside [lo, hi]."""
    a = as_tensor(a)
    out = Tensor(np.clip(a.data, lo, hi))
    if _tracked(a):
        mask = (a.data >= lo) & (a.data <= hi)
        _record(out, (a,), lambda g: (g * mask,))
    return out


# -- linear algebra and shape ops ---------------------------------------


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.data.shape[-1] != b.data.shape[-2]:
        raise DimensionError(f"matmul: incompatible shapes {a.data.shape} @ {b.data.shape}")
    out = Tensor(np.matmul(a.data, b.data))
    if _tracked(a, b):
        def vjp(g):
            ga = _unbroadcast(np.matmul(g, b.data.swapaxes(-1, -2)), a.data.shape)
            gb = _unbroadcast(np.matmul(a.data.swapaxes(-1, -2), g), b.data.shape)
            return ga, gb
        _record(out, (a, b), vjp)
    return out


def transpose_last(a) -> Tensor:
    """Swap the final two axes."""
    a = as_tensor(a)
    out = Tensor(a.data.swapaxes(-1, -2))
    if _tracked(a):
        _record(out, (a,), lambda g: (g.swapaxes(-1, -2),))
    return out


def permute(a, axes) -> Tensor:
    a = as_tensor(a)
    axes = tuple(axes)
    out = Tensor(a.data.transpose(axes))
    if _tracked(a):
        inverse = tuple(np.argsort(axes))
        _record(out, (a,), lambda g: (g.transpose(inverse),))
    return out


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    out = Tensor(a.data.reshape(shape))
    if _tracked(a):
        _record(out, (a,), lambda g: (g.reshape(a.data.shape),))
    return out


def getitem(a, idx) -> Tensor:
    a = as_tensor(a)
    out = Tensor(a.data[idx])
    if _tracked(a):
        def vjp(g):
            buf = np.zeros_like(a.data)
            buf[idx] += g
            return (buf,)
        _record(out, (a,), vjp)
    return out


def concat(tensors, axis: int = -1) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    out = Tensor(np.concatenate([t.data for t in ts], axis=axis))
    if _tracked(*ts):
        sizes = [t.data.shape[axis] for t in ts]
        splits = np.cumsum(sizes)[:-1]
        _record(out, tuple(ts), lambda g: tuple(np.split(g, splits, axis=axis)))
    return out


def tsum(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    out = Tensor(np.sum(a.data, axis=axis, keepdims=keepdims))
    if _tracked(a):
        def vjp(g):
            if axis is None:
                return (np.broadcast_to(g, a.data.shape).copy(),)
            axes = (axis,) if isinstance(axis, int) else tuple(axis)
            if not keepdims:
                g = np.expand_dims(g, tuple(ax % a.data.ndim for ax in axes))
            return (np.broadcast_to(g, a.data.shape).copy(),)
        _record(out, (a,), vjp)
    return out


def tmean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    if axis is None:
        count = a.data.size
    else:
        axes = (axis,) if isinstance(axis, int) else tuple(axis)
        count = int(np.prod([a.data.shape[ax] for ax in axes]))
    return mul(tsum(a, axis=axis, keepdims=keepdims), 1.0 / count)


def softmax_rows(a) -> Tensor:
    """Numerically stable softmax over the last axis (per query row)."""
    a = as_tensor(a)
    if not np.all(np.isfinite(a.data)):
        raise ContractError("softmax_rows: input must be finite")
    shifted = a.data - a.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    s = e / e.sum(axis=-1, keepdims=True)
    out = Tensor(s)
    if _tracked(a):
        def vjp(g):
            dot = (g * s).sum(axis=-1, keepdims=True)
            return (s * (g - dot),)
        _record(out, (a,), vjp)
    return out


# -- probabilistic primitives -------------------------------------------


def gaussian_log_prob(x, mu, log_var) -> Tensor:
    """Elementwise log N(x; mu, exp(log_var))."""
    x, mu, log_var = as_tensor(x), as_tensor(mu), as_tensor(log_var)
    if not (x.shape == mu.shape == log_var.shape):
        raise DimensionError(
            f"gaussian_log_prob: shapes differ x={x.shape} mu={mu.shape} log_var={log_var.shape}")
    diff = sub(x, mu)
    sq = mul(diff, diff)
    inv_var = exp(neg(log_var))
    return mul(add(add(Tensor(np.full(x.shape, LOG_2PI)), log_var), mul(sq, inv_var)), -0.5)


def kl_diag_gaussian_to_std_normal(mu, log_var) -> Tensor:
    """KL(N(mu, diag exp(log_var)) || N(0, I)).

    Sums over every axis for inputs up to rank 2 (one window -> scalar); for
    higher ranks the trailing two axes are summed, leaving batch axes intact.
    """
    mu, log_var = as_tensor(mu), as_tensor(log_var)
    if mu.shape != log_var.shape:
        raise DimensionError(
            f"kl_diag_gaussian_to_std_normal: shapes differ mu={mu.shape} log_var={log_var.shape}")
    per_elem = mul(sub(add(mul(mu, mu), exp(log_var)), add(log_var, Tensor(np.ones(mu.shape)))), 0.5)
    axis = None if mu.ndim <= 2 else (-2, -1)
    return tsum(per_elem, axis=axis)


# -- backward pass -------------------------------------------------------


def backward(loss: Tensor, release: bool = True) -> None:
    """Populate gradients of every tape node reachable from a scalar loss.

    With ``release`` the tape is torn down afterwards and intermediate
    gradients are dropped; leaf gradients (parameters) are kept.
    """
    if loss.data.size != 1:
        raise ContractError(f"backward: loss must be scalar, got shape {loss.data.shape}")

    topo: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, done = stack.pop()
        if done:
            topo.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen:
                stack.append((p, False))

    loss.grad = np.ones_like(loss.data)
    for node in reversed(topo):
        if node._vjp is None or node.grad is None:
            continue
        grads = node._vjp(node.grad)
        for parent, g in zip(node._parents, grads):
            if g is None or not parent.requires_grad:
                continue
            parent.grad = g if parent.grad is None else parent.grad + g

    if release:
        for node in topo:
            if node._vjp is not None:
                node._parents = ()
                node._vjp = None
                node.grad = None
