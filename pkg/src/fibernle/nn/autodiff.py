"""Minimal reverse-mode automatic differentiation over numpy arrays.

A :class:`Tensor` records the op that produced it and a closure that pushes
its gradient to its parents. ``backward()`` walks the graph in reverse
topological order. Graph edges are only recorded when at least one input
requires a gradient, so inference runs without building a graph.
"""

from __future__ import annotations

from contextlib import contextmanager

import numpy as np

_DTYPE = [np.dtype(np.float64)]
# callables receiving every ReLU activation mask (used by gradient checks)
RELU_OBSERVERS: list = []


class ShapeError(ValueError):
    pass


def get_default_dtype() -> np.dtype:
    return _DTYPE[0]


@contextmanager
def default_dtype(dtype):
    """Temporarily change the floating type every new Tensor is cast to.

    Gradient checks always run in float64; float32 exists to speed up
    training on CPUs.
    """
    dtype = np.dtype(dtype)
    if dtype not in (np.float32, np.float64):
        raise ValueError(f"unsupported tensor dtype {dtype}")
    old = _DTYPE[0]
    _DTYPE[0] = dtype
    try:
        yield
    finally:
        _DTYPE[0] = old


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` after numpy broadcasting."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "op")

    def __init__(self, data, requires_grad: bool = False, _parents=(), op: str = ""):
        self.data = np.asarray(data, dtype=_DTYPE[0])
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents = _parents
        self._backward = None
        self.op = op

    shape = property(lambda self: self.data.shape)
    ndim = property(lambda self: self.data.ndim)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, op={self.op!r}, requires_grad={self.requires_grad})"

    def numpy(self) -> np.ndarray:
        return self.data

    def zero_grad(self) -> None:
        self.grad = None

    def _accumulate(self, g: np.ndarray) -> None:
        # never in place: ``g`` may be shared with sibling parents or be a broadcast view
        self.grad = g if self.grad is None else self.grad + g

    def backward(self, grad: np.ndarray | None = None) -> None:
        if grad is None:
            if self.data.size != 1:
                raise ShapeError(f"backward() without a seed gradient needs a scalar, got shape {self.shape}")
            grad = np.ones_like(self.data)
        order, seen = [], set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))
        self._accumulate(np.broadcast_to(grad, self.shape))
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, neg(as_tensor(other)))

    def __rsub__(self, other):
        return add(as_tensor(other), neg(self))

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise TypeError("division by a Tensor is not supported")
        return mul(self, 1.0 / other)

    def __matmul__(self, other):
        return matmul(self, other)

    def reshape(self, *shape):
        return reshape(self, shape[0] if len(shape) == 1 and isinstance(shape[0], tuple) else shape)

    def transpose(self, *axes):
        return transpose(self, axes or None)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data, parents, op, backward) -> Tensor:
    req = any(p.requires_grad for p in parents)
    out = Tensor(data, requires_grad=req, _parents=parents if req else (), op=op)
    if req:
        out._backward = backward
    return out


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    try:
        shape = np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"add: incompatible shapes {a.shape} and {b.shape}") from None
    del shape

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g, b.shape))

    return _make(a.data + b.data, (a, b), "add", backward)


def neg(a) -> Tensor:
    a = as_tensor(a)
    return _make(-a.data, (a,), "neg", lambda g: a._accumulate(-g))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"mul: incompatible shapes {a.shape} and {b.shape}") from None

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g * b.data, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g * a.data, b.shape))

    return _make(a.data * b.data, (a, b), "mul", backward)


def matmul(a, b) -> Tensor:
    """Batched matrix product; a 2-D right operand is shared across the batch."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    shared = b.ndim == 2
    if shared:
        # one 2-D GEMM is much faster than numpy's batched loop
        out = (a.data.reshape(-1, a.shape[-1]) @ b.data).reshape(a.shape[:-1] + b.shape[-1:])
    else:
        out = np.matmul(a.data, b.data)

    def backward(g):
        if shared:
            g2 = g.reshape(-1, g.shape[-1])
            if a.requires_grad:
                a._accumulate((g2 @ b.data.T).reshape(a.shape))
            if b.requires_grad:
                b._accumulate(a.data.reshape(-1, a.shape[-1]).T @ g2)
            return
        if a.requires_grad:
            a._accumulate(_unbroadcast(np.matmul(g, np.swapaxes(b.data, -1, -2)), a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(np.matmul(np.swapaxes(a.data, -1, -2), g), b.shape))

    return _make(out, (a, b), "matmul", backward)


def linear(x, w, b) -> Tensor:
    """Fused ``x @ w + b`` for a 2-D weight shared across leading axes."""
    x, w, b = as_tensor(x), as_tensor(w), as_tensor(b)
    if w.ndim != 2 or x.shape[-1] != w.shape[0] or b.shape != (w.shape[1],):
        raise ShapeError(f"linear: incompatible shapes x={x.shape}, w={w.shape}, b={b.shape}")
    x2 = x.data.reshape(-1, x.shape[-1])
    out = x2 @ w.data
    out += b.data
    out_shape = x.shape[:-1] + (w.shape[1],)

    def backward(g):
        g2 = g.reshape(-1, g.shape[-1])
        if x.requires_grad:
            x._accumulate((g2 @ w.data.T).reshape(x.shape))
        if w.requires_grad:
            w._accumulate(x2.T @ g2)
        if b.requires_grad:
            # a GEMV is much faster than a column reduction here
            b._accumulate(np.ones(g2.shape[0], g2.dtype) @ g2)

    return _make(out.reshape(out_shape), (x, w, b), "linear", backward)


def relu(a) -> Tensor:
    a = as_tensor(a)
    out = np.maximum(a.data, 0.0)
    for observe in RELU_OBSERVERS:
        observe(a.data > 0)
    return _make(out, (a,), "relu", lambda g: a._accumulate(g * (out > 0)))


def softmax(a, axis: int = -1) -> Tensor:
    a = as_tensor(a)
    z = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        a._accumulate(y * (g - np.sum(g * y, axis=axis, keepdims=True)))

    return _make(y, (a,), "softmax", backward)


def layer_norm(a, axis: int = -1, eps: float = 1e-5) -> Tensor:
    """Normalize to zero mean, unit variance along ``axis`` (no affine part)."""
    a = as_tensor(a)
    mu = a.data.mean(axis=axis, keepdims=True)
    xc = a.data - mu
    inv = 1.0 / np.sqrt((xc**2).mean(axis=axis, keepdims=True) + eps)
    xhat = xc * inv

    def backward(g):
        gm = g.mean(axis=axis, keepdims=True)
        gx = (g * xhat).mean(axis=axis, keepdims=True)
        a._accumulate(inv * (g - gm - xhat * gx))

    return _make(xhat, (a,), "layer_norm", backward)


def dropout(a, p: float, rng: np.random.Generator | None, training: bool) -> Tensor:
    """Inverted dropout; identity when not training or ``p == 0``."""
    a = as_tensor(a)
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout probability must lie in [0, 1), got {p}")
    if not training or p == 0.0:
        return a
    if rng is None:
        raise ValueError("dropout in training mode needs a random generator")
    mask = ((rng.random(a.shape) >= p) / (1.0 - p)).astype(a.data.dtype)
    return _make(a.data * mask, (a,), "dropout", lambda g: a._accumulate(g * mask))


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    try:
        out = a.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"reshape: cannot reshape {a.shape} to {tuple(shape)}") from None
    return _make(out, (a,), "reshape", lambda g: a._accumulate(g.reshape(a.shape)))


def transpose(a, axes=None) -> Tensor:
    a = as_tensor(a)
    axes = tuple(range(a.ndim))[::-1] if axes is None else tuple(axes)
    if sorted(axes) != list(range(a.ndim)):
        raise ShapeError(f"transpose: axes {axes} invalid for shape {a.shape}")
    inverse = tuple(np.argsort(axes))
    return _make(a.data.transpose(axes), (a,), "transpose", lambda g: a._accumulate(g.transpose(inverse)))


def sum_(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        a._accumulate(np.broadcast_to(g, a.shape))

    return _make(out, (a,), "sum", backward)


def mean(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    count = a.data.size if axis is None else np.prod([a.shape[i] for i in np.atleast_1d(axis)])
    return mul(sum_(a, axis, keepdims), 1.0 / count)


def mse_loss(y, a) -> Tensor:
    """Mean over all N entries of ``(y - a)^2``; ``y`` is the target."""
    y, a = as_tensor(y), as_tensor(a)
    if y.shape != a.shape:
        raise ShapeError(f"mse_loss: target shape {y.shape} != output shape {a.shape}")
    diff = a.data - y.data
    n = diff.size

    def backward(g):
        if a.requires_grad:
            a._accumulate(g * 2.0 * diff / n)
        if y.requires_grad:
            y._accumulate(-g * 2.0 * diff / n)

    return _make(np.mean(diff**2), (y, a), "mse", backward)


def numerical_grad(f, x: np.ndarray, h: float = 1e-4, index=None) -> np.ndarray:
    """Central differences of scalar ``f()`` w.r.t. ``x`` (mutated in place and restored).

    ``index`` restricts the probe to a list of flat positions; other entries
    of the result are left at zero.
    """
    grad = np.zeros_like(x)
    flat, gflat = x.reshape(-1), grad.reshape(-1)
    positions = range(flat.size) if index is None else index
    for i in positions:
        old = flat[i]
        flat[i] = old + h
        fp = float(f())
        flat[i] = old - h
        fm = float(f())
        flat[i] = old
        gflat[i] = (fp - fm) / (2 * h)
    return grad


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 0.0) -> float:
    """``||a - n|| / max(||a||, ||n||, floor)``; zero when both vanish.

    ``floor`` keeps gradients that are exactly zero in theory (e.g. the key
    bias under softmax shift invariance) from turning round-off into a
    relative error of 1.
    """
    scale = max(np.linalg.norm(analytic), np.linalg.norm(numeric), floor)
    if scale == 0:
        return 0.0
    return float(np.linalg.norm(analytic - numeric) / scale)
