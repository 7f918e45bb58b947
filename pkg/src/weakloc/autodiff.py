"""Minimal reverse-mode automatic differentiation over dense float64 arrays.

The operation record lives on the tensors themselves: every op output keeps
its parents and a backward closure, and backward() replays the graph once in
reverse topological order, accumulating into .grad. Graph recording can be
switched off for inference with no_grad().
"""

from __future__ import annotations

from contextlib import contextmanager

import numpy as np

_GRAD_ENABLED = True


@contextmanager
def no_grad():
    """Disable graph recording inside the context (inference forward passes)."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


class Tensor:
    """Dense float64 array with an optional gradient and graph links."""

    __slots__ = ("data", "grad", "requires_grad", "name", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self.name = name
        self._parents: tuple[Tensor, ...] = ()
        self._backward = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{tag}, requires_grad={self.requires_grad})"

    def zero_grad(self):
        self.grad = None

    def accumulate(self, g: np.ndarray):
        if self.grad is None:
            self.grad = np.array(g, dtype=np.float64)  # own the buffer; g may be a view
        else:
            self.grad += g

    def backward(self):
        backward(self)

    # operator sugar ---------------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def __sub__(self, other):
        return add(self, mul(other, -1.0) if isinstance(other, Tensor) else -np.asarray(other))

    def __getitem__(self, key):
        return slice_(self, key)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data, parents, backward_fn) -> Tensor:
    """Create an op output, recording graph links only when grads are live."""
    out = Tensor(data)
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward_fn
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Reduce a gradient back to the shape it was broadcast from."""
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# elementwise ops
# ---------------------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out_data = a.data + b.data

    def backward_fn(out):
        if a.requires_grad:
            a.accumulate(_unbroadcast(out.grad, a.shape))
        if b.requires_grad:
            b.accumulate(_unbroadcast(out.grad, b.shape))

    return _make(out_data, (a, b), backward_fn)


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out_data = a.data * b.data

    def backward_fn(out):
        if a.requires_grad:
            a.accumulate(_unbroadcast(out.grad * b.data, a.shape))
        if b.requires_grad:
            b.accumulate(_unbroadcast(out.grad * a.data, b.shape))

    return _make(out_data, (a, b), backward_fn)


def relu(a) -> Tensor:
    a = _as_tensor(a)
    mask = a.data > 0

    def backward_fn(out):
        if a.requires_grad:
            a.accumulate(out.grad * mask)

    return _make(np.where(mask, a.data, 0.0), (a,), backward_fn)


def sigmoid(a) -> Tensor:
    a = _as_tensor(a)
    x = a.data
    s = np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))),
                 np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))

    def backward_fn(out):
        if a.requires_grad:
            a.accumulate(out.grad * s * (1.0 - s))

    return _make(s, (a,), backward_fn)


def exp(a) -> Tensor:
    a = _as_tensor(a)
    e = np.exp(a.data)

    def backward_fn(out):
        if a.requires_grad:
            a.accumulate(out.grad * e)

    return _make(e, (a,), backward_fn)


def clip(a, lo: float, hi: float) -> Tensor:
    a = _as_tensor(a)
    inside = (a.data >= lo) & (a.data <= hi)

    def backward_fn(out):
        if a.requires_grad:
            a.accumulate(out.grad * inside)

    return _make(np.clip(a.data, lo, hi), (a,), backward_fn)


# ---------------------------------------------------------------------------
# reductions / shape ops
# ---------------------------------------------------------------------------

def sum_(a, axis=None) -> Tensor:
    a = _as_tensor(a)

    def backward_fn(out):
        if a.requires_grad:
            g = out.grad
            if axis is not None:
                g = np.expand_dims(g, axis)
            a.accumulate(np.broadcast_to(g, a.shape).copy())

    return _make(a.data.sum(axis=axis), (a,), backward_fn)


def mean(a, axis=None) -> Tensor:
    a = _as_tensor(a)
    count = a.data.size if axis is None else a.shape[axis]

    def backward_fn(out):
        if a.requires_grad:
            g = out.grad
            if axis is not None:
                g = np.expand_dims(g, axis)
            a.accumulate(np.broadcast_to(g, a.shape) / count)

    return _make(a.data.mean(axis=axis), (a,), backward_fn)


def reshape(a, shape) -> Tensor:
    a = _as_tensor(a)

    def backward_fn(out):
        if a.requires_grad:
            a.accumulate(out.grad.reshape(a.shape))

    return _make(a.data.reshape(shape), (a,), backward_fn)


def transpose(a, axes) -> Tensor:
    a = _as_tensor(a)
    inverse = np.argsort(axes)

    def backward_fn(out):
        if a.requires_grad:
            a.accumulate(out.grad.transpose(inverse))

    return _make(a.data.transpose(axes), (a,), backward_fn)


def slice_(a, key) -> Tensor:
    a = _as_tensor(a)

    def backward_fn(out):
        if a.requires_grad:
            g = np.zeros_like(a.data)
            g[key] = out.grad
            a.accumulate(g)

    return _make(a.data[key], (a,), backward_fn)


def gather(a, indices, axis: int = 0) -> Tensor:
    """Integer-array selection along an axis (repeats allowed)."""
    a = _as_tensor(a)
    indices = np.asarray(indices, dtype=np.int64)

    def backward_fn(out):
        if a.requires_grad:
            g = np.zeros_like(a.data)
            np.add.at(g, (slice(None),) * axis + (indices,), out.grad)
            a.accumulate(g)

    return _make(np.take(a.data, indices, axis=axis), (a,), backward_fn)


# ---------------------------------------------------------------------------
# linear algebra / conv
# ---------------------------------------------------------------------------

def matmul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)

    def backward_fn(out):
        if a.requires_grad:
            a.accumulate(out.grad @ b.data.T)
        if b.requires_grad:
            b.accumulate(a.data.T @ out.grad)

    return _make(a.data @ b.data, (a, b), backward_fn)


def linear(x, w, b=None) -> Tensor:
    """x (N, Din) @ w (Din, Dout) + b (Dout,)."""
    out = matmul(x, w)
    return add(out, b) if b is not None else out


def conv2d(x, w, b=None, stride: int = 1, pad: int = 0) -> Tensor:
    """2-D convolution, x (N,C,H,W), w (F,C,kh,kw), optional bias (F,)."""
    x, w = _as_tensor(x), _as_tensor(w)
    n, c, h, wd = x.shape
    f, c2, kh, kw = w.shape
    if c != c2:
        raise ValueError(f"conv2d channel mismatch: input {x.shape} vs weight {w.shape}")
    ho = (h + 2 * pad - kh) // stride + 1
    wo = (wd + 2 * pad - kw) // stride + 1
    if ho <= 0 or wo <= 0:
        raise ValueError(f"conv2d output would be empty for input {x.shape}, "
                         f"kernel {w.shape}, stride {stride}, pad {pad}")

    if pad:
        xp = np.zeros((n, c, h + 2 * pad, wd + 2 * pad), dtype=np.float64)
        xp[:, :, pad:pad + h, pad:pad + wd] = x.data
    else:
        xp = x.data
    cols = np.empty((n, c, kh, kw, ho, wo), dtype=np.float64)
    for i in range(kh):
        for j in range(kw):
            cols[:, :, i, j] = xp[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride]
    cols_mat = cols.reshape(n, c * kh * kw, ho * wo)
    w_mat = w.data.reshape(f, c * kh * kw)
    out_data = (w_mat @ cols_mat).reshape(n, f, ho, wo)

    def backward_fn(out):
        g_mat = out.grad.reshape(n, f, ho * wo)
        if w.requires_grad:
            dw = np.einsum("nfl,ncl->fc", g_mat, cols_mat, optimize=True) \
                if n > 1 else g_mat[0] @ cols_mat[0].T
            w.accumulate(dw.reshape(f, c, kh, kw))
        if x.requires_grad:
            dcols = (w_mat.T @ g_mat).reshape(n, c, kh, kw, ho, wo)
            dxp = np.zeros_like(xp)
            for i in range(kh):
                for j in range(kw):
                    dxp[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] += \
                        dcols[:, :, i, j]
            x.accumulate(dxp[:, :, pad:pad + h, pad:pad + wd] if pad else dxp)

    out = _make(out_data, (x, w), backward_fn)
    if b is not None:
        out = add(out, reshape(b, (1, f, 1, 1)))
    return out


# ---------------------------------------------------------------------------
# loss bridge + backward
# ---------------------------------------------------------------------------

def attach_scalar(value: float, seeds: list[tuple[Tensor, np.ndarray]]) -> Tensor:
    """Scalar node carrying externally computed gradients into the graph.

    Used to splice closed-form loss gradients onto prediction tensors: the
    node's value is the loss, and backward scatters upstream * seed into each
    listed tensor.
    """
    seeds = [(t, np.asarray(g, dtype=np.float64)) for t, g in seeds]
    for t, g in seeds:
        if g.shape != t.shape:
            raise ValueError(f"seed gradient shape {g.shape} does not match tensor {t.shape}")

    def backward_fn(out):
        scale = float(out.grad)
        for t, g in seeds:
            if t.requires_grad:
                t.accumulate(scale * g)

    return _make(np.float64(value), tuple(t for t, _ in seeds), backward_fn)


def backward(loss: Tensor):
    """Populate .grad of every reachable requires_grad tensor with d(loss)/d(.).

    The loss must be a scalar. Repeated calls without zeroing accumulate.
    """
    if loss.data.size != 1:
        raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")

    topo: list[Tensor] = []
    visited: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, processed = stack.pop()
        if processed:
            topo.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if id(parent) not in visited:
                stack.append((parent, False))

    loss.accumulate(np.ones_like(loss.data))
    for node in reversed(topo):
        if node._backward is not None and node.grad is not None:
            node._backward(node)
