"""Reverse-mode automatic differentiation over float64 NumPy arrays.

A :class:`Tensor` wraps an ``ndarray`` and, when produced by a differentiable
operation while recording is enabled, keeps a reference to its parents and a
closure that maps the output gradient to parent gradients.  ``backward`` walks
the recorded graph in reverse topological order.

Operations are deliberately coarse (convolution and batch normalization are
single nodes with hand-written adjoints) so the graph stays small enough for
pure-Python traversal.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Iterable, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

DTYPE = np.float64

_recording = True


class GraphError(RuntimeError):
    """Raised when backward is requested on a tensor with no recorded graph."""


class ShapeError(ValueError):
    pass


class NumericFault(FloatingPointError):
    """A non-finite value appeared in an activation or gradient."""

    def __init__(self, message: str, layer_index: int | None = None):
        super().__init__(message)
        self.layer_index = layer_index


@contextlib.contextmanager
def no_grad():
    global _recording
    prev = _recording
    _recording = False
    try:
        yield
    finally:
        _recording = prev


def is_recording() -> bool:
    return _recording


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.asarray(data, dtype=DTYPE)
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], Sequence[np.ndarray | None]] | None = None
        self.name = name

    # -- basic properties ---------------------------------------------------
    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad}{tag})"

    def __len__(self) -> int:
        return self.shape[0]

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    @property
    def has_graph(self) -> bool:
        return self._backward is not None

    # -- autograd -----------------------------------------------------------
    def backward(self, grad: np.ndarray | None = None) -> None:
        if self._backward is None:
            if self.requires_grad:
                # leaf: d(self)/d(self)
                g = np.ones_like(self.data) if grad is None else np.asarray(grad, DTYPE)
                self.grad = g if self.grad is None else self.grad + g
                return
            raise GraphError("backward() called on a tensor without a recorded graph")
        if grad is None:
            if self.data.size != 1:
                raise GraphError("backward() without an explicit gradient needs a scalar output")
            grad = np.ones_like(self.data)
        grad = np.asarray(grad, dtype=DTYPE)
        if grad.shape != self.shape:
            raise ShapeError(f"seed gradient shape {grad.shape} != output shape {self.shape}")

        order = _topological_order(self)
        grads: dict[int, np.ndarray] = {id(self): grad}
        for node in order:
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                if node.requires_grad:
                    node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            parent_grads = node._backward(g)
            for parent, pg in zip(node._parents, parent_grads):
                if pg is None or not _needs_grad(parent):
                    continue
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg

    # -- operator sugar -----------------------------------------------------
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

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return getitem(self, index)

    def sum(self, axis=None):
        return tsum(self, axis)

    def mean(self, axis=None):
        return mean(self, axis)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


def _needs_grad(t: Tensor) -> bool:
    return t.requires_grad or t._backward is not None


def _topological_order(root: Tensor) -> list[Tensor]:
    """Reverse topological order (root first), iterative to avoid recursion limits."""
    visited: set[int] = set()
    post: list[Tensor] = []
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            post.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in visited and _needs_grad(p):
                stack.append((p, False))
    post.reverse()
    return post


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data: np.ndarray, parents: Iterable[Tensor], backward) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.requires_grad = False
    out.name = None
    parents = tuple(parents)
    if _recording and any(_needs_grad(p) for p in parents):
        out._parents = parents
        out._backward = backward
    else:
        out._parents = ()
        out._backward = None
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


# -- elementwise arithmetic ---------------------------------------------------
def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    sa, sb = a.shape, b.shape
    return _make(a.data + b.data, (a, b),
                 lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    sa, sb = a.shape, b.shape
    return _make(a.data - b.data, (a, b),
                 lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    ad, bd = a.data, b.data
    return _make(ad * bd, (a, b),
                 lambda g: (_unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)))


def square(a: Tensor) -> Tensor:
    ad = a.data
    return _make(ad * ad, (a,), lambda g: (2.0 * ad * g,))


def tabs(a: Tensor) -> Tensor:
    ad = a.data
    return _make(np.abs(ad), (a,), lambda g: (np.sign(ad) * g,))


def relu(a: Tensor) -> Tensor:
    out = np.maximum(a.data, 0.0)
    return _make(out, (a,), lambda g: (g * (out > 0),))


def tanh(a: Tensor) -> Tensor:
    y = np.tanh(a.data)
    return _make(y, (a,), lambda g: (g * (1.0 - y * y),))


def sigmoid(a: Tensor) -> Tensor:
    y = 0.5 * (1.0 + np.tanh(0.5 * a.data))
    return _make(y, (a,), lambda g: (g * y * (1.0 - y),))


# -- reductions and shape ops -------------------------------------------------
def tsum(a: Tensor, axis=None) -> Tensor:
    shape = a.shape
    out = a.data.sum(axis=axis)

    def back(g):
        if axis is None:
            return (np.broadcast_to(g, shape).copy(),)
        return (np.broadcast_to(np.expand_dims(g, axis), shape).copy(),)

    return _make(np.asarray(out, dtype=DTYPE), (a,), back)


def mean(a: Tensor, axis=None) -> Tensor:
    n = a.data.size if axis is None else np.prod([a.shape[i] for i in np.atleast_1d(axis)])
    return mul(tsum(a, axis), 1.0 / float(n))


def reshape(a: Tensor, shape) -> Tensor:
    old = a.shape
    return _make(a.data.reshape(shape), (a,), lambda g: (g.reshape(old),))


def transpose(a: Tensor, axes) -> Tensor:
    inv = np.argsort(axes)
    return _make(a.data.transpose(axes), (a,), lambda g: (g.transpose(inv),))


def getitem(a: Tensor, index) -> Tensor:
    shape = a.shape

    fancy = any(isinstance(i, (np.ndarray, list)) for i in (index if isinstance(index, tuple) else (index,)))

    def back(g):
        full = np.zeros(shape, dtype=DTYPE)
        if fancy:
            np.add.at(full, index, g)  # repeated indices accumulate
        else:
            full[index] = g
        return (full,)

    return _make(np.array(a.data[index], dtype=DTYPE), (a,), back)


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    bounds = np.cumsum([0] + sizes)

    def back(g):
        out = []
        for lo, hi in zip(bounds[:-1], bounds[1:]):
            idx = [slice(None)] * g.ndim
            idx[axis] = slice(lo, hi)
            out.append(g[tuple(idx)])
        return out

    return _make(np.concatenate([t.data for t in tensors], axis=axis), tensors, back)


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    return _make(np.stack([t.data for t in tensors], axis=axis), tensors,
                 lambda g: [np.take(g, i, axis=axis) for i in range(len(tensors))])


# -- linear algebra -----------------------------------------------------------
def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.shape[-1] != b.shape[0]:
        raise ShapeError(f"matmul inner dimensions differ: {a.shape} @ {b.shape}")
    ad, bd = a.data, b.data
    return _make(ad @ bd, (a, b), lambda g: (g @ bd.T, ad.T @ g))


def linear(x: Tensor, w: Tensor, b: Tensor | None) -> Tensor:
    """``x @ w + b`` as one node."""
    if x.shape[-1] != w.shape[0]:
        raise ShapeError(f"dense layer expects {w.shape[0]} input features, got {x.shape[-1]}")
    xd, wd = x.data, w.data
    out = xd @ wd
    if b is not None:
        out += b.data

    def back(g):
        gx = g @ wd.T if _needs_grad(x) else None
        gw = xd.T @ g
        if b is None:
            return gx, gw
        return gx, gw, g.sum(axis=0)

    parents = (x, w) if b is None else (x, w, b)
    return _make(out, parents, back)


# -- convolution (channels-last) ----------------------------------------------
def conv_output_size(n: int, k: int, stride: int, pad: int) -> int:
    return (n + 2 * pad - k) // stride + 1


def _im2col(xp: np.ndarray, kh: int, kw: int, stride: int) -> np.ndarray:
    """(N, Hp, Wp, C) padded input -> (N*Ho*Wo, kh*kw*C) patch matrix."""
    n, _, _, c = xp.shape
    if kh == 1 and kw == 1:
        sub = xp[:, ::stride, ::stride, :]
        return np.ascontiguousarray(sub).reshape(-1, c)
    win = sliding_window_view(xp, (kh, kw), axis=(1, 2))[:, ::stride, ::stride]
    ho, wo = win.shape[1], win.shape[2]
    return np.ascontiguousarray(win.transpose(0, 1, 2, 4, 5, 3)).reshape(n * ho * wo, kh * kw * c)


def _conv_input_grad(g: np.ndarray, wd: np.ndarray, in_hw: tuple[int, int], stride: int,
                     pad: int) -> np.ndarray:
    """Gradient w.r.t. the (unpadded) input: stride-1 correlation of the dilated,
    padded output gradient with the spatially flipped, channel-swapped kernel."""
    n, ho, wo, cout = g.shape
    kh, kw, cin, _ = wd.shape
    h, w = in_hw
    if stride > 1:
        gd = np.zeros((n, (ho - 1) * stride + 1, (wo - 1) * stride + 1, cout), dtype=DTYPE)
        gd[:, ::stride, ::stride, :] = g
    else:
        gd = g
    rh = (h + 2 * pad - kh) - (ho - 1) * stride
    rw = (w + 2 * pad - kw) - (wo - 1) * stride
    lo_h, lo_w = kh - 1 - pad, kw - 1 - pad
    gp = np.pad(gd, ((0, 0), (lo_h, lo_h + rh), (lo_w, lo_w + rw), (0, 0)))
    wf = wd[::-1, ::-1].transpose(0, 1, 3, 2).reshape(kh * kw * cout, cin)
    return (_im2col(gp, kh, kw, 1) @ wf).reshape(n, h, w, cin)


def conv2d(x: Tensor, w: Tensor, b: Tensor | None, stride: int = 1, pad: int = 0) -> Tensor:
    """2-D convolution on NHWC input with HWIO weights and zero padding."""
    if x.ndim != 4:
        raise ShapeError(f"conv2d expects NHWC input, got shape {x.shape}")
    kh, kw, cin, cout = w.shape
    n, h, wd_, c = x.shape
    if c != cin:
        raise ShapeError(f"conv2d expects {cin} input channels, got {c}")
    if pad > kh - 1 or pad > kw - 1:
        raise ShapeError(f"padding {pad} too large for kernel {kh}x{kw}")
    ho = conv_output_size(h, kh, stride, pad)
    wo = conv_output_size(wd_, kw, stride, pad)
    if ho <= 0 or wo <= 0:
        raise ShapeError(f"conv2d input {h}x{wd_} too small for kernel {kh}x{kw}")
    xp = np.pad(x.data, ((0, 0), (pad, pad), (pad, pad), (0, 0))) if pad else x.data
    cols = _im2col(xp, kh, kw, stride)
    wm = w.data.reshape(kh * kw * cin, cout)
    out = cols @ wm
    if b is not None:
        out += b.data
    out = out.reshape(n, ho, wo, cout)
    wdata = w.data

    def back(g):
        g2 = g.reshape(n * ho * wo, cout)
        gw = (g2.T @ cols).T.reshape(wdata.shape)
        gb = None if b is None else g2.sum(axis=0)
        gx = _conv_input_grad(g, wdata, (h, wd_), stride, pad) if _needs_grad(x) else None
        return (gx, gw) if b is None else (gx, gw, gb)

    parents = (x, w) if b is None else (x, w, b)
    return _make(out, parents, back)


def global_avg_pool(x: Tensor) -> Tensor:
    """Mean over the spatial axes of an NHWC tensor -> (N, C)."""
    n, h, w, c = x.shape
    scale = 1.0 / (h * w)

    def back(g):
        return (np.broadcast_to(g[:, None, None, :] * scale, (n, h, w, c)).copy(),)

    return _make(x.data.mean(axis=(1, 2)), (x,), back)


# -- batch normalization -----------------------------------------------------
def batch_norm_train(x: Tensor, gamma: Tensor, beta: Tensor, eps: float):
    """Normalize over every axis but the last using batch statistics.

    Returns the output tensor plus the batch mean and (population) variance so
    the caller can update running statistics.
    """
    c = x.shape[-1]
    x2 = x.data.reshape(-1, c)
    m = x2.shape[0]
    mu = x2.mean(axis=0)
    xhat = x2 - mu
    var = np.einsum("ij,ij->j", xhat, xhat) / m
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat *= inv_std
    gd = gamma.data
    out = xhat * gd
    out += beta.data

    def back(g):
        g2 = g.reshape(-1, c)
        dbeta = g2.sum(axis=0)
        dgamma = np.einsum("ij,ij->j", g2, xhat)
        # dx = gamma * inv_std / m * (m * g - dbeta - xhat * dgamma)
        dx = xhat * (-dgamma)
        dx += m * g2
        dx -= dbeta
        dx *= gd * inv_std / m
        return dx.reshape(x.shape), dgamma, dbeta

    return _make(out.reshape(x.shape), (x, gamma, beta), back), mu, var


def batch_norm_eval(x: Tensor, gamma: Tensor, beta: Tensor, running_mean: np.ndarray,
                    running_var: np.ndarray, eps: float) -> Tensor:
    scale = gamma.data / np.sqrt(running_var + eps)
    xhat = (x.data - running_mean) / np.sqrt(running_var + eps)
    out = xhat * gamma.data + beta.data
    axes = tuple(range(x.ndim - 1))

    def back(g):
        return g * scale, (g * xhat).sum(axis=axes), g.sum(axis=axes)

    return _make(out, (x, gamma, beta), back)


# -- losses --------------------------------------------------------------------
def mse(pred: Tensor, target) -> Tensor:
    target = as_tensor(target)
    if pred.shape != target.shape:
        raise ShapeError(f"prediction shape {pred.shape} != target shape {target.shape}")
    diff = pred.data - target.data
    n = diff.size
    return _make(np.asarray((diff * diff).sum() / n), (pred, target),
                 lambda g: (g * 2.0 * diff / n, -g * 2.0 * diff / n))


def abs_sum(a: Tensor) -> Tensor:
    ad = a.data
    return _make(np.asarray(np.abs(ad).sum()), (a,), lambda g: (g * np.sign(ad),))
