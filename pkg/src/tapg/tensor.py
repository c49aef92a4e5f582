"""Dense numpy-backed tensors with reverse-mode automatic differentiation.

Every op builds a node holding its parents and a closure that maps the
upstream gradient to one gradient per parent. ``Tensor.backward`` walks the
graph in reverse topological order and accumulates into ``.grad``.
"""

from __future__ import annotations

import contextlib
import logging
import threading

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import expit

logger = logging.getLogger(__name__)

_DTYPES = {"f32": np.float32, "f64": np.float64}


class ShapeError(ValueError):
    pass


class ConfigError(ValueError):
    pass


class _State(threading.local):
    def __init__(self):
        self.dtype = np.float64
        self.grad_enabled = True


_state = _State()


def get_dtype():
    return _state.dtype


def set_precision(name: str) -> None:
    if name not in _DTYPES:
        raise ConfigError(f"unknown precision {name!r}, expected one of {sorted(_DTYPES)}")
    _state.dtype = _DTYPES[name]


@contextlib.contextmanager
def precision(name: str):
    old = _state.dtype
    set_precision(name)
    try:
        yield
    finally:
        _state.dtype = old


@contextlib.contextmanager
def no_grad():
    old = _state.grad_enabled
    _state.grad_enabled = False
    try:
        yield
    finally:
        _state.grad_enabled = old


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` after numpy broadcasting."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


class Tensor:
    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, name: str | None = None,
                 _parents: tuple = (), _backward=None):
        arr = np.asarray(data)
        if arr.dtype != _state.dtype:
            arr = arr.astype(_state.dtype)
        self.data = arr
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self.name = name
        self._parents = _parents
        self._backward = _backward

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> Tensor:
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self):
        tag = f" name={self.name}" if self.name else ""
        return f"Tensor(shape={self.shape}{tag}, requires_grad={self.requires_grad})"

    def __len__(self):
        return len(self.data)

    def backward(self, grad=None) -> None:
        if grad is None:
            if self.data.size != 1:
                raise ShapeError(f"backward() without a seed needs a scalar, got {self.shape}")
            grad = np.ones_like(self.data)
        order = []
        seen = set()
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
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))

        grads = {id(self): np.asarray(grad, dtype=self.data.dtype)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                node.grad = g if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                grads[key] = pg if key not in grads else grads[key] + pg

    # operator sugar
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

    def __neg__(self):
        return mul(self, -1.0)

    def __pow__(self, p):
        return power(self, p)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return getitem(self, idx)

    @property
    def T(self):
        return transpose(self)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        return transpose(self, axes or None)


def parameter(data, name: str | None = None) -> Tensor:
    return Tensor(data, requires_grad=True, name=name)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data, parents, backward) -> Tensor:
    """Wrap an op result, attaching a graph node only when needed."""
    if _state.grad_enabled and any(p.requires_grad for p in parents):
        return Tensor(data, requires_grad=True, _parents=tuple(parents), _backward=backward)
    return Tensor(data)


# elementwise arithmetic

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _make(a.data + b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _make(a.data - b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _make(a.data * b.data, (a, b),
                 lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)))


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data / b.data

    def backward(g):
        return (_unbroadcast(g / b.data, a.shape),
                _unbroadcast(-g * out / b.data, b.shape))
    return _make(out, (a, b), backward)


def power(a, p: float) -> Tensor:
    a = as_tensor(a)
    return _make(a.data ** p, (a,), lambda g: (g * p * a.data ** (p - 1),))


def exp(a) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.data)
    return _make(out, (a,), lambda g: (g * out,))


def log(a) -> Tensor:
    a = as_tensor(a)
    return _make(np.log(a.data), (a,), lambda g: (g / a.data,))


def tabs(a) -> Tensor:
    a = as_tensor(a)
    return _make(np.abs(a.data), (a,), lambda g: (g * np.sign(a.data),))


def relu(a) -> Tensor:
    a = as_tensor(a)
    pos = a.data > 0
    return _make(np.where(pos, a.data, 0).astype(a.data.dtype), (a,), lambda g: (g * pos,))


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    out = expit(a.data)
    return _make(out, (a,), lambda g: (g * out * (1.0 - out),))


def clamp(a, lo: float, hi: float) -> Tensor:
    a = as_tensor(a)
    inside = (a.data >= lo) & (a.data <= hi)
    return _make(np.clip(a.data, lo, hi), (a,), lambda g: (g * inside,))


# reductions and shape ops

def tsum(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)
    return _make(out, (a,), backward)


def mean(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    n = a.data.size if axis is None else np.prod([a.shape[i] for i in np.atleast_1d(axis)])
    return tsum(a, axis, keepdims) * (1.0 / n)


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    return _make(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),))


def transpose(a, axes=None) -> Tensor:
    a = as_tensor(a)
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    inv = tuple(np.argsort(axes))
    return _make(a.data.transpose(axes), (a,), lambda g: (g.transpose(inv),))


def getitem(a, idx) -> Tensor:
    a = as_tensor(a)

    def backward(g):
        out = np.zeros_like(a.data)
        np.add.at(out, idx, g)
        return (out,)
    return _make(a.data[idx], (a,), backward)


def concat(tensors, axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    cuts = np.cumsum(sizes)[:-1]
    return _make(np.concatenate([t.data for t in tensors], axis=axis), tensors,
                 lambda g: tuple(np.split(g, cuts, axis=axis)))


def stack(tensors, axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    return _make(np.stack([t.data for t in tensors], axis=axis), tensors,
                 lambda g: tuple(np.moveaxis(g, axis, 0)))


# linear algebra

def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: cannot multiply {a.shape} by {b.shape}")
    out = a.data @ b.data

    def backward(g):
        ga = g @ np.swapaxes(b.data, -1, -2)
        gb = np.swapaxes(a.data, -1, -2) @ g
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)
    return _make(out, (a, b), backward)


def sparse_matmul(x, s) -> Tensor:
    """``x @ s`` for dense ``x`` (m x k) and a constant scipy sparse ``s`` (k x n)."""
    x = as_tensor(x)
    if x.ndim != 2 or x.shape[1] != s.shape[0]:
        raise ShapeError(f"sparse_matmul: cannot multiply {x.shape} by {s.shape}")
    out = np.asarray((s.T @ x.data.T).T, dtype=x.data.dtype)
    return _make(out, (x,), lambda g: (np.asarray((s @ g.T).T, dtype=g.dtype),))


# normalisation and attention primitives

def softmax_lastdim(x, mask=None) -> Tensor:
    """Softmax over the last axis.

    ``mask`` is either boolean (True keeps an entry) or additive with ``-inf``
    marking dropped entries. ``-inf`` values in ``x`` itself are also treated
    as masked. Rows with nothing left to normalise come out as zeros.
    """
    x = as_tensor(x)
    keep = ~np.isneginf(x.data)
    if mask is not None:
        mask = np.asarray(mask)
        keep = keep & (mask if mask.dtype == bool else ~np.isneginf(mask))
        keep = np.broadcast_to(keep, x.shape)
    z = np.where(keep, x.data, -np.inf)
    row_max = z.max(axis=-1, keepdims=True)
    empty = ~np.isfinite(row_max)
    if empty.any():
        logger.warning("softmax_lastdim: %d row(s) fully masked, returning zeros", int(empty.sum()))
    row_max = np.where(empty, 0.0, row_max)
    e = np.where(keep, np.exp(np.where(keep, z - row_max, 0.0)), 0.0)
    denom = e.sum(axis=-1, keepdims=True)
    out = (e / np.where(denom == 0, 1.0, denom)).astype(x.data.dtype)

    def backward(g):
        return (out * (g - (g * out).sum(axis=-1, keepdims=True)),)
    return _make(out, (x,), backward)


def layer_norm(x, gamma, beta, eps: float = 1e-5) -> Tensor:
    """Normalise the last axis to zero mean / unit (biased) variance, then apply
    the affine ``gamma * xhat + beta``."""
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    c = x.shape[-1]
    if c < 2:
        raise ShapeError(f"layer_norm needs at least 2 channels, got {x.shape}")
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = xhat * gamma.data + beta.data

    def backward(g):
        gx_hat = g * gamma.data
        gx = inv * (gx_hat - gx_hat.mean(axis=-1, keepdims=True)
                    - xhat * (gx_hat * xhat).mean(axis=-1, keepdims=True))
        return gx, _unbroadcast(g * xhat, gamma.shape), _unbroadcast(g, beta.shape)
    return _make(out, (x, gamma, beta), backward)


def dropout(x, rate: float, rng: np.random.Generator | None, training: bool) -> Tensor:
    """Inverted dropout; identity unless ``training`` and ``rate > 0``."""
    x = as_tensor(x)
    if not training or rate <= 0.0 or rng is None:
        return x
    keep = (rng.random(x.shape) >= rate).astype(x.data.dtype) / (1.0 - rate)
    return mul(x, Tensor(keep))


# convolutions; all use "same" zero padding and stride 1

def conv1d(x, w, b=None, groups: int = 1) -> Tensor:
    """Grouped temporal cross-correlation.

    x: (C_in, T); w: (C_out, C_in // groups, k) with odd k; b: (C_out,) or None.
    Returns (C_out, T).
    """
    x, w = as_tensor(x), as_tensor(w)
    c_in, t = x.shape
    c_out, cin_g, k = w.shape
    if c_in % groups or c_out % groups:
        raise ConfigError(f"conv1d: channels ({c_in} in, {c_out} out) not divisible by groups={groups}")
    if cin_g != c_in // groups:
        raise ShapeError(f"conv1d: kernel {w.shape} does not match input {x.shape} with groups={groups}")
    if k % 2 == 0:
        raise ConfigError(f"conv1d: kernel size must be odd, got {k}")
    p = k // 2
    cout_g = c_out // groups
    xp = np.pad(x.data, ((0, 0), (p, p)))
    win = sliding_window_view(xp, k, axis=1)                       # (C_in, T, k)
    cols = win.reshape(groups, cin_g, t, k).transpose(0, 1, 3, 2).reshape(groups, cin_g * k, t)
    wmat = w.data.reshape(groups, cout_g, cin_g * k)
    out = (wmat @ cols).reshape(c_out, t)
    parents = [x, w]
    if b is not None:
        b = as_tensor(b)
        out = out + b.data[:, None]
        parents.append(b)

    def backward(g):
        gg = g.reshape(groups, cout_g, t)
        gw = (gg @ cols.transpose(0, 2, 1)).reshape(w.shape)
        gcols = (wmat.transpose(0, 2, 1) @ gg).reshape(c_in, k, t)
        gxp = np.zeros_like(xp)
        for j in range(k):
            gxp[:, j:j + t] += gcols[:, j, :]
        grads = [gxp[:, p:p + t], gw]
        if b is not None:
            grads.append(g.sum(axis=1))
        return grads
    return _make(out, parents, backward)


def conv2d(x, w, b=None) -> Tensor:
    """Dense 2-D cross-correlation. x: (C_in, H, W); w: (C_out, C_in, k, k)."""
    x, w = as_tensor(x), as_tensor(w)
    c_in, h, wd = x.shape
    c_out, c_in_w, k, k2 = w.shape
    if c_in_w != c_in or k != k2 or k % 2 == 0:
        raise ShapeError(f"conv2d: kernel {w.shape} incompatible with input {x.shape}")
    parents = [x, w]
    wmat = w.data.reshape(c_out, c_in * k * k)
    if k == 1:
        cols = x.data.reshape(c_in, h * wd)
    else:
        p = k // 2
        xp = np.pad(x.data, ((0, 0), (p, p), (p, p)))
        win = sliding_window_view(xp, (k, k), axis=(1, 2))         # (C, H, W, k, k)
        cols = win.transpose(0, 3, 4, 1, 2).reshape(c_in * k * k, h * wd)
    out = (wmat @ cols).reshape(c_out, h, wd)
    if b is not None:
        b = as_tensor(b)
        out = out + b.data[:, None, None]
        parents.append(b)

    def backward(g):
        g2 = g.reshape(c_out, h * wd)
        gw = (g2 @ cols.T).reshape(w.shape)
        gcols = wmat.T @ g2
        if k == 1:
            gx = gcols.reshape(x.shape)
        else:
            gc = gcols.reshape(c_in, k, k, h, wd)
            gxp = np.zeros_like(xp)
            for i in range(k):
                for j in range(k):
                    gxp[:, i:i + h, j:j + wd] += gc[:, i, j]
            gx = gxp[:, p:p + h, p:p + wd]
        grads = [gx, gw]
        if b is not None:
            grads.append(g.sum(axis=(1, 2)))
        return grads
    return _make(out, parents, backward)


def avg_pool1d(x, k: int = 3) -> Tensor:
    """Stride-1 average pool over time with zero padding; padded zeros count
    toward the average, so the divisor is always ``k``."""
    x = as_tensor(x)
    c = x.shape[0]
    kernel = np.full((c, 1, k), 1.0 / k)
    return conv1d(x, Tensor(kernel), groups=c)
