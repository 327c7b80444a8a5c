"""Differentiable operations used by the attention and network modules.

Image tensors are (batch, channel, height, width). Elementwise ops
broadcast numpy-style; gradients are summed back to the operand shape.
"""

from __future__ import annotations

from functools import lru_cache

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..mesh import interp_matrix
from .core import ShapeError, Tensor, as_tensor, make_node


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def _check_broadcast(a: Tensor, b: Tensor, op: str) -> tuple:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} do not broadcast") from None


# -- elementwise --------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "add")
    return make_node(a.data + b.data, (a, b),
                     lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "sub")
    return make_node(a.data - b.data, (a, b),
                     lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "mul")
    return make_node(a.data * b.data, (a, b),
                     lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)))


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "div")
    out = a.data / b.data
    return make_node(out, (a, b),
                     lambda g: (_unbroadcast(g / b.data, a.shape),
                                _unbroadcast(-g * out / b.data, b.shape)))


def scale(a, c: float) -> Tensor:
    a = as_tensor(a)
    return make_node(a.data * c, (a,), lambda g: (g * c,))


def add_scalar(a, c: float) -> Tensor:
    a = as_tensor(a)
    return make_node(a.data + c, (a,), lambda g: (g,))


def relu(a) -> Tensor:
    a = as_tensor(a)
    mask = a.data > 0
    return make_node(np.where(mask, a.data, 0.0), (a,), lambda g: (g * mask,))


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    x = a.data
    # split by sign to avoid overflow in exp
    e = np.exp(-np.abs(x))
    out = np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    return make_node(out, (a,), lambda g: (g * out * (1.0 - out),))


def exp(a) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.data)
    return make_node(out, (a,), lambda g: (g * out,))


def log(a) -> Tensor:
    a = as_tensor(a)
    return make_node(np.log(a.data), (a,), lambda g: (g / a.data,))


def sqrt(a) -> Tensor:
    a = as_tensor(a)
    out = np.sqrt(a.data)
    return make_node(out, (a,), lambda g: (0.5 * g / out,))


def clamp(a, lo: float, hi: float) -> Tensor:
    """Clip values; the gradient is passed only where no clipping happened."""
    a = as_tensor(a)
    inside = (a.data >= lo) & (a.data <= hi)
    return make_node(np.clip(a.data, lo, hi), (a,), lambda g: (g * inside,))


# -- reductions and reshaping ---------------------------------------------------

def reduce_sum(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def back(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return make_node(np.asarray(out), (a,), back)


def reduce_mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    n = a.data.size if axis is None else np.prod([a.shape[i] for i in np.atleast_1d(axis)])
    return scale(reduce_sum(a, axis, keepdims), 1.0 / n)


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    return make_node(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),))


def transpose(a, axes) -> Tensor:
    a = as_tensor(a)
    inv = np.argsort(axes)
    return make_node(np.transpose(a.data, axes), (a,), lambda g: (np.transpose(g, inv),))


def concat(tensors, axis: int = 1) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    ref = list(ts[0].shape)
    for t in ts[1:]:
        other = list(t.shape)
        if len(other) != len(ref) or any(o != r for i, (o, r) in enumerate(zip(other, ref)) if i != axis % len(ref)):
            raise ShapeError(f"concat: shapes {ts[0].shape} and {t.shape} differ off axis {axis}")
    sizes = [t.shape[axis] for t in ts]
    splits = np.cumsum(sizes)[:-1]
    return make_node(np.concatenate([t.data for t in ts], axis=axis), ts,
                     lambda g: tuple(np.split(g, splits, axis=axis)))


def slice_channels(a, start: int, stop: int) -> Tensor:
    a = as_tensor(a)

    def back(g):
        out = np.zeros_like(a.data)
        out[:, start:stop] = g
        return (out,)

    return make_node(a.data[:, start:stop].copy(), (a,), back)


# -- linear algebra -------------------------------------------------------------

def matmul(a, b) -> Tensor:
    """Matrix product batched over leading axes (numpy semantics)."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: shapes {a.shape} and {b.shape} are incompatible")
    out = np.matmul(a.data, b.data)

    def back(g):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
        gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return make_node(out, (a, b), back)


def channel_linear(x, w, b=None) -> Tensor:
    """1x1 convolution: ``w`` is (C_out, C_in) acting on axis 1 of ``x``."""
    x, w = as_tensor(x), as_tensor(w)
    if x.ndim < 2 or w.ndim != 2 or w.shape[1] != x.shape[1]:
        raise ShapeError(f"channel_linear: input {x.shape} vs weight {w.shape}")
    out = np.einsum("oc,bc...->bo...", w.data, x.data, optimize=True)
    parents = [x, w]
    if b is not None:
        b = as_tensor(b)
        if b.shape != (w.shape[0],):
            raise ShapeError(f"channel_linear: bias {b.shape} vs weight {w.shape}")
        out = out + b.data.reshape((1, -1) + (1,) * (x.ndim - 2))
        parents.append(b)

    def back(g):
        gx = np.einsum("oc,bo...->bc...", w.data, g, optimize=True)
        gw = np.einsum("bo...,bc...->oc", g, x.data, optimize=True)
        grads = [gx, gw]
        if b is not None:
            grads.append(g.sum(axis=tuple(i for i in range(g.ndim) if i != 1)))
        return tuple(grads)

    return make_node(out, parents, back)


def conv3x3(x, w, b=None) -> Tensor:
    """3x3 convolution, stride 1, zero padding 1. ``w`` is (C_out, C_in, 3, 3)."""
    x, w = as_tensor(x), as_tensor(w)
    if x.ndim != 4 or w.ndim != 4 or w.shape[1:] != (x.shape[1], 3, 3):
        raise ShapeError(f"conv3x3: input {x.shape} vs weight {w.shape}")
    B, C, H, W = x.shape
    Co = w.shape[0]
    xp = np.pad(x.data, ((0, 0), (0, 0), (1, 1), (1, 1)))
    win = sliding_window_view(xp, (3, 3), axis=(2, 3))        # B, C, H, W, 3, 3
    cols = np.ascontiguousarray(win.transpose(0, 2, 3, 1, 4, 5)).reshape(B * H * W, C * 9)
    wmat = w.data.reshape(Co, C * 9)
    out = (cols @ wmat.T).reshape(B, H, W, Co).transpose(0, 3, 1, 2)
    parents = [x, w]
    if b is not None:
        b = as_tensor(b)
        if b.shape != (Co,):
            raise ShapeError(f"conv3x3: bias {b.shape} vs {Co} output channels")
        out = out + b.data[None, :, None, None]
        parents.append(b)
    out = np.ascontiguousarray(out)

    def back(g):
        g2 = g.transpose(0, 2, 3, 1).reshape(B * H * W, Co)
        gw = (g2.T @ cols).reshape(w.shape)
        gcols = (g2 @ wmat).reshape(B, H, W, C, 3, 3)
        gxp = np.zeros((B, C, H + 2, W + 2))
        for di in range(3):
            for dj in range(3):
                gxp[:, :, di:di + H, dj:dj + W] += gcols[:, :, :, :, di, dj].transpose(0, 3, 1, 2)
        grads = [gxp[:, :, 1:-1, 1:-1], gw]
        if b is not None:
            grads.append(g.sum(axis=(0, 2, 3)))
        return tuple(grads)

    return make_node(out, parents, back)


@lru_cache(maxsize=64)
def _interp(n_in: int, n_out: int) -> np.ndarray:
    return interp_matrix(n_in, n_out)


def bilinear_resize(x, n_out: int) -> Tensor:
    """Bilinear interpolation between node-centered square grids on [-1, 1]^2.

    Going from m to 2m-1 nodes refines by two; m to (m+1)/2 coarsens by two,
    where coarse nodes coincide with every other fine node.
    """
    x = as_tensor(x)
    if x.ndim != 4 or x.shape[2] != x.shape[3]:
        raise ShapeError(f"bilinear_resize expects (B, C, m, m), got {x.shape}")
    P = _interp(x.shape[2], n_out)
    out = np.einsum("ij,bcjk,lk->bcil", P, x.data, P, optimize=True)
    return make_node(out, (x,), lambda g: (np.einsum("ij,bcil,lk->bcjk", P, g, P, optimize=True),))


def upsample2(x) -> Tensor:
    return bilinear_resize(x, 2 * x.shape[-1] - 1)


def downsample2(x) -> Tensor:
    n = x.shape[-1]
    if (n - 1) % 2:
        raise ShapeError(f"cannot halve a grid with {n} nodes per side")
    return bilinear_resize(x, (n + 1) // 2)


# -- normalization and activations ---------------------------------------------

def layer_norm(x, gamma=None, beta=None, axis: int = 1, eps: float = 1e-5) -> Tensor:
    """Normalize over ``axis`` (channels) at every position, then scale and shift."""
    x = as_tensor(x)
    ax = axis % x.ndim
    n = x.shape[ax]
    mu = x.data.mean(axis=ax, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=ax, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    bshape = [1] * x.ndim
    bshape[ax] = n
    parents = [x]
    out = xhat
    if gamma is not None:
        gamma, beta = as_tensor(gamma), as_tensor(beta)
        if gamma.shape != (n,) or beta.shape != (n,):
            raise ShapeError(f"layer_norm: affine shapes {gamma.shape}, {beta.shape} vs {n} features")
        out = xhat * gamma.data.reshape(bshape) + beta.data.reshape(bshape)
        parents += [gamma, beta]
    red = tuple(i for i in range(x.ndim) if i != ax)

    def back(g):
        gx_hat = g * gamma.data.reshape(bshape) if gamma is not None else g
        s1 = gx_hat.sum(axis=ax, keepdims=True)
        s2 = (gx_hat * xhat).sum(axis=ax, keepdims=True)
        gx = inv * (gx_hat - s1 / n - xhat * s2 / n)
        if gamma is None:
            return (gx,)
        return gx, (g * xhat).sum(axis=red), g.sum(axis=red)

    return make_node(out, parents, back)


def softmax(x, axis: int = -1) -> Tensor:
    x = as_tensor(x)
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=axis, keepdims=True)
    return make_node(out, (x,), lambda g: (out * (g - (g * out).sum(axis=axis, keepdims=True)),))


__all__ = [
    "add", "sub", "mul", "div", "scale", "add_scalar", "relu", "sigmoid", "exp", "log",
    "sqrt", "clamp", "reduce_sum", "reduce_mean", "reshape", "transpose", "concat",
    "slice_channels", "matmul", "channel_linear", "conv3x3", "bilinear_resize",
    "upsample2", "downsample2", "layer_norm", "softmax",
]
