"""Differentiable kernels.

Every function takes :class:`Tensor` (or array-like constants) and returns a
new :class:`Tensor` whose ``backward_fn`` maps the output gradient to one
gradient per parent.  Layouts are channels-last throughout: sequences are
``(batch, time, features)`` and images ``(batch, height, width, channels)``.
"""
from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .tensor import Tensor, as_tensor, get_default_dtype, make_node


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def _const(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    arr = np.asarray(x)
    if arr.dtype.kind != "f":
        arr = arr.astype(get_default_dtype())
    return Tensor(arr)


def _sigmoid(x: np.ndarray) -> np.ndarray:
    # tanh form never overflows
    return 0.5 * (1.0 + np.tanh(0.5 * x))


# -- elementwise ---------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = _const(a), _const(b)

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return make_node(a.data + b.data, (a, b), backward, "add")


def sub(a, b) -> Tensor:
    a, b = _const(a), _const(b)

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return make_node(a.data - b.data, (a, b), backward, "sub")


def mul(a, b) -> Tensor:
    a, b = _const(a), _const(b)

    def backward(g):
        ga = _unbroadcast(g * b.data, a.shape) if a.requires_grad else None
        gb = _unbroadcast(g * a.data, b.shape) if b.requires_grad else None
        return ga, gb

    return make_node(a.data * b.data, (a, b), backward, "mul")


def div(a, b) -> Tensor:
    a, b = _const(a), _const(b)
    out = a.data / b.data

    def backward(g):
        ga = _unbroadcast(g / b.data, a.shape) if a.requires_grad else None
        gb = _unbroadcast(-g * out / b.data, b.shape) if b.requires_grad else None
        return ga, gb

    return make_node(out, (a, b), backward, "div")


def tanh(x: Tensor) -> Tensor:
    out = np.tanh(x.data)
    return make_node(out, (x,), lambda g: (g * (1.0 - out * out),), "tanh")


def sigmoid(x: Tensor) -> Tensor:
    out = _sigmoid(x.data)
    return make_node(out, (x,), lambda g: (g * out * (1.0 - out),), "sigmoid")


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return make_node(x.data * mask, (x,), lambda g: (g * mask,), "relu")


def exp(x: Tensor) -> Tensor:
    out = np.exp(x.data)
    return make_node(out, (x,), lambda g: (g * out,), "exp")


def log(x: Tensor) -> Tensor:
    return make_node(np.log(x.data), (x,), lambda g: (g / x.data,), "log")


def log_sigmoid(x: Tensor) -> Tensor:
    """``log(sigmoid(x))`` without overflow for large ``|x|``."""
    d = x.data
    out = np.minimum(d, 0.0) - np.log1p(np.exp(-np.abs(d)))
    return make_node(out, (x,), lambda g: (g * _sigmoid(-d),), "log_sigmoid")


def where(cond, x: Tensor, value: float) -> Tensor:
    """Keep ``x`` where ``cond`` holds and put the constant ``value`` elsewhere."""
    cond = np.asarray(cond, dtype=bool)
    out = np.where(cond, x.data, np.asarray(value, dtype=x.data.dtype))
    return make_node(out, (x,), lambda g: (_unbroadcast(g * cond, x.shape),), "where")


# -- reductions and shape ------------------------------------------------------

def sum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    out = x.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape).copy(),)

    return make_node(np.asarray(out), (x,), backward, "sum")


def mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    count = x.data.size if axis is None else np.prod([x.shape[a] for a in np.atleast_1d(axis)])
    return mul(sum(x, axis=axis, keepdims=keepdims), 1.0 / count)


def reshape(x: Tensor, shape) -> Tensor:
    return make_node(x.data.reshape(shape), (x,), lambda g: (g.reshape(x.shape),), "reshape")


def transpose(x: Tensor, axes=None) -> Tensor:
    inverse = None if axes is None else np.argsort(axes)
    return make_node(np.transpose(x.data, axes), (x,), lambda g: (np.transpose(g, inverse),), "transpose")


def _is_basic_index(index) -> bool:
    items = index if isinstance(index, tuple) else (index,)
    return all(isinstance(i, (slice, int, np.integer)) or i is None or i is Ellipsis for i in items)


def getitem(x: Tensor, index) -> Tensor:
    basic = _is_basic_index(index)

    def backward(g):
        gx = np.zeros_like(x.data)
        if basic:
            gx[index] = g
        else:
            np.add.at(gx, index, g)
        return (gx,)

    return make_node(x.data[index], (x,), backward, "getitem")


def concat(tensors, axis: int = -1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    bounds = np.cumsum(sizes)[:-1]

    def backward(g):
        return tuple(np.split(g, bounds, axis=axis))

    return make_node(np.concatenate([t.data for t in tensors], axis=axis), tensors, backward, "concat")


def stack(tensors, axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]

    def backward(g):
        return tuple(np.moveaxis(g, axis, 0))

    return make_node(np.stack([t.data for t in tensors], axis=axis), tensors, backward, "stack")


def straight_through(z: Tensor, quantized: np.ndarray) -> Tensor:
    """Forward value ``quantized``; backward hands the gradient to ``z`` untouched."""
    quantized = np.asarray(quantized, dtype=z.data.dtype)
    if quantized.shape != z.shape:
        raise ValueError(f"quantized shape {quantized.shape} does not match {z.shape}")
    return make_node(quantized.copy(), (z,), lambda g: (g,), "straight_through")


# -- linear algebra ------------------------------------------------------------

def matmul(a, b) -> Tensor:
    a, b = _const(a), _const(b)

    def backward(g):
        ga = gb = None
        if a.requires_grad:
            if b.ndim == 1:
                ga = np.multiply.outer(g, b.data)
            else:
                ga = _unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape)
        if b.requires_grad:
            if b.ndim == 1:
                gb = (a.data * g[..., None]).reshape(-1, b.shape[0]).sum(axis=0)
            elif a.ndim == 2 or b.ndim > 2:
                gb = _unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape)
            else:
                a2 = a.data.reshape(-1, a.shape[-1])
                gb = a2.T @ g.reshape(-1, g.shape[-1])
        return ga, gb

    return make_node(a.data @ b.data, (a, b), backward, "matmul")


def affine(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """``x @ w + b`` over the last axis of ``x`` (any leading shape)."""
    if x.shape[-1] != w.shape[0]:
        raise ValueError(f"affine: input width {x.shape[-1]} does not match weight {w.shape}")
    lead = x.shape[:-1]
    x2 = x.data.reshape(-1, x.shape[-1])
    out = x2 @ w.data
    if b is not None:
        out = out + b.data
    out = out.reshape(lead + (w.shape[1],))

    def backward(g):
        g2 = g.reshape(-1, w.shape[1])
        gx = (g2 @ w.data.T).reshape(x.shape) if x.requires_grad else None
        gw = x2.T @ g2 if w.requires_grad else None
        gb = g2.sum(axis=0) if b is not None and b.requires_grad else None
        return (gx, gw, gb) if b is not None else (gx, gw)

    parents = (x, w, b) if b is not None else (x, w)
    return make_node(out, parents, backward, "affine")


# -- normalisation and probabilities ------------------------------------------

def softmax(x: Tensor, axis: int = -1, mask=None) -> Tensor:
    """Softmax along ``axis``; positions where ``mask`` is False get probability 0."""
    d = x.data
    if mask is not None:
        mask = np.broadcast_to(np.asarray(mask, dtype=bool), d.shape)
        d = np.where(mask, d, -np.inf)
    shifted = d - d.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return make_node(out, (x,), backward, "softmax")


def log_softmax(x: Tensor, axis: int = -1) -> Tensor:
    d = x.data
    shifted = d - d.max(axis=axis, keepdims=True)
    out = shifted - np.log(np.exp(shifted).sum(axis=axis, keepdims=True))

    def backward(g):
        return (g - np.exp(out) * g.sum(axis=axis, keepdims=True),)

    return make_node(out, (x,), backward, "log_softmax")


def cross_entropy(logits: Tensor, targets, weights=None) -> Tensor:
    """Weighted mean negative log-likelihood of integer ``targets`` under ``logits``.

    ``logits`` has shape ``(..., V)``; ``targets`` the leading shape.  Entries
    with weight 0 (padding) drop out of both numerator and denominator.
    """
    targets = np.asarray(targets)
    d = logits.data.reshape(-1, logits.shape[-1])
    t = targets.reshape(-1)
    if t.shape[0] != d.shape[0]:
        raise ValueError(f"cross_entropy: {t.shape[0]} targets for {d.shape[0]} rows")
    if t.size and (t.min() < 0 or t.max() >= d.shape[1]):
        raise ValueError("cross_entropy: target id out of range")
    w = np.ones(t.shape[0], dtype=d.dtype) if weights is None else np.asarray(weights, dtype=d.dtype).reshape(-1)
    total = w.sum()
    if total <= 0:
        raise ValueError("cross_entropy: no positions carry weight")
    shifted = d - d.max(axis=1, keepdims=True)
    logp = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    rows = np.arange(t.shape[0])
    loss = -(w * logp[rows, t]).sum() / total

    def backward(g):
        p = np.exp(logp)
        p[rows, t] -= 1.0
        return ((p * (w / total)[:, None] * g).reshape(logits.shape),)

    return make_node(np.asarray(loss, dtype=d.dtype), (logits,), backward, "cross_entropy")


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = xhat * gamma.data + beta.data
    n = x.shape[-1]

    def backward(g):
        gxhat = g * gamma.data
        gx = inv * (gxhat - gxhat.mean(axis=-1, keepdims=True)
                    - xhat * (gxhat * xhat).mean(axis=-1, keepdims=True))
        g2 = g.reshape(-1, n)
        return gx, (g2 * xhat.reshape(-1, n)).sum(axis=0), g2.sum(axis=0)

    return make_node(out, (x, gamma, beta), backward, "layer_norm")


def embedding(ids, table: Tensor) -> Tensor:
    ids = np.asarray(ids)
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise ValueError(f"embedding: id out of range for table of {table.shape[0]} rows")

    def backward(g):
        gt = np.zeros_like(table.data)
        np.add.at(gt, ids.reshape(-1), g.reshape(-1, table.shape[1]))
        return (gt,)

    return make_node(table.data[ids], (table,), backward, "embedding")


# -- convolutions --------------------------------------------------------------

def conv1d(x: Tensor, w: Tensor, b: Tensor | None = None, stride: int = 1, padding=(0, 0)) -> Tensor:
    """1-D convolution: ``x`` is ``(B, L, C)``, ``w`` is ``(K, C, O)``; returns ``(B, L', O)``.

    ``padding`` is ``(left, right)`` zero padding; left-only padding gives a causal layer.
    """
    B, L, C = x.shape
    K, Cw, O = w.shape
    if Cw != C:
        raise ValueError(f"conv1d: input has {C} channels, weight expects {Cw}")
    left, right = padding
    xp = np.pad(x.data, ((0, 0), (left, right), (0, 0))) if left or right else x.data
    Lp = xp.shape[1]
    if Lp < K:
        raise ValueError(f"conv1d: padded length {Lp} shorter than kernel {K}")
    Lout = (Lp - K) // stride + 1
    win = sliding_window_view(xp, K, axis=1)[:, ::stride][:, :Lout]  # (B, Lout, C, K)
    cols = np.ascontiguousarray(win.transpose(0, 1, 3, 2)).reshape(B * Lout, K * C)
    wm = w.data.reshape(K * C, O)
    out = cols @ wm
    if b is not None:
        out = out + b.data
    out = out.reshape(B, Lout, O)

    def backward(g):
        g2 = g.reshape(B * Lout, O)
        gw = (cols.T @ g2).reshape(w.shape) if w.requires_grad else None
        gx = None
        if x.requires_grad:
            gcols = (g2 @ wm.T).reshape(B, Lout, K, C)
            gxp = np.zeros_like(xp)
            span = stride * (Lout - 1) + 1
            for k in range(K):
                gxp[:, k:k + span:stride] += gcols[:, :, k]
            gx = gxp[:, left:left + L]
        if b is None:
            return gx, gw
        return gx, gw, g2.sum(axis=0)

    parents = (x, w) if b is None else (x, w, b)
    return make_node(out, parents, backward, "conv1d")


def conv2d(x: Tensor, w: Tensor, b: Tensor | None = None, stride=(1, 1), padding=(0, 0)) -> Tensor:
    """2-D convolution: ``x`` is ``(B, H, W, C)``, ``w`` is ``(KH, KW, C, O)``.

    ``padding`` is symmetric zero padding ``(ph, pw)``; returns ``(B, H', W', O)``.
    """
    B, H, W, C = x.shape
    KH, KW, Cw, O = w.shape
    if Cw != C:
        raise ValueError(f"conv2d: input has {C} channels, weight expects {Cw}")
    sh, sw = stride
    ph, pw = padding
    xp = np.pad(x.data, ((0, 0), (ph, ph), (pw, pw), (0, 0))) if ph or pw else x.data
    Hp, Wp = xp.shape[1], xp.shape[2]
    if Hp < KH or Wp < KW:
        raise ValueError(f"conv2d: padded input {Hp}x{Wp} smaller than kernel {KH}x{KW}")
    Ho = (Hp - KH) // sh + 1
    Wo = (Wp - KW) // sw + 1
    win = sliding_window_view(xp, (KH, KW), axis=(1, 2))[:, ::sh, ::sw][:, :Ho, :Wo]  # (B,Ho,Wo,C,KH,KW)
    cols = np.ascontiguousarray(win.transpose(0, 1, 2, 4, 5, 3)).reshape(B * Ho * Wo, KH * KW * C)
    wm = w.data.reshape(KH * KW * C, O)
    out = cols @ wm
    if b is not None:
        out = out + b.data
    out = out.reshape(B, Ho, Wo, O)

    def backward(g):
        g2 = g.reshape(B * Ho * Wo, O)
        gw = (cols.T @ g2).reshape(w.shape) if w.requires_grad else None
        gx = None
        if x.requires_grad:
            gcols = (g2 @ wm.T).reshape(B, Ho, Wo, KH, KW, C)
            gxp = np.zeros_like(xp)
            hspan = sh * (Ho - 1) + 1
            wspan = sw * (Wo - 1) + 1
            for i in range(KH):
                for j in range(KW):
                    gxp[:, i:i + hspan:sh, j:j + wspan:sw] += gcols[:, :, :, i, j]
            gx = gxp[:, ph:ph + H, pw:pw + W]
        if b is None:
            return gx, gw
        return gx, gw, g2.sum(axis=0)

    parents = (x, w) if b is None else (x, w, b)
    return make_node(out, parents, backward, "conv2d")


# -- recurrent -----------------------------------------------------------------

def lstm_cell(x: Tensor, h: Tensor, c: Tensor, wx: Tensor, wh: Tensor, b: Tensor) -> Tensor:
    """One LSTM step with gate order (input, forget, cell, output).

    Returns ``(B, 2H)``: the new hidden state followed by the new cell state.
    """
    H = h.shape[-1]
    a = x.data @ wx.data + h.data @ wh.data + b.data
    i = _sigmoid(a[:, :H])
    f = _sigmoid(a[:, H:2 * H])
    gg = np.tanh(a[:, 2 * H:3 * H])
    o = _sigmoid(a[:, 3 * H:])
    c_new = f * c.data + i * gg
    tc = np.tanh(c_new)
    h_new = o * tc

    def backward(g):
        gh, gc = g[:, :H], g[:, H:]
        dc = gc + gh * o * (1.0 - tc * tc)
        da = np.concatenate([
            dc * gg * i * (1.0 - i),
            dc * c.data * f * (1.0 - f),
            dc * i * (1.0 - gg * gg),
            gh * tc * o * (1.0 - o),
        ], axis=1)
        return (da @ wx.data.T, da @ wh.data.T, dc * f,
                x.data.T @ da, h.data.T @ da, da.sum(axis=0))

    return make_node(np.concatenate([h_new, c_new], axis=1), (x, h, c, wx, wh, b), backward, "lstm_cell")


def lstm_sequence(x: Tensor, wx: Tensor, wh: Tensor, b: Tensor, mask=None, reverse: bool = False) -> Tensor:
    """A whole unidirectional LSTM layer over ``x`` of shape ``(B, T, I)``.

    ``mask`` ``(B, T)`` marks valid frames; padded frames emit zeros and leave
    the recurrent state untouched, so padding never leaks into valid outputs
    in either direction.  State starts at zero.  Returns ``(B, T, H)``.
    """
    B, T, I = x.shape
    H = wh.shape[0]
    dtype = x.data.dtype
    m = np.ones((B, T), dtype=dtype) if mask is None else np.asarray(mask, dtype=dtype)
    x2 = x.data.reshape(B * T, I)
    xg = (x2 @ wx.data + b.data).reshape(B, T, 4 * H)
    steps = range(T - 1, -1, -1) if reverse else range(T)
    h = np.zeros((B, H), dtype=dtype)
    c = np.zeros((B, H), dtype=dtype)
    out = np.zeros((B, T, H), dtype=dtype)
    cache = [None] * T
    for t in steps:
        a = xg[:, t] + h @ wh.data
        i = _sigmoid(a[:, :H])
        f = _sigmoid(a[:, H:2 * H])
        gg = np.tanh(a[:, 2 * H:3 * H])
        o = _sigmoid(a[:, 3 * H:])
        c_new = f * c + i * gg
        tc = np.tanh(c_new)
        h_new = o * tc
        mt = m[:, t:t + 1]
        cache[t] = (h, c, i, f, gg, o, tc)
        out[:, t] = mt * h_new
        h = mt * h_new + (1.0 - mt) * h
        c = mt * c_new + (1.0 - mt) * c

    def backward(g):
        dxg = np.zeros_like(xg)
        dwh = np.zeros_like(wh.data)
        dh = np.zeros((B, H), dtype=dtype)
        dc = np.zeros((B, H), dtype=dtype)
        for t in reversed(list(steps)):
            h_prev, c_prev, i, f, gg, o, tc = cache[t]
            mt = m[:, t:t + 1]
            dh_new = mt * (g[:, t] + dh)
            dc_new = mt * dc + dh_new * o * (1.0 - tc * tc)
            da = np.concatenate([
                dc_new * gg * i * (1.0 - i),
                dc_new * c_prev * f * (1.0 - f),
                dc_new * i * (1.0 - gg * gg),
                dh_new * tc * o * (1.0 - o),
            ], axis=1)
            dxg[:, t] = da
            dwh += h_prev.T @ da
            dh = (1.0 - mt) * dh + da @ wh.data.T
            dc = (1.0 - mt) * dc + dc_new * f
        dxg2 = dxg.reshape(B * T, 4 * H)
        gx = (dxg2 @ wx.data.T).reshape(x.shape) if x.requires_grad else None
        return gx, x2.T @ dxg2, dwh, dxg2.sum(axis=0)

    return make_node(out, (x, wx, wh, b), backward, "lstm_sequence")
