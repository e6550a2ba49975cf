"""Forward and backward rules for the network primitives.

Every function works on batched arrays. Spatial tensors use the layout
``[batch, channel, time, freq]`` and sequences use ``[batch, time, feature]``.
Forward functions return ``(output, cache)``; the matching ``*_backward``
takes the upstream gradient and the cache.
"""
from __future__ import annotations

import numpy as np


def _same_pad(k: int) -> tuple[int, int]:
    lo = (k - 1) // 2
    return lo, k - 1 - lo


# ---------------------------------------------------------------- conv2d

def conv2d(x, w, b=None):
    """Stride-1 cross-correlation with zero "same" padding.

    Parameters
    ----------
    x : array [B, C_in, T, F]
    w : array [C_out, C_in, k_t, k_f], odd kernel sizes
    b : array [C_out] or None
    """
    if x.ndim != 4 or w.ndim != 4:
        raise ValueError(f"conv2d expects 4-D input and weights, got {x.shape} and {w.shape}")
    n, c, t, f = x.shape
    o, c_w, kt, kf = w.shape
    if c != c_w:
        raise ValueError(f"channel mismatch: input has {c}, weights expect {c_w}")
    if kt % 2 == 0 or kf % 2 == 0:
        raise ValueError(f"conv2d needs odd kernel sizes, got {kt}x{kf}")
    pt, pf = _same_pad(kt), _same_pad(kf)
    xp = np.pad(x, ((0, 0), (0, 0), pt, pf))
    acc = np.zeros((o, n, t, f), dtype=np.result_type(x, w))
    for a in range(kt):
        for d in range(kf):
            acc += np.tensordot(w[:, :, a, d], xp[:, :, a:a + t, d:d + f], axes=([1], [1]))
    y = acc.transpose(1, 0, 2, 3)
    if b is not None:
        y = y + b[None, :, None, None]
    return np.ascontiguousarray(y), (xp, w, x.shape)


def conv2d_backward(g, cache, need_input_grad=True):
    xp, w, xshape = cache
    n, c, t, f = xshape
    o, _, kt, kf = w.shape
    pt, pf = _same_pad(kt)[0], _same_pad(kf)[0]
    gt = np.ascontiguousarray(g.transpose(1, 0, 2, 3))
    dw = np.empty_like(w)
    dxp = np.zeros_like(xp) if need_input_grad else None
    for a in range(kt):
        for d in range(kf):
            window = xp[:, :, a:a + t, d:d + f]
            dw[:, :, a, d] = np.tensordot(gt, window, axes=([1, 2, 3], [0, 2, 3]))
            if need_input_grad:
                dxp[:, :, a:a + t, d:d + f] += np.tensordot(
                    w[:, :, a, d], gt, axes=([0], [0])).transpose(1, 0, 2, 3)
    db = g.sum(axis=(0, 2, 3))
    dx = dxp[:, :, pt:pt + t, pf:pf + f] if need_input_grad else None
    return dx, dw, db


# ---------------------------------------------------------------- batchnorm

def batchnorm(x, gamma, beta, running_mean, running_var, training,
              momentum=0.1, eps=1e-5):
    """Per-channel batch normalization over (batch, time, freq).

    In training mode the running statistics are updated in place.
    """
    axes = (0, 2, 3)
    shape = (1, -1, 1, 1)
    if training:
        mean = x.mean(axis=axes)
        var = x.var(axis=axes)
        count = x.size // x.shape[1]
        unbiased = var * count / (count - 1) if count > 1 else var
        running_mean *= 1.0 - momentum
        running_mean += momentum * mean
        running_var *= 1.0 - momentum
        running_var += momentum * unbiased
    else:
        mean, var = running_mean, running_var
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (x - mean.reshape(shape)) * inv_std.reshape(shape)
    y = gamma.reshape(shape) * xhat + beta.reshape(shape)
    return y, (xhat, inv_std, gamma, training)


def batchnorm_backward(g, cache):
    xhat, inv_std, gamma, training = cache
    axes = (0, 2, 3)
    shape = (1, -1, 1, 1)
    dgamma = (g * xhat).sum(axis=axes)
    dbeta = g.sum(axis=axes)
    dxhat = g * gamma.reshape(shape)
    if not training:
        return dxhat * inv_std.reshape(shape), dgamma, dbeta
    m = g.size // g.shape[1]
    dx = (inv_std.reshape(shape) / m) * (
        m * dxhat
        - dxhat.sum(axis=axes).reshape(shape)
        - xhat * (dxhat * xhat).sum(axis=axes).reshape(shape)
    )
    return dx, dgamma, dbeta


# ---------------------------------------------------------------- pooling

def maxpool2d(x, pool):
    """Non-overlapping max pooling; trailing rows/columns that do not fill a window are dropped."""
    pt, pf = pool
    if pt < 1 or pf < 1:
        raise ValueError(f"pool sizes must be >= 1, got {pool}")
    n, c, t, f = x.shape
    if pt > t or pf > f:
        raise ValueError(f"pool {pool} larger than input {t}x{f}")
    to, fo = t // pt, f // pf
    win = (x[:, :, :to * pt, :fo * pf]
           .reshape(n, c, to, pt, fo, pf)
           .transpose(0, 1, 2, 4, 3, 5)
           .reshape(n, c, to, fo, pt * pf))
    idx = win.argmax(axis=-1)
    y = np.take_along_axis(win, idx[..., None], axis=-1)[..., 0]
    return y, (idx, x.shape, pool)


def maxpool2d_backward(g, cache):
    idx, xshape, (pt, pf) = cache
    n, c, t, f = xshape
    to, fo = g.shape[2], g.shape[3]
    win = np.zeros((n, c, to, fo, pt * pf), dtype=g.dtype)
    np.put_along_axis(win, idx[..., None], g[..., None], axis=-1)
    dx = np.zeros(xshape, dtype=g.dtype)
    dx[:, :, :to * pt, :fo * pf] = (win.reshape(n, c, to, fo, pt, pf)
                                    .transpose(0, 1, 2, 4, 3, 5)
                                    .reshape(n, c, to * pt, fo * pf))
    return dx


# ---------------------------------------------------------------- pointwise

def sigmoid(x):
    # split by sign so large |x| never overflows exp
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def relu(x):
    return np.maximum(x, 0), x > 0


def relu_backward(g, mask):
    return g * mask


def dense(x, w, b):
    """Affine map on the last axis: ``x @ w.T + b`` with ``w`` of shape [D_out, D_in]."""
    if x.shape[-1] != w.shape[1]:
        raise ValueError(f"dense expects last dim {w.shape[1]}, got {x.shape[-1]}")
    return x @ w.T + b, x


def dense_backward(g, x, w):
    g2 = g.reshape(-1, g.shape[-1])
    x2 = x.reshape(-1, x.shape[-1])
    return g @ w, g2.T @ x2, g2.sum(axis=0)


def concat(xs, axis=1):
    """Join along the channel axis; every other dimension must agree."""
    ref = xs[0].shape
    for x in xs[1:]:
        if x.ndim != len(ref) or any(a != b for i, (a, b) in enumerate(zip(ref, x.shape)) if i != axis):
            raise ValueError(f"concat shape mismatch: {ref} vs {x.shape}")
    return np.concatenate(xs, axis=axis), [x.shape[axis] for x in xs]


def concat_backward(g, sizes, axis=1):
    return np.split(g, np.cumsum(sizes)[:-1], axis=axis)


def mse_loss(pred, target):
    if pred.shape != target.shape:
        raise ValueError(f"mse shape mismatch: {pred.shape} vs {target.shape}")
    diff = pred - target
    return float(np.mean(diff * diff)), 2.0 * diff / diff.size


# ---------------------------------------------------------------- GRU

def gru(x, w_ih, w_hh, b_ih, b_hh):
    """Unidirectional GRU over ``x`` [B, T, D] from a zero state.

    Gate rows of the weight matrices are stacked in (reset, update, candidate) order.
    """
    n, t, _ = x.shape
    hidden = w_hh.shape[1]
    gx = x @ w_ih.T + b_ih
    h = np.zeros((n, hidden), dtype=gx.dtype)
    out = np.empty((n, t, hidden), dtype=gx.dtype)
    r_all = np.empty_like(out)
    z_all = np.empty_like(out)
    c_all = np.empty_like(out)
    hn_all = np.empty_like(out)
    for step in range(t):
        gh = h @ w_hh.T + b_hh
        r = sigmoid(gx[:, step, :hidden] + gh[:, :hidden])
        z = sigmoid(gx[:, step, hidden:2 * hidden] + gh[:, hidden:2 * hidden])
        cand = np.tanh(gx[:, step, 2 * hidden:] + r * gh[:, 2 * hidden:])
        h = (1.0 - z) * cand + z * h
        out[:, step] = h
        r_all[:, step], z_all[:, step], c_all[:, step] = r, z, cand
        hn_all[:, step] = gh[:, 2 * hidden:]
    return out, (x, w_ih, w_hh, out, r_all, z_all, c_all, hn_all)


def gru_backward(g, cache):
    x, w_ih, w_hh, out, r_all, z_all, c_all, hn_all = cache
    n, t, _ = x.shape
    hidden = w_hh.shape[1]
    dgx = np.empty((n, t, 3 * hidden), dtype=g.dtype)
    dw_hh = np.zeros_like(w_hh)
    db_hh = np.zeros(3 * hidden, dtype=g.dtype)
    dh = np.zeros((n, hidden), dtype=g.dtype)
    zeros = np.zeros((n, hidden), dtype=g.dtype)
    for step in range(t - 1, -1, -1):
        dh = dh + g[:, step]
        h_prev = out[:, step - 1] if step > 0 else zeros
        r, z, cand, hn = r_all[:, step], z_all[:, step], c_all[:, step], hn_all[:, step]
        dcand = dh * (1.0 - z) * (1.0 - cand * cand)
        dz = dh * (h_prev - cand) * z * (1.0 - z)
        dr = dcand * hn * r * (1.0 - r)
        dgh = np.concatenate([dr, dz, dcand * r], axis=1)
        dgx[:, step] = np.concatenate([dr, dz, dcand], axis=1)
        dw_hh += dgh.T @ h_prev
        db_hh += dgh.sum(axis=0)
        dh = dh * z + dgh @ w_hh
    dx = dgx @ w_ih
    flat = dgx.reshape(-1, 3 * hidden)
    dw_ih = flat.T @ x.reshape(-1, x.shape[-1])
    db_ih = flat.sum(axis=0)
    return dx, dw_ih, dw_hh, db_ih, db_hh


def bigru(x, fwd, bwd):
    """Bidirectional GRU; ``fwd``/``bwd`` are (w_ih, w_hh, b_ih, b_hh) tuples.

    Output is [B, T, 2H] with the forward pass in the first H features.
    """
    if x.shape[1] < 1:
        raise ValueError("bigru needs at least one time step")
    yf, cf = gru(x, *fwd)
    yb, cb = gru(x[:, ::-1], *bwd)
    return np.concatenate([yf, yb[:, ::-1]], axis=-1), (cf, cb)


def bigru_backward(g, cache):
    cf, cb = cache
    hidden = g.shape[-1] // 2
    dxf, *gf = gru_backward(g[:, :, :hidden], cf)
    dxb, *gb = gru_backward(np.ascontiguousarray(g[:, ::-1, hidden:]), cb)
    return dxf + dxb[:, ::-1], tuple(gf), tuple(gb)
