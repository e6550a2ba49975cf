"""Frequency-dynamic convolution (FDYConv).

Each frequency bin gets its own kernel, a softmax-weighted mix of K basis
kernels. The mixing weights come from the input: a time average, then a
two-layer map shared across bins (C_in -> hidden -> K).
"""
from __future__ import annotations

import numpy as np

from .nn import functional as F
from .nn.layers import Layer


def softmax(z, axis=-1):
    z = z - z.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


class FdyConv2d(Layer):
    """Frequency-dynamic 2-D convolution, same padding, stride 1.

    Parameters
    ----------
    n_basis : int
        Number of basis kernels K.
    hidden : int, optional
        Attention width; defaults to ``max(c_in // 4, 4)``.
    temperature : float
        Softmax temperature applied to the attention logits.

    Set ``fixed_attention`` to an array broadcastable to [B, F, K] to bypass
    the attention map (its parameters then receive zero gradient).
    """

    kind = "fdyconv"

    def __init__(self, c_in, c_out, kernel=(3, 3), n_basis=4, hidden=None, temperature=1.0,
                 rng=None, dtype=np.float32):
        super().__init__()
        if n_basis < 1:
            raise ValueError("n_basis must be >= 1")
        if temperature <= 0:
            raise ValueError("temperature must be positive")
        if kernel[0] % 2 == 0 or kernel[1] % 2 == 0:
            raise ValueError(f"kernel sizes must be odd, got {kernel}")
        rng = rng if rng is not None else np.random.default_rng(0)
        hidden = hidden if hidden is not None else max(c_in // 4, 4)
        self.c_in, self.c_out, self.kernel = c_in, c_out, tuple(kernel)
        self.n_basis, self.hidden, self.temperature = n_basis, hidden, temperature
        self.fixed_attention = None
        self.need_input_grad = True

        def uni(bound, shape):
            return rng.uniform(-bound, bound, size=shape).astype(dtype)

        fan = c_in * kernel[0] * kernel[1]
        self.params["basis"] = uni(1.0 / np.sqrt(fan), (n_basis, c_out, c_in, *kernel))
        self.params["basis_bias"] = uni(1.0 / np.sqrt(fan), (n_basis, c_out))
        self.params["att_w1"] = uni(1.0 / np.sqrt(c_in), (hidden, c_in))
        self.params["att_b1"] = uni(1.0 / np.sqrt(c_in), (hidden,))
        self.params["att_w2"] = uni(1.0 / np.sqrt(hidden), (n_basis, hidden))
        self.params["att_b2"] = uni(1.0 / np.sqrt(hidden), (n_basis,))

    # -------------------------------------------------------------- attention

    def _attention(self, x):
        p = self.params
        pooled = x.mean(axis=2)                                   # [B, C, F]
        pre = np.einsum("hc,bcf->bfh", p["att_w1"], pooled) + p["att_b1"]
        hid = np.maximum(pre, 0)
        logits = hid @ p["att_w2"].T + p["att_b2"]                # [B, F, K]
        return softmax(logits / self.temperature), (pooled, pre, hid)

    def attention(self, x):
        """Mixing weights [B, F, K] for input [B, C, T, F]."""
        x = _check_input(x, self.c_in)
        if self.fixed_attention is not None:
            return np.broadcast_to(self.fixed_attention,
                                   (x.shape[0], x.shape[3], self.n_basis)).astype(x.dtype)
        return self._attention(x)[0]

    # -------------------------------------------------------------- forward / backward

    def forward(self, x, training=False):
        x = _check_input(x, self.c_in)
        n, _, t, f = x.shape
        k, o = self.n_basis, self.c_out
        if self.fixed_attention is not None:
            att, att_cache = self.attention(x), None
        else:
            att, att_cache = self._attention(x)
        basis = self.params["basis"].reshape(k * o, self.c_in, *self.kernel)
        y, conv_cache = F.conv2d(x, basis, None)
        y = y.reshape(n, k, o, t, f)
        bias = self.params["basis_bias"]
        out = np.einsum("bfk,bkotf->botf", att, y, optimize=True)
        out += np.einsum("bfk,ko->bof", att, bias)[:, :, None, :]
        self._cache = (x.shape, att, att_cache, y, conv_cache)
        return out

    def backward(self, g):
        xshape, att, att_cache, y, conv_cache = self._need_cache()
        n, _, t, f = xshape
        k, o = self.n_basis, self.c_out
        p = self.params
        dy = np.einsum("bfk,botf->bkotf", att, g, optimize=True).reshape(n, k * o, t, f)
        dx, dbasis, _ = F.conv2d_backward(dy, conv_cache, self.need_input_grad)
        gsum = g.sum(axis=2)                                      # [B, O, F]
        grads = {
            "basis": dbasis.reshape(p["basis"].shape),
            "basis_bias": np.einsum("bfk,bof->ko", att, gsum),
        }
        if att_cache is None:
            for name in ("att_w1", "att_b1", "att_w2", "att_b2"):
                grads[name] = np.zeros_like(p[name])
        else:
            pooled, pre, hid = att_cache
            datt = np.einsum("botf,bkotf->bfk", g, y, optimize=True)
            datt += np.einsum("bof,ko->bfk", gsum, p["basis_bias"])
            dlogits = att * (datt - np.sum(datt * att, axis=-1, keepdims=True)) / self.temperature
            grads["att_w2"] = np.einsum("bfk,bfh->kh", dlogits, hid)
            grads["att_b2"] = dlogits.sum(axis=(0, 1))
            dpre = (dlogits @ p["att_w2"]) * (pre > 0)
            grads["att_w1"] = np.einsum("bfh,bcf->hc", dpre, pooled)
            grads["att_b1"] = dpre.sum(axis=(0, 1))
            if self.need_input_grad:
                dpooled = np.einsum("bfh,hc->bcf", dpre, p["att_w1"])
                dx = dx + dpooled[:, :, None, :] / t
        self.grads = grads
        return dx

    def spec(self):
        return {"kind": self.kind, "c_in": self.c_in, "c_out": self.c_out, "kernel": list(self.kernel),
                "n_basis": self.n_basis, "hidden": self.hidden, "temperature": self.temperature}


def _check_input(x, c_in):
    x = np.asarray(x)
    if x.ndim != 4:
        raise ValueError(f"expected [B, C, T, F] input, got shape {x.shape}")
    if x.shape[1] != c_in:
        raise ValueError(f"channel mismatch: input has {x.shape[1]}, layer expects {c_in}")
    return x


def _batched(x):
    x = np.asarray(x)
    return (x[None], True) if x.ndim == 3 else (x, False)


def fdy_attention(x, layer: FdyConv2d):
    """Per-bin mixing weights: [F, K] for a [C, T, F] input, [B, F, K] for a batch."""
    xb, single = _batched(x)
    att = layer.attention(xb)
    return att[0] if single else att


def fdy_forward(x, layer: FdyConv2d):
    xb, single = _batched(x)
    out = layer.forward(xb)
    return out[0] if single else out


def fdy_backward(upstream, x, layer: FdyConv2d):
    """Gradients of ``sum(upstream * fdy_forward(x))``: returns ``(param_grads, input_grad)``."""
    xb, single = _batched(x)
    gb, _ = _batched(upstream)
    expected = (xb.shape[0], layer.c_out, xb.shape[2], xb.shape[3])
    if gb.shape != expected:
        raise ValueError(f"upstream shape {gb.shape} does not match output shape {expected}")
    layer.forward(xb, training=True)
    dx = layer.backward(gb)
    return dict(layer.grads), (dx[0] if single else dx)


def fdy_forward_naive(x, layer: FdyConv2d):
    """Reference semantics: per-bin effective kernel, explicit loops over batch and frequency."""
    xb, single = _batched(x)
    att = layer.attention(xb)
    basis, bias = layer.params["basis"], layer.params["basis_bias"]
    kt, kf = layer.kernel
    pt, pf = (kt - 1) // 2, (kf - 1) // 2
    n, c, t, f = xb.shape
    xp = np.pad(xb, ((0, 0), (0, 0), (pt, kt - 1 - pt), (pf, kf - 1 - pf)))
    out = np.zeros((n, layer.c_out, t, f))
    for b in range(n):
        for j in range(f):
            w = np.tensordot(att[b, j], basis, axes=(0, 0))      # [O, C, kt, kf]
            bj = att[b, j] @ bias
            for ti in range(t):
                patch = xp[b, :, ti:ti + kt, j:j + kf]
                out[b, :, ti, j] = np.tensordot(w, patch, axes=([1, 2, 3], [0, 1, 2])) + bj
    return out[0] if single else out
