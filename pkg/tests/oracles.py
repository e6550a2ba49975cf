"""Slow, loop-based reference implementations used only by the tests.

None of these import the package's own primitives, so agreement is evidence
rather than tautology.
"""
import math

import numpy as np


def conv2d(x, w, b=None):
    """Per-sample same-padded cross-correlation with explicit loops. x: [C, T, F]."""
    c, t, f = x.shape
    o, _, kt, kf = w.shape
    at, af = (kt - 1) // 2, (kf - 1) // 2
    out = np.zeros((o, t, f))
    for oc in range(o):
        for i in range(t):
            for j in range(f):
                acc = 0.0 if b is None else float(b[oc])
                for ic in range(c):
                    for a in range(kt):
                        for d in range(kf):
                            ti, fj = i + a - at, j + d - af
                            if 0 <= ti < t and 0 <= fj < f:
                                acc += w[oc, ic, a, d] * x[ic, ti, fj]
                out[oc, i, j] = acc
    return out


def correlate_same(grid, kernel):
    """Single-channel same-padded cross-correlation; anchor at (n - 1) // 2."""
    return conv2d(grid[None], kernel[None, None])[0]


def dense(x, w, b):
    out = np.zeros(w.shape[0])
    for i in range(w.shape[0]):
        out[i] = b[i] + sum(w[i, j] * x[j] for j in range(w.shape[1]))
    return out


def maxpool(grid, pt, pf):
    t, f = grid.shape[0] // pt, grid.shape[1] // pf
    out = np.empty((t, f))
    for i in range(t):
        for j in range(f):
            out[i, j] = max(grid[i * pt + a, j * pf + d] for a in range(pt) for d in range(pf))
    return out


def _sig(v):
    return 1.0 / (1.0 + math.exp(-v))


def gru(x, w_ih, w_hh, b_ih, b_hh):
    """Scalar-loop GRU over one sequence x [T, D]; gate order (reset, update, candidate)."""
    hidden = w_hh.shape[1]
    h = [0.0] * hidden
    out = []
    for xt in x:
        gx = [b_ih[k] + sum(w_ih[k, j] * xt[j] for j in range(len(xt))) for k in range(3 * hidden)]
        gh = [b_hh[k] + sum(w_hh[k, j] * h[j] for j in range(hidden)) for k in range(3 * hidden)]
        new = []
        for u in range(hidden):
            r = _sig(gx[u] + gh[u])
            z = _sig(gx[hidden + u] + gh[hidden + u])
            n = math.tanh(gx[2 * hidden + u] + r * gh[2 * hidden + u])
            new.append((1 - z) * n + z * h[u])
        h = new
        out.append(list(h))
    return np.array(out)


def adam_trace(p0, grads, lr=1e-3, b1=0.9, b2=0.999, eps=1e-8):
    """Hand-written scalar Adam recurrence; returns the parameter after each step."""
    p, m, v, trace = p0, 0.0, 0.0, []
    for t, g in enumerate(grads, start=1):
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        mhat = m / (1 - b1 ** t)
        vhat = v / (1 - b2 ** t)
        p = p - lr * mhat / (math.sqrt(vhat) + eps)
        trace.append(p)
    return trace


def dft_magnitude(frame):
    """O(n^2) real-input DFT magnitude, bins 0..n/2."""
    n = len(frame)
    k = np.arange(n // 2 + 1)[:, None]
    j = np.arange(n)[None, :]
    basis = np.exp(-2j * np.pi * k * j / n)
    return np.abs(basis @ frame)


def stft_magnitude(x, n_fft, hop):
    """Centered reflect-padded periodic-Hann frames, transformed by the naive DFT."""
    half = n_fft // 2
    padded = np.pad(x, (half, half), mode="reflect")
    window = np.array([0.5 - 0.5 * math.cos(2 * math.pi * i / n_fft) for i in range(n_fft)])
    n_frames = -(-len(x) // hop)
    return np.array([dft_magnitude(padded[i * hop:i * hop + n_fft] * window) for i in range(n_frames)])


def htk_filterbank(sample_rate, n_fft, n_mels, fmin, fmax):
    """Triangles built point by point from the HTK mel formula, rows normalized to sum 1."""
    def mel(f):
        return 2595.0 * math.log10(1.0 + f / 700.0)

    def hz(m):
        return 700.0 * (10.0 ** (m / 2595.0) - 1.0)

    m_lo, m_hi = mel(fmin), mel(fmax)
    edges = [hz(m_lo + (m_hi - m_lo) * i / (n_mels + 1)) for i in range(n_mels + 2)]
    fb = np.zeros((n_mels, n_fft // 2 + 1))
    for m in range(n_mels):
        lo, mid, hi = edges[m], edges[m + 1], edges[m + 2]
        for k in range(n_fft // 2 + 1):
            f = k * sample_rate / n_fft
            if lo < f <= mid:
                fb[m, k] = (f - lo) / (mid - lo)
            elif mid < f < hi:
                fb[m, k] = (hi - f) / (hi - mid)
        if fb[m].sum() > 0:
            fb[m] /= fb[m].sum()
    return fb


def f1_best(pred_col, ref_col, thresholds):
    """(threshold, f1) maximizing F1 for one class; first (lowest) threshold wins ties."""
    best = None
    for thr in thresholds:
        tp = sum(1 for p, r in zip(pred_col, ref_col) if p > thr and r > 0.5)
        fp = sum(1 for p, r in zip(pred_col, ref_col) if p > thr and r <= 0.5)
        fn = sum(1 for p, r in zip(pred_col, ref_col) if p <= thr and r > 0.5)
        f1 = 2 * tp / (2 * tp + fp + fn) if (tp + fp + fn) else 0.0
        if best is None or f1 > best[1]:
            best = (float(thr), f1)
    return best


def bucket_max(probs, frame_period, segment_length):
    """Segment max over frames whose centers fall inside; empty segments repeat the previous score."""
    n_frames, n_classes = probs.shape
    n_seg = math.ceil(n_frames * frame_period / segment_length - 1e-9)
    out = np.zeros((n_seg, n_classes))
    for s in range(n_seg):
        members = [t for t in range(n_frames)
                   if s * segment_length <= (t + 0.5) * frame_period < (s + 1) * segment_length]
        if members:
            out[s] = probs[members].max(axis=0)
        elif s > 0:
            out[s] = out[s - 1]
    return out


def shifted_pattern_responses(apply, seed=17):
    """Responses to a small pattern placed at two frequency positions over a fixed background."""
    r = np.random.default_rng(seed)
    t, f = 9, 16
    # background whose per-bin statistics change across frequency
    ramp = np.linspace(-2.0, 3.0, f)[None, None, :]
    background = np.tile(ramp, (2, t, 1)) + 0.3 * r.standard_normal((2, t, f))
    pattern = r.standard_normal((2, 3, 3))
    at_a = background.copy()
    at_a[:, 3:6, 5:8] += pattern
    at_b = background.copy()
    at_b[:, 3:6, 6:9] += pattern
    base = apply(background)
    return apply(at_a) - base, apply(at_b) - base
