"""Spectro-temporal receptive field kernels.

A kernel is the real part of the outer product of two analytic signals: a
gamma-windowed temporal seed dilated by the rate and an even Gabor spectral
seed dilated by the scale. Conjugating the spectral factor flips the
sweep direction. Kernels are L2-normalized.

The frequency axis is in octaves relative to the kernel's center frequency,
so the default 48 taps at 1/24 octave cover 0.5 CF .. 2 CF. When the kernel
is applied to a mel spectrogram, the mel axis is treated as log frequency.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np
from scipy import fft as sfft
from scipy.fft import next_fast_len

from .nn.layers import Layer

UP, DOWN = "up", "down"
DIRECTIONS = (UP, DOWN)

# temporal seed decay, in units of the rate period
_GAMMA_DECAY = 3.5


@dataclass(frozen=True)
class ScaleRateParam:
    """One trainable (log scale, log rate) point plus a sweep direction."""

    log_scale: float
    log_rate: float
    direction: str = DOWN

    def __post_init__(self):
        if not (np.isfinite(self.log_scale) and np.isfinite(self.log_rate)):
            raise ValueError("log_scale and log_rate must be finite")
        if self.direction not in DIRECTIONS:
            raise ValueError(f"direction must be 'up' or 'down', got {self.direction!r}")

    @classmethod
    def from_physical(cls, scale, rate, direction=DOWN):
        if scale <= 0 or rate <= 0:
            raise ValueError(f"scale and rate must be positive, got {scale}, {rate}")
        return cls(float(np.log(scale)), float(np.log(rate)), direction)

    @property
    def scale(self) -> float:
        """Spectral modulation in cycles/octave."""
        return float(np.exp(self.log_scale))

    @property
    def rate(self) -> float:
        """Temporal modulation in Hz."""
        return float(np.exp(self.log_rate))

    def with_direction(self, direction):
        return ScaleRateParam(self.log_scale, self.log_rate, direction)


@dataclass(frozen=True)
class KernelAxes:
    n_t: int = 50
    n_f: int = 48
    time_step_s: float = 0.2
    freq_step_oct: float = 1.0 / 24.0

    def __post_init__(self):
        if self.n_t < 2 or self.n_f < 2:
            raise ValueError(f"kernel needs at least 2x2 taps, got {self.n_t}x{self.n_f}")
        if self.time_step_s <= 0 or self.freq_step_oct <= 0:
            raise ValueError("axis steps must be positive")

    @property
    def shape(self):
        return (self.n_t, self.n_f)

    def time_axis(self):
        """Seconds from the onset of the temporal seed."""
        return np.arange(self.n_t) * self.time_step_s

    def freq_axis(self):
        """Octaves relative to CF, symmetric about zero."""
        return (np.arange(self.n_f) - (self.n_f - 1) / 2.0) * self.freq_step_oct

    @property
    def rate_resolution(self):
        return 1.0 / (self.n_t * self.time_step_s)

    @property
    def scale_resolution(self):
        return 1.0 / (self.n_f * self.freq_step_oct)


@dataclass
class StrfKernel:
    values: np.ndarray
    axes: KernelAxes
    param: ScaleRateParam


@dataclass
class StrfBank:
    """Kernels for every parameter pair in both directions: all up, then all down."""

    params: tuple
    kernels: np.ndarray
    axes: KernelAxes
    directions: tuple = field(default=())

    def __len__(self):
        return self.kernels.shape[0]

    def kernel(self, index) -> StrfKernel:
        n = len(self.params)
        direction = UP if index < n else DOWN
        return StrfKernel(self.kernels[index], self.axes, self.params[index % n].with_direction(direction))

    def manifest(self):
        n = len(self.params)
        return [
            {"index": i, "scale": self.params[i % n].scale, "rate": self.params[i % n].rate,
             "direction": UP if i < n else DOWN}
            for i in range(2 * n)
        ]


# ---------------------------------------------------------------- construction

def analytic_signal(x, axis=-1):
    """Analytic signal by DFT: keep DC (and Nyquist), double positive bins, zero negative ones."""
    x = np.asarray(x)
    n = x.shape[axis]
    h = np.zeros(n)
    h[0] = 1.0
    if n % 2 == 0:
        h[n // 2] = 1.0
        h[1:n // 2] = 2.0
    else:
        h[1:(n + 1) // 2] = 2.0
    shape = [1] * x.ndim
    shape[axis] = n
    return np.fft.ifft(np.fft.fft(x, axis=axis) * h.reshape(shape), axis=axis)


def _temporal_seed(t, rate):
    """Gamma-windowed sinusoid u^2 exp(-3.5u) sin(2 pi u), u = rate*t, and its d/d(log rate)."""
    u = np.multiply.outer(rate, t)
    env = np.exp(-_GAMMA_DECAY * u)
    s, c = np.sin(2 * np.pi * u), np.cos(2 * np.pi * u)
    h = u * u * env * s
    dh_du = env * ((2 * u - _GAMMA_DECAY * u * u) * s + 2 * np.pi * u * u * c)
    return h, u * dh_du


def _spectral_seed(x, scale):
    """Even Gabor cos(2 pi v) exp(-v^2/2), v = scale*x, and its d/d(log scale)."""
    v = np.multiply.outer(scale, x)
    env = np.exp(-0.5 * v * v)
    s, c = np.sin(2 * np.pi * v), np.cos(2 * np.pi * v)
    h = c * env
    dh_dv = env * (-2 * np.pi * s - v * c)
    return h, v * dh_dv


def _normalize(raw, draws):
    norm = np.sqrt(np.sum(raw * raw, axis=(-2, -1), keepdims=True))
    k = raw / norm
    out = []
    for d in draws:
        proj = np.sum(raw * d, axis=(-2, -1), keepdims=True)
        out.append(d / norm - raw * proj / norm ** 3)
    return k, out


def kernels_with_jacobian(log_scales, log_rates, axes: KernelAxes = KernelAxes()):
    """Build up and down kernels for P parameter pairs, with forward-mode derivatives.

    Returns ``(kernels, d_log_scale, d_log_rate)``, each [2P, n_t, n_f] with
    the up kernels first.  Row ``i`` of each derivative array is the
    derivative of kernel ``i`` with respect to its own pair's parameter.
    """
    log_scales = np.atleast_1d(np.asarray(log_scales, dtype=float))
    log_rates = np.atleast_1d(np.asarray(log_rates, dtype=float))
    ht, dht = _temporal_seed(axes.time_axis(), np.exp(log_rates))
    hs, dhs = _spectral_seed(axes.freq_axis(), np.exp(log_scales))
    ta, dta = analytic_signal(ht, axis=1), analytic_signal(dht, axis=1)
    sa, dsa = analytic_signal(hs, axis=1), analytic_signal(dhs, axis=1)

    def outer(a, b):
        return np.einsum("pt,pf->ptf", a, b).real

    results = []
    for spec_factor, dspec in ((np.conj(sa), np.conj(dsa)), (sa, dsa)):  # up, down
        raw = outer(ta, spec_factor)
        k, (d_ls, d_lr) = _normalize(raw, [outer(ta, dspec), outer(dta, spec_factor)])
        results.append((k, d_ls, d_lr))
    return tuple(np.concatenate([u, d]) for u, d in zip(*results))


def build_strf(param: ScaleRateParam, axes: KernelAxes = KernelAxes()) -> StrfKernel:
    kernels, _, _ = kernels_with_jacobian([param.log_scale], [param.log_rate], axes)
    values = kernels[0] if param.direction == UP else kernels[1]
    return StrfKernel(values, axes, param)


def build_bank(params: Sequence[ScaleRateParam], axes: KernelAxes = KernelAxes()) -> StrfBank:
    params = tuple(params)
    if not params:
        raise ValueError("build_bank needs at least one scale-rate pair")
    kernels, _, _ = kernels_with_jacobian(
        [p.log_scale for p in params], [p.log_rate for p in params], axes)
    return StrfBank(params, kernels, axes, tuple([UP] * len(params) + [DOWN] * len(params)))


def default_init_params(n_scales=8, n_rates=4, scale_range=(0.25, 8.0), rate_range=(0.3, 2.4)):
    """Log-spaced scale x rate grid, scale-major order."""
    scales = np.geomspace(*scale_range, n_scales)
    rates = np.geomspace(*rate_range, n_rates)
    return [ScaleRateParam(float(np.log(s)), float(np.log(r))) for s in scales for r in rates]


# ---------------------------------------------------------------- stimuli and analysis

@dataclass
class RippleStimulus:
    values: np.ndarray
    omega_hz: float
    scale_cyc_per_oct: float
    direction: str
    amplitude: float
    phase: float
    frame_period_s: float
    bins_per_octave: float


def ripple_stimulus(omega_hz, scale_cyc_per_oct, direction=DOWN, n_frames=150, n_bins=64,
                    frame_period_s=0.2, bins_per_octave=24.0, amplitude=1.0, phase=0.0):
    """Moving ripple ``1 + A cos(2 pi (w t + s Omega x) + phi)``, s = +1 down, -1 up."""
    if direction not in DIRECTIONS:
        raise ValueError(f"direction must be 'up' or 'down', got {direction!r}")
    if not 0.0 <= amplitude <= 1.0:
        raise ValueError(f"amplitude must lie in [0, 1], got {amplitude}")
    if abs(omega_hz) >= 0.5 / frame_period_s:
        raise ValueError(f"rate {omega_hz} Hz is above the temporal Nyquist {0.5 / frame_period_s} Hz")
    if abs(scale_cyc_per_oct) >= 0.5 * bins_per_octave:
        raise ValueError(
            f"scale {scale_cyc_per_oct} cyc/oct is above the spectral Nyquist {0.5 * bins_per_octave}")
    sign = 1.0 if direction == DOWN else -1.0
    t = np.arange(n_frames)[:, None] * frame_period_s
    x = np.arange(n_bins)[None, :] / bins_per_octave
    values = 1.0 + amplitude * np.cos(2 * np.pi * (omega_hz * t + sign * scale_cyc_per_oct * x) + phase)
    return RippleStimulus(values, omega_hz, scale_cyc_per_oct, direction, amplitude, phase,
                          frame_period_s, bins_per_octave)


class ModulationPeak(NamedTuple):
    # bins index the (possibly oversampled) DFT grid
    rate_hz: float
    scale_cyc_per_oct: float
    direction: str
    rate_bin: int
    scale_bin: int


def modulation_peak(grid, time_step_s, freq_step_oct, oversample=1) -> ModulationPeak:
    """Dominant (rate, scale, direction) of a time x frequency grid from its 2-D DFT.

    Positive temporal frequencies only; a positive spectral bin means energy
    drifting toward lower frequency over time (down), negative means up.
    Ties go to the lowest linear index. ``oversample > 1`` zero-pads the
    mean-removed grid to refine the peak location between native bins.
    """
    grid = np.asarray(grid, dtype=float)
    if grid.ndim != 2 or min(grid.shape) < 4:
        raise ValueError(f"modulation_peak needs a 2-D grid of at least 4x4, got {grid.shape}")
    if oversample < 1:
        raise ValueError("oversample must be >= 1")
    n_t, n_f = grid.shape[0] * oversample, grid.shape[1] * oversample
    mag = np.abs(np.fft.fft2(grid - grid.mean(), s=(n_t, n_f)))
    mag[0, :] = 0.0
    mag[:, 0] = 0.0
    half = mag[: n_t // 2 + 1]
    idx = int(np.argmax(half))
    tol = 1e-10 * mag.size * max(np.abs(grid).max(), np.finfo(float).tiny)
    if half.flat[idx] <= tol:
        raise ValueError("no peak: grid has no spectro-temporal modulation")
    kt, kf = np.unravel_index(idx, half.shape)
    signed = kf if kf <= n_f // 2 else kf - n_f
    return ModulationPeak(
        rate_hz=kt / (n_t * time_step_s),
        scale_cyc_per_oct=abs(signed) / (n_f * freq_step_oct),
        direction=DOWN if signed > 0 else UP,
        rate_bin=int(kt),
        scale_bin=int(signed),
    )


# ---------------------------------------------------------------- convolution

def _anchor(n):
    return (n - 1) // 2


def _pad_for(kshape, x):
    nt, nf = kshape
    at, af = _anchor(nt), _anchor(nf)
    return np.pad(x, ((0, 0), (at, nt - 1 - at), (af, nf - 1 - af)))


def _fft_shape(x_shape, kshape):
    # circular length >= padded input keeps the valid region free of wrap-around
    return tuple(next_fast_len(n + k - 1, real=True) for n, k in zip(x_shape, kshape))


def correlate_bank(x, kernels):
    """Same-padded cross-correlation of every sample [B, T, F] with every kernel [K, n_t, n_f]."""
    x = np.asarray(x)
    if x.ndim != 3 or x.shape[1] == 0 or x.shape[2] == 0:
        raise ValueError(f"expected non-empty [B, T, F] input, got {x.shape}")
    nt, nf = kernels.shape[1:]
    t, f = x.shape[1:]
    shape = _fft_shape((t, f), (nt, nf))
    xf = sfft.rfft2(_pad_for((nt, nf), x.astype(float)), shape)
    kf = sfft.rfft2(kernels[:, ::-1, ::-1], shape)
    out = np.empty((x.shape[0], kernels.shape[0], t, f), dtype=x.dtype)
    for b in range(x.shape[0]):
        full = sfft.irfft2(xf[b][None] * kf, shape)
        out[b] = full[:, nt - 1:nt - 1 + t, nf - 1:nf - 1 + f]
    return out


def correlate_bank_kernel_grad(x, g, kshape):
    """d loss / d kernels given upstream ``g`` [B, K, T, F]."""
    x = np.asarray(x, dtype=float)
    t, f = x.shape[1:]
    shape = _fft_shape((t, f), kshape)
    xf = sfft.rfft2(_pad_for(kshape, x), shape)
    gf = sfft.rfft2(np.asarray(g, dtype=float)[:, :, ::-1, ::-1], shape)
    full = sfft.irfft2(np.einsum("bij,bkij->kij", xf, gf), shape)
    return full[:, t - 1:t - 1 + kshape[0], f - 1:f - 1 + kshape[1]]


def correlate_bank_input_grad(g, kernels):
    """d loss / d input [B, T, F] given upstream ``g`` [B, K, T, F]."""
    nt, nf = kernels.shape[1:]
    at, af = _anchor(nt), _anchor(nf)
    t, f = g.shape[2], g.shape[3]
    shape = _fft_shape((t, f), (nt, nf))
    gf = sfft.rfft2(np.asarray(g, dtype=float), shape)
    kf = sfft.rfft2(kernels, shape)
    full = sfft.irfft2(np.einsum("bkij,kij->bij", gf, kf), shape)
    return full[:, at:at + t, af:af + f].astype(g.dtype, copy=False)


def _as_grid(spec):
    values = getattr(spec, "values", spec)
    values = np.asarray(values, dtype=float)
    if values.ndim != 2 or values.size == 0:
        raise ValueError(f"expected a non-empty [frames x bins] grid, got shape {values.shape}")
    return values


def strf_conv_forward(spec, bank: StrfBank):
    """STRFConv response [2P, n_frames, n_mels] of one spectrogram."""
    return correlate_bank(_as_grid(spec)[None], bank.kernels)[0]


def strf_param_grad(upstream, spec, bank: StrfBank):
    """Gradients [P, 2] of a loss w.r.t. each pair's (log_scale, log_rate)."""
    grid = _as_grid(spec)
    upstream = np.asarray(upstream, dtype=float)
    expected = (len(bank), *grid.shape)
    if upstream.shape != expected:
        raise ValueError(f"upstream gradient shape {upstream.shape} != forward output {expected}")
    _, d_ls, d_lr = kernels_with_jacobian(
        [p.log_scale for p in bank.params], [p.log_rate for p in bank.params], bank.axes)
    dk = correlate_bank_kernel_grad(grid[None], upstream[None], bank.axes.shape)
    return _chain_pairs(dk, d_ls, d_lr)


def _chain_pairs(dk, d_ls, d_lr):
    n = dk.shape[0] // 2
    gs = np.sum(dk * d_ls, axis=(1, 2))
    gr = np.sum(dk * d_lr, axis=(1, 2))
    return np.stack([gs[:n] + gs[n:], gr[:n] + gr[n:]], axis=1)


class StrfConv(Layer):
    """Convolution whose 2P kernels are synthesized from P trainable (log scale, log rate) pairs.

    Input [B, 1, T, F] (or [B, T, F]); output [B, 2P, T, F].
    """

    kind = "strfconv"

    def __init__(self, params: Sequence[ScaleRateParam] | None = None, axes: KernelAxes = KernelAxes(),
                 dtype=np.float32):
        super().__init__()
        params = list(params) if params is not None else default_init_params()
        if not params:
            raise ValueError("StrfConv needs at least one scale-rate pair")
        self.axes = axes
        self.n_pairs = len(params)
        self.params["log_scale"] = np.array([p.log_scale for p in params], dtype=dtype)
        self.params["log_rate"] = np.array([p.log_rate for p in params], dtype=dtype)
        self.dtype = dtype
        self.need_input_grad = False

    @property
    def c_out(self):
        return 2 * self.n_pairs

    def bank(self) -> StrfBank:
        params = [ScaleRateParam(float(s), float(r))
                  for s, r in zip(self.params["log_scale"], self.params["log_rate"])]
        return build_bank(params, self.axes)

    def forward(self, x, training=False):
        squeeze = x.ndim == 4
        if squeeze:
            if x.shape[1] != 1:
                raise ValueError(f"StrfConv takes a single input channel, got {x.shape[1]}")
            x = x[:, 0]
        k, d_ls, d_lr = kernels_with_jacobian(self.params["log_scale"], self.params["log_rate"], self.axes)
        self._cache = (x, k, d_ls, d_lr, squeeze)
        return correlate_bank(x.astype(np.float64), k).astype(x.dtype, copy=False)

    def backward(self, g):
        x, k, d_ls, d_lr, squeeze = self._need_cache()
        dk = correlate_bank_kernel_grad(x, g, self.axes.shape)
        grads = _chain_pairs(dk, d_ls, d_lr)
        dtype = self.params["log_scale"].dtype
        self.grads = {"log_scale": grads[:, 0].astype(dtype), "log_rate": grads[:, 1].astype(dtype)}
        if not self.need_input_grad:
            return None
        dx = correlate_bank_input_grad(g.astype(np.float64), k).astype(g.dtype, copy=False)
        return dx[:, None] if squeeze else dx

    def spec(self):
        return {"kind": self.kind, "n_pairs": self.n_pairs,
                "axes": [self.axes.n_t, self.axes.n_f, self.axes.time_step_s, self.axes.freq_step_oct]}


# ---------------------------------------------------------------- dumps

def write_kernel_csv(path, values):
    np.savetxt(path, np.asarray(values), delimiter=",", fmt="%.9g")


def write_kernel_pgm(path, values):
    """8-bit binary PGM (P5), min-max normalized; rows are frequency (high on top), columns time."""
    img = np.asarray(values, dtype=float).T[::-1]
    lo, hi = img.min(), img.max()
    scaled = np.zeros_like(img) if hi <= lo else (img - lo) / (hi - lo)
    pixels = np.round(scaled * 255).astype(np.uint8)
    h, w = pixels.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(pixels.tobytes())


def read_pgm(path):
    data = Path(path).read_bytes()
    parts = data.split(maxsplit=4)
    if parts[0] != b"P5":
        raise ValueError("not a binary PGM")
    w, h, maxval = int(parts[1]), int(parts[2]), int(parts[3])
    return np.frombuffer(parts[4][: w * h], dtype=np.uint8).reshape(h, w), maxval


def dump_bank(bank: StrfBank, out_dir):
    """Write ``kernel_XXX.csv``/``.pgm`` per kernel plus ``manifest.json``; returns the manifest."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    manifest = bank.manifest()
    for entry in manifest:
        stem = f"kernel_{entry['index']:03d}_{entry['direction']}"
        write_kernel_csv(out / f"{stem}.csv", bank.kernels[entry["index"]])
        write_kernel_pgm(out / f"{stem}.pgm", bank.kernels[entry["index"]])
        entry["files"] = [f"{stem}.csv", f"{stem}.pgm"]
    doc = {"axes": {"n_t": bank.axes.n_t, "n_f": bank.axes.n_f, "time_step_s": bank.axes.time_step_s,
                    "freq_step_oct": bank.axes.freq_step_oct},
           "kernels": manifest}
    (out / "manifest.json").write_text(json.dumps(doc, indent=2))
    return doc
