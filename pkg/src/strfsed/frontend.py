"""Audio loading and mel-spectrogram features.

Defaults reproduce the feature setup used for 44.1 kHz clips: 17640-sample
Hann window, 8820-sample hop (0.2 s frames) and 64 HTK mel bands, compressed
with ``log1p``.
"""
from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np


class WavError(ValueError):
    """Base class for WAV decoding failures."""


class MalformedHeaderError(WavError):
    pass


class UnsupportedCodecError(WavError):
    pass


class EmptyAudioError(WavError):
    pass


@dataclass
class Waveform:
    samples: np.ndarray
    sample_rate_hz: int

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.sample_rate_hz <= 0:
            raise ValueError(f"sample rate must be positive, got {self.sample_rate_hz}")
        if self.samples.ndim != 1:
            raise ValueError("Waveform holds mono samples only")
        if not np.all(np.isfinite(self.samples)):
            raise ValueError("waveform contains non-finite samples")

    def __len__(self):
        return self.samples.size

    @property
    def duration_s(self):
        return self.samples.size / self.sample_rate_hz


@dataclass(frozen=True)
class MelConfig:
    sample_rate_hz: int = 44100
    n_fft: int = 17640
    hop: int = 8820
    n_mels: int = 64
    fmin_hz: float = 0.0
    fmax_hz: float | None = None
    compression: str = "log1p"

    def __post_init__(self):
        if self.hop <= 0:
            raise ValueError("hop must be positive")
        if self.n_fft < self.hop:
            raise ValueError(f"n_fft ({self.n_fft}) must be >= hop ({self.hop})")
        if self.n_mels < 1:
            raise ValueError("n_mels must be >= 1")
        if self.compression not in ("log1p", "db"):
            raise ValueError(f"unknown compression {self.compression!r}")
        if not 0 <= self.fmin_hz < self.fmax:
            raise ValueError(f"need 0 <= fmin < fmax, got {self.fmin_hz}, {self.fmax}")
        if self.fmax > self.sample_rate_hz / 2:
            raise ValueError(f"fmax {self.fmax} Hz exceeds Nyquist {self.sample_rate_hz / 2} Hz")

    @property
    def fmax(self) -> float:
        return self.sample_rate_hz / 2 if self.fmax_hz is None else self.fmax_hz

    @property
    def frame_period_s(self) -> float:
        return self.hop / self.sample_rate_hz


@dataclass
class MelSpectrogram:
    values: np.ndarray
    frame_period_s: float
    config: MelConfig = field(default_factory=MelConfig)

    @property
    def n_frames(self):
        return self.values.shape[0]

    @property
    def n_mels(self):
        return self.values.shape[1]


# ---------------------------------------------------------------- WAV

_PCM, _FLOAT = 1, 3
_EXTENSIBLE = 0xFFFE


def load_wav(path) -> Waveform:
    """Read a PCM16 or float32 RIFF WAV, averaging channels to mono."""
    data = Path(path).read_bytes()
    if len(data) < 12 or data[:4] != b"RIFF" or data[8:12] != b"WAVE":
        raise MalformedHeaderError(f"{path}: malformed header (no RIFF/WAVE signature)")
    pos, fmt, payload = 12, None, None
    while pos + 8 <= len(data):
        chunk_id = data[pos:pos + 4]
        (size,) = struct.unpack("<I", data[pos + 4:pos + 8])
        body = data[pos + 8:pos + 8 + size]
        if chunk_id == b"fmt ":
            if len(body) < 16:
                raise MalformedHeaderError(f"{path}: malformed header (short fmt chunk)")
            fmt = struct.unpack("<HHIIHH", body[:16])
            if fmt[0] == _EXTENSIBLE and len(body) >= 26:
                fmt = (struct.unpack("<H", body[24:26])[0],) + fmt[1:]
        elif chunk_id == b"data":
            payload = body
            break
        pos += 8 + size + (size & 1)
    if fmt is None or payload is None:
        raise MalformedHeaderError(f"{path}: malformed header (missing fmt or data chunk)")
    codec, channels, rate, _, block_align, bits = fmt
    if channels < 1 or rate < 1:
        raise MalformedHeaderError(f"{path}: malformed header ({channels} channels at {rate} Hz)")
    if (codec, bits) == (_PCM, 16):
        dtype, scale = "<i2", 1.0 / 32768.0
    elif (codec, bits) == (_FLOAT, 32):
        dtype, scale = "<f4", 1.0
    else:
        raise UnsupportedCodecError(f"{path}: unsupported codec (format {codec}, {bits} bit)")
    n_frames = len(payload) // (channels * bits // 8)
    if n_frames == 0:
        raise EmptyAudioError(f"{path}: zero-length audio")
    raw = np.frombuffer(payload[: n_frames * channels * bits // 8], dtype=dtype)
    samples = raw.astype(np.float64).reshape(n_frames, channels).mean(axis=1) * scale
    return Waveform(samples, rate)


def write_wav(path, wave: Waveform, codec="pcm16"):
    """Mono WAV writer (PCM16 or float32)."""
    if codec == "pcm16":
        pcm = np.clip(np.round(wave.samples * 32767), -32768, 32767).astype("<i2").tobytes()
        fmt_code, bits = _PCM, 16
    elif codec == "float32":
        pcm = wave.samples.astype("<f4").tobytes()
        fmt_code, bits = _FLOAT, 32
    else:
        raise ValueError(f"unknown codec {codec!r}")
    block = bits // 8
    header = struct.pack("<HHIIHH", fmt_code, 1, wave.sample_rate_hz,
                         wave.sample_rate_hz * block, block, bits)
    body = b"WAVE" + b"fmt " + struct.pack("<I", 16) + header + b"data" + struct.pack("<I", len(pcm)) + pcm
    Path(path).write_bytes(b"RIFF" + struct.pack("<I", len(body)) + body)


# ---------------------------------------------------------------- STFT / mel

def hann(n):
    """Periodic Hann window."""
    return 0.5 - 0.5 * np.cos(2 * np.pi * np.arange(n) / n)


def n_frames_for(n_samples, hop):
    return -(-n_samples // hop)


def stft_magnitude(wave: Waveform, n_fft, hop):
    """Magnitude STFT [n_frames, n_fft/2 + 1] with centered, reflect-padded Hann frames."""
    if hop <= 0:
        raise ValueError("hop must be positive")
    if n_fft <= 0 or n_fft % 2:
        raise ValueError(f"n_fft must be a positive even number, got {n_fft}")
    x = wave.samples
    if x.size < 1:
        raise ValueError("empty waveform")
    n_frames = n_frames_for(x.size, hop)
    half = n_fft // 2
    padded = np.pad(x, (half, half), mode="reflect") if x.size > 1 else np.pad(x, (half, half), mode="edge")
    frames = np.lib.stride_tricks.sliding_window_view(padded, n_fft)[::hop][:n_frames]
    return np.abs(np.fft.rfft(frames * hann(n_fft), axis=1))


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=float) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=float) / 2595.0) - 1.0)


def mel_filterbank(cfg: MelConfig):
    """HTK triangular filters [n_mels, n_fft/2 + 1], each row summing to 1."""
    edges = mel_to_hz(np.linspace(hz_to_mel(cfg.fmin_hz), hz_to_mel(cfg.fmax), cfg.n_mels + 2))
    freqs = np.arange(cfg.n_fft // 2 + 1) * cfg.sample_rate_hz / cfg.n_fft
    lo, mid, hi = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    rising = (freqs - lo) / (mid - lo)
    falling = (hi - freqs) / (hi - mid)
    fb = np.clip(np.minimum(rising, falling), 0.0, None)
    sums = fb.sum(axis=1, keepdims=True)
    return np.divide(fb, sums, out=np.zeros_like(fb), where=sums > 0)


def melspectrogram(wave: Waveform, cfg: MelConfig | None = None) -> MelSpectrogram:
    cfg = cfg or MelConfig(sample_rate_hz=wave.sample_rate_hz)
    if cfg.sample_rate_hz != wave.sample_rate_hz:
        raise ValueError(f"config expects {cfg.sample_rate_hz} Hz audio, got {wave.sample_rate_hz} Hz")
    mag = stft_magnitude(wave, cfg.n_fft, cfg.hop)
    mel = mag @ mel_filterbank(cfg).T
    if cfg.compression == "log1p":
        values = np.log1p(mel)
    else:
        values = 20.0 * np.log10(np.maximum(mel, 1e-10))
    return MelSpectrogram(values, cfg.frame_period_s, cfg)


# ---------------------------------------------------------------- feature blobs

def save_features(path, values, frame_period_s, **extra):
    """Write ``<path>`` (little-endian float32, row-major) and ``<path>.json`` sidecar."""
    values = np.asarray(values)
    path = Path(path)
    path.write_bytes(values.astype("<f4").tobytes())
    meta = {"n_frames": int(values.shape[0]), "n_mels": int(values.shape[1]),
            "frame_period_s": float(frame_period_s), **extra}
    Path(f"{path}.json").write_text(json.dumps(meta, indent=2))
    return meta


def load_features(path):
    """Inverse of :func:`save_features`; returns ``(values, sidecar_dict)``."""
    path = Path(path)
    meta = json.loads(Path(f"{path}.json").read_text())
    raw = np.frombuffer(path.read_bytes(), dtype="<f4")
    expected = meta["n_frames"] * meta["n_mels"]
    if raw.size != expected:
        raise ValueError(f"{path}: blob holds {raw.size} values, sidecar promises {expected}")
    return raw.reshape(meta["n_frames"], meta["n_mels"]).astype(np.float32), meta


def config_dict(cfg: MelConfig):
    return asdict(cfg)
