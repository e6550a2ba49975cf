"""Model architectures, training loop, checkpoints and parameter counting.

Every architecture is one or two convolutional branches followed by a shared
recurrent head::

    branch(es) -> [channel concat] -> BiGRU -> BiGRU -> dense -> ReLU -> dense -> sigmoid

A branch is an optional front layer (STRFConv, or a 3x3 "lift" conv for the
baseline branch of a two-branch model) followed by six ConvBlocks
(conv -> batchnorm -> ReLU -> maxpool). In FDY variants, blocks 2-6 of the
affected branch use FDYConv; the branch's first convolution stays static.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .fdy import FdyConv2d
from .metrics import f1_mo, rasterize_predictions, rasterize_reference
from .nn import functional as F
from .nn.layers import (
    BatchNorm2d, BiGRU, Conv2d, Dense, MaxPool2d, ReLU, Sequential, Sigmoid, ToSequence,
)
from .nn.optim import Adam
from .strf import KernelAxes, StrfConv, default_init_params

# architecture -> list of (front layer, FDY blocks) per branch
ARCHITECTURES = {
    "baseline": [(None, False)],
    "strfnet": [("strf", False)],
    "tb_baseline": [(None, False), (None, False)],
    "tb_strfnet": [("strf", False), ("lift", False)],
    "fdy_crnn": [(None, True)],
    "strf_fdynet": [("strf", True)],
    "tb_strf_fdynet1": [("strf", False), ("lift", True)],
    "tb_strf_fdynet2": [("strf", True), ("lift", False)],
    "tb_strf_fdynet3": [("strf", True), ("lift", True)],
}

PRESETS = {
    "paper": {"conv_widths": (16, 32, 64, 128, 128, 128), "gru_hidden": 128},
    "toy": {"conv_widths": (8, 16, 32, 32, 32, 32), "gru_hidden": 32},
}

DEFAULT_POOL_PLAN = ((1, 2), (1, 2), (1, 2), (1, 2), (1, 2), (1, 1))


def canonical_name(name: str) -> str:
    """Accept CLI-style names (``tb-strfnet``) as well as ``tb_strfnet``."""
    key = name.strip().lower().replace("-", "_")
    if key not in ARCHITECTURES:
        valid = ", ".join(n.replace("_", "-") for n in ARCHITECTURES)
        raise ValueError(f"unknown model {name!r}; valid names: {valid}")
    return key


@dataclass
class ModelConfig:
    architecture: str = "tb_strfnet"
    n_classes: int = 3
    n_mels: int = 64
    conv_widths: tuple = PRESETS["paper"]["conv_widths"]
    pool_plan: tuple = DEFAULT_POOL_PLAN
    kernel_size: tuple = (3, 3)
    gru_hidden: int = 128
    dense_hidden: int | None = None
    lift_channels: int = 64
    strf_axes: tuple = (50, 48, 0.2, 1.0 / 24.0)
    strf_scales: tuple = (0.25, 8.0, 8)
    strf_rates: tuple = (0.3, 2.4, 4)
    fdy_basis: int = 4
    fdy_temperature: float = 1.0
    preset: str = "paper"
    seed: int = 42
    dtype: str = "float32"

    def __post_init__(self):
        self.architecture = canonical_name(self.architecture)
        self.conv_widths = tuple(int(w) for w in self.conv_widths)
        self.pool_plan = tuple(tuple(int(v) for v in p) for p in self.pool_plan)
        self.kernel_size = tuple(self.kernel_size)
        self.strf_axes = tuple(self.strf_axes)
        self.strf_scales = tuple(self.strf_scales)
        self.strf_rates = tuple(self.strf_rates)
        if self.n_classes < 1:
            raise ValueError("n_classes must be >= 1")
        if len(self.conv_widths) != 6 or len(self.pool_plan) != 6:
            raise ValueError("conv_widths and pool_plan need one entry per ConvBlock (6)")
        if any(pt < 1 or pf < 1 for pt, pf in self.pool_plan):
            raise ValueError(f"invalid pool plan {self.pool_plan}")
        if self.out_mels < 1:
            raise ValueError(f"pool plan reduces {self.n_mels} mel bins below 1")

    @classmethod
    def from_preset(cls, preset, architecture, **overrides):
        if preset not in PRESETS:
            raise ValueError(f"unknown preset {preset!r}; choose from {sorted(PRESETS)}")
        return cls(architecture=architecture, preset=preset, **{**PRESETS[preset], **overrides})

    @property
    def out_mels(self):
        f = self.n_mels
        for _, pf in self.pool_plan:
            f //= pf
        return f

    @property
    def time_pool(self):
        return int(np.prod([pt for pt, _ in self.pool_plan]))

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown model config fields: {sorted(unknown)}")
        return cls(**d)


@dataclass
class TrainConfig:
    epochs: int = 150
    batch_size: int = 32
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 42

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be >= 1")

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown train config fields: {sorted(unknown)}")
        return cls(**d)


class ModelGraph:
    """A built network: one or two conv branches, a concat point, and the recurrent head."""

    def __init__(self, config: ModelConfig, branches, head):
        self.config = config
        self.branches = branches
        self.head = head

    @property
    def architecture(self):
        return self.config.architecture

    @property
    def two_branch(self):
        return len(self.branches) == 2

    # -------------------------------------------------------------- structure

    def layer_kinds(self, branch=None, compute_only=False):
        """Kinds of the layers in order; ``compute_only`` keeps conv/strf/fdy/gru/dense."""
        keep = {"strfconv", "conv2d", "fdyconv", "bigru", "dense"}
        seqs = self.branches if branch is None else [self.branches[branch]]
        kinds = [layer.kind for seq in seqs for layer in seq.layers]
        if branch is None:
            if self.two_branch:
                kinds.append("concat")
            kinds += [layer.kind for layer in self.head.layers]
        return [k for k in kinds if k in keep] if compute_only else kinds

    def named_params(self):
        out = {}
        for b, seq in enumerate(self.branches):
            for name, _, _, value in seq.named_params(f"branch{b}."):
                out[name] = value
        for name, _, _, value in self.head.named_params("head."):
            out[name] = value
        return out

    def named_grads(self):
        out = {}
        for b, seq in enumerate(self.branches):
            for name, layer, pname, _ in seq.named_params(f"branch{b}."):
                out[name] = layer.grads[pname]
        for name, layer, pname, _ in self.head.named_params("head."):
            out[name] = layer.grads[pname]
        return out

    def named_buffers(self):
        out = {}
        for b, seq in enumerate(self.branches):
            for name, _, _, value in seq.named_buffers(f"branch{b}."):
                out[name] = value
        return out

    def param_count(self):
        return int(sum(seq.n_params() for seq in self.branches) + self.head.n_params())

    # -------------------------------------------------------------- compute

    def forward(self, x, training=False):
        """[B, T, F] (or [B, 1, T, F]) mel batch -> frame probabilities [B, T', n_classes]."""
        x = np.asarray(x, dtype=self.config.dtype)
        if x.ndim == 3:
            x = x[:, None]
        if x.ndim != 4 or x.shape[1] != 1:
            raise ValueError(f"expected [B, T, F] input, got {x.shape}")
        if x.shape[3] != self.config.n_mels:
            raise ValueError(f"model expects {self.config.n_mels} mel bins, got {x.shape[3]}")
        if x.shape[2] < self.config.time_pool:
            raise ValueError(f"clip of {x.shape[2]} frames is shorter than the time pooling "
                             f"factor {self.config.time_pool}")
        feats = [seq.forward(x, training) for seq in self.branches]
        if self.two_branch:
            merged, self._split = F.concat(feats, axis=1)
        else:
            merged = feats[0]
        return self.head.forward(merged, training)

    def backward(self, g):
        g = self.head.backward(g)
        parts = F.concat_backward(g, self._split, axis=1) if self.two_branch else [g]
        for seq, part in zip(self.branches, parts):
            seq.backward(part)

    def predict(self, mel):
        """Frame probabilities [T', n_classes] for one [T, F] spectrogram (eval mode)."""
        values = getattr(mel, "values", mel)
        return self.forward(np.asarray(values)[None], training=False)[0]

    def __repr__(self):
        return f"ModelGraph({self.architecture}, {self.param_count()} params)"


def forward(model: ModelGraph, mel):
    return model.predict(mel)


def _branch(cfg: ModelConfig, front, fdy, rng, dtype):
    layers = []
    c_in = 1
    if front == "strf":
        n_t, n_f, dt, df = cfg.strf_axes
        smin, smax, ns = cfg.strf_scales
        rmin, rmax, nr = cfg.strf_rates
        params = default_init_params(int(ns), int(nr), (smin, smax), (rmin, rmax))
        strf = StrfConv(params, KernelAxes(int(n_t), int(n_f), float(dt), float(df)), dtype=dtype)
        layers.append(strf)
        c_in = strf.c_out
    elif front == "lift":
        layers.append(Conv2d(1, cfg.lift_channels, cfg.kernel_size, rng, dtype))
        c_in = cfg.lift_channels
    for i, (width, pool) in enumerate(zip(cfg.conv_widths, cfg.pool_plan)):
        if fdy and i > 0:
            conv = FdyConv2d(c_in, width, cfg.kernel_size, cfg.fdy_basis,
                             temperature=cfg.fdy_temperature, rng=rng, dtype=dtype)
        else:
            conv = Conv2d(c_in, width, cfg.kernel_size, rng, dtype)
        layers += [conv, BatchNorm2d(width, dtype=dtype), ReLU(), MaxPool2d(pool)]
        c_in = width
    # the first layer sees raw features; its input gradient is never needed
    layers[0].need_input_grad = False
    return Sequential(layers)


def build_model(cfg: ModelConfig) -> ModelGraph:
    dtype = np.dtype(cfg.dtype)
    rng = np.random.default_rng(cfg.seed)
    spec = ARCHITECTURES[cfg.architecture]
    branches = [_branch(cfg, front, fdy, rng, dtype) for front, fdy in spec]
    d_seq = len(branches) * cfg.conv_widths[-1] * cfg.out_mels
    hidden = cfg.gru_hidden
    dense_hidden = cfg.dense_hidden or hidden
    head = Sequential([
        ToSequence(),
        BiGRU(d_seq, hidden, rng, dtype),
        BiGRU(2 * hidden, hidden, rng, dtype),
        Dense(2 * hidden, dense_hidden, rng, dtype),
        ReLU(),
        Dense(dense_hidden, cfg.n_classes, rng, dtype),
        Sigmoid(),
    ])
    return ModelGraph(cfg, branches, head)


def param_count(model) -> int:
    """Trainable scalars; an STRFConv layer counts 2 per scale-rate pair."""
    if isinstance(model, ModelGraph):
        return model.param_count()
    return int(model.n_params())


# ---------------------------------------------------------------- training

def pool_targets(y, factor):
    """Max-pool frame targets [T, C] along time to match a time-pooled output."""
    if factor == 1:
        return y
    t = (y.shape[0] // factor) * factor
    return y[:t].reshape(-1, factor, y.shape[1]).max(axis=1)


@dataclass
class TrainResult:
    loss_trace: list = field(default_factory=list)      # mean loss per epoch
    step_losses: list = field(default_factory=list)


def _batches(lengths, batch_size, rng):
    groups = {}
    for i, n in enumerate(lengths):
        groups.setdefault(n, []).append(i)
    batches = []
    for n in sorted(groups):
        idx = rng.permutation(groups[n])
        batches += [idx[i:i + batch_size] for i in range(0, len(idx), batch_size)]
    order = rng.permutation(len(batches))
    return [batches[i] for i in order]


def train(model: ModelGraph, examples, cfg: TrainConfig = TrainConfig(), on_epoch=None) -> TrainResult:
    """Minibatch Adam on the MSE between frame probabilities and soft targets.

    ``examples`` is a sequence of ``(features [T, F], targets [T, C])``;
    clips are only batched with clips of the same length. ``on_epoch(epoch,
    mean_loss)`` is called after each epoch.
    """
    examples = list(examples)
    if not examples:
        raise ValueError("cannot train on an empty dataset")
    dtype = np.dtype(model.config.dtype)
    xs = [np.asarray(x, dtype=dtype) for x, _ in examples]
    ys = [pool_targets(np.asarray(y, dtype=dtype), model.config.time_pool) for _, y in examples]
    rng = np.random.default_rng(cfg.seed)
    params = model.named_params()
    opt = Adam(params, cfg.lr, cfg.beta1, cfg.beta2, cfg.eps)
    result = TrainResult()
    for epoch in range(cfg.epochs):
        losses = []
        for idx in _batches([x.shape[0] for x in xs], cfg.batch_size, rng):
            xb = np.stack([xs[i] for i in idx])
            yb = np.stack([ys[i] for i in idx])
            pred = model.forward(xb, training=True)
            loss, grad = F.mse_loss(pred, yb)
            if not np.isfinite(loss):
                raise FloatingPointError(f"non-finite loss at epoch {epoch}, batch {len(losses)}")
            model.backward(grad.astype(dtype, copy=False))
            opt.step(model.named_grads())
            losses.append(loss)
        result.step_losses += losses
        result.loss_trace.append(float(np.mean(losses)))
        if on_epoch is not None:
            on_epoch(epoch, result.loss_trace[-1])
    return result


def dataset_examples(dataset, names):
    return [(dataset.features[n], dataset.targets(n)) for n in names]


def predict_dataset(model: ModelGraph, dataset, names):
    return {n: model.predict(dataset.features[n]) for n in names}


def evaluate(model: ModelGraph, dataset, names, segment_length_s=1.0, probs=None):
    """F1_MO of ``model`` over the listed clips of a :class:`~strfsed.data.Dataset`."""
    names = list(names)
    if model.config.n_classes != len(dataset.classes):
        raise ValueError(f"model predicts {model.config.n_classes} classes, "
                         f"data has {len(dataset.classes)}")
    probs = probs if probs is not None else predict_dataset(model, dataset, names)
    period = dataset.frame_period_s * model.config.time_pool
    pred, ref = [], []
    for n in names:
        p = rasterize_predictions(probs[n], period, segment_length_s)
        duration = dataset.features[n].shape[0] * dataset.frame_period_s
        r = rasterize_reference(dataset.events.get(n, []), duration, dataset.classes, segment_length_s)
        rows = min(p.scores.shape[0], r.scores.shape[0])
        pred.append(p.scores[:rows])
        ref.append(r.scores[:rows])
    return f1_mo(pred, ref, dataset.classes)


# ---------------------------------------------------------------- checkpoints

CHECKPOINT_FORMAT = "strfsed-checkpoint"


def _checkpoint_paths(path):
    path = Path(path)
    stem = path.with_suffix("") if path.suffix in (".json", ".bin") else path
    return Path(f"{stem}.json"), Path(f"{stem}.bin")


def save_checkpoint(model: ModelGraph, path, extra=None):
    """Write ``<path>.json`` (manifest) and ``<path>.bin`` (little-endian parameter blob)."""
    manifest_path, blob_path = _checkpoint_paths(path)
    entries, chunks, offset = [], [], 0
    tensors = [(n, v, True) for n, v in model.named_params().items()]
    tensors += [(n, v, False) for n, v in model.named_buffers().items()]
    for name, value, trainable in tensors:
        dt = value.dtype.newbyteorder("<")
        raw = np.ascontiguousarray(value, dtype=dt).tobytes()
        entries.append({"name": name, "shape": list(value.shape), "dtype": dt.str,
                        "offset": offset, "nbytes": len(raw), "trainable": trainable})
        chunks.append(raw)
        offset += len(raw)
    manifest = {"format": CHECKPOINT_FORMAT, "version": 1, "architecture": model.architecture,
                "config": model.config.to_dict(), "blob_bytes": offset, "entries": entries}
    if extra:
        manifest["extra"] = extra
    manifest_path.parent.mkdir(parents=True, exist_ok=True)
    blob_path.write_bytes(b"".join(chunks))
    manifest_path.write_text(json.dumps(manifest, indent=1))
    return manifest


def load_checkpoint(path) -> ModelGraph:
    manifest_path, blob_path = _checkpoint_paths(path)
    manifest = json.loads(manifest_path.read_text())
    if manifest.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"{manifest_path}: not a {CHECKPOINT_FORMAT} manifest")
    arch = manifest.get("architecture", "")
    if arch not in ARCHITECTURES:
        raise ValueError(f"{manifest_path}: unknown architecture tag {arch!r}")
    blob = blob_path.read_bytes()
    if len(blob) != manifest["blob_bytes"]:
        raise ValueError(f"{blob_path}: blob has {len(blob)} bytes, manifest expects {manifest['blob_bytes']}")
    offset = 0
    for e in manifest["entries"]:
        if e["offset"] != offset:
            raise ValueError(f"{manifest_path}: entry {e['name']} does not start where the previous ended")
        offset += e["nbytes"]
    if offset != len(blob):
        raise ValueError(f"{manifest_path}: entries cover {offset} of {len(blob)} blob bytes")
    model = build_model(ModelConfig.from_dict(manifest["config"]))
    targets = {**model.named_params(), **model.named_buffers()}
    if set(targets) != {e["name"] for e in manifest["entries"]}:
        raise ValueError(f"{manifest_path}: parameter names do not match architecture {arch!r}")
    for e in manifest["entries"]:
        dest = targets[e["name"]]
        value = np.frombuffer(blob, dtype=np.dtype(e["dtype"]), count=int(np.prod(e["shape"], dtype=int)),
                              offset=e["offset"]).reshape(e["shape"])
        if value.shape != dest.shape:
            raise ValueError(f"{e['name']}: shape {value.shape} != expected {dest.shape}")
        dest[...] = value
    return model
