"""Labels, frame targets, cross-validation folds and the synthetic ripple corpus."""
from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .frontend import load_features, save_features
from .metrics import Event
from .strf import DIRECTIONS, ripple_stimulus


class LabelError(ValueError):
    def __init__(self, lineno, message):
        super().__init__(f"line {lineno}: {message}")
        self.lineno = lineno


@dataclass
class LabelSet:
    events: dict            # file id -> list[Event]
    classes: list
    skipped: list = field(default_factory=list)   # (line number, message) in lenient mode

    def files(self):
        return sorted(self.events)


def _is_number(text):
    try:
        float(text)
    except ValueError:
        return False
    return True


def parse_labels(path, strict=True, files=()) -> LabelSet:
    """Read ``filename,onset,offset,label[,confidence]`` rows (comma or tab separated).

    A header line is recognized when its onset column is not numeric. In
    strict mode the first bad row raises :class:`LabelError`; otherwise it is
    skipped and recorded. ``files`` seeds the file list so clips without
    events still appear.
    """
    events = {f: [] for f in files}
    skipped = []
    text = Path(path).read_text()
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        row = [c.strip() for c in (line.split("\t") if "\t" in line else next(csv.reader([line])))]
        if lineno == 1 and len(row) >= 2 and not _is_number(row[1]):
            continue
        try:
            if len(row) not in (4, 5):
                raise LabelError(lineno, f"expected 4 or 5 columns, got {len(row)}")
            name, onset, offset, label = row[:4]
            try:
                onset, offset = float(onset), float(offset)
                conf = float(row[4]) if len(row) == 5 and row[4] != "" else 1.0
            except ValueError as exc:
                raise LabelError(lineno, f"non-numeric field ({exc})") from None
            if not onset < offset:
                raise LabelError(lineno, f"onset {onset} must be before offset {offset}")
            if not 0.0 <= conf <= 1.0:
                raise LabelError(lineno, f"confidence {conf} outside [0, 1]")
            events.setdefault(name, []).append(Event(onset, offset, label, conf, name))
        except LabelError as err:
            if strict:
                raise
            skipped.append((lineno, str(err)))
    classes = sorted({e.label for evs in events.values() for e in evs})
    return LabelSet(events, classes, skipped)


def write_labels(path, events_by_file):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["filename", "onset", "offset", "label", "confidence"])
        for name in sorted(events_by_file):
            for e in events_by_file[name]:
                writer.writerow([name, f"{e.onset_s:.6f}", f"{e.offset_s:.6f}", e.label, f"{e.confidence:.6f}"])


_EDGE_TOL = 1e-9


def frame_targets(events, n_frames, frame_period_s, classes, strict=True):
    """Soft targets [n_frames, n_classes]: max confidence of events overlapping each frame.

    Frame ``t`` covers ``[t p, (t+1) p)``; an overlap must have positive length.
    """
    index = {c: i for i, c in enumerate(classes)}
    out = np.zeros((n_frames, len(classes)), dtype=np.float32)
    starts = np.arange(n_frames, dtype=np.float64)
    ends = starts + 1.0
    for e in events:
        if e.label not in index:
            if strict:
                raise KeyError(f"unknown class label {e.label!r}")
            continue
        # measured in frames so boundaries that land on a frame edge stay exact
        on, off = e.onset_s / frame_period_s, e.offset_s / frame_period_s
        hit = (np.minimum(ends, off) - np.maximum(starts, on)) > _EDGE_TOL
        col = out[:, index[e.label]]
        col[hit] = np.maximum(col[hit], e.confidence)
    return out


@dataclass
class FoldPlan:
    k: int
    assignment: dict        # file id -> fold index

    def files_in(self, fold):
        return sorted(f for f, k in self.assignment.items() if k == fold)

    def train_files(self, fold):
        return sorted(f for f, k in self.assignment.items() if k != fold)

    def sizes(self):
        return [len(self.files_in(i)) for i in range(self.k)]


def make_folds(file_ids, k=5, seed=42) -> FoldPlan:
    """Seeded shuffle of the sorted file list, then round-robin fold assignment."""
    files = sorted(set(file_ids))
    if k < 1:
        raise ValueError("k must be >= 1")
    if len(files) < k:
        raise ValueError(f"{len(files)} files cannot fill {k} folds")
    order = np.random.default_rng(seed).permutation(len(files))
    return FoldPlan(k, {files[j]: i % k for i, j in enumerate(order)})


# ---------------------------------------------------------------- synthetic corpus

@dataclass
class SynthSpec:
    n_clips: int = 60
    clip_seconds: float = 30.0
    n_classes: int = 3
    class_scales: tuple = ((0.3, 0.7), (1.5, 2.5), (4.0, 6.0))
    class_rates: tuple = ((0.5, 2.0), (0.5, 2.0), (0.5, 2.0))
    class_directions: tuple = (DIRECTIONS, DIRECTIONS, DIRECTIONS)
    events_per_clip: tuple = (3, 6)
    event_seconds: tuple = (2.0, 5.0)
    snr_db: float = 6.0
    seed: int = 42
    n_mels: int = 64
    frame_period_s: float = 0.2
    bins_per_octave: float = 24.0
    band_bins: int = 48

    def __post_init__(self):
        for name in ("class_scales", "class_rates", "class_directions"):
            value = getattr(self, name)
            if len(value) != self.n_classes:
                raise ValueError(f"{name} needs {self.n_classes} entries, got {len(value)}")
        order = sorted(range(self.n_classes), key=lambda c: self.class_scales[c][0])
        for a, b in zip(order, order[1:]):
            if self.class_scales[a][1] >= self.class_scales[b][0]:
                raise ValueError("class scale ranges overlap; classes would be ambiguous")
        nyq_rate = 0.5 / self.frame_period_s
        nyq_scale = 0.5 * self.bins_per_octave
        for lo, hi in self.class_rates:
            if not 0 < lo <= hi < nyq_rate:
                raise ValueError(f"rate range ({lo}, {hi}) must lie in (0, {nyq_rate}) Hz")
        for lo, hi in self.class_scales:
            if not 0 < lo <= hi < nyq_scale:
                raise ValueError(f"scale range ({lo}, {hi}) must lie in (0, {nyq_scale}) cyc/oct")
        if self.band_bins > self.n_mels:
            raise ValueError("band_bins cannot exceed n_mels")
        hi_ev = self.events_per_clip[1]
        if hi_ev * self.event_seconds[1] > self.clip_seconds:
            raise ValueError("events cannot fit into the clip without overlapping")

    @property
    def n_frames(self):
        return int(round(self.clip_seconds / self.frame_period_s))

    @property
    def classes(self):
        return [f"class{c}" for c in range(self.n_classes)]


@dataclass
class SynthPatch:
    label: str
    onset_frame: int
    offset_frame: int
    band_start: int
    band_bins: int
    rate_hz: float
    scale_cyc_per_oct: float
    direction: str


@dataclass
class SynthClip:
    name: str
    values: np.ndarray
    events: list
    patches: list


@dataclass
class SynthCorpus:
    spec: SynthSpec
    clips: list

    @property
    def classes(self):
        return self.spec.classes

    def labels(self):
        return {c.name: list(c.events) for c in self.clips}


def _pink_field(rng, n_t, n_f):
    white = rng.standard_normal((n_t, n_f))
    ft = np.fft.fftfreq(n_t)[:, None]
    ff = np.fft.fftfreq(n_f)[None, :]
    radius = np.sqrt(ft ** 2 + ff ** 2)
    radius[0, 0] = np.inf
    field_ = np.fft.ifft2(np.fft.fft2(white) / np.sqrt(radius)).real
    return (field_ - field_.mean()) / field_.std()


def _event_layout(rng, spec: SynthSpec):
    p = spec.frame_period_s
    n_ev = int(rng.integers(spec.events_per_clip[0], spec.events_per_clip[1] + 1))
    lo, hi = (int(round(s / p)) for s in spec.event_seconds)
    lengths = rng.integers(lo, hi + 1, size=n_ev)
    slack = spec.n_frames - int(lengths.sum())
    gaps = rng.multinomial(slack, np.full(n_ev + 1, 1.0 / (n_ev + 1)))
    spans, cursor = [], 0
    for length, gap in zip(lengths, gaps[:-1]):
        cursor += int(gap)
        spans.append((cursor, cursor + int(length)))
        cursor += int(length)
    return spans


def _synth_clip(spec: SynthSpec, index: int) -> SynthClip:
    rng = np.random.default_rng([spec.seed, index])
    n_t, n_f = spec.n_frames, spec.n_mels
    values = np.clip(1.0 + 0.5 * _pink_field(rng, n_t, n_f), 0.0, None)
    spans = _event_layout(rng, spec) if spec.events_per_clip[1] > 0 else []
    name = f"clip_{index:03d}"
    events, patches = [], []
    for start, stop in spans:
        c = int(rng.integers(spec.n_classes))
        scale = float(np.exp(rng.uniform(*np.log(spec.class_scales[c]))))
        rate = float(np.exp(rng.uniform(*np.log(spec.class_rates[c]))))
        dirs = spec.class_directions[c]
        direction = dirs[int(rng.integers(len(dirs)))]
        band = int(rng.integers(0, n_f - spec.band_bins + 1))
        phase = float(rng.uniform(0, 2 * np.pi))
        ripple = ripple_stimulus(rate, scale, direction, stop - start, spec.band_bins,
                                 spec.frame_period_s, spec.bins_per_octave, 1.0, phase).values
        region = values[start:stop, band:band + spec.band_bins]
        gain = np.sqrt(10 ** (spec.snr_db / 10) * np.mean(region ** 2) / np.mean(ripple ** 2))
        region += gain * ripple
        label = spec.classes[c]
        p = spec.frame_period_s
        events.append(Event(round(start * p, 6), round(stop * p, 6), label, 1.0, name))
        patches.append(SynthPatch(label, start, stop, band, spec.band_bins, rate, scale, direction))
    return SynthClip(name, values.astype(np.float32), events, patches)


def synth_corpus(spec: SynthSpec | None = None) -> SynthCorpus:
    """Mel-domain clips of pink background plus class-specific ripple patches; fully seeded."""
    spec = spec or SynthSpec()
    return SynthCorpus(spec, [_synth_clip(spec, i) for i in range(spec.n_clips)])


def save_corpus(corpus: SynthCorpus, out_dir):
    out = Path(out_dir)
    (out / "clips").mkdir(parents=True, exist_ok=True)
    for clip in corpus.clips:
        save_features(out / "clips" / f"{clip.name}.f32", clip.values, corpus.spec.frame_period_s)
    write_labels(out / "labels.csv", corpus.labels())
    manifest = {
        "spec": asdict(corpus.spec),
        "classes": corpus.classes,
        "frame_period_s": corpus.spec.frame_period_s,
        "files": [c.name for c in corpus.clips],
        "patches": {c.name: [asdict(p) for p in c.patches] for c in corpus.clips},
    }
    (out / "corpus.json").write_text(json.dumps(manifest, indent=1))
    return manifest


@dataclass
class Dataset:
    """Feature clips with their events, as loaded from a corpus directory."""

    features: dict          # name -> [n_frames, n_mels] float32
    events: dict            # name -> list[Event]
    classes: list
    frame_period_s: float

    def names(self):
        return sorted(self.features)

    def targets(self, name):
        return frame_targets(self.events.get(name, []), self.features[name].shape[0],
                             self.frame_period_s, self.classes)

    def subset(self, names):
        names = list(names)
        return Dataset({n: self.features[n] for n in names}, {n: self.events.get(n, []) for n in names},
                       self.classes, self.frame_period_s)


def load_dataset(data_dir) -> Dataset:
    """Load ``corpus.json`` + ``labels.csv`` + ``clips/*.f32`` blobs."""
    root = Path(data_dir)
    manifest_path = root / "corpus.json"
    if not manifest_path.exists():
        raise FileNotFoundError(f"{root}: no corpus.json manifest")
    try:
        manifest = json.loads(manifest_path.read_text())
        files, classes = manifest["files"], manifest["classes"]
        period = float(manifest["frame_period_s"])
    except (json.JSONDecodeError, KeyError) as exc:
        raise ValueError(f"{root}: corrupt corpus manifest ({exc})") from None
    labels = parse_labels(root / "labels.csv", files=files)
    unknown = set(labels.classes) - set(classes)
    if unknown:
        raise ValueError(f"{root}: labels use classes missing from the manifest: {sorted(unknown)}")
    features = {}
    for name in files:
        values, meta = load_features(root / "clips" / f"{name}.f32")
        if abs(meta["frame_period_s"] - period) > 1e-9:
            raise ValueError(f"{name}: frame period {meta['frame_period_s']} != corpus {period}")
        features[name] = values
    return Dataset(features, {n: labels.events.get(n, []) for n in files}, list(classes), period)


def dataset_from_corpus(corpus: SynthCorpus) -> Dataset:
    return Dataset({c.name: c.values for c in corpus.clips}, corpus.labels(), corpus.classes,
                   corpus.spec.frame_period_s)
