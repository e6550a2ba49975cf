"""Segment-based macro F1 with a per-class optimal threshold (F1_MO)."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np


@dataclass(frozen=True)
class Event:
    onset_s: float
    offset_s: float
    label: str
    confidence: float = 1.0
    file_id: str = ""

    def __post_init__(self):
        if not self.onset_s < self.offset_s:
            raise ValueError(f"event onset {self.onset_s} must precede offset {self.offset_s}")
        if not 0.0 <= self.confidence <= 1.0:
            raise ValueError(f"confidence {self.confidence} outside [0, 1]")


EventList = list  # list[Event]


@dataclass
class SegmentScores:
    scores: np.ndarray
    segment_length_s: float = 1.0

    def __post_init__(self):
        self.scores = np.asarray(self.scores, dtype=float)
        if self.scores.ndim != 2:
            raise ValueError(f"segment scores must be [n_segments, n_classes], got {self.scores.shape}")


@dataclass
class ClassResult:
    label: str
    threshold: float
    f1: float
    tp: int
    fp: int
    fn: int


@dataclass
class F1Report:
    per_class: list[ClassResult]
    macro_f1: float
    excluded: list[str] = field(default_factory=list)

    def to_dict(self):
        return {
            "per_class": [vars(c) for c in self.per_class],
            "macro_f1": self.macro_f1,
            "excluded": list(self.excluded),
        }

    def to_json(self, **kw):
        return json.dumps(self.to_dict(), **kw)

    def table(self):
        lines = [f"{'class':<16}{'thr':>6}{'F1':>8}{'TP':>7}{'FP':>7}{'FN':>7}"]
        for c in self.per_class:
            lines.append(f"{c.label:<16}{c.threshold:>6.2f}{c.f1:>8.4f}{c.tp:>7d}{c.fp:>7d}{c.fn:>7d}")
        for label in self.excluded:
            lines.append(f"{label:<16}{'-':>6}{'(no reference positives)':>29}")
        lines.append(f"{'macro F1_MO':<16}{'':>6}{self.macro_f1:>8.4f}")
        return "\n".join(lines)


DEFAULT_THRESHOLDS = np.round(np.arange(51) * 0.02, 2)


def n_segments_for(duration_s, segment_length_s):
    return max(int(np.ceil(duration_s / segment_length_s - 1e-9)), 0)


def rasterize_reference(events, duration_s, classes, segment_length_s=1.0, strict=True):
    """Binary [n_segments, n_classes] roll; active iff an event overlaps the segment by > 0 s."""
    index = {c: i for i, c in enumerate(classes)}
    n_seg = n_segments_for(duration_s, segment_length_s)
    roll = np.zeros((n_seg, len(classes)))
    starts = np.arange(n_seg, dtype=np.float64)
    ends = starts + 1.0
    for ev in events:
        if ev.label not in index:
            if strict:
                raise KeyError(f"unknown class label {ev.label!r}")
            continue
        # in segment units, with a tolerance so edge-aligned events do not leak into a neighbour
        on, off = ev.onset_s / segment_length_s, ev.offset_s / segment_length_s
        overlap = np.minimum(ends, off) - np.maximum(starts, on)
        roll[overlap > 1e-9, index[ev.label]] = 1.0
    return SegmentScores(roll, segment_length_s)


def frame_centers(n_frames, frame_period_s):
    """Frame ``t`` spans ``[t p, (t+1) p)``."""
    return (np.arange(n_frames) + 0.5) * frame_period_s


def rasterize_predictions(frame_probs, frame_period_s, segment_length_s=1.0):
    """Max frame probability per segment, bucketing frames by their center time.

    A segment with no frame centers repeats the previous segment's score (0 for the first).
    """
    probs = np.asarray(frame_probs, dtype=float)
    if probs.ndim != 2:
        raise ValueError(f"frame probabilities must be [n_frames, n_classes], got {probs.shape}")
    if probs.size and (probs.min() < 0 or probs.max() > 1):
        raise ValueError("frame probabilities must lie in [0, 1]")
    n_frames, n_classes = probs.shape
    n_seg = n_segments_for(n_frames * frame_period_s, segment_length_s)
    seg_of_frame = np.floor(frame_centers(n_frames, frame_period_s) / segment_length_s).astype(int)
    out = np.full((n_seg, n_classes), -np.inf)
    np.maximum.at(out, np.minimum(seg_of_frame, n_seg - 1), probs)
    for s in range(n_seg):
        if np.isneginf(out[s, 0]):
            out[s] = out[s - 1] if s > 0 else 0.0
    return SegmentScores(out, segment_length_s)


def _as_stack(items):
    if isinstance(items, SegmentScores):
        return items.scores
    if isinstance(items, Mapping):
        items = [items[k] for k in sorted(items)]
    arrays = [i.scores if isinstance(i, SegmentScores) else np.asarray(i, dtype=float) for i in items]
    return np.concatenate(arrays, axis=0)


def counts_at_thresholds(pred, ref, thresholds):
    """TP/FP/FN arrays [n_thresholds, n_classes]; predicted positive iff score > threshold."""
    active = pred[None, :, :] > np.asarray(thresholds)[:, None, None]
    positive = ref[None, :, :] > 0.5
    tp = np.sum(active & positive, axis=1)
    fp = np.sum(active & ~positive, axis=1)
    fn = np.sum(~active & positive, axis=1)
    return tp, fp, fn


def f1_score(tp, fp, fn):
    tp, fp, fn = (np.asarray(a, dtype=float) for a in (tp, fp, fn))
    denom = 2 * tp + fp + fn
    return np.divide(2 * tp, denom, out=np.zeros_like(denom), where=denom > 0)


def f1_mo(pred, ref, classes: Sequence[str] | None = None, thresholds=DEFAULT_THRESHOLDS) -> F1Report:
    """Macro F1 with a per-class best threshold, counts pooled over all files.

    ``pred`` and ``ref`` are sequences (or dicts keyed by file) of
    SegmentScores / arrays with matching shapes. Ties between thresholds go
    to the lowest one. Classes without any reference-positive segment are
    left out of the macro average.
    """
    p, r = _as_stack(pred), _as_stack(ref)
    if p.shape != r.shape:
        raise ValueError(f"prediction shape {p.shape} does not match reference {r.shape}")
    n_classes = p.shape[1]
    classes = list(classes) if classes is not None else [str(i) for i in range(n_classes)]
    if len(classes) != n_classes:
        raise ValueError(f"{len(classes)} class names for {n_classes} score columns")
    thresholds = np.asarray(thresholds, dtype=float)
    tp, fp, fn = counts_at_thresholds(p, r, thresholds)
    f1 = f1_score(tp, fp, fn)
    results, excluded = [], []
    for c, label in enumerate(classes):
        if not np.any(r[:, c] > 0.5):
            excluded.append(label)
            continue
        best = int(np.argmax(f1[:, c]))
        results.append(ClassResult(label, float(thresholds[best]), float(f1[best, c]),
                                   int(tp[best, c]), int(fp[best, c]), int(fn[best, c])))
    if not results:
        raise ValueError("no class has a reference-positive segment")
    return F1Report(results, float(np.mean([c.f1 for c in results])), excluded)


def f1_at_threshold(pred, ref, threshold):
    """Per-class F1 at one fixed threshold (same counting rules as :func:`f1_mo`)."""
    p, r = _as_stack(pred), _as_stack(ref)
    tp, fp, fn = counts_at_thresholds(p, r, [threshold])
    return f1_score(tp, fp, fn)[0]


@dataclass
class FoldSummary:
    mean: float
    std: float
    n: int
    values: list


def aggregate_folds(reports) -> FoldSummary:
    """Unweighted mean and sample standard deviation of macro F1 over reports."""
    values = [r.macro_f1 if isinstance(r, F1Report) else float(r) for r in reports]
    if not values:
        raise ValueError("aggregate_folds needs at least one report")
    std = float(np.std(values, ddof=1)) if len(values) > 1 else 0.0
    return FoldSummary(float(np.mean(values)), std, len(values), values)
