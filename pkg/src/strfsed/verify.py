"""Fast self-check suites run by ``strfsed verify``.

Each suite returns a :class:`SuiteResult`; none of them needs data on disk.
"""
from __future__ import annotations

import contextlib
import time
from dataclasses import dataclass, field

import numpy as np

from . import strf
from .fdy import FdyConv2d, fdy_attention, fdy_forward, fdy_forward_naive
from .metrics import DEFAULT_THRESHOLDS, f1_mo
from .nn import BatchNorm2d, BiGRU, Conv2d, Dense, MaxPool2d
from .nn.functional import conv2d
from .nn.gradcheck import check_layer

GRAD_TOL = 1e-3


@dataclass
class SuiteResult:
    name: str
    passed: bool
    detail: str
    seconds: float = 0.0
    failures: list = field(default_factory=list)


def peak_matches(kernel, param, axes) -> bool:
    """True iff the kernel's modulation peak is within one DFT bin of its nominal (scale, rate, direction)."""
    peak = strf.modulation_peak(kernel, axes.time_step_s, axes.freq_step_oct)
    return (abs(peak.rate_hz - param.rate) <= axes.rate_resolution + 1e-9
            and abs(peak.scale_cyc_per_oct - param.scale) <= axes.scale_resolution + 1e-9
            and peak.direction == param.direction)


def kernel_suite(axes=strf.KernelAxes()):
    params = strf.default_init_params()
    bank = strf.build_bank(params, axes)
    failures, n_ok = [], 0
    for i, direction in enumerate(bank.directions):
        p = params[i % len(params)].with_direction(direction)
        problems = []
        if not peak_matches(bank.kernels[i], p, axes):
            problems.append("modulation peak off nominal")
        norm = np.linalg.norm(bank.kernels[i])
        if abs(norm - 1.0) > 1e-9:
            problems.append(f"L2 norm {norm:.6g} != 1")
        n_ok += not problems
        failures += [f"kernel {i} ({p.scale:.3g} cyc/oct, {p.rate:.3g} Hz, {direction}): {m}"
                     for m in problems]
    n = len(params)
    mirror = np.max(np.abs(bank.kernels[:n] - bank.kernels[n:, :, ::-1]))
    if mirror > 1e-9:
        failures.append(f"up/down mirror error {mirror:.3g}")
    return failures, f"{n_ok}/{len(bank)} kernels ok, mirror error {mirror:.2g}"


def gradient_suite(seed=0):
    rng = np.random.default_rng(seed)
    f64 = np.float64
    cases = [
        ("conv2d", Conv2d(2, 3, (3, 3), rng, f64), rng.standard_normal((2, 2, 5, 6))),
        ("batchnorm", BatchNorm2d(3, dtype=f64), rng.standard_normal((2, 3, 4, 5))),
        ("maxpool", MaxPool2d((1, 2)), rng.standard_normal((2, 2, 4, 6))),
        ("dense", Dense(4, 3, rng, f64), rng.standard_normal((2, 3, 4))),
        ("bigru", BiGRU(3, 4, rng, f64), rng.standard_normal((2, 5, 3))),
        ("fdyconv", FdyConv2d(4, 3, (3, 3), 4, rng=rng, dtype=f64), rng.standard_normal((2, 4, 5, 6))),
    ]
    small = strf.KernelAxes(n_t=9, n_f=8)
    strf_params = [strf.ScaleRateParam.from_physical(s, r) for s, r in ((1.0, 0.8), (3.0, 1.6))]
    sc = strf.StrfConv(strf_params, small, dtype=f64)
    sc.need_input_grad = True
    cases.append(("strfconv", sc, rng.standard_normal((2, 1, 10, 9))))
    failures, worst = [], 0.0
    for name, layer, x in cases:
        for key, err in check_layer(layer, x, rng).items():
            worst = max(worst, err)
            if not err < GRAD_TOL:
                failures.append(f"{name}.{key}: relative error {err:.3g}")
    return failures, f"{len(cases)} layers, worst relative error {worst:.2g}"


def fdy_suite(seed=0):
    rng = np.random.default_rng(seed)
    layer = FdyConv2d(3, 4, (3, 3), 4, rng=rng, dtype=np.float64)
    x = rng.standard_normal((2, 3, 7, 10))
    failures = []
    att = fdy_attention(x, layer)
    if np.max(np.abs(att.sum(axis=-1) - 1.0)) > 1e-6:
        failures.append("attention rows do not sum to 1")
    err = np.max(np.abs(fdy_forward(x, layer) - fdy_forward_naive(x, layer)))
    if err > 1e-6:
        failures.append(f"optimized vs naive forward differ by {err:.3g}")
    layer.fixed_attention = np.full(layer.n_basis, 1.0 / layer.n_basis)
    mean_w = layer.params["basis"].mean(axis=0)
    mean_b = layer.params["basis_bias"].mean(axis=0)
    ref, _ = conv2d(x, mean_w, mean_b)
    uerr = np.max(np.abs(fdy_forward(x, layer) - ref))
    layer.fixed_attention = None
    if uerr > 1e-6:
        failures.append(f"uniform attention vs mean-kernel conv differ by {uerr:.3g}")
    return failures, f"naive error {err:.2g}, uniform error {uerr:.2g}"


def brute_force_f1(pred, ref, thresholds=DEFAULT_THRESHOLDS):
    """Exhaustive per-class threshold search with plain loops; returns {class: (threshold, f1)}."""
    out = {}
    for c in range(ref.shape[1]):
        if not any(ref[s, c] > 0.5 for s in range(ref.shape[0])):
            continue
        best = None
        for thr in thresholds:
            tp = fp = fn = 0
            for s in range(ref.shape[0]):
                on, pos = pred[s, c] > thr, ref[s, c] > 0.5
                tp += on and pos
                fp += on and not pos
                fn += pos and not on
            f1 = 2 * tp / (2 * tp + fp + fn) if tp + fp + fn else 0.0
            if best is None or f1 > best[1]:
                best = (float(thr), f1)
        out[c] = best
    return out


def random_f1_instance(rng):
    n_classes = int(rng.integers(1, 5))
    n_seg = int(rng.integers(1, 21))
    ref = (rng.random((n_seg, n_classes)) < rng.uniform(0.1, 0.9)).astype(float)
    ref[rng.integers(n_seg), rng.integers(n_classes)] = 1.0
    if rng.random() < 0.5:
        pred = np.round(rng.random((n_seg, n_classes)) * 50) / 50   # exact grid values: exercises ties
    else:
        pred = rng.random((n_seg, n_classes))
    return pred, ref


def metric_suite(n_instances=200, seed=0):
    rng = np.random.default_rng(seed)
    failures = []
    for i in range(n_instances):
        pred, ref = random_f1_instance(rng)
        report = f1_mo([pred], [ref])
        expected = brute_force_f1(pred, ref)
        got = {int(c.label): (c.threshold, c.f1) for c in report.per_class}
        if got != expected:
            failures.append(f"instance {i}: {got} != {expected}")
    return failures, f"{n_instances} random instances"


SUITES = {
    "kernels": kernel_suite,
    "gradients": gradient_suite,
    "fdy": fdy_suite,
    "metrics": metric_suite,
}
FAULTS = ("kernel-norm",)


@contextlib.contextmanager
def injected_fault(name):
    """Deliberately break one invariant so the matching suite can be seen to fail."""
    if name is None:
        yield
        return
    if name != "kernel-norm":
        raise ValueError(f"unknown fault {name!r}; choose from {FAULTS}")
    original = strf._normalize

    def skewed(raw, draws):
        k, d = original(raw, draws)
        return 1.5 * k, d

    strf._normalize = skewed
    try:
        yield
    finally:
        strf._normalize = original


def run_suites(names=None, fault=None):
    results = []
    with injected_fault(fault):
        for name in names or SUITES:
            start = time.perf_counter()
            try:
                failures, detail = SUITES[name]()
            except Exception as exc:  # a crashing suite is a failing suite
                failures, detail = [f"{type(exc).__name__}: {exc}"], "crashed"
            results.append(SuiteResult(name, not failures, detail, time.perf_counter() - start,
                                       failures))
    return results


__all__ = ["SuiteResult", "SUITES", "FAULTS", "run_suites", "brute_force_f1", "peak_matches",
           "random_f1_instance", "injected_fault"]
