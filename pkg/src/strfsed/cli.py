"""Command-line entry point: ``strfsed <subcommand> ...``.

Every subcommand takes ``--seed`` (default 42); failures print one line to
stderr and exit nonzero.
"""
from __future__ import annotations

import argparse
import csv
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import data, frontend, metrics, models, strf, verify

EXIT_FAILURE = 1
EXIT_USAGE = 2


class CliError(Exception):
    def __init__(self, message, code=EXIT_FAILURE):
        super().__init__(message)
        self.code = code


def _float_list(text):
    try:
        values = [float(v) for v in text.replace(",", " ").split()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected numbers, got {text!r}") from None
    if not values:
        raise argparse.ArgumentTypeError("empty list")
    return values


def _int_range(text):
    try:
        lo, hi = (int(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected MIN,MAX such as 3,6, got {text!r}") from None
    if not 0 <= lo <= hi:
        raise argparse.ArgumentTypeError(f"need 0 <= MIN <= MAX, got {text!r}")
    return lo, hi


def _axes(text):
    try:
        n_t, n_f = (int(v) for v in text.lower().split("x"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected TxF such as 50x48, got {text!r}") from None
    return n_t, n_f


def _flatten(lists):
    return [v for chunk in lists for v in chunk]


def _model_name(name):
    try:
        return models.canonical_name(name)
    except ValueError as exc:
        raise CliError(str(exc), EXIT_USAGE) from None


def _load_json(path):
    try:
        return json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise CliError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise CliError(f"{path}: invalid JSON ({exc})") from None


def _folds(dataset, n_folds, fold, seed):
    if not 0 <= fold < n_folds:
        raise CliError(f"--fold must be in [0, {n_folds - 1}], got {fold}")
    return data.make_folds(dataset.names(), n_folds, seed)


def _emit(line, log=None):
    text = json.dumps(line)
    print(text, flush=True)
    if log is not None:
        log.write(text + "\n")
        log.flush()


# ---------------------------------------------------------------- subcommands

def cmd_kernels(args):
    default = strf.default_init_params()
    scales = _flatten(args.scales) if args.scales else sorted({p.scale for p in default})
    rates = _flatten(args.rates) if args.rates else sorted({p.rate for p in default})
    if min(scales) <= 0 or min(rates) <= 0:
        raise CliError("scales and rates must be positive")
    n_t, n_f = args.axes
    axes = strf.KernelAxes(n_t, n_f, args.time_step, 1.0 / args.bins_per_octave)
    params = [strf.ScaleRateParam.from_physical(s, r) for s in scales for r in rates]
    bank = strf.build_bank(params, axes)
    try:
        strf.dump_bank(bank, args.out)
    except OSError as exc:
        raise CliError(f"cannot write kernels to {args.out}: {exc.strerror}") from None
    print(f"{'idx':>4} {'dir':>5} {'scale':>7} {'rate':>6} {'peak_scale':>11} {'peak_rate':>10}  ok")
    n_ok = 0
    for i, direction in enumerate(bank.directions):
        p = params[i % len(params)].with_direction(direction)
        peak = strf.modulation_peak(bank.kernels[i], axes.time_step_s, axes.freq_step_oct)
        ok = verify.peak_matches(bank.kernels[i], p, axes)
        n_ok += ok
        print(f"{i:>4} {direction:>5} {p.scale:>7.3f} {p.rate:>6.3f} {peak.scale_cyc_per_oct:>11.3f} "
              f"{peak.rate_hz:>10.3f}  {'yes' if ok else 'NO'}")
    print(f"{len(bank)} kernels written to {args.out}; {n_ok}/{len(bank)} peaks within one bin")
    return 0


def cmd_synth_data(args):
    try:
        spec = data.SynthSpec(n_clips=args.n_clips, clip_seconds=args.clip_seconds, snr_db=args.snr_db,
                              events_per_clip=args.events_per_clip, seed=args.seed)
    except ValueError as exc:
        raise CliError(str(exc)) from None
    corpus = data.synth_corpus(spec)
    try:
        data.save_corpus(corpus, args.out)
    except OSError as exc:
        raise CliError(f"cannot write corpus to {args.out}: {exc.strerror}") from None
    n_events = sum(len(c.events) for c in corpus.clips)
    print(f"{spec.n_clips} clips, {n_events} events, classes {corpus.classes} -> {args.out}")
    return 0


def cmd_features(args):
    try:
        cfg = frontend.MelConfig(sample_rate_hz=args.sample_rate, n_fft=args.n_fft, hop=args.hop,
                                 n_mels=args.n_mels, compression=args.compression)
    except ValueError as exc:
        raise CliError(str(exc)) from None
    src = Path(args.input)
    wavs = sorted(src.glob("*.wav")) if src.is_dir() else [src]
    if not wavs:
        raise CliError(f"no .wav files in {src}")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for wav in wavs:
        try:
            wave = frontend.load_wav(wav)
        except FileNotFoundError:
            raise CliError(f"{wav}: no such file") from None
        except frontend.WavError as exc:
            raise CliError(str(exc)) from None
        if wave.sample_rate_hz != cfg.sample_rate_hz:
            raise CliError(f"{wav}: {wave.sample_rate_hz} Hz audio, expected {cfg.sample_rate_hz} Hz")
        mel = frontend.melspectrogram(wave, cfg)
        frontend.save_features(out / f"{wav.stem}.f32", mel.values, mel.frame_period_s,
                               config=frontend.config_dict(cfg))
        print(f"{wav.name}: {mel.n_frames} frames x {mel.n_mels} mels")
    return 0


def _configs(args):
    doc = _load_json(args.config) if args.config else {}
    unknown = set(doc) - {"model", "train"}
    if unknown:
        raise CliError(f"{args.config}: unknown sections {sorted(unknown)} (expected model, train)")
    arch = _model_name(args.model)
    model_doc = {"seed": args.seed, **doc.get("model", {}), "architecture": arch}
    preset = model_doc.pop("preset", args.preset)
    train_doc = {"seed": args.seed, **doc.get("train", {})}
    for key in ("epochs", "batch_size", "lr"):
        if getattr(args, key) is not None:
            train_doc[key] = getattr(args, key)
    try:
        mcfg = models.ModelConfig.from_preset(preset, **model_doc)
        tcfg = models.TrainConfig.from_dict(train_doc)
    except (TypeError, ValueError) as exc:
        raise CliError(f"invalid config: {exc}") from None
    return mcfg, tcfg


def _dataset(path):
    try:
        return data.load_dataset(path)
    except (OSError, ValueError, KeyError) as exc:
        raise CliError(f"corrupt corpus {path}: {exc}") from None


def cmd_train(args):
    mcfg, tcfg = _configs(args)
    ds = _dataset(args.data)
    plan = _folds(ds, args.n_folds, args.fold, args.seed)
    held_out = plan.files_in(args.fold)
    mcfg.n_classes = len(ds.classes)
    first = next(iter(ds.features.values()))
    mcfg.n_mels = first.shape[1]
    model = models.build_model(mcfg)
    examples = models.dataset_examples(ds, plan.train_files(args.fold))
    ckpt = Path(args.out)
    ckpt.parent.mkdir(parents=True, exist_ok=True)
    log_path = Path(args.log) if args.log else ckpt.with_suffix(".log.jsonl")
    start = time.perf_counter()
    with open(log_path, "w") as log:
        _emit({"event": "start", "architecture": mcfg.architecture, "params": model.param_count(),
               "fold": args.fold, "train_clips": len(examples), "held_out_clips": len(held_out)}, log)

        def on_epoch(epoch, loss):
            line = {"event": "epoch", "epoch": epoch, "loss": loss}
            if args.eval_every and ((epoch + 1) % args.eval_every == 0 or epoch + 1 == tcfg.epochs):
                line["held_out_f1"] = models.evaluate(model, ds, held_out).macro_f1
            line["elapsed_s"] = round(time.perf_counter() - start, 3)
            _emit(line, log)

        try:
            result = models.train(model, examples, tcfg, on_epoch)
        except FloatingPointError as exc:
            raise CliError(f"training diverged: {exc}") from None
        extra = {"fold": args.fold, "n_folds": args.n_folds, "train": vars(tcfg),
                 "final_loss": result.loss_trace[-1]}
        models.save_checkpoint(model, ckpt, extra)
        _emit({"event": "done", "final_loss": result.loss_trace[-1], "checkpoint": str(ckpt),
               "elapsed_s": round(time.perf_counter() - start, 3)}, log)
    return 0


def _load_model(path):
    try:
        return models.load_checkpoint(path)
    except FileNotFoundError as exc:
        raise CliError(f"checkpoint file not found: {exc.filename}") from None
    except (ValueError, KeyError, json.JSONDecodeError) as exc:
        raise CliError(f"bad checkpoint {path}: {exc}") from None


def cmd_eval(args):
    model = _load_model(args.ckpt)
    ds = _dataset(args.data)
    plan = _folds(ds, args.n_folds, args.fold, args.seed)
    if model.config.n_classes != len(ds.classes):
        raise CliError(f"shape mismatch: checkpoint predicts {model.config.n_classes} classes, "
                       f"corpus has {len(ds.classes)}")
    n_mels = next(iter(ds.features.values())).shape[1]
    if n_mels != model.config.n_mels:
        raise CliError(f"shape mismatch: checkpoint expects {model.config.n_mels} mel bins, corpus has {n_mels}")
    report = models.evaluate(model, ds, plan.files_in(args.fold), args.segment)
    print(report.table())
    out = Path(args.out) if args.out else Path(f"{Path(args.ckpt).with_suffix('')}.fold{args.fold}.report.json")
    out.write_text(report.to_json(indent=2))
    print(f"report written to {out}")
    return 0


def cmd_predict(args):
    model = _load_model(args.ckpt)
    try:
        values, meta = frontend.load_features(args.input)
    except FileNotFoundError as exc:
        raise CliError(f"features not found: {exc.filename}") from None
    except (ValueError, KeyError, json.JSONDecodeError) as exc:
        raise CliError(f"bad feature file {args.input}: {exc}") from None
    if values.shape[1] != model.config.n_mels:
        raise CliError(f"shape mismatch: checkpoint expects {model.config.n_mels} mel bins, "
                       f"features have {values.shape[1]}")
    try:
        probs = model.predict(values)
    except ValueError as exc:
        raise CliError(str(exc)) from None
    period = meta["frame_period_s"] * model.config.time_pool
    seg = metrics.rasterize_predictions(probs, period, args.segment)
    classes = args.classes.split(",") if args.classes else [f"class{c}" for c in range(probs.shape[1])]
    if len(classes) != probs.shape[1]:
        raise CliError(f"{len(classes)} class names given for {probs.shape[1]} model outputs")
    with open(args.out, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["segment", "onset", "offset", "label", "score"])
        for s, row in enumerate(seg.scores):
            for label, score in zip(classes, row):
                writer.writerow([s, f"{s * args.segment:.3f}", f"{(s + 1) * args.segment:.3f}", label,
                                 f"{score:.6f}"])
    print(f"{seg.scores.shape[0]} segments x {len(classes)} classes -> {args.out}")
    return 0


def cmd_verify(args):
    results = verify.run_suites(args.suite, args.inject_fault)
    for r in results:
        print(f"{r.name:<10} {'PASS' if r.passed else 'FAIL'}  {r.detail}  ({r.seconds:.2f} s)")
        for failure in r.failures[:5]:
            print(f"    {failure}")
    return 0 if all(r.passed for r in results) else EXIT_FAILURE


# ---------------------------------------------------------------- parser

def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=42, help="seed for every random choice (default 42)")
    parser = argparse.ArgumentParser(prog="strfsed", description="STRF-based sound event detection toolkit.")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    p = sub.add_parser("kernels", parents=[common], help="synthesize and dump an STRF kernel bank")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--scales", type=_float_list, action="append",
                   help="scales in cycles/octave (default: 8 log-spaced values in [0.25, 8])")
    p.add_argument("--rates", type=_float_list, action="append",
                   help="rates in Hz (default: 4 log-spaced values in [0.3, 2.4])")
    p.add_argument("--axes", type=_axes, default=(50, 48), help="kernel taps as TIMExFREQ (default 50x48)")
    p.add_argument("--time-step", type=float, default=0.2, help="seconds per time tap (default 0.2)")
    p.add_argument("--bins-per-octave", type=float, default=24.0, help="frequency taps per octave (default 24)")
    p.set_defaults(func=cmd_kernels)

    p = sub.add_parser("synth-data", parents=[common], help="write the synthetic ripple corpus")
    p.add_argument("--out", required=True, help="output corpus directory")
    p.add_argument("--n-clips", type=int, default=60, help="number of clips (default 60)")
    p.add_argument("--clip-seconds", type=float, default=30.0, help="clip length (default 30)")
    p.add_argument("--snr-db", type=float, default=6.0, help="event-to-background energy ratio (default 6)")
    p.add_argument("--events-per-clip", type=_int_range, default=(3, 6),
                   help="inclusive event count range as MIN,MAX (default 3,6)")
    p.set_defaults(func=cmd_synth_data)

    p = sub.add_parser("features", parents=[common], help="WAV file or directory -> mel feature blobs")
    p.add_argument("--in", dest="input", required=True, help="a .wav file or a directory of them")
    p.add_argument("--out", required=True, help="output directory for <stem>.f32 + .f32.json")
    p.add_argument("--sample-rate", type=int, default=44100, help="expected sample rate (default 44100)")
    p.add_argument("--n-fft", type=int, default=17640, help="window length in samples (default 17640)")
    p.add_argument("--hop", type=int, default=8820, help="hop in samples (default 8820)")
    p.add_argument("--n-mels", type=int, default=64, help="mel bands (default 64)")
    p.add_argument("--compression", choices=["log1p", "db"], default="log1p", help="amplitude compression")
    p.set_defaults(func=cmd_features)

    p = sub.add_parser("train", parents=[common], help="train a model on all folds but one")
    p.add_argument("--model", required=True, help="architecture, e.g. tb-strfnet")
    p.add_argument("--data", required=True, help="corpus directory")
    p.add_argument("--config", help="JSON file with optional 'model' and 'train' sections")
    p.add_argument("--fold", type=int, default=0, help="held-out fold (default 0)")
    p.add_argument("--n-folds", type=int, default=5, help="number of folds (default 5)")
    p.add_argument("--out", required=True, help="checkpoint path; writes <out>.json and <out>.bin")
    p.add_argument("--preset", choices=sorted(models.PRESETS), default="toy", help="width preset (default toy)")
    p.add_argument("--epochs", type=int, help="override the epoch count")
    p.add_argument("--batch-size", type=int, help="override the batch size")
    p.add_argument("--lr", type=float, help="override the Adam learning rate")
    p.add_argument("--eval-every", type=int, default=5,
                   help="log held-out F1 every N epochs and at the end (0 disables; default 5)")
    p.add_argument("--log", help="JSON-lines log path (default <out>.log.jsonl)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", parents=[common], help="F1_MO of a checkpoint on a held-out fold")
    p.add_argument("--ckpt", required=True, help="checkpoint path")
    p.add_argument("--data", required=True, help="corpus directory")
    p.add_argument("--fold", type=int, default=0, help="fold to score (default 0)")
    p.add_argument("--n-folds", type=int, default=5, help="number of folds (default 5)")
    p.add_argument("--segment", type=float, default=1.0, help="segment length in seconds (default 1)")
    p.add_argument("--out", help="report JSON path (default <ckpt>.fold<K>.report.json)")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("predict", parents=[common], help="per-segment class scores for one feature blob")
    p.add_argument("--ckpt", required=True, help="checkpoint path")
    p.add_argument("--in", dest="input", required=True, help="feature blob (.f32 with .f32.json sidecar)")
    p.add_argument("--out", required=True, help="output CSV")
    p.add_argument("--segment", type=float, default=1.0, help="segment length in seconds (default 1)")
    p.add_argument("--classes", help="comma-separated class names (default class0,class1,...)")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("verify", parents=[common], help="run the built-in oracle suites")
    p.add_argument("--suite", action="append", choices=list(verify.SUITES),
                   help="run only this suite (repeatable)")
    p.add_argument("--inject-fault", choices=list(verify.FAULTS),
                   help="test hook: corrupt one invariant to watch its suite fail")
    p.set_defaults(func=cmd_verify)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    np.random.seed(args.seed)
    try:
        return args.func(args)
    except CliError as exc:
        print(f"strfsed {args.command}: error: {exc}", file=sys.stderr)
        return exc.code


if __name__ == "__main__":
    sys.exit(main())
