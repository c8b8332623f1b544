"""Command-line pipeline: simulate, dataset, train, evaluate, explain.

Every command writes under ``--out`` and records its arguments and the
files it produced in ``run_<command>.json``.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import __version__
from .attribution import completeness_error, frequency_average, integrated_gradients, saliency
from .datagen import (
    TEST_REGIMES,
    TRAINING_REGIMES,
    DatasetConfig,
    DatasetManifest,
    Regime,
    build_manifest,
    compute_features,
    materialize,
    write_sample,
)
from .decay import ground_truth_rt60
from .errors import ArgumentError, DataError, NoDecayError, Rt60Error, SampleLookupError
from .evaluation import evaluate_model, write_curves, write_table
from .features import model_input, write_gtsp
from .neuralnet import CrnnModel, TrainConfig, load_model, save_model, train
from .neuralnet.train import write_loss_trace
from .roomsim import room_sidecar, simulate_pool
from .signal import Air, read_wav, write_wav

log = logging.getLogger("rt60track")

AIR_SIDECAR = "airs.jsonl"
MAX_MEASURED_RT60 = 2.0


# AIR pools on disk --------------------------------------------------------


def save_air_pool(directory, airs, rooms) -> list:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    files = []
    for air in airs:
        path = directory / f"{air.id}.wav"
        write_wav(path, air.h)
        files.append(path)
    sidecar = directory / AIR_SIDECAR
    sidecar.write_text("".join(room_sidecar(a, r) + "\n" for a, r in zip(airs, rooms)))
    return files + [sidecar]


def load_air_pool(directory, measured_dir=None) -> list:
    """Simulated AIRs described by a sidecar, plus optional measured WAVs
    whose RT60 is fitted on load.

    Measured AIRs without a fittable decay or with RT60 above
    ``MAX_MEASURED_RT60`` are skipped with a warning.
    """
    airs = []
    if directory is not None:
        directory = Path(directory)
        sidecar = directory / AIR_SIDECAR
        if not sidecar.exists():
            raise DataError(f"{sidecar} not found; run 'simulate' first")
        for line in sidecar.read_text().splitlines():
            rec = json.loads(line)
            airs.append(Air(read_wav(directory / f"{rec['id']}.wav"), rec["rt60_true"], "simulated", rec["id"]))
    if measured_dir is not None:
        for path in sorted(Path(measured_dir).glob("*.wav")):
            h = read_wav(path)
            try:
                rt60 = ground_truth_rt60(h)
            except NoDecayError as exc:
                log.warning("skipping %s: %s", path.name, exc)
                continue
            if rt60 > MAX_MEASURED_RT60:
                log.warning("skipping %s: RT60 %.2f s exceeds %.1f s", path.name, rt60, MAX_MEASURED_RT60)
                continue
            airs.append(Air(h, rt60, "measured", f"meas-{path.stem}"))
    if not airs:
        raise DataError("AIR pool is empty")
    return airs


# argument handling ----------------------------------------------------------


def _range(text):
    try:
        lo, hi = (float(v) for v in text.split(":"))
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected LO:HI, got {text!r}") from exc
    return lo, hi


def read_config(path) -> dict:
    """``key=value`` lines; ``#`` starts a comment."""
    out = {}
    for k, line in enumerate(Path(path).read_text().splitlines()):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ArgumentError(f"{path}:{k + 1}: expected key=value")
        key, value = (s.strip() for s in line.split("=", 1))
        out[key.replace("-", "_")] = value
    return out


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="random seed (required)")
    common.add_argument("--out", type=Path, default=Path("run"), help="run directory")
    common.add_argument("--config", type=Path, default=None, help="key=value file; flags win")
    common.add_argument("--jobs", type=int, default=1, help="worker processes")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="rt60track", description="Blind RT60 tracking from reverberant speech.")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", parents=[common], help="simulate a pool of AIRs")
    s.add_argument("--n", type=int, default=100)
    s.add_argument("--rt60", type=_range, default=(0.05, 0.83), help="Sabine target range LO:HI in s")

    d = sub.add_parser("dataset", parents=[common], help="build manifests and samples")
    d.add_argument("--regime", action="append", choices=[r.value for r in Regime])
    d.add_argument("--n", type=int, default=800, help="samples per training regime")
    d.add_argument("--n-test", type=int, default=None, help="samples per test set (default --n)")
    d.add_argument("--airs", type=Path, default=None, help="simulated AIR dir (default OUT/airs)")
    d.add_argument("--measured", type=Path, default=None, help="dir of measured AIR WAVs")
    d.add_argument("--speech-dir", type=Path, default=None, help="dir of dry speech WAVs")
    d.add_argument("--no-audio", action="store_true", help="write the manifest only")

    t = sub.add_parser("train", parents=[common], help="train one regime's model")
    t.add_argument("--regime", required=True, choices=[r.value for r in TRAINING_REGIMES])
    t.add_argument("--manifest", type=Path, default=None)
    t.add_argument("--airs", type=Path, default=None)
    t.add_argument("--measured", type=Path, default=None)
    t.add_argument("--speech-dir", type=Path, default=None)
    t.add_argument("--epochs", type=int, default=TrainConfig.epochs)
    t.add_argument("--lr", type=float, default=TrainConfig.learning_rate)
    t.add_argument("--batch-size", type=int, default=TrainConfig.batch_size)
    t.add_argument("--dropout", type=float, default=TrainConfig.dropout_prob)

    e = sub.add_parser("evaluate", parents=[common], help="evaluate checkpoints on the test sets")
    e.add_argument("--checkpoints", type=Path, nargs="+", required=True)
    e.add_argument("--manifest", type=Path, default=None)
    e.add_argument("--airs", type=Path, default=None)
    e.add_argument("--measured", type=Path, default=None)
    e.add_argument("--speech-dir", type=Path, default=None)

    x = sub.add_parser("explain", parents=[common], help="attribution maps for one sample")
    x.add_argument("--checkpoint", type=Path, required=True)
    x.add_argument("--sample-id", required=True)
    x.add_argument("--manifest", type=Path, default=None)
    x.add_argument("--airs", type=Path, default=None)
    x.add_argument("--measured", type=Path, default=None)
    x.add_argument("--speech-dir", type=Path, default=None)
    x.add_argument("--frame", default="all", help="output frame index or 'all'")
    x.add_argument("--steps", type=int, default=200, help="integrated-gradient steps")
    return p


def parse_args(argv):
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.config is not None:
        config = read_config(args.config)
        sub = parser._subparsers._group_actions[0].choices[args.command]
        known = {a.dest for a in sub._actions}
        unknown = set(config) - known
        if unknown:
            raise ArgumentError(f"unknown config keys: {', '.join(sorted(unknown))}")
        sub.set_defaults(**config)
        args = parser.parse_args(argv)
    if args.seed is None:
        raise ArgumentError("--seed is required (flag or config file)")
    if args.jobs < 1:
        raise ArgumentError("--jobs must be >= 1")
    return args


# commands ---------------------------------------------------------------------


def _pool(args):
    air_dir = args.airs if args.airs is not None else args.out / "airs"
    if args.airs is None and not (air_dir / AIR_SIDECAR).exists() and args.measured is not None:
        air_dir = None
    return load_air_pool(air_dir, args.measured)


def _speech_files(args):
    if args.speech_dir is None:
        return ()
    files = tuple(str(p) for p in sorted(Path(args.speech_dir).glob("*.wav")))
    if not files:
        raise DataError(f"no WAV files in {args.speech_dir}")
    return files


def _manifest(args):
    path = args.manifest if args.manifest is not None else args.out / "dataset" / "manifest.jsonl"
    if not Path(path).exists():
        raise DataError(f"{path} not found; run 'dataset' first")
    return DatasetManifest.read(path)


def cmd_simulate(args):
    airs, rooms = simulate_pool(args.n, args.rt60, args.seed)
    files = save_air_pool(args.out / "airs", airs, rooms)
    rts = [a.rt60_true for a in airs]
    print(f"simulated {len(airs)} AIRs, rt60 {min(rts):.3f}-{max(rts):.3f} s")
    return files


def cmd_dataset(args):
    chosen = args.regime or [r.value for r in Regime]
    if isinstance(chosen, str):  # from a config file
        chosen = [v.strip() for v in chosen.split(",")]
    try:
        regimes = [Regime(r) for r in chosen]
    except ValueError as exc:
        raise ArgumentError(str(exc)) from exc
    n_test = args.n if args.n_test is None else args.n_test
    if args.n < 1 or n_test < 1:
        raise ArgumentError("--n and --n-test must be positive")
    cfg = DatasetConfig(
        seed=args.seed,
        n_samples=args.n,
        regimes=tuple(r for r in regimes if not r.is_test),
        n_test=n_test,
        test_regimes=tuple(r for r in regimes if r.is_test),
        speech_files=_speech_files(args),
    )
    airs = _pool(args)
    manifest = build_manifest(cfg, airs)
    out = args.out / "dataset"
    out.mkdir(parents=True, exist_ok=True)
    path = out / "manifest.jsonl"
    manifest.write(path)
    files = [path]
    if not args.no_audio:
        by_id = {a.id: a for a in airs}
        for entry in manifest.entries:
            sample = materialize(entry, by_id, cfg.speech_files)
            write_sample(out / entry.regime, sample, model_input(sample.audio))
            files += [out / entry.regime / f"{entry.id}{s}" for s in (".wav", "_gt.csv", ".gtsp")]
    for regime in regimes:
        counts = {s: len(manifest.subset(regime, s)) for s in ("train", "val", "test")}
        print(regime.value, " ".join(f"{k}={v}" for k, v in counts.items() if v))
    return files


def cmd_train(args):
    cfg = TrainConfig(
        learning_rate=args.lr, batch_size=args.batch_size, dropout_prob=args.dropout,
        epochs=args.epochs, seed=args.seed,
    )
    manifest = _manifest(args)
    by_id = {a.id: a for a in _pool(args)}
    speech = _speech_files(args)
    train_set = compute_features(manifest.subset(args.regime, "train"), by_id, speech, args.jobs)
    val_set = compute_features(manifest.subset(args.regime, "val"), by_id, speech, args.jobs)
    model = CrnnModel(dropout=cfg.dropout_prob, seed=args.seed)
    log.info("model has %d trainable parameters", model.n_parameters())
    result = train(
        model, train_set.pairs(), val_set.pairs(), cfg,
        progress=lambda ep, tr, va: print(f"epoch {ep:3d}  train {tr:.6f}  val {va:.6f}", flush=True),
    )
    out = args.out / "models"
    out.mkdir(parents=True, exist_ok=True)
    ckpt, trace = out / f"{args.regime}.crnn", out / f"{args.regime}_loss.csv"
    save_model(ckpt, result.model)
    write_loss_trace(trace, result.trace)
    print(f"best epoch {result.best_epoch}; checkpoint {ckpt}")
    return [ckpt, trace]


def cmd_evaluate(args):
    manifest = _manifest(args)
    by_id = {a.id: a for a in _pool(args)}
    speech = _speech_files(args)
    tests = [r for r in TEST_REGIMES if manifest.subset(r, "test")]
    if not tests:
        raise DataError("manifest has no test entries")
    features = {r: compute_features(manifest.subset(r, "test"), by_id, speech, args.jobs) for r in tests}
    out = args.out / "eval"
    out.mkdir(parents=True, exist_ok=True)
    reports, files = [], []
    for path in args.checkpoints:
        model = load_model(path)
        label = Path(path).stem
        for regime in tests:
            report, curves = evaluate_model(model, features[regime], regime.value, label)
            reports.append(report)
            print(label, regime.value, " ".join(f"{c}={v:.4f}" for c, v in zip(report.columns(), report.values())))
            if curves:
                cpath = out / f"curves_{label}_{regime.value}.csv"
                write_curves(cpath, curves)
                files.append(cpath)
    table = out / "table.csv"
    write_table(table, reports)
    return [table] + files


def _frame(text):
    if text == "all":
        return "all"
    try:
        return int(text)
    except ValueError as exc:
        raise ArgumentError(f"--frame must be an integer or 'all', got {text!r}") from exc


def cmd_explain(args):
    manifest = _manifest(args)
    entry = next((e for e in manifest.entries if e.id == args.sample_id), None)
    if entry is None:
        raise SampleLookupError(args.sample_id)
    by_id = {a.id: a for a in _pool(args)}
    sample = materialize(entry, by_id, _speech_files(args))
    x = model_input(sample.audio)
    model = load_model(args.checkpoint)
    target = _frame(args.frame)
    sal = saliency(model, x, target)
    ig = integrated_gradients(model, x, steps=args.steps, target_frame=target)
    err = completeness_error(model, x, ig)
    out = args.out / "explain"
    out.mkdir(parents=True, exist_ok=True)
    stem = out / entry.id
    files = [Path(f"{stem}_{k}.gtsp") for k in ("spectrogram", "saliency", "ig")]
    for path, values in zip(files, (x, sal.values, ig.values)):
        write_gtsp(path, values)
    curve_path = Path(f"{stem}_curves.csv")
    s_curve, i_curve = frequency_average(sal, normalize=True), frequency_average(ig, normalize=True)
    with open(curve_path, "w") as f:
        f.write("input_frame,t_seconds,saliency,integrated_gradients\n")
        for k in range(x.shape[1]):
            f.write(f"{k},{k * 0.002!r},{s_curve[k]!r},{i_curve[k]!r}\n")
    status = "ok" if err <= 0.01 else "EXCEEDS 1%"
    print(f"IG completeness relative error {err:.3e} ({status})")
    return files + [curve_path]


COMMANDS = {
    "simulate": cmd_simulate,
    "dataset": cmd_dataset,
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "explain": cmd_explain,
}


def _jsonable(v):
    if isinstance(v, Path):
        return str(v)
    if isinstance(v, (tuple, list)):
        return [_jsonable(x) for x in v]
    return v


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else argv
    try:
        args = parse_args(argv)
        logging.basicConfig(
            level=logging.INFO if args.verbose else logging.WARNING,
            format="%(levelname)s %(name)s: %(message)s",
        )
        args.out.mkdir(parents=True, exist_ok=True)
        files = COMMANDS[args.command](args)
        record = {
            "command": args.command,
            "version": __version__,
            "args": {k: _jsonable(v) for k, v in sorted(vars(args).items())},
            "outputs": sorted(str(p) for p in files),
        }
        (args.out / f"run_{args.command}.json").write_text(json.dumps(record, indent=2, sort_keys=True) + "\n")
        return 0
    except Rt60Error as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except FloatingPointError as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return 4
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
