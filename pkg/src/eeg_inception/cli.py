"""Command-line runner.

Settings resolve in this order (later wins): built-in defaults, the JSON
file given with ``--config``, then command-line flags. Every command that
writes outputs also writes ``config.resolved`` into its run directory; that
file can be fed back with ``--config`` to replay the run.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.
"""
from __future__ import annotations

import argparse
import contextlib
import csv
import json
import logging
import os
import sys
from dataclasses import fields
from pathlib import Path

from . import __version__
from .data import SynthConfig, TrialSet, load_trialset, save_trialset, synth_generate, train_test_split
from .dsp import augment, design_butterworth_highpass, export_coefficients
from .errors import DataError, NumericError
from .metrics import write_confusion_csv, write_roc_csv
from .model import ModelConfig, build_model, count_params, load_model, save_model
from .training import (TrainConfig, ablate, evaluate, evaluate_scores, loso_evaluate, time_inference, train,
                       write_history_csv)

log = logging.getLogger("eeg_inception")

THREADS_ENV = "EEG_INCEPTION_THREADS"

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3

SECTIONS = {
    "model": {f.name for f in fields(ModelConfig)},
    "train": {f.name for f in fields(TrainConfig)},
    "synth": {f.name for f in fields(SynthConfig)},
    "augment": {"factor", "seed", "same_class_donors", "zero_phase"},
    "filter": {"order", "cutoff_hz", "fs_hz"},
    "split": {"ratio", "seed"},
    "ablate": {"depths"},
    "bench": {"n_samples", "warmup"},
    "paths": {"data", "test_data", "model", "out"},
}
TOP_LEVEL = set(SECTIONS) | {"command", "seed", "threads", "version"}

# flag dest -> (section, key)
FLAG_TARGETS = {
    "in_channels": ("model", "in_channels"), "depth": ("model", "depth"),
    "kernel_sizes": ("model", "kernel_sizes"), "n_classes": ("model", "n_classes"),
    "time_len": ("model", "time_len"), "pool_kernel": ("model", "pool_kernel"),
    "epochs": ("train", "epochs"), "batch_size": ("train", "batch_size"), "lr": ("train", "lr"),
    "augment_factor": ("train", "augment_factor"), "adam_eps_inside_sqrt": ("train", "eps_inside_sqrt"),
    "n_trials_per_class": ("synth", "n_trials_per_class"), "n_channels": ("synth", "n_channels"),
    "synth_classes": ("synth", "n_classes"), "synth_time_len": ("synth", "time_len"),
    "rhythm_hz": ("synth", "rhythm_hz"), "rhythm_amplitude": ("synth", "rhythm_amplitude"),
    "noise_std": ("synth", "noise_std"), "high_noise_std": ("synth", "high_noise_std"),
    "subject": ("synth", "subject"),
    "factor": ("augment", "factor"),
    "order": ("filter", "order"), "cutoff_hz": ("filter", "cutoff_hz"), "fs_hz": ("filter", "fs_hz"),
    "split_ratio": ("split", "ratio"), "depths": ("ablate", "depths"),
    "n_samples": ("bench", "n_samples"),
    "data": ("paths", "data"), "test_data": ("paths", "test_data"), "model": ("paths", "model"),
    "out": ("paths", "out"),
}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _int_list(text: str) -> list[int]:
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def _defaults(seed: int | None = None) -> dict:
    cfg = {
        "model": ModelConfig().to_dict(),
        "train": TrainConfig().to_dict(),
        "synth": SynthConfig().to_dict(),
        "augment": {"factor": 3, "seed": 0, "same_class_donors": False, "zero_phase": False},
        "filter": {"order": 8, "cutoff_hz": 100.0, "fs_hz": 250.0},
        "split": {"ratio": 0.75, "seed": 0},
        "ablate": {"depths": [6, 12, 16, 24, 32, 64]},
        "bench": {"n_samples": 100, "warmup": 3},
        "paths": {"data": None, "test_data": None, "model": None, "out": None},
    }
    return cfg


def _apply_seed(cfg: dict, seed: int) -> None:
    for section in ("model", "train", "synth", "augment", "split"):
        cfg[section]["seed"] = int(seed)


def resolve_config(command: str, args: argparse.Namespace) -> dict:
    cfg = _defaults()
    if getattr(args, "config", None):
        path = Path(args.config)
        try:
            loaded = json.loads(path.read_text())
        except FileNotFoundError:
            raise DataError(f"--config: file not found: {path}")
        except json.JSONDecodeError as exc:
            raise UsageError(f"--config {path}: invalid JSON ({exc})")
        if not isinstance(loaded, dict):
            raise UsageError(f"--config {path}: top level must be an object")
        unknown = set(loaded) - TOP_LEVEL
        if unknown:
            raise UsageError(f"--config {path}: unknown keys {sorted(unknown)}")
        if loaded.get("command") not in (None, command):
            raise UsageError(f"--config {path}: written for command {loaded['command']!r}, not {command!r}")
        if "seed" in loaded:
            _apply_seed(cfg, loaded["seed"])
        if loaded.get("threads") is not None:
            cfg["threads"] = int(loaded["threads"])
        for section, values in loaded.items():
            if section not in SECTIONS:
                continue
            if not isinstance(values, dict):
                raise UsageError(f"--config {path}: section {section!r} must be an object")
            bad = set(values) - SECTIONS[section]
            if bad:
                raise UsageError(f"--config {path}: unknown keys in [{section}]: {sorted(bad)}")
            cfg[section].update(values)
    if getattr(args, "seed", None) is not None:
        _apply_seed(cfg, args.seed)
    for dest, (section, key) in FLAG_TARGETS.items():
        value = getattr(args, dest, None)
        if value is not None:
            cfg[section][key] = value
    if getattr(args, "same_class_donors", False):
        cfg["train"]["same_class_donors"] = cfg["augment"]["same_class_donors"] = True
    if getattr(args, "zero_phase", False):
        cfg["train"]["zero_phase"] = cfg["augment"]["zero_phase"] = True
    cfg["command"] = command
    cfg["version"] = __version__
    return cfg


def _model_config(cfg: dict) -> ModelConfig:
    try:
        return ModelConfig.from_dict(cfg["model"]).validate()
    except (TypeError, ValueError) as exc:
        raise UsageError(f"model settings: {exc}")


def _train_config(cfg: dict) -> TrainConfig:
    try:
        return TrainConfig(**cfg["train"]).validate()
    except (TypeError, ValueError) as exc:
        raise UsageError(f"train settings: {exc}")


def _require(cfg: dict, key: str, flag: str) -> str:
    value = cfg["paths"].get(key)
    if not value:
        raise UsageError(f"missing required {flag}")
    return value


def _out_dir(cfg: dict) -> Path:
    out = Path(_require(cfg, "out", "--out"))
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_resolved(cfg: dict, out: Path) -> None:
    (out / "config.resolved").write_text(json.dumps(cfg, indent=2, sort_keys=True) + "\n")


def _load(path: str, flag: str) -> TrialSet:
    try:
        return load_trialset(path)
    except FileNotFoundError as exc:
        raise DataError(f"{flag} {path}: file not found ({exc.filename})")
    except DataError as exc:
        raise DataError(f"{flag} {path}: {exc}")


def _part(ts: TrialSet, tag: str) -> TrialSet:
    tagged = ts.split_tagged(tag)
    return tagged if len(tagged) else ts


# --------------------------------------------------------------------------
# commands


def cmd_synth(cfg):
    out = _out_dir(cfg)
    try:
        sc = SynthConfig(**cfg["synth"]).validate()
    except (TypeError, ValueError) as exc:
        raise UsageError(f"synth settings: {exc}")
    ts = synth_generate(sc)
    save_trialset(ts, out / "trials.json")
    _write_resolved(cfg, out)
    print(f"wrote {len(ts)} trials to {out / 'trials.json'}")


def cmd_augment(cfg):
    data = _require(cfg, "data", "--data")
    ts = _load(data, "--data")
    out = _out_dir(cfg)
    a = cfg["augment"]
    try:
        result = augment(_part(ts, "train"), int(a["factor"]), int(a["seed"]),
                         same_class_donors=bool(a["same_class_donors"]), zero_phase=bool(a["zero_phase"]))
    except ValueError as exc:
        raise DataError(f"--data {data}: {exc}")
    save_trialset(result.trials, out / "trials.json")
    n_orig = len(result.trials) - len(result.provenance)
    with open(out / "provenance.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["trial_id", "signal_index", "donor_index", "signal_id", "donor_id"])
        for j, (i, k) in enumerate(result.provenance):
            w.writerow([result.trials[n_orig + j].id, i, k, result.trials[i].id, result.trials[k].id])
    _write_resolved(cfg, out)
    print(f"wrote {len(result.trials)} trials ({len(result.provenance)} synthetic) to {out / 'trials.json'}")


def cmd_train(cfg):
    data = _require(cfg, "data", "--data")
    ts = _load(data, "--data")
    out = _out_dir(cfg)
    mc, tc = _model_config(cfg), _train_config(cfg)
    trainset = _part(ts, "train")
    model = build_model(mc)
    try:
        history = train(model, trainset, tc)
    except ValueError as exc:
        raise DataError(f"--data {data}: {exc}")
    save_model(model, out / "model.eim")
    write_history_csv(history, out / "history.csv")
    _write_resolved(cfg, out)
    last = history[-1]
    print(f"trained {model.n_params()} parameters on {len(trainset)} trials: "
          f"final loss {last['loss']:.4f}, train accuracy {last['accuracy']:.4f}")


def cmd_split(cfg):
    data = _require(cfg, "data", "--data")
    ts = _load(data, "--data")
    out = _out_dir(cfg)
    try:
        tr, te = train_test_split(ts, float(cfg["split"]["ratio"]), int(cfg["split"]["seed"]))
    except ValueError as exc:
        raise DataError(f"--data {data}: {exc}")
    save_trialset(tr.with_trials(list(tr) + list(te)), out / "trials.json")
    _write_resolved(cfg, out)
    print(f"train {len(tr)} / test {len(te)} written to {out / 'trials.json'}")


def cmd_eval(cfg):
    model_path = _require(cfg, "model", "--model")
    data = _require(cfg, "data", "--data")
    try:
        model = load_model(model_path)
    except FileNotFoundError:
        raise DataError(f"--model {model_path}: file not found")
    except DataError as exc:
        raise DataError(f"--model {model_path}: {exc}")
    testset = _part(_load(data, "--data"), "test")
    out = _out_dir(cfg)
    try:
        report = evaluate(model, testset)
    except ValueError as exc:
        raise DataError(f"--data {data}: {exc}")
    (out / "metrics.json").write_text(report.to_json() + "\n")
    write_confusion_csv(report.confusion, out / "confusion.csv")
    if model.config.n_classes == 2:
        proba, labels = evaluate_scores(model, testset)
        write_roc_csv(proba[:, 1], labels == 1, out / "roc.csv")
    _write_resolved(cfg, out)
    print(report.summary())


def cmd_ablate(cfg):
    data = _require(cfg, "data", "--data")
    ts = _load(data, "--data")
    test_path = cfg["paths"].get("test_data")
    testset = _load(test_path, "--test-data") if test_path else _part(ts, "test")
    trainset = _part(ts, "train")
    out = _out_dir(cfg)
    rows = ablate(cfg["ablate"]["depths"], _model_config(cfg), trainset, testset, _train_config(cfg),
                  csv_path=out / "ablation.csv")
    _write_resolved(cfg, out)
    for r in rows:
        print(r)


def cmd_loso(cfg):
    data = _require(cfg, "data", "--data")
    ts = _load(data, "--data")
    out = _out_dir(cfg)
    try:
        result = loso_evaluate(ts.by_subject(), _model_config(cfg), _train_config(cfg))
    except ValueError as exc:
        raise DataError(f"--data {data}: {exc}")
    (out / "metrics.json").write_text(result.pooled.to_json() + "\n")
    write_confusion_csv(result.pooled.confusion, out / "confusion.csv")
    per = {s: r.to_dict() for s, r in result.per_subject.items()}
    (out / "loso.json").write_text(json.dumps({"per_subject": per, "skipped": result.skipped},
                                              indent=2, sort_keys=True) + "\n")
    _write_resolved(cfg, out)
    print(result.pooled.summary())


def cmd_params(cfg):
    print(count_params(_model_config(cfg)))


def cmd_filter_export(cfg):
    f = cfg["filter"]
    try:
        filt = design_butterworth_highpass(int(f["order"]), float(f["cutoff_hz"]), float(f["fs_hz"]))
    except ValueError as exc:
        raise UsageError(f"filter settings: {exc}")
    text = export_coefficients(filt)
    if cfg["paths"].get("out"):
        out = _out_dir(cfg)
        (out / "coefficients.txt").write_text(text)
        _write_resolved(cfg, out)
    sys.stdout.write(text)


def cmd_bench(cfg):
    mc = _model_config(cfg)
    b = cfg["bench"]
    model = build_model(mc)
    seconds = time_inference(model, int(b["n_samples"]), int(b["warmup"]))
    result = {"depth": mc.depth, "parameters": model.n_params(), "median_seconds_per_sample": seconds,
              "reference_seconds_per_sample_gpu": 0.0187}
    if cfg["paths"].get("out"):
        out = _out_dir(cfg)
        (out / "bench.json").write_text(json.dumps(result, indent=2) + "\n")
        _write_resolved(cfg, out)
    print(f"median {seconds:.6f} s per sample (depth {mc.depth}, {model.n_params()} parameters; "
          f"reference 0.0187 s on a GPU)")


COMMANDS = {
    "synth": cmd_synth, "augment": cmd_augment, "split": cmd_split, "train": cmd_train, "eval": cmd_eval,
    "ablate": cmd_ablate, "loso": cmd_loso, "params": cmd_params, "filter-export": cmd_filter_export,
    "bench": cmd_bench,
}


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", help="JSON settings file")
    common.add_argument("--seed", type=int, help="seed for every random stream")
    common.add_argument("--threads", type=int, help=f"worker threads (default ${THREADS_ENV} or library default)")
    common.add_argument("--out", help="run directory for outputs")
    common.add_argument("-v", "--verbose", action="store_true")

    model = _Parser(add_help=False)
    g = model.add_argument_group("model")
    g.add_argument("--in-channels", type=int)
    g.add_argument("--depth", type=int)
    g.add_argument("--kernel-sizes", type=_int_list)
    g.add_argument("--n-classes", type=int)
    g.add_argument("--time-len", type=int)
    g.add_argument("--pool-kernel", type=int)

    trainp = _Parser(add_help=False)
    g = trainp.add_argument_group("training")
    g.add_argument("--epochs", type=int)
    g.add_argument("--batch-size", type=int)
    g.add_argument("--lr", type=float)
    g.add_argument("--augment-factor", type=int)
    g.add_argument("--adam-eps-inside-sqrt", action="store_const", const=True)
    g.add_argument("--same-class-donors", action="store_true")
    g.add_argument("--zero-phase", action="store_true")

    data = _Parser(add_help=False)
    data.add_argument("--data", help="trial-set manifest")

    parser = _Parser(prog="eeg-inception", description="EEG-Inception training and evaluation engine")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synth", parents=[common], help="generate a synthetic trial set")
    p.add_argument("--n-trials-per-class", type=int)
    p.add_argument("--n-channels", type=int)
    p.add_argument("--synth-classes", type=int, help="number of classes to generate")
    p.add_argument("--synth-time-len", type=int, help="samples per trial")
    p.add_argument("--rhythm-hz", type=float)
    p.add_argument("--rhythm-amplitude", type=float)
    p.add_argument("--noise-std", type=float)
    p.add_argument("--high-noise-std", type=float)
    p.add_argument("--subject")

    p = sub.add_parser("augment", parents=[common, data], help="noise-swap augmentation of a trial set")
    p.add_argument("--factor", type=int)
    p.add_argument("--same-class-donors", action="store_true")
    p.add_argument("--zero-phase", action="store_true")

    p = sub.add_parser("split", parents=[common, data], help="tag a trial set into train/test")
    p.add_argument("--split-ratio", type=float)

    sub.add_parser("train", parents=[common, data, model, trainp], help="train and save a model")

    p = sub.add_parser("eval", parents=[common, data], help="evaluate a saved model")
    p.add_argument("--model", help="model file written by train")

    p = sub.add_parser("ablate", parents=[common, data, model, trainp], help="depth sweep")
    p.add_argument("--test-data")
    p.add_argument("--depths", type=_int_list)

    sub.add_parser("loso", parents=[common, data, model, trainp], help="leave-one-subject-out evaluation")
    sub.add_parser("params", parents=[common, model], help="print the parameter count")

    p = sub.add_parser("filter-export", parents=[common], help="print Butterworth SOS coefficients")
    p.add_argument("--order", type=int)
    p.add_argument("--cutoff-hz", type=float)
    p.add_argument("--fs-hz", type=float)

    p = sub.add_parser("bench", parents=[common, model], help="time single-sample inference")
    p.add_argument("--n-samples", type=int)
    return parser


@contextlib.contextmanager
def _thread_limit(threads: int | None):
    if threads is None:
        env = os.environ.get(THREADS_ENV)
        threads = int(env) if env else None
    if threads is None:
        yield
        return
    if threads < 1:
        raise UsageError(f"--threads must be >= 1, got {threads}")
    from threadpoolctl import threadpool_limits

    with threadpool_limits(limits=threads):
        yield


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        cfg = resolve_config(args.command, args)
        if args.threads is not None:
            cfg["threads"] = args.threads
        cfg.setdefault("threads", None)
        with _thread_limit(cfg["threads"]):
            COMMANDS[args.command](cfg)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DataError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
