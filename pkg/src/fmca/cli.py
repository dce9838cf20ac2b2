"""Command line front end: ``fmca <verb> ...``.

Exit status is 0 on success, 1 for usage or configuration errors, 2 for
data errors and 3 for numerical failures.
"""

import argparse
import csv
import json
import logging
import sys
import time
from dataclasses import fields
from pathlib import Path

import numpy as np

from . import __version__
from .cache import (RunManifest, atomic_path, atomic_write, cache_files, fingerprint, load_cache,
                    write_cache)
from .config import PipelineConfig, load_config
from .engine import (FmcaModel, ProjectionHead, TrainingDiverged, load_model, project, save_model,
                     train_fmca)
from .evaluation import (SIGNAL_KEYS, SkipRecord, cross_validate, frames_from_signals,
                         resolve_param, sweep, write_sweep_csv)
from .exceptions import ConfigError, DataError, FMCAError, NoValidFiles
from .features import extract_features, write_feature_csv
from .signal import read_wav, scan_dataset

logger = logging.getLogger("fmca")


class UsageError(ConfigError):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on bad usage, which is reserved for data errors here
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _add_config_flags(parser):
    group = parser.add_argument_group("configuration overrides (win over --config)")
    group.add_argument("--config", type=Path, help="INI-style config file")
    for f in fields(PipelineConfig):
        flags = [f"--{f.name}"]
        if "_" in f.name:
            flags.append(f"--{f.name.replace('_', '-')}")
        group.add_argument(*flags, dest=f.name, default=None, metavar="VALUE",
                           help=f"default {f.default!r}")


def _config(args):
    overrides = {f.name: getattr(args, f.name, None) for f in fields(PipelineConfig)}
    return load_config(args.config, overrides)


def _explicit_keys(args):
    return {f.name for f in fields(PipelineConfig) if getattr(args, f.name, None) is not None}


def _signal_config(config, meta, explicit=()):
    """Framing settings come from the cache; disagreeing explicit overrides are an error."""
    cached = meta["config"]
    for key in SIGNAL_KEYS:
        if key in explicit and getattr(config, key) != cached[key]:
            raise ConfigError(f"{key}={getattr(config, key)!r} conflicts with the cache "
                              f"({cached[key]!r}); re-run preprocess")
    return config.replace(**{k: cached[k] for k in SIGNAL_KEYS})


def _dataset_info(paths, root=None):
    count, digest = fingerprint(paths, root)
    return {"files": count, "sha256": digest}


def _write_model(model, path):
    with atomic_write(path, "wb") as fh:
        save_model(model, fh)


def _read_model(path):
    try:
        with open(path, "rb") as fh:
            return load_model(fh)
    except FileNotFoundError:
        raise DataError(f"{path}: no such model file") from None


# -- commands -----------------------------------------------------------------

def load_signals(data_dir, pattern):
    """Read every WAV matching ``pattern``; unreadable files become skip records."""
    data_dir = Path(data_dir)
    if not data_dir.is_dir():
        raise DataError(f"{data_dir}: not a directory")
    entries = scan_dataset(data_dir, pattern)
    signals, skipped = [], []
    for path, label, speaker in entries:
        try:
            signals.append(read_wav(path, label, speaker))
        except DataError as exc:
            logger.warning("skipping %s: %s", path.name, exc)
            skipped.append(SkipRecord(path.stem, type(exc).__name__, str(exc)))
    if not signals:
        raise NoValidFiles(f"{data_dir}: no readable WAV files matching the filename pattern")
    return signals, skipped, [p for p, _, _ in entries]


def cmd_preprocess(args):
    config = _config(args)
    t0 = time.perf_counter()
    signals, read_skips, paths = load_signals(args.data_dir, config.filename_pattern)
    try:
        dataset, frame_skips = frames_from_signals(signals, config)
    except DataError as exc:
        raise NoValidFiles(f"{args.data_dir}: {exc}") from None
    skipped = read_skips + frame_skips
    meta = {"config": {k: getattr(config, k) for k in SIGNAL_KEYS + ("filename_pattern",)},
            "source_dir": str(Path(args.data_dir).resolve())}
    write_cache(args.out, dataset, skipped, meta)
    elapsed = time.perf_counter() - t0
    print(f"cached {len(dataset)} utterances ({dataset.frames.shape[0]} frames of width "
          f"{dataset.width}); skipped {len(skipped)}")
    for s in skipped:
        print(f"  skipped {s.utterance_id}: {s.reason}")
    if args.manifest:
        RunManifest("preprocess", config.to_dict(), _dataset_info(paths), config.seed, __version__,
                    {"preprocess": elapsed}, [str(args.out)],
                    {"utterances": len(dataset), "skipped": len(skipped)}).write(args.manifest)
    return 0


def cmd_train(args):
    base = _config(args)
    dataset, meta = load_cache(args.cache)
    config = _signal_config(base, meta, _explicit_keys(args))
    trajectory = args.trajectory or Path(f"{args.out}.cost.csv")
    manifest = args.manifest or Path(f"{args.out}.manifest.json")
    t0 = time.perf_counter()
    try:
        model = train_fmca(dataset, config.n_components, config.hidden_units, config.n_layers,
                           config.fmca_lr, config.epsilon, config.n_iter, config.batch_size,
                           config.seed, config.activation, config.head, config.head_epsilon,
                           config=config.to_dict())
    except TrainingDiverged as exc:
        checkpoint = Path(f"{args.out}.checkpoint")
        if exc.checkpoint is not None:
            pf, pg = exc.checkpoint
            _write_model(FmcaModel(pf, pg, ProjectionHead.identity(pf.output_dim),
                                   config.to_dict()), checkpoint)
            raise type(exc)(f"{exc}; last good parameters saved to {checkpoint}") from None
        raise
    elapsed = time.perf_counter() - t0
    _write_model(model, args.out)
    with atomic_write(trajectory, newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["iteration", "cost"])
        writer.writerows([i, repr(c)] for i, c in model.cost_history)
    RunManifest("train", config.to_dict(), _dataset_info(cache_files(args.cache), args.cache),
                config.seed, __version__, {"train": elapsed},
                [str(args.out), str(trajectory)],
                {"initial_cost": model.cost_history[0][1], "final_cost": model.cost_history[-1][1],
                 "spectrum": [float(s) for s in model.spectrum]}).write(manifest)
    print(f"trained on {len(dataset)} utterances in {elapsed:.1f}s; cost "
          f"{model.cost_history[0][1]:.4f} -> {model.cost_history[-1][1]:.4f}")
    print("spectrum " + " ".join(f"{s:.4f}" for s in model.spectrum))
    return 0


def _traces(model, dataset):
    for i in range(len(dataset)):
        yield i, project(model, dataset.utterance(i))


def cmd_project(args):
    model = _read_model(args.model)
    dataset, _ = load_cache(args.cache)
    k = model.n_components
    with atomic_write(args.out, newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["utt", "frame_idx"] + [f"phi_{j + 1}" for j in range(k)])
        for i, trace in _traces(model, dataset):
            uid = dataset.utt_ids[i]
            for t, row in enumerate(trace):
                writer.writerow([uid, t] + [repr(float(v)) for v in row])
    print(f"wrote traces for {len(dataset)} utterances to {args.out}")
    return 0


def cmd_features(args):
    model = _read_model(args.model)
    dataset, _ = load_cache(args.cache)
    n_intervals = _config(args).n_intervals
    feats = []
    for i, trace in _traces(model, dataset):
        if trace.shape[0] < n_intervals:
            logger.warning("skipping %s: %d frames < %d intervals", dataset.utt_ids[i],
                           trace.shape[0], n_intervals)
            continue
        feats.append(extract_features(trace, n_intervals, dataset.utt_ids[i], dataset.labels[i]))
    with atomic_path(args.out) as tmp:
        write_feature_csv(tmp, feats)
    print(f"wrote {len(feats)} feature rows ({model.n_components} x {n_intervals}) to {args.out}")
    return 0


def cmd_evaluate(args):
    base = _config(args)
    dataset, meta = load_cache(args.cache)
    config = _signal_config(base, meta, _explicit_keys(args))
    if np.unique(dataset.labels).size < 2:
        raise DataError("evaluation needs at least two classes")
    t0 = time.perf_counter()
    result = cross_validate(dataset, config)
    elapsed = time.perf_counter() - t0
    with atomic_write(args.out, newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["fold", "n_test", "accuracy"])
        for i, (acc, n) in enumerate(zip(result.fold_accuracies, result.fold_sizes)):
            writer.writerow([i, n, repr(acc)])
    manifest = args.manifest or Path(f"{args.out}.manifest.json")
    RunManifest("evaluate", config.to_dict(), _dataset_info(cache_files(args.cache), args.cache),
                config.seed, __version__, {"evaluate": elapsed}, [str(args.out)],
                {"fold_accuracies": result.fold_accuracies, "mean": result.mean,
                 "std": result.std}).write(manifest)
    print(f"accuracy {result.mean:.4f} +/- {result.std:.4f} over {len(result.fold_accuracies)} folds")
    return 0


def _parse_values(text):
    values = [v.strip() for v in text.split(",") if v.strip()]
    if not values:
        raise UsageError("--values needs a comma-separated list")
    return values


def cmd_sweep(args):
    key = resolve_param(args.param)
    base = _config(args)
    dataset, meta = load_cache(args.cache)
    config = _signal_config(base, meta, _explicit_keys(args) - {key})
    if key in SIGNAL_KEYS:
        # framing changes, so the source audio has to be re-read
        data_dir = args.data_dir or meta["source_dir"]
        signals, _, _ = load_signals(data_dir, meta["config"]["filename_pattern"])
        source = signals
    else:
        source = dataset
    t0 = time.perf_counter()
    rows = sweep(args.param, _parse_values(args.values), config, source)
    elapsed = time.perf_counter() - t0
    with atomic_path(args.out) as tmp:
        write_sweep_csv(tmp, rows)
    manifest = args.manifest or Path(f"{args.out}.manifest.json")
    RunManifest("sweep", config.to_dict(), _dataset_info(cache_files(args.cache), args.cache),
                config.seed, __version__, {"sweep": elapsed}, [str(args.out)],
                {str(v): {"mean": r.mean, "std": r.std} for _, v, r in rows}).write(manifest)
    for param, value, result in rows:
        print(f"{param}={value}: {result.mean:.4f} +/- {result.std:.4f}")
    return 0


def cmd_oracle_check(args):
    from .oracle_suite import default_cases, run_suite, write_report

    def show(res):
        status = "PASS" if res.passed else "FAIL"
        print(f"{status} {res.name}: error {res.error:.4f} (tol {res.tolerance:g}) "
              f"recovered {' '.join(f'{v:.4f}' for v in res.recovered)} in {res.seconds:.1f}s",
              flush=True)

    results = run_suite(default_cases(quick=args.quick), seed=args.seed, on_result=show)
    if args.out:
        with atomic_path(args.out) as tmp:
            write_report(tmp, results)
    failed = [r.name for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} oracle cases passed")
    return 3 if failed else 0


def cmd_inspect_model(args):
    model = _read_model(args.model)
    info = {
        "n_components": model.n_components,
        "input_dim": model.input_dim,
        "spectrum": [float(s) for s in model.spectrum],
        "cost_rows": len(model.cost_history),
        "initial_cost": model.cost_history[0][1] if model.cost_history else None,
        "final_cost": model.cost_history[-1][1] if model.cost_history else None,
        "config": model.config,
    }
    print(json.dumps(info, indent=1, sort_keys=True))
    return 0


def build_parser():
    parser = _Parser(prog="fmca", description="Dependence-eigenfunction features for time series.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("preprocess", help="read WAVs, trim, frame and cache")
    p.add_argument("data_dir", type=Path)
    p.add_argument("--out", type=Path, required=True, help="cache directory")
    p.add_argument("--manifest", type=Path)
    _add_config_flags(p)
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser("train", help="train the projector networks on a frame cache")
    p.add_argument("cache", type=Path)
    p.add_argument("--out", type=Path, required=True, help="model file")
    p.add_argument("--trajectory", type=Path, help="cost CSV (default <out>.cost.csv)")
    p.add_argument("--manifest", type=Path, help="default <out>.manifest.json")
    _add_config_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("project", help="write eigenfunction traces as CSV")
    p.add_argument("model", type=Path)
    p.add_argument("cache", type=Path)
    p.add_argument("--out", type=Path, required=True)
    p.set_defaults(func=cmd_project)

    p = sub.add_parser("features", help="write interval power features as CSV")
    p.add_argument("model", type=Path)
    p.add_argument("cache", type=Path)
    p.add_argument("--out", type=Path, required=True)
    _add_config_flags(p)
    p.set_defaults(func=cmd_features)

    p = sub.add_parser("evaluate", help="stratified k-fold accuracy of the full pipeline")
    p.add_argument("cache", type=Path)
    p.add_argument("--out", type=Path, required=True, help="per-fold CSV")
    p.add_argument("--manifest", type=Path)
    _add_config_flags(p)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("sweep", help="cross-validate over values of L, S, K or T")
    p.add_argument("cache", type=Path)
    p.add_argument("--param", required=True)
    p.add_argument("--values", required=True, help="comma-separated")
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--data-dir", type=Path, help="source WAVs (default: recorded in the cache)")
    p.add_argument("--manifest", type=Path)
    _add_config_flags(p)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("oracle-check", help="recover known spectra from synthetic samples")
    p.add_argument("--out", type=Path, help="CSV report")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--quick", action="store_true", help="shorter Gaussian runs")
    p.set_defaults(func=cmd_oracle_check)

    p = sub.add_parser("inspect-model", help="print a model summary as JSON")
    p.add_argument("model", type=Path)
    p.set_defaults(func=cmd_inspect_model)
    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        level = logging.WARNING - 10 * min(args.verbose, 2)
        logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
        return args.func(args)
    except FMCAError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except (FileNotFoundError, IsADirectoryError, PermissionError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return DataError.exit_code
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return getattr(exc, "exit_code", 1)


if __name__ == "__main__":
    sys.exit(main())
