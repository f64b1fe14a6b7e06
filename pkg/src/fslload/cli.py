"""Command-line entry point: ``fslload {synth,features,cluster,forecast,experiment}``.

Failures print one line to stderr::

    fslload: error code=<exit> kind=<ErrorClass> msg=<text>

and exit with 2 (config/arguments), 3 (data) or 4 (numeric).
"""
from __future__ import annotations

import argparse
import csv
import dataclasses
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .clustering import cluster_features, write_consensus
from .data import SynthConfig, load_csv, save_csv, save_labels, synth_generate
from .errors import ConfigError, DataError, FslError, InvalidArgument
from .experiment import (
    ExperimentConfig,
    _Unit,
    apply_overrides,
    base_dataset,
    default_jobs,
    load_config,
    parse_override,
    run_experiment,
)
from .features import extract_features, feature_matrix, write_features_csv
from .metrics import rmse
from .series import slice_index_window

log = logging.getLogger("fslload")


def _common(p):
    p.add_argument("--config", metavar="PATH", help="JSON experiment config")
    p.add_argument("--out", metavar="DIR", default=".", help="output directory (default: .)")
    p.add_argument("--seed", type=int, default=None, help="global seed (default: config seed)")
    p.add_argument("--jobs", type=int, default=None, help="parallel work units (default: all cores)")
    p.add_argument("--strict-paper", action="store_true",
                   help="use the literal absolute-error metric and negated sample entropy")
    p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                   help="override a dotted config key, e.g. train.learning_rate=0.01 (repeatable)")


def _data_args(p):
    p.add_argument("--data", metavar="CSV", help="long-format user,timestamp,value CSV "
                   "(default: synthetic data from the config)")


def build_parser():
    parser = argparse.ArgumentParser(
        prog="fslload",
        description="Few-shot load forecasting: wavelet features, consensus clustering, two-phase LSTM.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="count", default=0,
                        help="more logging (FSL_LOG sets the base level)")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")
    sub.required = True

    p = sub.add_parser("synth", help="write a synthetic sinusoid dataset")
    _common(p)
    p.add_argument("--periods", default="10,15,20", help="comma-separated group periods")
    p.add_argument("--users", type=int, default=20, help="users per group")
    p.add_argument("--length", type=int, default=500, help="samples per user")
    p.add_argument("--noise", type=float, default=0.1, help="noise standard deviation")
    p.add_argument("--amplitude", type=float, default=1.0, help="sinusoid amplitude")
    p.add_argument("--no-random-phase", action="store_true", help="use phase 0 for every user")

    p = sub.add_parser("features", help="feature vectors for every user")
    _common(p)
    _data_args(p)
    p.add_argument("--start", type=int, default=None, help="window start index (default: data start)")
    p.add_argument("--length", type=int, default=None, help="window length (default: common span)")

    p = sub.add_parser("cluster", help="consensus clustering of every user")
    _common(p)
    _data_args(p)
    p.add_argument("--start", type=int, default=None, help="window start index (default: data start)")
    p.add_argument("--length", type=int, default=None, help="window length (default: common span)")

    p = sub.add_parser("forecast", help="one few-shot cell end to end")
    _common(p)
    _data_args(p)
    p.add_argument("--user", required=True, help="target user id")
    p.add_argument("--k", type=int, default=12, help="number of shots (default: 12)")
    p.add_argument("--method", choices=("fsl", "baseline"), default="fsl")
    p.add_argument("--clusterer", default="ensemble",
                   help="ensemble, kmeans, gmm, agglomerative or affinity")

    p = sub.add_parser("experiment", help="run the case named in the config")
    _common(p)
    return parser


# --------------------------------------------------------------------------


def _setup_logging(verbose):
    base = os.environ.get("FSL_LOG", "WARNING").upper()
    level = getattr(logging, base, None)
    if not isinstance(level, int):
        raise ConfigError(f"FSL_LOG={base!r} is not a log level")
    level = max(logging.DEBUG, level - 10 * verbose)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    logging.getLogger().setLevel(level)


def _config(args) -> ExperimentConfig:
    config = load_config(args.config) if args.config else ExperimentConfig()
    config = apply_overrides(config, [parse_override(o) for o in args.overrides])
    if args.seed is not None:
        config = dataclasses.replace(config, seed=args.seed)
    if args.strict_paper:
        feats = dataclasses.replace(config.cluster.features, strict_entropy=True)
        config = dataclasses.replace(config, metric="literal",
                                     cluster=dataclasses.replace(config.cluster, features=feats))
    return config.validate()


def _out(args):
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _dataset(args, config):
    if getattr(args, "data", None):
        return load_csv(args.data, time_mode=config.data.time_mode,
                        granularity_minutes=config.data.granularity_minutes)
    return base_dataset(config, 0)


def _windows(dataset, start, length):
    lo, hi = dataset.common_window()
    start = lo if start is None else start
    length = hi - start if length is None else length
    if length < 1:
        raise DataError("users share no common window")
    return [slice_index_window(s, start, length) for s in dataset.series]


def cmd_synth(args):
    config = _config(args)
    try:
        periods = tuple(int(p) for p in args.periods.split(","))
    except ValueError:
        raise ConfigError(f"--periods must be comma-separated integers, got {args.periods!r}") from None
    seed = config.seed
    synth = SynthConfig(args.users, periods, args.amplitude, args.noise, args.length,
                        not args.no_random_phase, seed)
    try:
        synth.validate()
    except InvalidArgument as exc:
        raise ConfigError(str(exc)) from None
    ds = synth_generate(synth)
    out = _out(args)
    save_csv(ds, out / "synthetic.csv")
    save_labels(ds, out / "labels.csv")
    print(f"wrote {len(ds)} users to {out / 'synthetic.csv'}")
    return 0


def cmd_features(args):
    config = _config(args)
    ds = _dataset(args, config)
    windows = _windows(ds, args.start, args.length)
    vectors = [extract_features(w, config.cluster.features) for w in windows]
    out = _out(args)
    write_features_csv(out / "features.csv", ds.ids, vectors)
    print(f"wrote {len(vectors)} feature vectors to {out / 'features.csv'}")
    return 0


def cmd_cluster(args):
    config = _config(args)
    ds = _dataset(args, config)
    windows = _windows(ds, args.start, args.length)
    vectors = [extract_features(w, config.cluster.features) for w in windows]
    X, _ = feature_matrix(vectors, config.cluster.features)
    res = cluster_features(X, config.cluster.to_cluster_config(), config.seed)
    out = _out(args)
    write_consensus(out / "consensus.csv", out / "consensus.json", ds.ids, res)
    print(f"k={res.final.k} s_score={res.s_score:.6f}")
    return 0


def cmd_forecast(args):
    config = _config(args)
    ds = _dataset(args, config)
    if args.user not in ds.ids:
        raise DataError(f"unknown user {args.user!r}")
    if args.clusterer not in ("ensemble", "kmeans", "gmm", "agglomerative", "affinity"):
        raise ConfigError(f"unknown clusterer {args.clusterer!r}")
    data = dataclasses.replace(config.data, targets=(args.user,))
    if args.data:
        data = dataclasses.replace(data, source="csv", path=args.data)
    config = dataclasses.replace(config, data=data, shots=(args.k,), seeds=(0,),
                                 granularities=(ds.granularity_minutes,))
    unit = _Unit(config, ds.granularity_minutes, args.k, 0, ds if args.data else None)
    target = unit.targets[0]
    if args.method == "fsl":
        truth, pred, _ = unit.run_fsl(target, args.clusterer)
    else:
        truth, pred, _ = unit.run_baseline(target)
    out = _out(args)
    with open(out / "forecast.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["step", "index", "truth", "forecast"])
        for i, (t, p) in enumerate(zip(truth, pred)):
            w.writerow([i + 1, target.start_index + args.k + i, repr(float(t)), repr(float(p))])
    other = "literal" if config.metric == "rmse" else "rmse"
    print(f"{config.metric}={rmse(truth, pred, config.metric):.6f} {other}={rmse(truth, pred, other):.6f}")
    return 0


def cmd_experiment(args):
    config = _config(args)
    jobs = args.jobs if args.jobs is not None else default_jobs()
    if jobs < 1:
        raise ConfigError("--jobs must be positive")
    result = run_experiment(config, jobs)
    path = result.write(Path(args.out) / "results")
    failed = sum(r["status"] != "ok" for r in result.cells)
    print(f"cells={len(result.cells)} failed={failed} results={path}")
    return 0


COMMANDS = {"synth": cmd_synth, "features": cmd_features, "cluster": cmd_cluster,
            "forecast": cmd_forecast, "experiment": cmd_experiment}


def _error_line(exc, code):
    msg = " ".join(str(exc).split()) or type(exc).__name__
    return f"fslload: error code={code} kind={type(exc).__name__} msg={msg}"


def _exit_code(exc):
    if isinstance(exc, FslError):
        return exc.exit_code
    if isinstance(exc, (FloatingPointError, np.linalg.LinAlgError)):
        return 4
    return 2


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        _setup_logging(args.verbose)
        return COMMANDS[args.command](args)
    except FileNotFoundError as exc:
        err = DataError(f"{exc.filename}: no such file")
    except (FslError, ValueError, FloatingPointError, np.linalg.LinAlgError) as exc:
        err = exc
    code = _exit_code(err)
    print(_error_line(err, code), file=sys.stderr)
    return code


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
