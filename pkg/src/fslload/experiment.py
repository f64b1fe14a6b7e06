"""Case runners: k sweep, granularity bound study and clusterer compactness.

Every cell is a (granularity, k, seed, user, method, clusterer) tuple.  Cells
sharing (granularity, k, seed) are grouped into one work unit so the dataset,
the clustering and the pretrained weights can be reused inside a process.

Seeds fan out from one global seed through ``stage_seed``: the stage name and
the cell coordinates form the SeedSequence spawn key, so a cell's randomness
does not depend on where it sits in the grid.
"""
from __future__ import annotations

import csv
import dataclasses
import json
import logging
import os
import zlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .clustering import BASE_ALGORITHMS, ClusterConfig, cluster_population, query_members
from .data import Dataset, SynthConfig, load_csv, resample_dataset, synth_generate
from .errors import ConfigError, DivergedForecastError, FslError, InvalidArgument
from .features import FeatureConfig
from .forecaster import (
    TrainConfig,
    effective_window,
    fine_tune,
    forecast,
    init_params,
    pretrain,
    prototype_series,
    train,
)
from .metrics import rmse, trim_outliers
from .series import HORIZON, split_few_shot

log = logging.getLogger(__name__)

CASES = ("k_sweep", "granularity", "compactness")
METHODS = ("fsl", "baseline")
CLUSTERERS = BASE_ALGORITHMS + ("ensemble",)
STAGES = {"data": 0, "cluster": 1, "pretrain": 2, "finetune": 3, "baseline": 4}


@dataclass(frozen=True)
class DataConfig:
    source: str = "synthetic"  # or "csv"
    path: str = ""
    time_mode: str = "index"
    granularity_minutes: int = 1
    synth: SynthConfig = SynthConfig()
    holdout_per_group: int = 1  # labelled data: last n users of each group are targets
    targets: tuple = ()  # explicit target ids (overrides holdout)
    target_groups: tuple = ()  # restrict labelled targets to these groups
    num_targets: int = 1  # unlabelled data without explicit targets: last n ids


@dataclass(frozen=True)
class ClusterSection:
    k_candidates: tuple = (2, 3, 4, 5, 6, 7, 8)
    algorithms: tuple = BASE_ALGORITHMS
    restarts: int = 1
    features: FeatureConfig = FeatureConfig()

    def to_cluster_config(self, mode="ensemble"):
        return ClusterConfig(self.features, tuple(self.k_candidates), tuple(self.algorithms),
                             self.restarts, mode)


@dataclass(frozen=True)
class ExperimentConfig:
    case: str = "k_sweep"
    seed: int = 0
    seeds: tuple = (0,)
    granularities: tuple = (1,)  # minutes per sample after resampling
    shots: tuple = (12, 24, 48, 96, 192)
    horizon: int = HORIZON
    methods: tuple = METHODS
    clusterers: tuple = ("ensemble",)
    metric: str = "rmse"  # or "literal"
    baseline_steps: int = -1  # -1: pretrain_steps + finetune_steps
    denoise_wavelet: str = "db4"
    period: int = 0  # underlying period T in base samples, bound study only
    multiple: int = 1  # P in N = P*T/M
    data: DataConfig = DataConfig()
    cluster: ClusterSection = ClusterSection()
    train: TrainConfig = TrainConfig()

    def validate(self):
        if self.case not in CASES:
            raise ConfigError(f"case must be one of {CASES}, got {self.case!r}")
        if self.horizon != HORIZON:
            log.warning("horizon overridden to %d", self.horizon)
        if self.horizon < 1:
            raise ConfigError("horizon must be positive")
        shots = list(self.shots)
        if not shots or min(shots) < 2 or shots != sorted(set(shots)):
            raise ConfigError("shots must be distinct, >= 2 and ascending")
        if not self.seeds:
            raise ConfigError("seeds must not be empty")
        if not self.granularities or min(self.granularities) < 1:
            raise ConfigError("granularities must be positive")
        bad = set(self.methods) - set(METHODS)
        if bad or not self.methods:
            raise ConfigError(f"methods must be drawn from {METHODS}")
        bad = set(self.clusterers) - set(CLUSTERERS)
        if bad or not self.clusterers:
            raise ConfigError(f"clusterers must be drawn from {CLUSTERERS}")
        if self.metric not in ("rmse", "literal"):
            raise ConfigError("metric must be 'rmse' or 'literal'")
        if self.data.source not in ("synthetic", "csv"):
            raise ConfigError("data.source must be 'synthetic' or 'csv'")
        if self.data.source == "csv" and not self.data.path:
            raise ConfigError("data.path is required for csv data")
        try:
            self.train.validate()
            self.data.synth.validate()
        except InvalidArgument as exc:
            raise ConfigError(str(exc)) from None
        return self

    def bound(self, granularity):
        """Shot length N = P*T/M for the bound study (0 when T is unset)."""
        if not self.period:
            return 0
        factor = granularity // self.data.granularity_minutes
        return self.multiple * self.period / factor


# --------------------------------------------------------------------------
# config parsing


def _coerce(value, default, path):
    if dataclasses.is_dataclass(default):
        if not isinstance(value, dict):
            raise ConfigError(f"{path}: expected an object")
        return _from_dict(type(default), value, path, default)
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{path}: expected true/false, got {value!r}")
        return value
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            if isinstance(value, float) and value.is_integer():
                return int(value)
            raise ConfigError(f"{path}: expected an integer, got {value!r}")
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{path}: expected a number, got {value!r}")
        return float(value)
    if isinstance(default, str):
        if not isinstance(value, str):
            raise ConfigError(f"{path}: expected a string, got {value!r}")
        return value
    if isinstance(default, tuple):
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"{path}: expected a list, got {value!r}")
        return tuple(value)
    return value


def _from_dict(cls, data, path="", base=None):
    base = base if base is not None else cls()
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - names)
    if unknown:
        raise ConfigError(f"unknown config key {(path + '.' if path else '') + unknown[0]}")
    kw = {}
    for name, value in data.items():
        kw[name] = _coerce(value, getattr(base, name), f"{path}.{name}" if path else name)
    return dataclasses.replace(base, **kw)


def config_from_dict(data) -> ExperimentConfig:
    if not isinstance(data, dict):
        raise ConfigError("config must be a JSON object")
    return _from_dict(ExperimentConfig, data)


def load_config(path) -> ExperimentConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON at line {exc.lineno}: {exc.msg}") from None
    return config_from_dict(data)


def parse_override(text):
    """``a.b=value`` to ``("a.b", value)``; values parse as JSON, else string."""
    if "=" not in text:
        raise ConfigError(f"override {text!r} is not of the form key=value")
    key, raw = text.split("=", 1)
    key = key.strip()
    if not key:
        raise ConfigError(f"override {text!r} has an empty key")
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return key, value


def apply_overrides(config, overrides):
    """Set dotted keys on a (nested) frozen dataclass, type-checked."""
    for key, value in overrides:
        config = _set_path(config, key.split("."), value, key)
    return config


def _set_path(obj, parts, value, full):
    name = parts[0]
    if not dataclasses.is_dataclass(obj) or name not in {f.name for f in dataclasses.fields(obj)}:
        raise ConfigError(f"unknown config key {full}")
    current = getattr(obj, name)
    if len(parts) == 1:
        if dataclasses.is_dataclass(current):
            raise ConfigError(f"{full} is a section; set one of its keys")
        new = _coerce(value, current, full)
    else:
        new = _set_path(current, parts[1:], value, full)
    return dataclasses.replace(obj, **{name: new})


def config_to_dict(config):
    def conv(v):
        if dataclasses.is_dataclass(v):
            return {f.name: conv(getattr(v, f.name)) for f in dataclasses.fields(v)}
        if isinstance(v, tuple):
            return [conv(x) for x in v]
        return v

    return conv(config)


# --------------------------------------------------------------------------
# seeds and data


def stage_seed(global_seed, stage, *keys):
    """32-bit seed for one pipeline stage of one cell.

    ``keys`` are non-negative ints; strings (user ids) are hashed with CRC32.
    """
    key = [STAGES[stage]] + [zlib.crc32(k.encode()) if isinstance(k, str) else int(k) for k in keys]
    ss = np.random.SeedSequence(int(global_seed), spawn_key=tuple(key))
    return int(ss.generate_state(1)[0])


def base_dataset(config: ExperimentConfig, seed, csv_data=None) -> Dataset:
    if config.data.source == "csv":
        if csv_data is not None:
            return csv_data
        return load_csv(config.data.path, time_mode=config.data.time_mode,
                        granularity_minutes=config.data.granularity_minutes)
    synth = dataclasses.replace(config.data.synth, seed=stage_seed(config.seed, "data", seed))
    return synth_generate(synth)


def split_targets(dataset: Dataset, data: DataConfig):
    """Return ``(historical, targets)`` lists of Series."""
    ids = dataset.ids
    if data.targets:
        missing = [t for t in data.targets if t not in ids]
        if missing:
            raise ConfigError(f"target users not in dataset: {missing}")
        chosen = set(data.targets)
    elif dataset.labels is not None:
        groups = {}
        for uid in ids:
            groups.setdefault(dataset.labels[uid], []).append(uid)
        wanted = set(data.target_groups) if data.target_groups else set(groups)
        chosen = set()
        for g, members in groups.items():
            if g in wanted and data.holdout_per_group > 0:
                chosen.update(members[-data.holdout_per_group :])
    else:
        chosen = set(ids[-data.num_targets :]) if data.num_targets > 0 else set()
    hist = [s for s in dataset.series if s.user_id not in chosen]
    targets = [s for s in dataset.series if s.user_id in chosen]
    if not targets:
        raise ConfigError("no target users selected")
    if not hist:
        raise ConfigError("no historical users left after choosing targets")
    return hist, targets


def _resample_for(dataset: Dataset, granularity):
    base = dataset.granularity_minutes
    if granularity % base:
        raise ConfigError(f"granularity {granularity} is not a multiple of the data's {base} minutes")
    return resample_dataset(dataset, granularity // base)


# --------------------------------------------------------------------------
# cells


CELL_FIELDS = ("case", "granularity", "k", "seed", "user_id", "method", "clusterer", "status",
               "metric", "rmse", "rmse_other", "s_score", "n_members", "query_correct")
_OTHER = {"rmse": "literal", "literal": "rmse"}


def _majority(labels, members, hist):
    if labels is None or not len(members):
        return ""
    counts = np.bincount([labels[hist[i].user_id] for i in members])
    return int(np.argmax(counts))


class _Unit:
    """All cells sharing one (granularity, k, seed)."""

    def __init__(self, config: ExperimentConfig, granularity, k, seed, csv_data=None):
        self.config = config
        self.granularity, self.k, self.seed = granularity, k, seed
        data = _resample_for(base_dataset(config, seed, csv_data), granularity)
        self.labels = data.labels
        self.hist, self.targets = split_targets(data, config.data)
        self._pretrained = {}

    def _seed(self, stage, *keys):
        return stage_seed(self.config.seed, stage, self.granularity, self.k, self.seed, *keys)

    def _pretrain(self, members, window):
        key = (tuple(int(i) for i in members), window)
        if key not in self._pretrained:
            proto = prototype_series([self.hist[i] for i in members], self.config.denoise_wavelet)
            extra = [self.hist[i] for i in members]
            self._pretrained[key] = pretrain(proto, self.config.train, self._seed("pretrain"),
                                             window, members=extra)
        return self._pretrained[key]

    def run_fsl(self, target, clusterer):
        cfg = self.config
        split = split_few_shot(target, self.k, cfg.horizon)
        window = effective_window(self.k, cfg.train.window_len)
        ccfg = cfg.cluster.to_cluster_config(clusterer)
        res, qc = cluster_population(self.hist, split.train, ccfg, self._seed("cluster", target.user_id))
        members = query_members(res, qc)
        info = {"s_score": float(res.s_score or 0.0), "n_members": int(len(members)), "query_correct": ""}
        if self.labels is not None:
            info["query_correct"] = int(_majority(self.labels, members, self.hist) == self.labels[target.user_id])
        base = self._pretrain(members, window)
        model = fine_tune(base, split.train, cfg.train, self._seed("finetune", target.user_id), window)
        pred = forecast(model, split.train.values[-window:], cfg.horizon)
        return split.test.values, pred, info

    def run_baseline(self, target):
        cfg = self.config
        split = split_few_shot(target, self.k, cfg.horizon)
        window = effective_window(self.k, cfg.train.window_len)
        steps = cfg.baseline_steps
        if steps < 0:
            steps = cfg.train.pretrain_steps + cfg.train.finetune_steps
        rng = np.random.default_rng(self._seed("baseline", target.user_id))
        params = init_params(cfg.train.hidden_size, rng, cfg.train.init_scale, cfg.train.forget_bias)
        model = train(params, split.train, steps, cfg.train, rng, window)
        pred = forecast(model, split.train.values[-window:], cfg.horizon)
        return split.test.values, pred, {"s_score": "", "n_members": "", "query_correct": ""}

    def cells(self):
        cfg = self.config
        out = []
        for target in self.targets:
            jobs = []
            for method in cfg.methods:
                if method == "fsl":
                    jobs.extend(("fsl", c) for c in cfg.clusterers)
                else:
                    jobs.append(("baseline", ""))
            for method, clusterer in jobs:
                row = {"case": cfg.case, "granularity": self.granularity, "k": self.k, "seed": self.seed,
                       "user_id": target.user_id, "method": method, "clusterer": clusterer,
                       "metric": cfg.metric}
                blank = dict(rmse="", rmse_other="", s_score="", n_members="", query_correct="")
                try:
                    if method == "fsl":
                        truth, pred, info = self.run_fsl(target, clusterer)
                    else:
                        truth, pred, info = self.run_baseline(target)
                    row.update(info, status="ok", rmse=rmse(truth, pred, cfg.metric),
                               rmse_other=rmse(truth, pred, _OTHER[cfg.metric]))
                except DivergedForecastError:
                    row.update(blank, status="diverged")
                except (FslError, ValueError, ArithmeticError, np.linalg.LinAlgError) as exc:
                    log.warning("cell %s failed: %s", row, exc)
                    row.update(blank, status=f"error:{type(exc).__name__}")
                out.append(row)
        return out


def _run_unit(args):
    config, granularity, k, seed, csv_data = args
    return _Unit(config, granularity, k, seed, csv_data).cells()


def run_cells(config: ExperimentConfig, jobs=1):
    """Evaluate every cell of the grid; rows come back in grid order."""
    config.validate()
    csv_data = base_dataset(config, 0) if config.data.source == "csv" else None
    units = [(config, g, k, s, csv_data) for g in config.granularities for k in config.shots
             for s in config.seeds]
    jobs = max(1, min(int(jobs or 1), len(units)))
    if jobs == 1:
        results = [_run_unit(u) for u in units]
    else:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_run_unit, units))
    return [row for rows in results for row in rows]


# --------------------------------------------------------------------------
# aggregation


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    cells: list
    table: list = field(default_factory=list)
    sscore: list = field(default_factory=list)
    curves: list = field(default_factory=list)
    accuracy: float | None = None

    def write(self, out_dir):
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        _write_rows(out / "cells.csv", CELL_FIELDS, self.cells)
        _write_rows(out / "table.csv", TABLE_FIELDS, self.table)
        _write_rows(out / "sscore.csv", SSCORE_FIELDS, self.sscore)
        _write_rows(out / "curves.csv", CURVE_FIELDS, self.curves)
        summary = {
            "case": self.config.case,
            "cells": len(self.cells),
            "failed": sum(r["status"] != "ok" for r in self.cells),
            "query_accuracy": self.accuracy,
            "config": config_to_dict(self.config),
        }
        with open(out / "summary.json", "w", encoding="utf-8") as fh:
            json.dump(summary, fh, indent=2, sort_keys=True)
            fh.write("\n")
        return out


TABLE_FIELDS = ("granularity", "method", "clusterer", "k", "metric", "n_cells", "n_failed", "n_trimmed",
                "mrmse", "std", "cell")
SSCORE_FIELDS = ("clusterer", "s_score", "mrmse", "std", "n_cells", "query_accuracy")
CURVE_FIELDS = ("granularity", "method", "clusterer", "x", "bound", "mrmse", "std", "seed_median")


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    return v


def _write_rows(path, fields, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(fields)
        for r in rows:
            w.writerow([_fmt(r[f]) for f in fields])


def _ok_values(rows):
    return [float(r["rmse"]) for r in rows if r["status"] == "ok"]


def _groups(cells, keys):
    out = {}
    for r in cells:
        out.setdefault(tuple(r[k] for k in keys), []).append(r)
    return out


def _trimmed(values):
    if not values:
        return float("nan"), float("nan"), 0
    if len(values) == 1:
        return float(values[0]), 0.0, 0
    return trim_outliers(values)


def per_seed_mrmse(cells, method="fsl", clusterer=None, granularity=None, k=None):
    """Trimmed MRMSE per seed for one method (and optionally clusterer, granularity, k)."""
    out = {}
    for r in cells:
        if r["method"] != method or r["status"] != "ok":
            continue
        if clusterer is not None and r["clusterer"] != clusterer:
            continue
        if granularity is not None and r["granularity"] != granularity:
            continue
        if k is not None and r["k"] != k:
            continue
        out.setdefault(r["seed"], []).append(float(r["rmse"]))
    return {s: _trimmed(v)[0] for s, v in sorted(out.items())}


def aggregate(config: ExperimentConfig, cells) -> ExperimentResult:
    """Build every table from the raw cells; no other state is consulted."""
    res = ExperimentResult(config, cells)
    for key, rows in _groups(cells, ("granularity", "method", "clusterer", "k")).items():
        vals = _ok_values(rows)
        mean, std, removed = _trimmed(vals)
        res.table.append({
            "granularity": key[0], "method": key[1], "clusterer": key[2], "k": key[3],
            "metric": config.metric, "n_cells": len(rows), "n_failed": len(rows) - len(vals), "n_trimmed": removed,
            "mrmse": mean, "std": std, "cell": f"{mean:.3f}±{std:.3f}",
        })
        seeds = per_seed_mrmse(rows, key[1])
        finite = [v for v in seeds.values() if np.isfinite(v)]
        res.curves.append({
            "granularity": key[0], "method": key[1], "clusterer": key[2], "x": key[3],
            "bound": config.bound(key[0]), "mrmse": mean, "std": std,
            "seed_median": float(np.median(finite)) if finite else float("nan"),
        })
    fsl = [r for r in cells if r["method"] == "fsl"]
    for clusterer, rows in sorted(_groups(fsl, ("clusterer",)).items()):
        ok = [r for r in rows if r["status"] == "ok"]
        mean, std, _ = _trimmed(_ok_values(rows))
        scores = [float(r["s_score"]) for r in ok]
        acc = [int(r["query_correct"]) for r in ok if r["query_correct"] != ""]
        res.sscore.append({
            "clusterer": clusterer[0], "s_score": float(np.mean(scores)) if scores else float("nan"),
            "mrmse": mean, "std": std, "n_cells": len(rows),
            "query_accuracy": float(np.mean(acc)) if acc else "",
        })
    acc = [int(r["query_correct"]) for r in fsl if r["status"] == "ok" and r["query_correct"] != ""]
    res.accuracy = float(np.mean(acc)) if acc else None
    return res


# --------------------------------------------------------------------------
# case runners


def _case(config, case, **defaults):
    if config.case != case:
        config = dataclasses.replace(config, case=case)
    return dataclasses.replace(config, **defaults) if defaults else config


def run_case_k_sweep(config: ExperimentConfig, jobs=1) -> ExperimentResult:
    """MRMSE against k for FSL and the budget-matched baseline."""
    config = _case(config, "k_sweep")
    return aggregate(config, run_cells(config, jobs))


def run_case_granularity(config: ExperimentConfig, jobs=1) -> ExperimentResult:
    """MRMSE against shot length N for each granularity (bound N >= T/M)."""
    config = _case(config, "granularity")
    return aggregate(config, run_cells(config, jobs))


def run_case_compactness(config: ExperimentConfig, jobs=1) -> ExperimentResult:
    """Per-clusterer S-score and trimmed MRMSE of the FSL method."""
    config = _case(config, "compactness")
    if "fsl" not in config.methods:
        raise ConfigError("the compactness case needs the fsl method")
    return aggregate(config, run_cells(config, jobs))


RUNNERS = {"k_sweep": run_case_k_sweep, "granularity": run_case_granularity,
           "compactness": run_case_compactness}


def run_experiment(config: ExperimentConfig, jobs=1) -> ExperimentResult:
    return RUNNERS[config.validate().case](config, jobs)


def default_jobs():
    try:
        return len(os.sched_getaffinity(0))
    except AttributeError:  # pragma: no cover - non-Linux
        return os.cpu_count() or 1
