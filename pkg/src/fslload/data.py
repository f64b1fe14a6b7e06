"""CSV ingestion of per-user load data and the synthetic sinusoid dataset."""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError, InvalidArgument
from .series import Series, resample, slice_index_window

log = logging.getLogger(__name__)

DEFAULT_COLUMNS = ("user_id", "timestamp", "value")


@dataclass
class Dataset:
    series: list
    source: str = "csv"
    epoch: int = 0
    granularity_minutes: int = 1
    labels: dict | None = None  # user_id -> ground-truth group (synthetic only)
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        grans = {s.granularity_minutes for s in self.series}
        if len(grans) > 1:
            raise DataError(f"series mix granularities {sorted(grans)}")

    def __len__(self):
        return len(self.series)

    @property
    def ids(self):
        return [s.user_id for s in self.series]

    def get(self, user_id):
        for s in self.series:
            if s.user_id == user_id:
                return s
        raise DataError(f"unknown user {user_id!r}")

    def common_window(self):
        start = max(s.start_index for s in self.series)
        end = min(s.end_index for s in self.series)
        return start, end


@dataclass(frozen=True)
class SynthConfig:
    num_users: int = 20  # per group
    periods: tuple = (10, 15, 20)
    amplitude: float = 1.0
    noise_sigma: float = 0.1
    length: int = 500
    random_phase: bool = True
    seed: int = 0

    def validate(self):
        if self.num_users < 1:
            raise InvalidArgument("num_users must be positive")
        if not self.periods or min(self.periods) < 2:
            raise InvalidArgument("periods must all be >= 2")
        if self.noise_sigma < 0:
            raise InvalidArgument("noise_sigma must be non-negative")
        if self.length < 2 * max(self.periods):
            raise InvalidArgument("length must cover at least two of the longest period")


def synth_generate(config: SynthConfig = SynthConfig()) -> Dataset:
    """Noisy sinusoids, one group per period; each user draws its own phase.

    User ``u`` of group ``g`` uses the ``(g * num_users + u)``-th child of the
    config seed, so adding groups does not change existing users.
    """
    config.validate()
    children = np.random.SeedSequence(config.seed).spawn(len(config.periods) * config.num_users)
    t = np.arange(config.length)
    series, labels = [], {}
    for g, period in enumerate(config.periods):
        for u in range(config.num_users):
            rng = np.random.default_rng(children[g * config.num_users + u])
            phase = rng.uniform(0.0, 2 * np.pi) if config.random_phase else 0.0
            # reduce t modulo the period first so noise-free output repeats exactly
            x = config.amplitude * np.sin(2 * np.pi * np.mod(t, period) / period + phase)
            if config.noise_sigma > 0:
                x = x + rng.normal(0.0, config.noise_sigma, config.length)
            uid = f"p{period}_u{u:03d}"
            series.append(Series(uid, x, 0, 1))
            labels[uid] = g
    meta = {"periods": list(config.periods), "seed": config.seed}
    return Dataset(series, "synthetic", 0, 1, labels, meta)


def load_csv(path, columns=DEFAULT_COLUMNS, time_mode="index", granularity_minutes=1,
             epoch=None, window=None) -> Dataset:
    """Read a long-format CSV (one row per user and timestamp).

    ``time_mode="index"`` treats timestamps as sample indices; ``"epoch"``
    treats them as epoch seconds on a ``granularity_minutes`` grid starting
    at ``epoch`` (default: earliest timestamp).  ``window`` is a half-open
    ``(start, end)`` index range; users not covering it are dropped.
    """
    user_col, time_col, value_col = columns
    rows = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        missing = [c for c in columns if c not in header]
        if missing:
            raise DataError(f"{path}: missing columns {missing}; header is {header}")
        iu, it, iv = (header.index(c) for c in columns)
        for lineno, rec in enumerate(reader, start=2):
            if not rec or all(not c.strip() for c in rec):
                continue
            if len(rec) < len(header):
                raise DataError(f"{path}: row {lineno} has {len(rec)} fields, expected {len(header)}")
            try:
                ts = int(rec[it].strip())
            except ValueError:
                raise DataError(f"{path}: row {lineno}: timestamp {rec[it]!r} is not an integer") from None
            try:
                val = float(rec[iv].strip())
            except ValueError:
                raise DataError(f"{path}: row {lineno}: value {rec[iv]!r} is not numeric") from None
            if not math.isfinite(val):
                raise DataError(f"{path}: row {lineno}: value {rec[iv]!r} is not finite")
            rows.setdefault(rec[iu].strip(), []).append((ts, val, lineno))
    if not rows:
        raise DataError(f"{path}: no data rows")

    if time_mode == "epoch":
        step = int(granularity_minutes) * 60
        if epoch is None:
            epoch = min(ts for recs in rows.values() for ts, _, _ in recs)
    elif time_mode == "index":
        step = 1
        epoch = 0 if epoch is None else int(epoch)
    else:
        raise InvalidArgument(f"unknown time_mode {time_mode!r}")

    series = []
    for uid, recs in rows.items():
        recs.sort(key=lambda r: r[0])
        idx = []
        for ts, _, lineno in recs:
            off = ts - epoch
            if off % step:
                raise DataError(f"{path}: row {lineno}: timestamp {ts} is off the {step}s grid")
            idx.append(off // step)
        idx = np.asarray(idx)
        if idx.size > 1:
            gaps = np.diff(idx)
            if np.any(gaps == 0):
                bad = recs[int(np.flatnonzero(gaps == 0)[0]) + 1][2]
                raise DataError(f"{path}: row {bad}: duplicate timestamp for user {uid!r}")
            if np.any(gaps != 1):
                bad = recs[int(np.flatnonzero(gaps != 1)[0]) + 1][2]
                raise DataError(f"{path}: row {bad}: gap in timestamps for user {uid!r}")
        series.append(Series(uid, [v for _, v, _ in recs], int(idx[0]), granularity_minutes))

    if window is not None:
        start, end = int(window[0]), int(window[1])
        if end <= start:
            raise InvalidArgument(f"empty window [{start}, {end})")
        kept = []
        for s in series:
            if s.start_index <= start and s.end_index >= end:
                kept.append(slice_index_window(s, start, end - start))
            else:
                log.warning("dropping user %s: does not cover window [%d, %d)", s.user_id, start, end)
        if not kept:
            raise DataError(f"{path}: no user covers window [{start}, {end})")
        series = kept
    return Dataset(series, "csv", int(epoch), int(granularity_minutes), None,
                   {"path": str(path), "time_mode": time_mode})


def save_csv(dataset: Dataset, path, columns=DEFAULT_COLUMNS):
    """Write index-mode long CSV; values use 17 significant digits."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(list(columns))
        for s in dataset.series:
            for i, v in enumerate(s.values):
                w.writerow([s.user_id, s.start_index + i, format(float(v), ".17g")])


def save_labels(dataset: Dataset, path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["user_id", "group"])
        for uid in dataset.ids:
            w.writerow([uid, dataset.labels[uid]])


def resample_dataset(dataset: Dataset, k: int) -> Dataset:
    if k == 1:
        return dataset
    return Dataset([resample(s, k) for s in dataset.series], dataset.source, dataset.epoch,
                   dataset.granularity_minutes * k, dataset.labels, dict(dataset.meta))
