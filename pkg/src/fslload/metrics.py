"""Forecast error metrics and the two-sigma trimmed aggregate."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from fractions import Fraction

import numpy as np

from .errors import InvalidArgument

CONVENTIONS = ("rmse", "literal")


def rmse(truth, pred, convention="rmse") -> float:
    """Root mean squared error.

    ``convention="literal"`` averages the per-point square roots of squared
    errors, which is the mean absolute error.
    """
    t = np.asarray(truth, dtype=np.float64)
    p = np.asarray(pred, dtype=np.float64)
    if t.shape != p.shape or t.size == 0:
        raise InvalidArgument(f"truth and prediction shapes differ or are empty: {t.shape} vs {p.shape}")
    err = t - p
    if convention == "rmse":
        return float(np.sqrt(np.mean(err * err)))
    if convention == "literal":
        return float(np.mean(np.sqrt(err * err)))
    raise InvalidArgument(f"unknown metric convention {convention!r}")


def mrmse(values) -> float:
    v = np.asarray(values, dtype=np.float64)
    if v.size == 0:
        raise InvalidArgument("mrmse of an empty list")
    return float(v.mean())


def trim_outliers(values):
    """Drop entries outside mean +/- 2 population std, then recompute.

    Returns ``(trimmed_mean, trimmed_std, removed_count)``.
    """
    v = np.asarray(values, dtype=np.float64)
    if v.size < 2:
        raise InvalidArgument("trimming needs at least 2 values")
    if not np.all(np.isfinite(v)):
        raise InvalidArgument("trimming needs finite values")
    # the keep test runs in exact rationals: the interval is closed, and ties at
    # exactly 2 std are common (four equal values plus one other sit at z = 2)
    exact = [Fraction(float(x)) for x in v]
    mu = sum(exact) / len(exact)
    bound = 4 * sum((q - mu) ** 2 for q in exact) / len(exact)
    keep = np.array([(q - mu) ** 2 <= bound for q in exact])
    mean, std = _shifted_moments(v[keep])
    return float(mean), float(std), int(v.size - int(keep.sum()))


def _shifted_moments(x):
    """Mean and population std about the first entry; exact for constant input."""
    d = x - x[0]
    m = d.mean()
    return x[0] + m, np.sqrt(np.mean((d - m) ** 2))


@dataclass
class EvalReport:
    rmse: list
    mrmse: float
    trimmed_mrmse: float
    trimmed_std: float
    removed_count: int
    convention: str = "rmse"

    @classmethod
    def from_values(cls, values, convention="rmse"):
        values = [float(v) for v in values]
        if len(values) >= 2:
            tm, ts, removed = trim_outliers(values)
        else:
            tm, ts, removed = mrmse(values), 0.0, 0
        return cls(values, mrmse(values), tm, ts, removed, convention)

    def cell(self, digits=3):
        return f"{self.trimmed_mrmse:.{digits}f}±{self.trimmed_std:.{digits}f}"

    def to_json(self):
        return json.dumps(asdict(self), sort_keys=True)
