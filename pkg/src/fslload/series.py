"""Canonical load-series container and index-based slicing utilities.

Time is an integer sample index relative to the dataset epoch plus a
granularity in minutes; series from different users line up by index.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateSeriesError, InvalidArgument

HORIZON = 72


@dataclass(frozen=True)
class Series:
    user_id: str
    values: np.ndarray
    start_index: int = 0
    granularity_minutes: int = 1

    def __post_init__(self):
        values = np.array(self.values, dtype=np.float64).ravel()
        if values.size == 0:
            raise InvalidArgument(f"series {self.user_id!r} is empty")
        if not np.all(np.isfinite(values)):
            bad = int(np.flatnonzero(~np.isfinite(values))[0])
            raise InvalidArgument(f"series {self.user_id!r} has a non-finite value at position {bad}")
        if int(self.granularity_minutes) <= 0:
            raise InvalidArgument("granularity_minutes must be positive")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "start_index", int(self.start_index))
        object.__setattr__(self, "granularity_minutes", int(self.granularity_minutes))

    def __len__(self):
        return self.values.size

    @property
    def end_index(self):
        """One past the last sample index covered."""
        return self.start_index + len(self)

    def with_values(self, values, start_index=None, granularity_minutes=None):
        return Series(
            self.user_id,
            values,
            self.start_index if start_index is None else start_index,
            self.granularity_minutes if granularity_minutes is None else granularity_minutes,
        )


@dataclass(frozen=True)
class FewShotSplit:
    train: Series
    test: Series = field(repr=False)


def resample(series: Series, k: int) -> Series:
    """Average consecutive, non-overlapping buckets of ``k`` samples.

    Samples left over after the last full bucket are dropped.
    """
    k = int(k)
    if k < 1:
        raise InvalidArgument("resampling factor must be >= 1")
    n = len(series) // k
    if n == 0:
        raise InvalidArgument(f"series of length {len(series)} is shorter than one bucket of {k}")
    out = series.values[: n * k].reshape(n, k).mean(axis=1)
    return Series(
        series.user_id,
        out,
        series.start_index // k,
        series.granularity_minutes * k,
    )


def standardize(series: Series) -> Series:
    x = series.values
    if x.size < 2:
        raise InvalidArgument("standardize needs at least 2 samples")
    sd = x.std()
    if sd == 0.0:
        raise DegenerateSeriesError(f"series {series.user_id!r} has zero variance")
    z = (x - x.mean()) / sd
    return series.with_values(z)


def split_few_shot(series: Series, k: int, horizon: int = HORIZON) -> FewShotSplit:
    """Split into ``k`` training shots and the ``horizon`` samples right after them."""
    k = int(k)
    if k < 1:
        raise InvalidArgument("k must be positive")
    need = k + horizon
    if len(series) < need:
        raise InvalidArgument(
            f"series {series.user_id!r} has {len(series)} samples; k={k} needs at least {need}"
        )
    return FewShotSplit(
        train=slice_window(series, 0, k),
        test=slice_window(series, k, horizon),
    )


def slice_window(series: Series, start: int, length: int) -> Series:
    start, length = int(start), int(length)
    if start < 0 or length < 1 or start + length > len(series):
        raise InvalidArgument(
            f"window [{start}, {start + length}) outside series of length {len(series)}"
        )
    return series.with_values(series.values[start : start + length], series.start_index + start)


def slice_index_window(series: Series, start_index: int, length: int) -> Series:
    """Slice by absolute sample index rather than by position."""
    return slice_window(series, int(start_index) - series.start_index, length)
