"""Wavelet-energy and time-domain descriptors for load-series clustering."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np
from scipy.fft import dct

from . import kernels
from .errors import DegenerateSeriesError, InvalidArgument, UndefinedEntropyError
from .series import Series
from .wavelet import WaveletTree, dwpt, get_wavelet, max_level, pad_to_multiple

LOG_FLOOR = 1e-12
STAT_NAMES = ("s_deg", "t_deg", "skewness", "sample_entropy", "hurst_k")


def _values(x):
    return x.values if isinstance(x, Series) else np.asarray(x, dtype=np.float64)


# --------------------------------------------------------------------------
# wavelet descriptors


def dwe(tree: WaveletTree) -> np.ndarray:
    """Per-leaf energy of the deepest packet level, normalized to sum to one."""
    if not tree.total_energy > 0:
        raise DegenerateSeriesError("wavelet tree has zero energy")
    return tree.level_energies(tree.levels) / tree.total_energy


def lwe(dwe_vec) -> np.ndarray:
    v = np.asarray(dwe_vec, dtype=np.float64)
    if np.any(v < 0):
        raise InvalidArgument("energies must be non-negative")
    return np.log10(np.maximum(v, LOG_FLOOR))


def wcc(lwe_vec) -> np.ndarray:
    v = np.asarray(lwe_vec, dtype=np.float64)
    if v.size == 0:
        raise InvalidArgument("wcc needs a non-empty vector")
    return dct(v, type=2, norm="ortho")


# --------------------------------------------------------------------------
# time-domain descriptors


def _linear_trend(x):
    t = np.arange(x.size, dtype=np.float64)
    slope, intercept = np.polyfit(t, x, 1)
    return slope * t + intercept


def _moving_average_trend(x, period):
    """Centered moving average; for even periods a 2 x period average."""
    if period % 2:
        w = np.full(period, 1.0 / period)
    else:
        w = np.full(period + 1, 1.0 / period)
        w[0] = w[-1] = 0.5 / period
    half = w.size // 2
    trend = np.convolve(x, w, mode="valid")
    return trend, half


def _strength(resid_var, denom_var, total_var):
    # components at rounding-noise level carry no signal
    if denom_var <= 1e-12 * total_var:
        return 0.0
    return float(min(1.0, max(0.0, 1.0 - resid_var / denom_var)))


def decompose(series, period: int):
    """Classical additive decomposition ``x = trend + seasonal + remainder``.

    Only the span where the centered moving average is defined is returned.
    Series shorter than two periods get a linear trend and no seasonal part.
    """
    x = _values(series)
    period = int(period)
    if period < 1:
        raise InvalidArgument("period must be positive")
    if x.size < 2 * period or period < 2:
        trend = _linear_trend(x) if x.size > 1 else x.copy()
        return x, trend, np.zeros_like(x), x - trend
    trend, half = _moving_average_trend(x, period)
    core = x[half : half + trend.size]
    detrended = core - trend
    phase = (np.arange(core.size) + half) % period
    means = np.array([detrended[phase == p].mean() for p in range(period)])
    means -= means.mean()
    seasonal = means[phase]
    return core, trend, seasonal, core - trend - seasonal


def stl_degrees(series, period: int):
    """Strength of seasonality and trend, each clamped to [0, 1]."""
    x, trend, seasonal, resid = decompose(series, period)
    rv = resid.var()
    total = x.var()
    if total == 0.0:
        return 0.0, 0.0
    s_deg = _strength(rv, (x - trend).var(), total) if np.any(seasonal) else 0.0
    t_deg = _strength(rv, (x - seasonal).var(), total)
    return s_deg, t_deg


def skewness(series) -> float:
    x = _values(series)
    if x.size < 3:
        raise InvalidArgument("skewness needs at least 3 samples")
    sd = x.std()
    if sd == 0.0:
        return 0.0
    return float(np.mean(((x - x.mean()) / sd) ** 3))


def sample_entropy(series, m: int = 2, r: float | None = None, strict: bool = False) -> float:
    """Sample entropy with tolerance ``r`` (default 0.2 population std).

    ``strict=True`` returns the log-ratio with numerator and denominator
    swapped (a non-positive value).  Raises :class:`UndefinedEntropyError`
    when either match count is zero.
    """
    x = _values(series)
    m = int(m)
    if m < 1:
        raise InvalidArgument("m must be positive")
    if x.size < m + 2:
        raise InvalidArgument(f"sample entropy needs at least {m + 2} samples, got {x.size}")
    sd = x.std()
    if sd == 0.0:
        return 0.0
    if r is None:
        r = 0.2 * sd
    n_m, n_m1 = kernels.sampen_counts(x, m, float(r))
    if n_m == 0 or n_m1 == 0:
        raise UndefinedEntropyError(n_m, n_m1)
    value = -np.log(n_m1 / n_m)
    return float(-value if strict else value)


def sample_entropy_cap(n: int, m: int = 2) -> float:
    """Largest finite sample entropy for length ``n``: one match among all pairs."""
    pairs = (n - m) * (n - m - 1) // 2
    return float(np.log(max(pairs, 1)))


def hurst_k(series) -> float:
    x = _values(series)
    if x.size < 2:
        raise InvalidArgument("hurst_k needs at least 2 samples")
    sd = x.std()
    if sd == 0.0:
        return 0.0
    y = np.cumsum((x - x.mean()) / sd)
    return float(2.0 / x.size * np.log(y.max() - y.min()))


# --------------------------------------------------------------------------
# PCA


@dataclass(frozen=True)
class PcaModel:
    mean: np.ndarray
    scale: np.ndarray
    keep: np.ndarray  # boolean mask of non-constant input dimensions
    components: np.ndarray  # (n_components, n_kept)
    explained_ratio: np.ndarray

    @property
    def n_components(self):
        return self.components.shape[0]


def pca_fit(vectors, variance: float = 0.95) -> PcaModel:
    X = np.asarray([v.as_array() if isinstance(v, FeatureVector) else v for v in vectors], dtype=np.float64)
    if X.ndim != 2 or X.shape[0] < 2:
        raise InvalidArgument("pca_fit needs at least 2 samples")
    mean = X.mean(axis=0)
    scale = X.std(axis=0)
    # relative test so rounding noise in constant columns does not survive
    keep = scale > 1e-12 * np.maximum(1.0, np.abs(mean))
    n = X.shape[0]
    if not keep.any():
        empty = np.zeros((0, 0))
        return PcaModel(mean, np.where(keep, scale, 1.0), keep, empty, np.zeros(0))
    Z = (X[:, keep] - mean[keep]) / scale[keep]
    _, s, vt = np.linalg.svd(Z, full_matrices=False)
    var = s * s
    ratio = var / var.sum()
    cap = min(int(keep.sum()), n - 1)
    n_comp = int(np.searchsorted(np.cumsum(ratio), variance - 1e-12) + 1)
    n_comp = max(1, min(n_comp, cap))
    comps = vt[:n_comp]
    # sign convention: largest-magnitude loading positive, for run-to-run stability
    flip = np.sign(comps[np.arange(n_comp), np.argmax(np.abs(comps), axis=1)])
    comps = comps * flip[:, None]
    return PcaModel(mean, np.where(keep, scale, 1.0), keep, comps, ratio[:n_comp])


def pca_transform(model: PcaModel, vector) -> np.ndarray:
    v = np.asarray(vector.as_array() if isinstance(vector, FeatureVector) else vector, dtype=np.float64)
    if model.n_components == 0:
        return np.zeros(v.shape[:-1] + (0,))
    z = (v[..., model.keep] - model.mean[model.keep]) / model.scale[model.keep]
    return z @ model.components.T


# --------------------------------------------------------------------------
# assembled feature vectors


@dataclass(frozen=True)
class FeatureConfig:
    wavelet: str = "haar"
    max_dwpt_level: int = 5
    stl_period: int = 24
    sampen_m: int = 2
    sampen_r_factor: float = 0.2
    strict_entropy: bool = False
    pca_variance: float = 0.95
    pca_scope: str = "wavelet"  # or "all"


@dataclass(frozen=True)
class FeatureVector:
    wcc: np.ndarray
    lwe: np.ndarray
    dwe: np.ndarray
    s_deg: float
    t_deg: float
    skewness: float
    sample_entropy: float
    hurst_k: float
    entropy_defined: bool = True
    reduced: np.ndarray | None = field(default=None, compare=False)

    def wavelet_block(self):
        return np.concatenate([self.wcc, self.lwe, self.dwe])

    def stat_block(self):
        return np.array([self.s_deg, self.t_deg, self.skewness, self.sample_entropy, self.hurst_k])

    def as_array(self):
        """Concatenation in the order wcc | lwe | dwe | s_deg | t_deg | skew | sampen | hurst."""
        return np.concatenate([self.wavelet_block(), self.stat_block()])

    def names(self):
        n = self.dwe.size
        return (
            [f"wcc_{i}" for i in range(n)]
            + [f"lwe_{i}" for i in range(n)]
            + [f"dwe_{i}" for i in range(n)]
            + list(STAT_NAMES)
        )


def effective_level(n, config: FeatureConfig):
    spec = get_wavelet(config.wavelet)
    if n < spec.filter_len:
        return 0
    return min(config.max_dwpt_level, max_level(n, spec.filter_len))


def extract_features(series, config: FeatureConfig | None = None) -> FeatureVector:
    config = config or FeatureConfig()
    x = _values(series)
    spec = get_wavelet(config.wavelet)
    level = effective_level(x.size, config)
    padded = pad_to_multiple(x, 1 << level)
    tree = dwpt(padded, level, spec, check_level=False)
    if tree.total_energy > 0:
        d = dwe(tree)
    else:
        # all-zero input: spread energy evenly so the vector stays finite
        d = np.full(1 << level, 1.0 / (1 << level))
    lw = lwe(d)
    s_deg, t_deg = stl_degrees(x, config.stl_period)
    sd = x.std()
    defined = True
    try:
        se = sample_entropy(x, config.sampen_m, config.sampen_r_factor * sd, config.strict_entropy)
    except UndefinedEntropyError:
        defined = False
        se = sample_entropy_cap(x.size, config.sampen_m)
        if config.strict_entropy:
            se = -se
    return FeatureVector(
        wcc=wcc(lw),
        lwe=lw,
        dwe=d,
        s_deg=s_deg,
        t_deg=t_deg,
        skewness=skewness(x) if x.size >= 3 else 0.0,
        sample_entropy=se,
        hurst_k=hurst_k(x),
        entropy_defined=defined,
    )


def _zscore_columns(X):
    mean = X.mean(axis=0)
    sd = X.std(axis=0)
    const = sd <= 1e-12 * np.maximum(1.0, np.abs(mean))
    return np.where(const, 0.0, (X - mean) / np.where(const, 1.0, sd))


def feature_matrix(vectors, config: FeatureConfig | None = None):
    """Clustering design matrix for a population of feature vectors.

    With ``pca_scope="wavelet"`` the wavelet block is PCA-reduced and the
    z-scored statistical block is appended; ``"all"`` reduces the full vector.
    Returns ``(matrix, pca_model)``.
    """
    config = config or FeatureConfig()
    vectors = list(vectors)
    if len(vectors) < 2:
        return np.zeros((len(vectors), 0)), None
    if config.pca_scope == "all":
        model = pca_fit([v.as_array() for v in vectors], config.pca_variance)
        return pca_transform(model, np.array([v.as_array() for v in vectors])), model
    if config.pca_scope != "wavelet":
        raise InvalidArgument(f"unknown pca_scope {config.pca_scope!r}")
    W = np.array([v.wavelet_block() for v in vectors])
    model = pca_fit(W, config.pca_variance)
    reduced = pca_transform(model, W)
    stats = _zscore_columns(np.array([v.stat_block() for v in vectors]))
    return np.hstack([reduced, stats]), model


def write_features_csv(path, ids, vectors):
    vectors = list(vectors)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["user_id"] + vectors[0].names())
        for uid, v in zip(ids, vectors):
            w.writerow([uid] + [format(float(a), ".17g") for a in v.as_array()])
