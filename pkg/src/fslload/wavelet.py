"""Periodized orthonormal wavelet transforms: DWT, wavelet packets, denoising.

All filtering uses periodic boundary extension, so each analysis step is an
orthogonal map and energy is preserved exactly (up to rounding).  A single
analysis step needs an even input length; a depth-``L`` transform therefore
needs a length divisible by ``2**L``.  Callers holding arbitrary-length data
go through :func:`pad_to_multiple` first (``denoise`` does this itself).
"""
from __future__ import annotations

from dataclasses import dataclass
from math import comb

import numpy as np

from .errors import InvalidArgument
from .series import Series

_SQRT2 = np.sqrt(2.0)
_SQRT3 = np.sqrt(3.0)

def daubechies_lowpass(moments):
    """Minimum-phase Daubechies lowpass with ``moments`` vanishing moments.

    Spectral factorization of the half-band polynomial; computed rather than
    tabulated because the usual printed taps are only orthonormal to ~1e-12.
    """
    ys = np.roots([comb(moments - 1 + k, k) for k in range(moments)][::-1])
    poly = np.poly1d([1.0])
    for y in ys:
        zs = np.roots([1.0, -(2.0 - 4.0 * y), 1.0])
        poly = poly * np.poly1d([1.0, -zs[np.argmin(np.abs(zs))]])
    for _ in range(moments):
        poly = poly * np.poly1d([1.0, 1.0])
    h = np.real(poly.coeffs)
    return h * _SQRT2 / h.sum()


_LOWPASS = {
    "haar": np.array([1.0, 1.0]) / _SQRT2,
    "db2": np.array([1 + _SQRT3, 3 + _SQRT3, 3 - _SQRT3, 1 - _SQRT3]) / (4 * _SQRT2),
    "db4": daubechies_lowpass(4),
}

# MAD-to-sigma factor for Gaussian noise
_MAD_SCALE = 0.6745


@dataclass(frozen=True)
class WaveletSpec:
    name: str
    lowpass: np.ndarray
    highpass: np.ndarray

    @property
    def filter_len(self):
        return self.lowpass.size


def quadrature_mirror(lowpass):
    """Highpass partner of an orthonormal lowpass filter: g[n] = (-1)^n h[L-1-n]."""
    h = np.asarray(lowpass, dtype=np.float64)
    signs = np.where(np.arange(h.size) % 2 == 0, 1.0, -1.0)
    return signs * h[::-1]


def get_wavelet(name="db4") -> WaveletSpec:
    if isinstance(name, WaveletSpec):
        return name
    try:
        h = _LOWPASS[name].copy()
    except KeyError:
        raise InvalidArgument(f"unknown wavelet {name!r}; choose from {sorted(_LOWPASS)}") from None
    h.setflags(write=False)
    g = quadrature_mirror(h)
    g.setflags(write=False)
    return WaveletSpec(name, h, g)


def max_level(signal_len: int, filter_len: int) -> int:
    """Deepest decomposition level before boundary effects dominate."""
    signal_len, filter_len = int(signal_len), int(filter_len)
    if filter_len < 1 or signal_len < filter_len:
        raise InvalidArgument(
            f"signal length {signal_len} is shorter than filter length {filter_len}"
        )
    # integer arithmetic avoids log2 rounding at exact powers of two
    ratio = signal_len // filter_len
    return ratio.bit_length() - 1


def _as_array(x):
    if isinstance(x, Series):
        return x.values
    return np.asarray(x, dtype=np.float64)


def _periodic_index(n, flen):
    # rows k, columns j: position (2k + j) mod n
    return (2 * np.arange(n // 2)[:, None] + np.arange(flen)[None, :]) % n


def analysis_step(x, spec: WaveletSpec):
    """One periodized filter-bank split into (approximation, detail)."""
    x = np.asarray(x, dtype=np.float64)
    n = x.size
    if n % 2:
        raise InvalidArgument(f"analysis step needs an even length, got {n}")
    taps = x[_periodic_index(n, spec.filter_len)]
    return taps @ spec.lowpass, taps @ spec.highpass


def synthesis_step(approx, detail, spec: WaveletSpec):
    """Inverse of :func:`analysis_step` (transpose of the orthogonal analysis map)."""
    approx = np.asarray(approx, dtype=np.float64)
    detail = np.asarray(detail, dtype=np.float64)
    if approx.shape != detail.shape:
        raise InvalidArgument(f"coefficient shapes differ: {approx.shape} vs {detail.shape}")
    n = 2 * approx.size
    idx = _periodic_index(n, spec.filter_len)
    contrib = approx[:, None] * spec.lowpass[None, :] + detail[:, None] * spec.highpass[None, :]
    out = np.zeros(n)
    np.add.at(out, idx.ravel(), contrib.ravel())
    return out


def _check_depth(n, level, spec, check_level):
    if level < 0:
        raise InvalidArgument("level must be non-negative")
    if n < spec.filter_len:
        raise InvalidArgument(f"signal length {n} is shorter than filter length {spec.filter_len}")
    if check_level and level > max_level(n, spec.filter_len):
        raise InvalidArgument(
            f"level {level} exceeds the edge-effect bound {max_level(n, spec.filter_len)} "
            f"for length {n} and {spec.name}"
        )
    if n % (1 << level):
        raise InvalidArgument(f"length {n} is not divisible by 2**{level}")


@dataclass(frozen=True)
class WaveletTree:
    """Full wavelet-packet tree.

    ``nodes[j]`` holds the ``2**j`` coefficient arrays of level ``j`` in natural
    (binary) order: node ``2p`` is the lowpass child of node ``p`` at the level
    above and ``2p + 1`` its highpass child.
    """

    nodes: list
    total_energy: float

    @property
    def levels(self):
        return len(self.nodes) - 1

    @property
    def leaves(self):
        return self.nodes[-1]

    def level_energies(self, j):
        return np.array([float(np.dot(d, d)) for d in self.nodes[j]])


def dwpt(series, level: int, spec="db4", check_level=True) -> WaveletTree:
    spec = get_wavelet(spec)
    x = _as_array(series)
    level = int(level)
    _check_depth(x.size, level, spec, check_level)
    nodes = [[x.copy()]]
    for _ in range(level):
        nxt = []
        for d in nodes[-1]:
            a, h = analysis_step(d, spec)
            nxt.extend((a, h))
        nodes.append(nxt)
    energy = float(sum(np.dot(d, d) for d in nodes[-1]))
    return WaveletTree(nodes, energy)


def idwpt(tree: WaveletTree, spec="db4"):
    """Rebuild the signal from the deepest level of a packet tree."""
    spec = get_wavelet(spec)
    current = list(tree.leaves)
    while len(current) > 1:
        current = [synthesis_step(current[i], current[i + 1], spec) for i in range(0, len(current), 2)]
    return current[0]


@dataclass(frozen=True)
class DwtPyramid:
    approximation: np.ndarray
    details: list  # details[0] is the finest level d1

    @property
    def level(self):
        return len(self.details)


def dwt(series, level: int, spec="db4", check_level=True) -> DwtPyramid:
    spec = get_wavelet(spec)
    x = _as_array(series)
    level = int(level)
    _check_depth(x.size, level, spec, check_level)
    details = []
    a = x.copy()
    for _ in range(level):
        a, d = analysis_step(a, spec)
        details.append(d)
    return DwtPyramid(a, details)


def idwt(pyramid: DwtPyramid, spec="db4"):
    spec = get_wavelet(spec)
    a = np.asarray(pyramid.approximation, dtype=np.float64)
    for d in reversed(pyramid.details):
        if np.shape(d) != a.shape:
            raise InvalidArgument(
                f"detail of shape {np.shape(d)} does not match approximation {a.shape}"
            )
        a = synthesis_step(a, d, spec)
    return a


def threshold(coeffs, T: float, mode="shrink"):
    """Elementwise thresholding rule.

    ``"shrink"`` moves every coefficient toward zero by ``T`` and zeroes the
    band ``|x| <= T``; ``"hard"`` keeps coefficients above ``T`` untouched.
    """
    T = float(T)
    if T < 0:
        raise InvalidArgument("threshold must be non-negative")
    x = np.asarray(coeffs, dtype=np.float64)
    if mode == "shrink":
        return np.sign(x) * np.maximum(np.abs(x) - T, 0.0)
    if mode == "hard":
        return np.where(np.abs(x) > T, x, 0.0)
    raise InvalidArgument(f"unknown threshold mode {mode!r}")


def universal_threshold(finest_detail, n):
    sigma = np.median(np.abs(finest_detail)) / _MAD_SCALE
    return float(sigma * np.sqrt(2.0 * np.log(n)))


def pad_to_multiple(x, multiple):
    """Symmetric (half-sample) extension on the right up to a length multiple."""
    x = np.asarray(x, dtype=np.float64)
    extra = (-x.size) % multiple
    if extra == 0:
        return x
    return np.pad(x, (0, extra), mode="symmetric")


def denoise(series, spec="db4", mode="shrink", threshold_value=None):
    """Wavelet shrinkage denoising with the universal threshold.

    Returns a :class:`Series` when given one, otherwise an ndarray.  Passing
    ``threshold_value`` overrides the data-driven threshold.
    """
    spec = get_wavelet(spec)
    x = _as_array(series)
    n = x.size
    if n < spec.filter_len:
        raise InvalidArgument(f"signal length {n} is shorter than filter length {spec.filter_len}")
    level = max_level(n, spec.filter_len)
    if level == 0:
        out = x.copy()
    else:
        padded = pad_to_multiple(x, 1 << level)
        pyr = dwt(padded, level, spec, check_level=False)
        if threshold_value is None:
            T = universal_threshold(pyr.details[0], n)
        else:
            T = float(threshold_value)
        cleaned = DwtPyramid(pyr.approximation, [threshold(d, T, mode) for d in pyr.details])
        out = idwt(cleaned, spec)[:n]
    if isinstance(series, Series):
        return series.with_values(out)
    return out
