"""Orthonormal Daubechies filters and the periodised discrete wavelet transform."""
from __future__ import annotations

import functools
import json
from dataclasses import dataclass
from importlib import resources

import numpy as np

__all__ = ["daubechies_filter", "WaveletParams", "dwt_periodic", "idwt_periodic", "coefficient_positions"]


@functools.lru_cache(maxsize=None)
def _table() -> dict:
    with resources.files("fgbm.data").joinpath("daubechies.json").open() as fh:
        return json.load(fh)


def daubechies_filter(n_vanishing: int) -> np.ndarray:
    """Low-pass filter of the Daubechies wavelet with ``n_vanishing`` vanishing moments."""
    table = _table()
    key = f"db{int(n_vanishing)}"
    if key not in table:
        raise ValueError(f"no bundled filter {key}; available: {sorted(table, key=lambda k: int(k[2:]))}")
    return np.array(table[key], dtype=float)


def _check_filter(h: np.ndarray, tol: float = 1e-12) -> None:
    if abs(h.sum() - np.sqrt(2.0)) > tol:
        raise ValueError("filter violates sum(h) = sqrt(2)")
    L = len(h)
    for m in range(0, L // 2):
        s = float(np.dot(h[: L - 2 * m], h[2 * m:]))
        if abs(s - (m == 0)) > tol:
            raise ValueError(f"filter violates the orthonormality rule at shift {2 * m}")


@dataclass(frozen=True)
class WaveletParams:
    vanishing_moments: int = 4
    levels: int = 10
    filter: tuple[float, ...] = ()

    def __post_init__(self) -> None:
        if self.vanishing_moments < 2:
            raise ValueError("at least 2 vanishing moments are required")
        if self.levels < 2:
            raise ValueError("at least 2 levels are required")
        h = np.asarray(self.filter if self.filter else daubechies_filter(self.vanishing_moments), dtype=float)
        if len(h) != 2 * self.vanishing_moments:
            raise ValueError("filter length must be twice the number of vanishing moments")
        _check_filter(h)
        object.__setattr__(self, "filter", tuple(float(c) for c in h))

    @property
    def lowpass(self) -> np.ndarray:
        return np.asarray(self.filter)

    @property
    def highpass(self) -> np.ndarray:
        h = self.lowpass
        return ((-1.0) ** np.arange(len(h))) * h[::-1]


def _analysis_step(a: np.ndarray, lo: np.ndarray, hi: np.ndarray):
    n = a.shape[-1]
    idx = (2 * np.arange(n // 2)[:, None] + np.arange(len(lo))[None, :]) % n
    blocks = a[..., idx]
    return blocks @ lo, blocks @ hi


def dwt_periodic(x: np.ndarray, params: WaveletParams, levels: int | None = None) -> np.ndarray:
    """Orthonormal periodised DWT along the last axis.

    Output layout: ``[a_L, d_L, d_{L-1}, ..., d_1]`` where ``d_1`` is the finest
    detail level.  The last-axis length must be divisible by ``2**levels``.
    """
    L = params.levels if levels is None else levels
    x = np.asarray(x, dtype=float)
    n = x.shape[-1]
    if n % (1 << L):
        raise ValueError(f"length {n} is not divisible by 2**{L}")
    if n >> L < 1:
        raise ValueError("too many levels for the signal length")
    lo, hi = params.lowpass, params.highpass
    details = []
    a = x
    for _ in range(L):
        a, d = _analysis_step(a, lo, hi)
        details.append(d)
    return np.concatenate([a] + details[::-1], axis=-1)


def idwt_periodic(c: np.ndarray, params: WaveletParams, levels: int | None = None) -> np.ndarray:
    """Inverse of :func:`dwt_periodic`."""
    L = params.levels if levels is None else levels
    c = np.asarray(c, dtype=float)
    n = c.shape[-1]
    lo, hi = params.lowpass, params.highpass
    size = n >> L
    a = c[..., :size]
    pos = size
    for _ in range(L):
        d = c[..., pos:pos + size]
        pos += size
        m = 2 * size
        out = np.zeros(c.shape[:-1] + (m,))
        idx = (2 * np.arange(size)[:, None] + np.arange(len(lo))[None, :]) % m
        for j in range(len(lo)):
            np.add.at(out, (..., idx[:, j]), a * lo[j] + d * hi[j])
        a = out
        size = m
    return a


def coefficient_positions(n: int, levels: int, x0: float, dx: float) -> np.ndarray:
    """Left end of the dyadic cell each coefficient of :func:`dwt_periodic` is attached to."""
    pos = []
    size = n >> levels
    pos.append(x0 + np.arange(size) * dx * (1 << levels))
    for lev in range(levels, 0, -1):
        size = n >> lev
        pos.append(x0 + np.arange(size) * dx * (1 << lev))
    return np.concatenate(pos)
