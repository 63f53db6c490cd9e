"""Path synthesis and sublinear statistics of fractional G-Brownian motion.

Three generators share one seeding contract (:class:`fgbm.core.SeedSpec`):

* ``cholesky``: exact Gaussian sampling from the closed-form covariance (constant
  volatility only); the ground truth for the other two.
* ``movavg``: the moving-average (Mandelbrot-van Ness) kernel integrated
  exactly over cells, driven by two-sided white-noise increments.
* ``wavelet``: the same kernel expanded in a periodised Daubechies basis; each
  basis coefficient carries its own scenario volatility.

A volatility scenario modulates the driving increments, so a non-constant
scenario changes the covariance locally while a constant one only scales it.
"""
from __future__ import annotations

import csv
import json
import os
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from math import gamma, sqrt
from pathlib import Path
from typing import Callable

import numpy as np
from scipy import stats

from .core import (
    HurstIndex,
    ScenarioFamily,
    SeedSpec,
    TimeGrid,
    VolatilityBand,
    VolatilityScenario,
    as_hurst,
)
from .fracops import marchaud_cell_weights, mw_constant
from .wavelets import WaveletParams, coefficient_positions, dwt_periodic

__all__ = [
    "PathEnsemble",
    "UpperLowerStat",
    "fbm_covariance",
    "gen_cholesky_oracle",
    "gen_moving_average",
    "gen_wavelet",
    "generate",
    "moving_average_matrix",
    "wavelet_matrix",
    "estimate_upper_lower_covariance",
    "autocorr_closed_form",
    "self_similarity_check",
    "holder_moment_check",
    "SelfSimilarityReport",
    "HolderReport",
]

METHODS = ("cholesky", "movavg", "wavelet")
_STREAM = {"cholesky": 1, "movavg": 2, "wavelet": 3}


@dataclass(frozen=True)
class PathEnsemble:
    h: HurstIndex
    grid: TimeGrid
    scenario: VolatilityScenario | None
    paths: np.ndarray
    seed: SeedSpec
    method: str
    metadata: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        p = np.asarray(self.paths, dtype=float)
        if p.ndim != 2 or p.shape[1] != self.grid.n + 1:
            raise ValueError(f"paths must have shape (num_paths, {self.grid.n + 1})")
        if not np.all(np.isfinite(p)):
            raise ValueError("ensemble contains non-finite values")
        if np.any(p[:, 0] != 0.0):
            raise ValueError("every path must start at 0")
        p.setflags(write=False)
        object.__setattr__(self, "paths", p)

    @property
    def num_paths(self) -> int:
        return self.paths.shape[0]

    @property
    def times(self) -> np.ndarray:
        return self.grid.points

    def sample_covariance(self) -> np.ndarray:
        """Mean of ``B(s) B(t)`` over paths (the process is centred)."""
        return self.paths.T @ self.paths / self.num_paths

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["t"] + [f"path_{i}" for i in range(self.num_paths)])
            for j, t in enumerate(self.times):
                w.writerow([repr(float(t))] + [repr(float(v)) for v in self.paths[:, j]])


def fbm_covariance(h: HurstIndex | float, s, t, sigma: float = 1.0) -> np.ndarray:
    """``sigma^2 (|t|^2H + |s|^2H - |t - s|^2H) / 2``, broadcast over ``s`` and ``t``."""
    H2 = 2 * as_hurst(h).h
    s, t = np.asarray(s, dtype=float), np.asarray(t, dtype=float)
    return 0.5 * sigma**2 * (np.abs(t) ** H2 + np.abs(s) ** H2 - np.abs(t - s) ** H2)


def _check_start(grid: TimeGrid) -> None:
    if grid.t0 != 0.0:
        raise ValueError("path grids start at t = 0")


def _normals(seed: SeedSpec, stream: int, num_paths: int, size: int, threads: int) -> np.ndarray:
    """Row i drawn from its own derived generator, independent of chunking and threads."""
    out = np.empty((num_paths, size))

    def fill(rows: range) -> None:
        for i in rows:
            out[i] = seed.rng(stream, i).standard_normal(size)

    chunks = [range(a, min(a + 256, num_paths)) for a in range(0, num_paths, 256)]
    if threads > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(threads) as ex:
            list(ex.map(fill, chunks))
    else:
        for c in chunks:
            fill(c)
    return out


def _resolve_threads(threads: int | None) -> int:
    if threads is None:
        threads = int(os.environ.get("FGBM_THREADS", "1") or 1)
    return max(1, int(threads))


def _apply_in_chunks(z_rows: Callable[[range], np.ndarray], mat: np.ndarray, num_paths: int,
                     threads: int, chunk: int = 1000) -> np.ndarray:
    out = np.empty((num_paths, mat.shape[0]))

    def work(rows: range) -> None:
        out[rows.start:rows.stop] = z_rows(rows) @ mat.T

    chunks = [range(a, min(a + chunk, num_paths)) for a in range(0, num_paths, chunk)]
    if threads > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(threads) as ex:
            list(ex.map(work, chunks))
    else:
        for c in chunks:
            work(c)
    return out


def gen_cholesky_oracle(h: HurstIndex | float, grid: TimeGrid, sigma: float, num_paths: int,
                        seed: SeedSpec, threads: int | None = None) -> PathEnsemble:
    """Exact samples on ``grid`` from the closed-form covariance."""
    h = as_hurst(h)
    _check_start(grid)
    if grid.n > 2048:
        raise ValueError("dense factorisation is limited to 2048 grid points")
    if sigma < 0:
        raise ValueError("sigma must be >= 0")
    t = grid.points[1:]
    cov = fbm_covariance(h, t[:, None], t[None, :])
    cov = 0.5 * (cov + cov.T)
    try:
        L = np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        w, V = np.linalg.eigh(cov)
        if w.min() < -1e-10 * w.max():
            raise ValueError(f"covariance is not positive semidefinite (min eigenvalue {w.min():.3e})")
        L = V * np.sqrt(np.clip(w, 0.0, None))
    threads = _resolve_threads(threads)
    z = _normals(seed, _STREAM["cholesky"], num_paths, grid.n, threads)
    paths = np.zeros((num_paths, grid.n + 1))
    paths[:, 1:] = sigma * (z @ L.T)
    scen = VolatilityScenario.constant(sigma, VolatilityBand(sigma, max(sigma, 1e-300)), grid.t0, grid.t1)
    return PathEnsemble(h, grid, scen, paths, seed, "cholesky", {"sigma": sigma})


# -- moving average ----------------------------------------------------------

def _cell_edges(horizon: float, fine_width: float, window: float, ratio: float = 1.08) -> np.ndarray:
    """Uniform cells on [-horizon, horizon], geometrically growing cells back to -window."""
    n_fine = int(round(2 * horizon / fine_width))
    fine = np.linspace(-horizon, horizon, n_fine + 1)
    left = []
    x, w = -horizon, fine_width
    while x > -window:
        w *= ratio
        x = max(x - w, -window)
        left.append(x)
    return np.concatenate([np.array(left[::-1]), fine])


def moving_average_matrix(h: HurstIndex | float, times: np.ndarray, fine_width: float,
                          window: float) -> tuple[np.ndarray, np.ndarray]:
    """Matrix ``A`` with ``B(times) = A @ (sigma * Z)`` and the cell edges.

    ``A[i, c] = C_w * int_cell K_{t_i}(s) ds / sqrt(|cell|)``, with the kernel
    ``K_t(s) = (t - s)_+^(H-1/2) - (-s)_+^(H-1/2)`` integrated exactly.
    """
    H = as_hurst(h).h
    horizon = float(np.max(times))
    edges = _cell_edges(horizon, fine_width, window)
    alpha = H + 0.5
    w = marchaud_cell_weights(edges, alpha, times) * gamma(alpha)
    A = mw_constant(H) * w / np.sqrt(np.diff(edges))
    return A, edges


def _tail_variance(H: float, t: float, window: float) -> float:
    """Leading-order variance of the kernel beyond ``-window`` at time ``t``."""
    return mw_constant(H) ** 2 * (H - 0.5) ** 2 * t**2 * window ** (2 * H - 2) / (2 - 2 * H)


def gen_moving_average(h: HurstIndex | float, grid: TimeGrid, scenario: VolatilityScenario, num_paths: int,
                       seed: SeedSpec, window_factor: float = 1e5, fine_cells: int = 4096,
                       tail_tol: float = 5e-3, threads: int | None = None) -> PathEnsemble:
    """Moving-average synthesis.

    The past is truncated at ``-window_factor * T`` (at least ``20 T``).  Cells
    are uniform with ``fine_cells`` per unit time on ``[-T, T]`` (aligned with the
    grid) and grow geometrically further back.  The exact covariance of the
    discretised process and the truncation estimate go into ``metadata``.
    """
    h = as_hurst(h)
    _check_start(grid)
    if window_factor < 20:
        raise ValueError("the past must be kept back to at least 20 horizons")
    T = grid.t1
    sub = max(1, int(np.ceil(fine_cells * grid.dt)))
    A, edges = moving_average_matrix(h, grid.points, grid.dt / sub, window_factor * T)
    sig = np.asarray(scenario(edges[:-1]), dtype=float)
    A_sig = A * sig
    threads = _resolve_threads(threads)
    stream = _STREAM["movavg"]
    paths = _apply_in_chunks(lambda r: _normals_rows(seed, stream, r, A.shape[1]), A_sig, num_paths, threads)
    paths[:, 0] = 0.0
    tail = _tail_variance(h.h, T, window_factor * T)
    meta = {
        "cells": int(A.shape[1]),
        "fine_width": grid.dt / sub,
        "window": window_factor * T,
        "tail_variance_estimate": tail,
        "exact_covariance": A_sig @ A_sig.T,
    }
    top = T ** (2 * h.h)  # both sides per unit volatility
    if tail / top > tail_tol:
        meta["warning"] = f"truncated tail carries ~{tail / top:.2%} of the terminal variance"
        warnings.warn(meta["warning"], RuntimeWarning, stacklevel=2)
    return PathEnsemble(h, grid, scenario, paths, seed, "movavg", meta)


def _normals_rows(seed: SeedSpec, stream: int, rows: range, size: int) -> np.ndarray:
    return np.stack([seed.rng(stream, i).standard_normal(size) for i in rows])


# -- wavelet -----------------------------------------------------------------

def wavelet_matrix(h: HurstIndex | float, times: np.ndarray, params: WaveletParams,
                   window: int = 32) -> tuple[np.ndarray, np.ndarray]:
    """Matrix ``Phi`` with ``B(times) = Phi @ eps`` and the coefficient positions.

    ``Phi[i, (j,k)] = C_w Gamma(H+1/2) (I_M psi_jk)(t_i)``: the fractional
    integral of every periodised wavelet on ``[1 - window, 1]``.  It is computed
    by integrating the kernel exactly against the finest-scale boxes and then
    running the orthonormal transform over the box index.
    """
    H = as_hurst(h).h
    J = params.levels
    n_box = window << J
    dx = 2.0**-J
    x0 = 1.0 - window
    edges = x0 + dx * np.arange(n_box + 1)
    alpha = H + 0.5
    box = marchaud_cell_weights(edges, alpha, times) * gamma(alpha) / sqrt(dx)
    phi = mw_constant(H) * dwt_periodic(box, params, J)
    return phi, coefficient_positions(n_box, J, x0, dx)


def gen_wavelet(h: HurstIndex | float, params: WaveletParams, scenario: VolatilityScenario, num_paths: int,
                seed: SeedSpec, grid: TimeGrid | None = None, window: int = 32,
                threads: int | None = None) -> PathEnsemble:
    """Wavelet synthesis on ``[0, 1]``.

    ``eps_jk`` are independent normals with standard deviation given by the
    scenario at the left end of the dyadic support cell of ``psi_jk``.  The grid
    step must be a multiple of ``2**-levels``.
    """
    h = as_hurst(h)
    if grid is None:
        grid = TimeGrid(0.0, 1.0, 16)
    _check_start(grid)
    if grid.t1 != 1.0:
        raise ValueError("wavelet synthesis lives on [0, 1]")
    if window < 21 or window & (window - 1):
        raise ValueError("window must be a power of two covering at least 20 horizons plus [0, 1]")
    if (1 << params.levels) % grid.n:
        raise ValueError(f"levels={params.levels} cannot resolve a grid of {grid.n} steps; "
                         f"need 2**levels to be a multiple of {grid.n}")
    phi, pos = wavelet_matrix(h, grid.points, params, window)
    sig = np.asarray(scenario(np.clip(pos, scenario.t0, scenario.t1)), dtype=float)
    phi_sig = phi * sig
    threads = _resolve_threads(threads)
    stream = _STREAM["wavelet"]
    paths = _apply_in_chunks(lambda r: _normals_rows(seed, stream, r, phi.shape[1]), phi_sig, num_paths, threads)
    paths[:, 0] = 0.0
    meta = {
        "coefficients": int(phi.shape[1]),
        "levels": params.levels,
        "vanishing_moments": params.vanishing_moments,
        "window": window,
        "exact_covariance": phi_sig @ phi_sig.T,
    }
    return PathEnsemble(h, grid, scenario, paths, seed, "wavelet", meta)


def generate(method: str, h: HurstIndex | float, grid: TimeGrid, scenario: VolatilityScenario, num_paths: int,
             seed: SeedSpec, threads: int | None = None, **kw) -> PathEnsemble:
    """Dispatch to one generator by name (``cholesky``, ``movavg`` or ``wavelet``)."""
    if method == "cholesky":
        if not scenario.is_constant:
            raise ValueError("the covariance-factorisation oracle needs a constant scenario")
        ens = gen_cholesky_oracle(h, grid, scenario.sigma, num_paths, seed, threads=threads)
        return PathEnsemble(ens.h, ens.grid, scenario, ens.paths, seed, "cholesky", ens.metadata)
    if method == "movavg":
        return gen_moving_average(h, grid, scenario, num_paths, seed, threads=threads, **kw)
    if method == "wavelet":
        params = kw.pop("params", None) or WaveletParams(kw.pop("vanishing_moments", 4), kw.pop("levels", 10))
        return gen_wavelet(h, params, scenario, num_paths, seed, grid=grid, threads=threads, **kw)
    raise ValueError(f"unknown method {method!r}; choose from {METHODS}")


# -- sublinear statistics ----------------------------------------------------

@dataclass(frozen=True)
class UpperLowerStat:
    """Upper (``sup`` over scenarios) and lower (``inf``) Monte Carlo estimates.

    ``stderr_*`` and ``argmax``/``argmin`` refer to the scenario attaining each
    entry.
    """

    upper: np.ndarray
    lower: np.ndarray
    stderr_upper: np.ndarray
    stderr_lower: np.ndarray
    argmax: np.ndarray
    argmin: np.ndarray
    labels: tuple[str, ...]
    meta: dict = field(default_factory=dict)

    @property
    def stderr(self) -> np.ndarray:
        return np.maximum(self.stderr_upper, self.stderr_lower)

    def to_dict(self) -> dict:
        tolist = lambda a: np.asarray(a).tolist()
        return {
            "upper": tolist(self.upper),
            "lower": tolist(self.lower),
            "stderr_upper": tolist(self.stderr_upper),
            "stderr_lower": tolist(self.stderr_lower),
            "attaining_upper": tolist(np.vectorize(lambda i: self.labels[i], otypes=[object])(self.argmax)),
            "attaining_lower": tolist(np.vectorize(lambda i: self.labels[i], otypes=[object])(self.argmin)),
        }

    def to_json(self, **extra) -> str:
        return json.dumps({**self.to_dict(), **self.meta, **extra}, indent=2, sort_keys=True, default=_jsonable)


def _jsonable(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, np.generic):
        return o.item()
    raise TypeError(f"cannot serialise {type(o).__name__}")


def sup_inf(means: np.ndarray, stderrs: np.ndarray, labels: tuple[str, ...]) -> UpperLowerStat:
    """Combine per-scenario means (scenario axis first) into an :class:`UpperLowerStat`."""
    means = np.asarray(means, dtype=float)
    stderrs = np.asarray(stderrs, dtype=float)
    if means.shape[0] == 0:
        raise ValueError("empty scenario family")
    imax = np.argmax(means, axis=0)
    imin = np.argmin(means, axis=0)
    take = lambda a, i: np.take_along_axis(a, i[None, ...], axis=0)[0]
    return UpperLowerStat(take(means, imax), take(means, imin), take(stderrs, imax), take(stderrs, imin),
                          imax, imin, labels)


def estimate_upper_lower_covariance(family: ScenarioFamily, h: HurstIndex | float, grid: TimeGrid, num_paths: int,
                                    seed: SeedSpec, method: str = "auto", threads: int | None = None,
                                    **kw) -> UpperLowerStat:
    """Entrywise sup/inf over the family of the Monte Carlo mean of ``B(s) B(t)``.

    Every scenario reuses the same driving normals (common random numbers).
    ``method='auto'`` uses the exact oracle when all scenarios are constant and
    the moving average otherwise.
    """
    if num_paths < 100:
        warnings.warn(f"{num_paths} paths give unreliable standard errors", RuntimeWarning, stacklevel=2)
    if method == "auto":
        method = "cholesky" if family.all_constant else "movavg"
    means, errs = [], []
    for scen in family:
        ens = generate(method, h, grid, scen, num_paths, seed, threads=threads, **kw)
        P = ens.paths
        prod = P[:, :, None] * P[:, None, :]
        means.append(prod.mean(axis=0))
        errs.append(prod.std(axis=0, ddof=1) / np.sqrt(num_paths))
    return sup_inf(np.array(means), np.array(errs), tuple(s.label for s in family))


def autocorr_closed_form(n: int, h: HurstIndex | float, band: VolatilityBand) -> tuple[float, float]:
    """Lag-``n`` covariance of unit increments at ``sigma_hi`` and at ``sigma_lo``.

    Returned as ``(r_hi, r_lo)``.  For ``H < 1/2`` these are negative and the
    supremum over scenarios is ``r_lo``, not ``r_hi``.
    """
    if n < 1:
        raise ValueError("lag must be >= 1")
    H2 = 2 * as_hurst(h).h
    base = 0.5 * ((n + 1) ** H2 - 2 * n**H2 + (n - 1) ** H2)
    return band.sigma_hi**2 * base, band.sigma_lo**2 * base


# -- scaling checks ----------------------------------------------------------

@dataclass(frozen=True)
class SelfSimilarityReport:
    a: float
    t: float
    ks_statistic: float
    ks_pvalue: float
    variance_ratio: float
    variance_ratio_stderr: float
    expected_ratio: float

    @property
    def z_score(self) -> float:
        return (self.variance_ratio - self.expected_ratio) / self.variance_ratio_stderr


def self_similarity_check(ens: PathEnsemble, a: float, t: float | None = None) -> SelfSimilarityReport:
    """Compare the law of ``B(a t)`` with that of ``a^H B(t)``.

    Reports the two-sample Kolmogorov-Smirnov statistic and the variance ratio
    ``Var B(at) / Var B(t)`` with a delta-method standard error.
    """
    if not a > 0:
        raise ValueError("a must be > 0")
    g = ens.grid
    if t is None:
        cands = [x for x in g.points[1:] if g.t0 <= a * x <= g.t1 and _on_grid(g, a * x)]
        if not cands:
            raise ValueError(f"no grid point t with a*t on the grid for a={a}")
        t = cands[0]
    if not (_on_grid(g, t) and _on_grid(g, a * t)):
        raise ValueError(f"grid does not contain both t={t} and a*t={a * t}")
    x = ens.paths[:, g.index_of(a * t)]
    y = ens.paths[:, g.index_of(t)]
    H = ens.h.h
    ks = stats.ks_2samp(x, a**H * y)
    n = len(x)
    vx, vy = np.mean(x * x), np.mean(y * y)
    # delta method on the ratio of two correlated second moments
    c = np.cov(np.vstack([x * x, y * y]))
    se = sqrt(max((c[0, 0] / vy**2 - 2 * vx * c[0, 1] / vy**3 + vx**2 * c[1, 1] / vy**4) / n, 0.0))
    return SelfSimilarityReport(a, float(t), float(ks.statistic), float(ks.pvalue), vx / vy, se, a ** (2 * H))


def _on_grid(g: TimeGrid, t: float) -> bool:
    try:
        g.index_of(t)
        return True
    except ValueError:
        return False


@dataclass(frozen=True)
class HolderReport:
    alpha: float
    lags: tuple[int, ...]
    moments: tuple[float, ...]
    slope: float
    ci: tuple[float, float]
    expected_slope: float

    @property
    def covered(self) -> bool:
        return self.ci[0] <= self.expected_slope <= self.ci[1]


def holder_moment_check(ens: PathEnsemble, alpha: float, lags: tuple[int, ...] | None = None,
                        n_boot: int = 400, level: float = 0.99) -> HolderReport:
    """Log-log slope of ``E|B(t + k dt) - B(t)|^alpha`` against the lag.

    The confidence interval is a percentile bootstrap over paths.
    """
    if alpha not in (1, 2, 4):
        raise ValueError("alpha must be one of 1, 2, 4")
    n = ens.grid.n
    if lags is None:
        lags = tuple(2**i for i in range(int(np.log2(max(n // 2, 1))) + 1))
    if len(lags) < 3 or max(lags) > n:
        raise ValueError("need at least three lags that fit in the grid")
    P = ens.paths
    per_path = np.stack([np.mean(np.abs(P[:, k:] - P[:, :-k]) ** alpha, axis=1) for k in lags], axis=1)
    x = np.log(np.asarray(lags, dtype=float) * ens.grid.dt)

    def slope(rows: np.ndarray) -> float:
        return float(np.polyfit(x, np.log(per_path[rows].mean(axis=0)), 1)[0])

    full = slope(np.arange(len(P)))
    rng = ens.seed.rng(99, 0)
    boots = np.array([slope(rng.integers(0, len(P), len(P))) for _ in range(n_boot)])
    q = (1 - level) / 2
    lo, hi = np.quantile(boots, [q, 1 - q])
    return HolderReport(float(alpha), tuple(lags), tuple(per_path.mean(axis=0)), full, (float(lo), float(hi)),
                        alpha * ens.h.h)
