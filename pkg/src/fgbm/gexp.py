"""Sublinear expectation engines.

* scenario Monte Carlo: ``E^[X] = max_theta E_theta[X]`` over a finite family,
* the G-heat (Barenblatt) equation ``u_t = G(u_xx)`` by a monotone explicit scheme,
* the drift-removal kernel ``phi = M_H^{-1} g'`` of the G-Girsanov transform.
"""
from __future__ import annotations

import csv
import statistics
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .core import HurstIndex, ScenarioFamily, SeedSpec, TimeGrid, VolatilityBand, VolatilityScenario, as_hurst
from .fracops import (
    OperatorParams,
    SampledFunction,
    apply_MH,
    apply_MH_inverse,
    mh_constant,
    mh_indicator,
    mh_piecewise_constant,
)
from .synth import PathEnsemble, UpperLowerStat, sup_inf

__all__ = [
    "GFunction",
    "g_function",
    "PdeSolution",
    "solve_g_heat",
    "exact_mean",
    "upper_lower_expectation_mc",
    "DriftRemoval",
    "girsanov_phi",
    "girsanov_phi_closed_form",
]


@dataclass(frozen=True)
class GFunction:
    """``G(a) = (sigma_hi^2 a^+ - sigma_lo^2 a^-) / 2``."""

    band: VolatilityBand

    def __call__(self, a):
        a = np.asarray(a, dtype=float)
        out = 0.5 * np.where(a >= 0, self.band.sigma_hi**2 * a, self.band.sigma_lo**2 * a)
        return float(out) if out.ndim == 0 else out

    def optimal_variance(self, a):
        """The variance attaining the supremum in ``G(a) = sup_s s a / 2``."""
        return np.where(np.asarray(a) >= 0, self.band.sigma_hi**2, self.band.sigma_lo**2)


def g_function(alpha, band: VolatilityBand):
    return GFunction(band)(alpha)


# -- PDE ---------------------------------------------------------------------

@dataclass(frozen=True)
class PdeSolution:
    u: np.ndarray
    tgrid: TimeGrid
    xgrid: TimeGrid
    band: VolatilityBand
    scheme: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        if not np.all(np.isfinite(self.u)):
            raise FloatingPointError("PDE solution contains non-finite values")

    def value(self, t: float, x: float) -> float:
        """``u(t, x)``; ``t`` must be a time node, ``x`` is interpolated linearly."""
        i = self.tgrid.index_of(t)
        return float(np.interp(x, self.xgrid.points, self.u[i]))

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["t"] + [repr(float(x)) for x in self.xgrid.points])
            for t, row in zip(self.tgrid.points, self.u):
                w.writerow([repr(float(t))] + [repr(float(v)) for v in row])


def solve_g_heat(phi: SampledFunction, band: VolatilityBand, tgrid: TimeGrid, xgrid: TimeGrid | None = None,
                 log_price: bool = False, rate: float = 0.0) -> PdeSolution:
    """Solve ``u_t = G(u_xx)``, ``u(0, .) = phi`` forward in time.

    Explicit Euler in time, central differences in space (upwind drift when
    central differencing would break monotonicity).  At every node the
    variance is ``sigma_hi^2`` where the discrete second difference is
    non-negative and ``sigma_lo^2`` elsewhere, which is where ``G`` is attained.

    With ``log_price=True`` the unknown is a price in log-spot coordinates
    ``y`` and the equation becomes
    ``U_t = G(U_yy - U_y) + r U_y - r U`` (time to maturity ``t``).

    Boundary values: the terminal data's curvature is frozen at each end
    (``u_b(t) = phi(x_b) + t G(phi''(x_b))``); in log-price mode the data are
    continued linearly in the spot price, ``U_b = a e^y + b e^(-r t)``.
    """
    xgrid = xgrid or phi.grid
    if xgrid != phi.grid:
        raise ValueError("terminal data must be sampled on the space grid")
    if tgrid.t0 != 0.0:
        raise ValueError("time grid starts at 0")
    dt, dx = tgrid.dt, xgrid.dt
    shi2, slo2 = band.sigma_hi**2, band.sigma_lo**2
    r = float(rate) if log_price else 0.0
    if log_price and dx > 2.0:
        raise ValueError("log-price scheme needs dx <= 2 for monotonicity")
    # central drift stays monotone while |r - sigma^2/2| dx <= sigma^2 for both extremes
    central = log_price and all(abs(r - s2 / 2) * dx <= s2 for s2 in (slo2, shi2))
    cfl = shi2 * dt / dx**2 + abs(r) * dt / dx + max(r, 0.0) * dt
    if cfl > 1.0 + 1e-12:
        need = dt / cfl
        raise ValueError(f"explicit scheme is not monotone: sigma_hi^2 dt/dx^2 = {cfl:.4g} > 1; "
                         f"use dt <= {need:.4g} (at least {int(np.ceil(tgrid.horizon / need))} time steps)")
    G = GFunction(band)
    u = np.empty((tgrid.n + 1, xgrid.n + 1))
    u[0] = phi.values
    x = xgrid.points
    times = tgrid.points

    if log_price:
        S = np.exp(x)
        slope_lo = (phi.values[1] - phi.values[0]) / (S[1] - S[0])
        slope_hi = (phi.values[-1] - phi.values[-2]) / (S[-1] - S[-2])
        icpt_lo = phi.values[0] - slope_lo * S[0]
        icpt_hi = phi.values[-1] - slope_hi * S[-1]

        def boundary(t):
            disc = np.exp(-r * t)
            return slope_lo * S[0] + icpt_lo * disc, slope_hi * S[-1] + icpt_hi * disc
    else:
        curv = np.diff(phi.values, 2) / dx**2
        g_lo, g_hi = G(curv[0]), G(curv[-1])

        def boundary(t):
            return phi.values[0] + t * g_lo, phi.values[-1] + t * g_hi

    for n in range(tgrid.n):
        v = u[n]
        d2 = (v[2:] - 2 * v[1:-1] + v[:-2]) / dx**2
        if log_price:
            d1 = (v[2:] - v[:-2]) / (2 * dx)
            gamma_ = d2 - d1
            if central:
                up = d1
            elif r >= 0:
                up = (v[2:] - v[1:-1]) / dx
            else:
                up = (v[1:-1] - v[:-2]) / dx
            rhs = 0.5 * G.optimal_variance(gamma_) * gamma_ + r * up - r * v[1:-1]
        else:
            rhs = G(d2)
        new = np.empty_like(v)
        new[1:-1] = v[1:-1] + dt * rhs
        new[0], new[-1] = boundary(times[n + 1])
        if not np.all(np.isfinite(new)):
            bad = int(np.flatnonzero(~np.isfinite(new))[0])
            raise FloatingPointError(f"non-finite value at time step {n + 1}, node {bad} (x={x[bad]:.6g})")
        u[n + 1] = new
    scheme = {"dt": dt, "dx": dx, "cfl": cfl, "drift": "central" if central else "upwind", "boundary": "linear-in-spot" if log_price else "frozen-curvature",
              "log_price": log_price, "rate": r}
    return PdeSolution(u, tgrid, xgrid, band, scheme)


# -- Monte Carlo -------------------------------------------------------------

def exact_mean(x: np.ndarray) -> float:
    """Correctly rounded sample mean (exact rational summation).

    Monotone in the data and exact on constants, so the estimator inherits
    those two axioms without rounding caveats.
    """
    return float(statistics.mean(np.asarray(x, dtype=float).ravel().tolist()))


def upper_lower_expectation_mc(payoff: Callable[[np.ndarray], np.ndarray], family: ScenarioFamily,
                               generator: Callable[[VolatilityScenario, int, SeedSpec], object], num_paths: int,
                               seed: SeedSpec, clip: tuple[float, float] | None = None) -> UpperLowerStat:
    """Upper and lower expectation of ``payoff(paths)`` over the family.

    ``generator(scenario, num_paths, seed)`` returns a :class:`PathEnsemble` or
    an array of paths; every scenario is driven by the same seed (common random
    numbers).  ``clip`` bounds the payoff and records the clipped fraction.
    """
    if len(family) == 0:
        raise ValueError("empty scenario family")
    means, errs, clipped = [], [], []
    for scen in family:
        paths = generator(scen, num_paths, seed)
        if isinstance(paths, PathEnsemble):
            paths = paths.paths
        x = np.asarray(payoff(np.asarray(paths)), dtype=float)
        if x.shape != (num_paths,):
            raise ValueError("payoff must return one value per path")
        if clip is not None:
            clipped.append(float(np.mean((x < clip[0]) | (x > clip[1]))))
            x = np.clip(x, *clip)
        means.append(exact_mean(x))
        errs.append(float(np.std(x, ddof=1) / np.sqrt(num_paths)) if num_paths > 1 else np.inf)
    stat = sup_inf(np.array(means), np.array(errs), tuple(s.label for s in family))
    if clip is not None:
        stat.meta["clip_fraction"] = max(clipped)
    stat.meta["per_scenario"] = dict(zip(stat.labels, means))
    return stat


# -- Girsanov drift removal ---------------------------------------------------

@dataclass(frozen=True)
class DriftRemoval:
    """``phi`` with ``M_H phi = g'`` on ``[0, T]``, plus validation residuals."""

    g: SampledFunction
    phi: SampledFunction
    h: HurstIndex
    T: float
    roundtrip_residual: float
    roundtrip_residual_time_domain: float
    tolerance: float

    @property
    def flagged(self) -> bool:
        return max(self.roundtrip_residual, self.roundtrip_residual_time_domain) > self.tolerance

    def on_horizon(self) -> tuple[np.ndarray, np.ndarray]:
        x = self.phi.x
        m = (x >= 0) & (x <= self.T)
        return x[m], self.phi.values[m]


def girsanov_phi_closed_form(h: HurstIndex | float, T: float, A: float, t) -> np.ndarray:
    """``M_H^{-1}(A 1_(0,T))`` in closed form.

    Equal to ``A / (c_H c_(1-H)) M_(1-H) 1_(0,T)``, which on ``(0, T)`` is a
    constant multiple of ``t^(1/2-H) + (T-t)^(1/2-H)``.
    """
    H = as_hurst(h).h
    if H == 0.5:
        t = np.asarray(t, dtype=float)
        return A * ((t > 0) & (t < T)).astype(float)
    return A * mh_indicator(1 - H, 0.0, T, t) / (mh_constant(H) * mh_constant(1 - H))


def girsanov_phi(gprime: SampledFunction, h: HurstIndex | float, T: float, margin: float = 8.0,
                 edge: float = 0.05, tol: float = 0.02, pad: int = 8) -> DriftRemoval:
    """``phi = M_H^{-1}(g' 1_[0,T])`` on ``[-margin T, (1 + margin) T]``.

    ``g'`` is extended by zero outside ``[0, T]``.  The result is validated by
    applying ``M_H`` again, spectrally and through the time-domain closed form,
    and comparing with ``g'`` on ``(edge T, (1 - edge) T)``.
    """
    h = as_hurst(h)
    g0 = gprime.grid
    if abs(g0.t0) > 1e-12 or abs(g0.t1 - T) > 1e-12:
        raise ValueError("g' must be sampled on [0, T]")
    dt = g0.dt
    steps = int(round(margin * T / dt))
    grid = TimeGrid(-steps * dt, T + steps * dt, g0.n + 2 * steps)
    vals = np.zeros(grid.n + 1)
    vals[steps:steps + g0.n + 1] = gprime.values
    vals[steps] *= 0.5  # jump to zero at the window edges
    vals[steps + g0.n] *= 0.5
    ext = SampledFunction(grid, vals, (grid.t0, grid.t1))
    p = OperatorParams(h, pad)
    phi = apply_MH_inverse(ext, p)
    x = grid.points
    inner = (x > edge * T) & (x < (1 - edge) * T)
    target = vals[inner]
    scale = max(np.linalg.norm(target), 1e-300)
    back = apply_MH(phi, p).values[inner]
    edges = np.concatenate([x - dt / 2, [x[-1] + dt / 2]])
    back_td = mh_piecewise_constant(h, edges, phi.values, x[inner])
    if np.linalg.norm(target) == 0:
        r1 = float(np.linalg.norm(back))
        r2 = float(np.linalg.norm(back_td))
    else:
        r1 = float(np.linalg.norm(back - target) / scale)
        r2 = float(np.linalg.norm(back_td - target) / scale)
    return DriftRemoval(gprime, phi, h, T, r1, r2, tol)
