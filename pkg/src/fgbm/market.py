"""European claims on a geometric fGBm asset under volatility uncertainty.

Naming follows the super-hedging convention used throughout the package:
``bid = sup_theta E_theta[e^{-rT} xi]`` and ``ask = inf_theta E_theta[e^{-rT} xi]``,
so ``bid >= ask``.  This is the reverse of the usual market-quote wording.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from math import exp, log, sqrt
from typing import Sequence

import numpy as np
from scipy.stats import norm

from .chaos import ChaosExpansion, TruncationSpec, WickPolynomial, clark_ocone_integrand
from .core import (
    HurstIndex,
    ScenarioFamily,
    SeedSpec,
    TimeGrid,
    VolatilityBand,
    VolatilityScenario,
    as_hurst,
    make_scenario_family,
)
from .fracops import SampledFunction
from .gexp import exact_mean, solve_g_heat
from .synth import moving_average_matrix

__all__ = [
    "MarketModel",
    "Payoff",
    "PriceQuote",
    "HedgeRatio",
    "terminal_price",
    "terminal_variance",
    "bs_closed_form",
    "price_bid_ask",
    "hedge_ratio",
]

ENGINES = ("ScenarioMC", "Pde", "PerScenarioClosedForm")


@dataclass(frozen=True)
class MarketModel:
    spot: float
    rate: float
    h: HurstIndex
    band: VolatilityBand
    horizon: float
    drift: float = 0.0

    def __post_init__(self) -> None:
        object.__setattr__(self, "h", as_hurst(self.h))
        if not self.spot > 0:
            raise ValueError("spot must be > 0")
        if not self.horizon > 0:
            raise ValueError("maturity must be > 0")

    def to_dict(self) -> dict:
        return {"spot": self.spot, "rate": self.rate, "hurst": self.h.h, "sigma_lo": self.band.sigma_lo,
                "sigma_hi": self.band.sigma_hi, "maturity": self.horizon, "drift": self.drift}


@dataclass(frozen=True)
class Payoff:
    """``Call(K)``, ``Put(K)``, ``PolynomialInS_T(coefficients)`` or ``PolynomialWick(polynomial)``."""

    kind: str
    strike: float | None = None
    coefficients: tuple[float, ...] = ()
    polynomial: WickPolynomial | None = None

    def __post_init__(self) -> None:
        if self.kind in ("Call", "Put"):
            if self.strike is None or not self.strike > 0:
                raise ValueError("strike must be > 0")
        elif self.kind == "PolynomialInS_T":
            if not self.coefficients:
                raise ValueError("polynomial payoff needs coefficients")
            object.__setattr__(self, "coefficients", tuple(float(c) for c in self.coefficients))
        elif self.kind == "PolynomialWick":
            if not isinstance(self.polynomial, WickPolynomial):
                raise ValueError("PolynomialWick needs a WickPolynomial")
        else:
            raise ValueError(f"unknown payoff kind {self.kind!r}")

    @classmethod
    def call(cls, K: float) -> "Payoff":
        return cls("Call", K)

    @classmethod
    def put(cls, K: float) -> "Payoff":
        return cls("Put", K)

    @property
    def is_vanilla(self) -> bool:
        return self.kind in ("Call", "Put")

    def __call__(self, S):
        S = np.asarray(S, dtype=float)
        if self.kind == "Call":
            return np.maximum(S - self.strike, 0.0)
        if self.kind == "Put":
            return np.maximum(self.strike - S, 0.0)
        if self.kind == "PolynomialInS_T":
            return np.polynomial.polynomial.polyval(S, self.coefficients)
        raise ValueError("Wick-polynomial claims are functionals of the noise, not of S_T")

    def to_dict(self) -> dict:
        return {"kind": self.kind, "strike": self.strike, "coefficients": list(self.coefficients)}


def terminal_variance(model: MarketModel, scenario: VolatilityScenario, fine_cells: int = 4096) -> float:
    """Variance of ``B_H(T)`` under a scenario.

    ``sigma^2 T^2H`` for constant scenarios; otherwise the exact variance of the
    moving-average discretisation with the scenario modulating the increments.
    """
    H, T = model.h.h, model.horizon
    if scenario.is_constant:
        return scenario.sigma**2 * T ** (2 * H)
    A, edges = moving_average_matrix(H, np.array([T]), T / fine_cells, 1e5 * T)
    sig = np.asarray(scenario(edges[:-1]), dtype=float)
    return float(np.sum((A[0] * sig) ** 2))


def terminal_price(model: MarketModel, scenario: VolatilityScenario | float, z):
    """``S_T = x exp(r T + sigma z T^H - sigma^2 T^2H / 2)`` for standard normal ``z``."""
    if isinstance(scenario, VolatilityScenario):
        v = terminal_variance(model, scenario)
    else:
        v = float(scenario) ** 2 * model.horizon ** (2 * model.h.h)
    z = np.asarray(z, dtype=float)
    out = model.spot * np.exp(model.rate * model.horizon + sqrt(v) * z - 0.5 * v)
    return float(out) if out.ndim == 0 else out


def bs_closed_form(x: float, K: float, r: float, v: float, T: float, kind: str = "Call",
                   return_flag: bool = False):
    """Lognormal (Black-Scholes form) price with total variance ``v``.

    For ``v <= 0`` the discounted intrinsic value of the forward is returned
    and, with ``return_flag=True``, flagged.
    """
    if not K > 0:
        raise ValueError("strike must be > 0")
    disc = exp(-r * T)
    fwd = x * exp(r * T)
    degenerate = not v > 0
    if degenerate:
        val = disc * (max(fwd - K, 0.0) if kind == "Call" else max(K - fwd, 0.0))
    else:
        sd = sqrt(v)
        d1 = (log(fwd / K) + 0.5 * v) / sd
        d2 = d1 - sd
        if kind == "Call":
            val = x * norm.cdf(d1) - K * disc * norm.cdf(d2)
        elif kind == "Put":
            val = K * disc * norm.cdf(-d2) - x * norm.cdf(-d1)
        else:
            raise ValueError(f"unsupported kind {kind!r}")
    val = float(val)
    return (val, degenerate) if return_flag else val


@dataclass(frozen=True)
class PriceQuote:
    bid: float
    ask: float
    engine: str
    diagnostics: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.engine not in ENGINES:
            raise ValueError(f"unknown engine {self.engine!r}")
        if self.bid < self.ask:
            raise ArithmeticError(f"bid {self.bid} below ask {self.ask}: sup < inf is impossible")

    @property
    def spread(self) -> float:
        return self.bid - self.ask

    def to_dict(self) -> dict:
        d = self.diagnostics
        return {"bid": self.bid, "ask": self.ask, "engine": self.engine,
                "attaining_scenario_bid": d.get("attaining_bid"), "attaining_scenario_ask": d.get("attaining_ask"),
                "stderr_or_grid_error": d.get("stderr", d.get("grid_error")), "diagnostics": d}

    def to_json(self, **extra) -> str:
        return json.dumps({**self.to_dict(), **extra}, indent=2, sort_keys=True, default=str)


def _default_family(model: MarketModel) -> ScenarioFamily:
    return make_scenario_family(model.band, 2, TimeGrid(0.0, model.horizon, 1))


def _pde_price(model: MarketModel, payoff: Payoff, nx: int, sign: float) -> float:
    T, x0 = model.horizon, model.spot
    width = 6.0 * model.band.sigma_hi * sqrt(T) + 1.0
    if payoff.strike is not None:
        width += abs(log(payoff.strike / x0))
    half = nx // 2
    dy = width / half
    ygrid = TimeGrid(log(x0) - half * dy, log(x0) + half * dy, 2 * half)
    cfl_rate = model.band.sigma_hi**2 / dy**2 + abs(model.rate) / dy + max(model.rate, 0.0)
    nt = int(np.ceil(T * cfl_rate * (1 + 1e-9)))
    tgrid = TimeGrid(0.0, T, max(nt, 1))
    phi = SampledFunction(ygrid, sign * payoff(np.exp(ygrid.points)))
    sol = solve_g_heat(phi, model.band, tgrid, log_price=True, rate=model.rate)
    return sign * sol.value(T, log(x0))


def price_bid_ask(model: MarketModel, payoff: Payoff, engine: str = "ScenarioMC",
                  family: ScenarioFamily | None = None, num_paths: int = 100_000, seed: SeedSpec | None = None,
                  grid_n: int = 800) -> PriceQuote:
    """Bid (sup over scenarios) and ask (inf) of ``e^{-rT} payoff(S_T)``.

    * ``ScenarioMC``: per-scenario Monte Carlo over ``terminal_price`` with
      common normals across scenarios.
    * ``Pde``: the Barenblatt equation in log-spot (only for ``H = 1/2``);
      ``grid_n`` space steps, time step at the stability limit.  The grid
      error is estimated against a half-resolution solve.
    * ``PerScenarioClosedForm``: lognormal formula with total variance
      ``sigma^2 T^2H`` for calls and puts on constant scenarios.
    """
    if engine not in ENGINES:
        raise ValueError(f"unknown engine {engine!r}; choose from {ENGINES}")
    if payoff.kind == "PolynomialWick":
        raise ValueError("Wick-polynomial claims are handled by hedge_ratio / chaos, not by price_bid_ask")
    T, r = model.horizon, model.rate
    disc = exp(-r * T)
    if engine == "Pde":
        if model.h.h != 0.5:
            raise ValueError(f"the Pde engine needs H = 1/2 (no pricing PDE is available for H = {model.h.h}); "
                             "use ScenarioMC or PerScenarioClosedForm")
        bid = _pde_price(model, payoff, grid_n, 1.0)
        ask = _pde_price(model, payoff, grid_n, -1.0)
        coarse_bid = _pde_price(model, payoff, grid_n // 2, 1.0)
        coarse_ask = _pde_price(model, payoff, grid_n // 2, -1.0)
        err = max(abs(bid - coarse_bid), abs(ask - coarse_ask)) / 3.0  # second-order Richardson estimate
        lo, hi = model.band.sigma_lo, model.band.sigma_hi
        return PriceQuote(max(bid, ask), min(bid, ask), engine,
                          {"grid_error": err, "grid_n": grid_n, "attaining_bid": f"pointwise sup (sigma in [{lo:g}, {hi:g}])",
                           "attaining_ask": f"pointwise inf (sigma in [{lo:g}, {hi:g}])"})
    family = family or _default_family(model)
    labels = [s.label for s in family]
    if engine == "PerScenarioClosedForm":
        if not payoff.is_vanilla:
            raise ValueError("closed-form engine prices calls and puts only")
        if not family.all_constant:
            raise ValueError("closed-form engine needs constant scenarios")
        prices = [bs_closed_form(model.spot, payoff.strike, r, terminal_variance(model, s), T, payoff.kind)
                  for s in family]
        ib, ia = int(np.argmax(prices)), int(np.argmin(prices))
        return PriceQuote(prices[ib], prices[ia], engine,
                          {"attaining_bid": labels[ib], "attaining_ask": labels[ia], "stderr": 0.0,
                           "per_scenario": dict(zip(labels, prices))})
    seed = seed or SeedSpec(0)
    z = seed.rng(7, 0).standard_normal(num_paths)
    prices, errs = [], []
    for s in family:
        vals = disc * payoff(terminal_price(model, s, z))
        prices.append(exact_mean(vals))
        errs.append(float(np.std(vals, ddof=1) / sqrt(num_paths)))
    ib, ia = int(np.argmax(prices)), int(np.argmin(prices))
    return PriceQuote(prices[ib], prices[ia], engine,
                      {"attaining_bid": labels[ib], "attaining_ask": labels[ia], "stderr": max(errs[ib], errs[ia]),
                       "stderr_bid": errs[ib], "stderr_ask": errs[ia], "num_paths": num_paths,
                       "per_scenario": dict(zip(labels, prices))})


@dataclass(frozen=True)
class HedgeRatio:
    """Clark-Ocone integrand of a Wick-polynomial claim at time ``t``.

    ``psi`` is the chaos expansion (unit volatility); the sample arrays are
    evaluated along simulated values of ``B_H(t)`` under a constant scenario.
    """

    t: float
    psi: ChaosExpansion
    B_t: np.ndarray
    psi_samples: np.ndarray
    S_t: np.ndarray
    ratio: np.ndarray


def hedge_ratio(model: MarketModel, payoff: Payoff, t: float, sigma: float | None = None,
                B_t: np.ndarray | None = None, num_samples: int = 1, seed: SeedSpec | None = None,
                trunc: TruncationSpec | None = None) -> HedgeRatio:
    """``v(t) = e^{-r(T-t)} psi(t) / S(t)`` for ``xi = P<>(X_1, ..., X_n)``.

    Sample values need a single variable ``X = B_H(T)``; then ``psi(t)`` is the
    Wick polynomial ``P'<>(B_H(t))``, evaluated with Wick powers taken against
    the scenario variance ``sigma^2 t^2H``.
    """
    if payoff.kind != "PolynomialWick":
        raise ValueError("hedge ratios are available for Wick-polynomial claims only")
    P = payoff.polynomial
    T, H = model.horizon, model.h.h
    if not 0 < t <= T:
        raise ValueError("t must lie in (0, T]")
    trunc = trunc or TruncationSpec(max_order=max(P.degree, 1), K=32)
    psi = clark_ocone_integrand(P, H, t, trunc).at(0)
    sigma = model.band.sigma_hi if sigma is None else sigma
    if not model.band.contains(sigma):
        raise ValueError("sigma lies outside the volatility band")
    if P.n_vars != 1 or callable(P.integrands[0]) or P.integrands[0] != 1.0:
        raise ValueError("sample evaluation needs a polynomial in B_H(T)")
    var = sigma**2 * t ** (2 * H)
    if B_t is None:
        seed = seed or SeedSpec(0)
        B_t = sqrt(var) * seed.rng(11, 0).standard_normal(num_samples)
    B_t = np.asarray(B_t, dtype=float)
    dP = P.partial(0)
    psi_s = dP.evaluate_samples(B_t, var) if dP.terms else np.zeros_like(B_t)
    S_t = model.spot * np.exp(model.rate * t + B_t - 0.5 * var)
    ratio = np.exp(-model.rate * (T - t)) * psi_s / S_t
    return HedgeRatio(float(t), psi, B_t, psi_s, S_t, ratio)
