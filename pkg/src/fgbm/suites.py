"""Property suites behind ``fgbm verify``.

Every suite returns a :class:`SuiteReport` of named checks with the measured
residual and the tolerance it was held to.  ``quick=True`` trims Monte Carlo
sizes for smoke runs; tolerances are unchanged.
"""
from __future__ import annotations

import time
from dataclasses import asdict, dataclass, field
from math import gamma, pi, sin

import numpy as np

from .chaos import (
    TruncationSpec,
    WickPolynomial,
    clark_ocone_polynomial,
    fgbm_chaos,
    ordinary_power,
    time_quadrature,
    verify_fractional_ito,
    wick_ito_integral,
    wick_power,
)
from .core import ScenarioFamily, SeedSpec, TimeGrid, VolatilityBand, VolatilityScenario
from .fracops import (
    OperatorParams,
    SampledFunction,
    apply_MH,
    apply_MH_inverse,
    mh_time_domain,
    parseval_closed_form,
    parseval_fourier,
    parseval_time_domain,
)
from .gexp import girsanov_phi, girsanov_phi_closed_form
from .synth import autocorr_closed_form, fbm_covariance, gen_moving_average, moving_average_matrix, wavelet_matrix
from .wavelets import WaveletParams

__all__ = ["Check", "SuiteReport", "SUITES", "run_suite"]


@dataclass(frozen=True)
class Check:
    name: str
    passed: bool
    measured: float
    tolerance: float
    details: dict = field(default_factory=dict)


@dataclass
class SuiteReport:
    suite: str
    checks: list[Check] = field(default_factory=list)
    seconds: float = 0.0

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def add(self, name: str, measured: float, tolerance: float, ok: bool | None = None, **details) -> None:
        measured = float(measured)
        ok = measured <= tolerance if ok is None else ok
        self.checks.append(Check(name, bool(ok), measured, float(tolerance), details))

    def to_dict(self) -> dict:
        return {"suite": self.suite, "passed": self.passed, "seconds": self.seconds,
                "checks": [asdict(c) for c in self.checks]}


def _rel(a: float, b: float) -> float:
    return abs(a - b) / abs(b)


def suite_operators(quick: bool = False) -> SuiteReport:
    rep = SuiteReport("operators")
    for H in (0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8):
        exact = 1.0 / (sin(pi * H) * gamma(2 * H + 1))
        rep.add(f"parseval_closed_form_H{H}", _rel(parseval_closed_form(H), exact), 1e-12)
        if H != 0.5:
            rep.add(f"parseval_fourier_H{H}", _rel(parseval_fourier(H), exact), 1e-3)
            rep.add(f"parseval_time_domain_H{H}", _rel(parseval_time_domain(H), exact), 1e-3)
    grid = TimeGrid(-8.0, 8.0, 2048)
    bump = SampledFunction.from_callable(lambda x: np.exp(-x**2), grid, (-8.0, 8.0))
    # M_H f has slowly decaying tails; the round trip loses what falls outside the window (error ~ 1/width)
    wide = TimeGrid(-128.0, 128.0, 16384)
    wbump = SampledFunction.from_callable(lambda x: np.exp(-x**2), wide, (-128.0, 128.0))
    core = np.abs(wide.points) <= 2
    for H in (0.3, 0.7):
        p = OperatorParams(H)
        back = apply_MH_inverse(apply_MH(wbump, p), p)
        rep.add(f"inverse_roundtrip_H{H}", np.max(np.abs(back.values - wbump.values)[core]), 1e-3, window=256.0)
        spectral = apply_MH(bump, p).values[grid.index_of(0.5)]
        td = mh_time_domain(H, lambda x: np.exp(-x**2), 0.5, (-8.0, 8.0))
        rep.add(f"spectral_vs_time_domain_H{H}", abs(spectral - td), 1e-3)
    ident = apply_MH(bump, OperatorParams(0.5))
    rep.add("identity_at_half", np.max(np.abs(ident.values - bump.values)), 0.0)
    return rep


def suite_noise(quick: bool = False) -> SuiteReport:
    rep = SuiteReport("noise")
    times = np.arange(1, 17) / 16
    for H in (0.3, 0.7):
        exact = fbm_covariance(H, times[:, None], times[None, :])
        A, _ = moving_average_matrix(H, times, 1 / 4096, 20.0)
        rms_ma = np.sqrt(np.mean((A @ A.T - exact) ** 2)) / np.sqrt(np.mean(exact**2))
        rep.add(f"movavg_covariance_rms_H{H}", rms_ma, 0.05, window=20.0)
        W, _ = wavelet_matrix(H, times, WaveletParams(levels=10))
        rms_w = np.sqrt(np.mean((W @ W.T - exact) ** 2)) / np.sqrt(np.mean(exact**2))
        rep.add(f"wavelet_covariance_rms_H{H}", rms_w, 0.05, levels=10)
    band = VolatilityBand(0.1, 0.3)
    n = 4000 if quick else 20000
    for H in (0.3, 0.7):
        scen = VolatilityScenario.constant(0.3, band)
        ens = gen_moving_average(H, TimeGrid(0.0, 1.0, 16), scen, n, SeedSpec(5))
        v = ens.paths[:, -1] ** 2
        z = (v.mean() - 0.09) / (v.std(ddof=1) / np.sqrt(n))
        exact_v = float(ens.metadata["exact_covariance"][-1, -1])
        rep.add(f"terminal_variance_z_H{H}", abs(z), 3.0, exact_discretised=exact_v)
    return rep


def suite_wick(quick: bool = False) -> SuiteReport:
    rep = SuiteReport("wick")
    K = 32 if quick else 64
    nodes, w = time_quadrature(1.0)
    for H in (0.3, 0.5, 0.7):
        tr = TruncationSpec(2, K)
        integral = wick_ito_integral(fgbm_chaos(nodes, H, tr), H, 1.0, quad=(nodes, w))
        BT = fgbm_chaos(1.0, H, tr)
        rep.add(f"int_B_dB_equals_half_wick_square_H{H}", integral.max_abs_diff(wick_power(BT, 2) * 0.5), 1e-10)
        ordinary = ordinary_power(BT, 2, 1.0) * 0.5 - 0.5
        rep.add(f"ordinary_form_H{H}", integral.max_abs_diff(ordinary), 1e-10)
        rep.add(f"zero_mean_H{H}", abs(integral.mean), 1e-12)
    return rep


def suite_ito(quick: bool = False) -> SuiteReport:
    rep = SuiteReport("ito")
    band = VolatilityBand(0.1, 0.3)
    n = 5000 if quick else 20000
    for f in ("x2", "exp"):
        for H in (0.3, 0.7):
            r = verify_fractional_ito(f, H, band=band, num_paths=n, seed=SeedSpec(11))
            rep.add(f"{f}_coefficients_H{H}", r.coefficient_residual, 1e-6)
            zmax = max(abs(v) for v in r.mc_z_scores.values())
            rep.add(f"{f}_monte_carlo_H{H}", zmax, 3.0, z_scores=r.mc_z_scores)
    return rep


def suite_clark_ocone(quick: bool = False) -> SuiteReport:
    rep = SuiteReport("clark-ocone")
    rng = np.random.default_rng(3)
    tr = TruncationSpec(3, 16 if quick else 32)
    for H in (0.3, 0.5, 0.7):
        for trial in range(2 if quick else 4):
            P = WickPolynomial.in_terminal_value(rng.standard_normal(4))
            co = clark_ocone_polynomial(P, H, 1.0, tr)
            rep.add(f"cubic_{trial}_H{H}", co.max_coefficient_error, 1e-10)
    return rep


def suite_girsanov(quick: bool = False) -> SuiteReport:
    rep = SuiteReport("girsanov")
    g = SampledFunction.from_callable(lambda x: 1.0 + 0 * x, TimeGrid(0.0, 1.0, 512 if quick else 1024))
    for H in (0.3, 0.5, 0.7):
        d = girsanov_phi(g, H, 1.0)
        rep.add(f"roundtrip_spectral_H{H}", d.roundtrip_residual, 0.02 if H != 0.5 else 1e-12)
        rep.add(f"roundtrip_time_domain_H{H}", d.roundtrip_residual_time_domain, 0.02 if H != 0.5 else 1e-12)
        t, phi = d.on_horizon()
        inner = (t > 0.05) & (t < 0.95)
        if H != 0.5:
            ref = t[inner] ** (0.5 - H) + (1 - t[inner]) ** (0.5 - H)
            corr = np.corrcoef(phi[inner], ref)[0, 1]
            rep.add(f"shape_correlation_H{H}", 1 - corr, 1e-3)
            closed = girsanov_phi_closed_form(H, 1.0, 1.0, t[inner])
            rep.add(f"closed_form_H{H}", np.max(np.abs(phi[inner] - closed)) / np.max(np.abs(closed)), 0.02)
        else:
            rep.add("identity_H0.5", np.max(np.abs(phi[inner] - 1.0)), 1e-12)
    return rep


def suite_lrd(quick: bool = False) -> SuiteReport:
    rep = SuiteReport("lrd")
    band = VolatilityBand(0.1, 0.3)
    n_paths = 3000 if quick else 10000
    lags = range(1, 11)
    for H in (0.3, 0.5, 0.7):
        family = ScenarioFamily.extremes(band)
        est = {}
        for scen in family:
            ens = gen_moving_average(H, TimeGrid(0.0, 1.0, 32), scen, n_paths, SeedSpec(17))
            # self-similarity: increments of step 1/32 rescaled to unit spacing
            inc = np.diff(ens.paths, axis=1) * 32.0**H
            for n in lags:
                prod = (inc[:, n:] * inc[:, :-n]).mean(axis=1)  # per-path average over positions
                est.setdefault(n, []).append((prod.mean(), prod.std(ddof=1) / np.sqrt(n_paths)))
        for n in lags:
            r_hi, r_lo = autocorr_closed_form(n, H, band)
            (m_lo, s_lo), (m_hi, s_hi) = est[n]
            upper, lower = max(r_hi, r_lo), min(r_hi, r_lo)
            # the attaining scenario flips with the sign of the covariance
            mc_up = m_hi if r_hi >= r_lo else m_lo
            se_up = s_hi if r_hi >= r_lo else s_lo
            mc_low = m_lo if r_hi >= r_lo else m_hi
            se_low = s_lo if r_hi >= r_lo else s_hi
            z = max(abs(mc_up - upper) / se_up, abs(mc_low - lower) / se_low)
            rep.add(f"lag{n}_H{H}", z, 3.0)
        if H == 0.5:
            worst = max(abs(x) for n in lags for x in autocorr_closed_form(n, H, band))
            rep.add("zero_at_half", worst, 0.0)
        else:
            base = np.array([autocorr_closed_form(n, H, VolatilityBand(1.0, 1.0))[0] for n in range(1, 2001)])
            partial = np.cumsum(base)
            if H < 0.5:
                # partial sums fall monotonically to -1/2; the gap is (1/2)((N+1)^2H - N^2H) <= H N^(2H-1)
                ok = bool(np.all(base < 0) and np.all(np.diff(partial) < 0) and np.all(partial > -0.5))
                bound = H * len(base) ** (2 * H - 1)
                gap = abs(partial[-1] + 0.5)
                rep.add(f"summable_limit_H{H}", gap, bound, ok=ok and gap <= bound)
            else:
                ok = bool(np.all(base > 0) and np.all(np.diff(partial) > 0))
                rep.add(f"divergent_partial_sums_H{H}", partial[-1], 0.0, ok=ok and partial[-1] > 10 * partial[9])
    return rep


SUITES = {
    "operators": suite_operators,
    "noise": suite_noise,
    "wick": suite_wick,
    "ito": suite_ito,
    "clark-ocone": suite_clark_ocone,
    "girsanov": suite_girsanov,
    "lrd": suite_lrd,
}


def run_suite(name: str, quick: bool = False) -> SuiteReport:
    if name not in SUITES:
        raise ValueError(f"unknown suite {name!r}; choose from {sorted(SUITES)}")
    t0 = time.perf_counter()
    rep = SUITES[name](quick)
    rep.seconds = time.perf_counter() - t0
    return rep
