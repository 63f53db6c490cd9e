"""End-to-end acceptance checks.

Each test carries an ``acceptance`` marker; ``conftest.py`` prints one
PASS/FAIL line per check in the terminal summary.  Oracles are computed here
independently of the package wherever a closed form exists.
"""
from __future__ import annotations

import time
import warnings
from math import gamma, pi, sin

import numpy as np
import pytest

from fgbm.chaos import (
    ZERO,
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
from fgbm.core import ScenarioFamily, SeedSpec, TimeGrid, VolatilityBand
from fgbm.fracops import SampledFunction, parseval_closed_form, parseval_fourier, parseval_time_domain
from fgbm.gexp import girsanov_phi, girsanov_phi_closed_form, solve_g_heat, upper_lower_expectation_mc
from fgbm.market import MarketModel, Payoff, bs_closed_form, price_bid_ask
from fgbm.suites import run_suite
from fgbm.synth import (
    autocorr_closed_form,
    gen_cholesky_oracle,
    gen_moving_average,
    gen_wavelet,
    moving_average_matrix,
    wavelet_matrix,
)
from fgbm.wavelets import WaveletParams

BAND = VolatilityBand(0.1, 0.3)


def fbm_cov(H, s, t, sigma=1.0):
    """Independent closed form ``sigma^2/2 (s^2H + t^2H - |t-s|^2H)``."""
    return 0.5 * sigma**2 * (np.abs(s) ** (2 * H) + np.abs(t) ** (2 * H) - np.abs(t - s) ** (2 * H))


def rel_rms(a, b):
    return float(np.sqrt(np.mean((a - b) ** 2)) / np.sqrt(np.mean(b**2)))


@pytest.mark.acceptance("covariance band")
def test_covariance_band(record_property):
    t0 = time.perf_counter()
    grid = TimeGrid(0.0, 1.0, 16)
    t = grid.points[1:]
    worst = 0.0
    for H in (0.3, 0.5, 0.7):
        means, errs = [], []
        for scen in ScenarioFamily.extremes(BAND):
            P = gen_moving_average(H, grid, scen, 10_000, SeedSpec(0)).paths[:, 1:]
            prod = P[:, :, None] * P[:, None, :]
            means.append(prod.mean(axis=0))
            errs.append(prod.std(axis=0, ddof=1) / 100.0)
        means, errs = np.array(means), np.array(errs)
        iu, il = means.argmax(axis=0), means.argmin(axis=0)
        upper = np.take_along_axis(means, iu[None], 0)[0]
        lower = np.take_along_axis(means, il[None], 0)[0]
        se_u = np.take_along_axis(errs, iu[None], 0)[0]
        se_l = np.take_along_axis(errs, il[None], 0)[0]
        # s, t > 0 gives a positive kernel, so the supremum uses sigma_hi^2
        z_u = np.abs(upper - fbm_cov(H, t[:, None], t[None, :], 0.3)) / se_u
        z_l = np.abs(lower - fbm_cov(H, t[:, None], t[None, :], 0.1)) / se_l
        worst = max(worst, z_u.max(), z_l.max())
    secs = time.perf_counter() - t0
    record_property("max_z", f"{worst:.2f} (tol 3)")
    record_property("seconds", f"{secs:.1f}")
    assert worst < 3.0
    assert secs < 120


@pytest.mark.acceptance("cross-method synthesis")
def test_cross_method_synthesis(record_property):
    t0 = time.perf_counter()
    grid = TimeGrid(0.0, 1.0, 16)
    t = grid.points[1:]
    sigma = 0.2
    scen = ScenarioFamily.extremes(VolatilityBand(sigma, sigma))[0]
    n = 10_000
    worst_matrix, worst_sample = 0.0, 0.0
    for H in (0.3, 0.7):
        oracle = gen_cholesky_oracle(H, grid, sigma, n, SeedSpec(1)).paths[:, 1:]
        oracle_cov = oracle.T @ oracle / n
        exact = fbm_cov(H, t[:, None], t[None, :], sigma)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")  # the window-20 tail warning is expected here
            A, _ = moving_average_matrix(H, t, 1 / 4096, 20.0)
            ma = gen_moving_average(H, grid, scen, n, SeedSpec(2), window_factor=20.0).paths[:, 1:]
        W, _ = wavelet_matrix(H, t, WaveletParams(levels=10))
        wv = gen_wavelet(H, WaveletParams(levels=10), scen, n, SeedSpec(3), grid=grid).paths[:, 1:]
        # implied covariance of each method against the factorization oracle's law
        worst_matrix = max(worst_matrix, rel_rms(sigma**2 * A @ A.T, exact), rel_rms(sigma**2 * W @ W.T, exact))
        # ensembles against the oracle ensemble
        for paths in (ma, wv):
            worst_sample = max(worst_sample, rel_rms(paths.T @ paths / n, oracle_cov))
    secs = time.perf_counter() - t0
    record_property("implied_rms", f"{worst_matrix:.4f}")
    record_property("ensemble_rms", f"{worst_sample:.4f} (tol 0.05)")
    assert worst_matrix < 0.05 and worst_sample < 0.05
    assert secs < 300


@pytest.mark.acceptance("operator Parseval identity")
def test_operator_parseval(record_property):
    worst = 0.0
    for H in (0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8):
        exact = 1.0 / (sin(pi * H) * gamma(2 * H + 1))
        routes = [parseval_closed_form(H)]
        if H != 0.5:
            routes += [parseval_fourier(H), parseval_time_domain(H)]
        worst = max(worst, max(abs(r - exact) / exact for r in routes))
    record_property("max_rel_err", f"{worst:.2e} (tol 1e-3)")
    assert worst < 1e-3
    assert parseval_closed_form(0.5) == 1.0


@pytest.mark.acceptance("long-range dependence")
def test_long_range_dependence(record_property):
    t0 = time.perf_counter()
    for H in (0.3, 0.5, 0.7):
        for n in range(1, 11):
            base = 0.5 * ((n + 1) ** (2 * H) - 2 * n ** (2 * H) + (n - 1) ** (2 * H))
            assert autocorr_closed_form(n, H, BAND) == pytest.approx((0.09 * base, 0.01 * base), abs=1e-15)
    rep = run_suite("lrd")
    failed = [c.name for c in rep.checks if not c.passed]
    zmax = max(c.measured for c in rep.checks if c.name.startswith("lag"))
    secs = time.perf_counter() - t0
    record_property("max_z", f"{zmax:.2f} (tol 3)")
    record_property("regime_checks", "ok" if not failed else ",".join(failed))
    record_property("seconds", f"{secs:.1f}")
    assert not failed
    assert secs < 120


@pytest.mark.acceptance("Wick lemma")
def test_wick_lemma(record_property):
    worst = 0.0
    for T in (1.0, 2.0):
        nodes, w = time_quadrature(T)
        for H in (0.3, 0.5, 0.7):
            tr = TruncationSpec(2, 64)
            lhs = wick_ito_integral(fgbm_chaos(nodes, H, tr), H, T, quad=(nodes, w))
            BT = fgbm_chaos(T, H, tr)
            worst = max(worst, lhs.max_abs_diff(wick_power(BT, 2) * 0.5))
            # ordinary form: 1/2 B(T)^2 - 1/2 T^2H, whose order-0 coefficient vanishes
            sq = ordinary_power(BT, 2, T ** (2 * H))
            assert sq[ZERO] == T ** (2 * H)
            worst = max(worst, lhs.max_abs_diff(sq * 0.5 - 0.5 * T ** (2 * H)))
            assert lhs.dropped == 0.0
    record_property("max_coef_residual", f"{worst:.1e} (tol 1e-10)")
    assert worst < 1e-10


@pytest.mark.acceptance("fractional G-Ito formula")
def test_fractional_ito(record_property):
    t0 = time.perf_counter()
    coef, zmax = 0.0, 0.0
    for f in ("x2", "exp"):
        for H in (0.3, 0.5, 0.7):
            r = verify_fractional_ito(f, H, band=BAND, num_paths=20_000, seed=SeedSpec(11))
            coef = max(coef, r.coefficient_residual)
            zmax = max(zmax, *(abs(z) for z in r.mc_z_scores.values()))
    secs = time.perf_counter() - t0
    record_property("coef_residual", f"{coef:.1e} (tol 1e-6)")
    record_property("max_z", f"{zmax:.2f} (tol 3)")
    assert coef < 1e-6 and zmax < 3.0
    assert secs < 60


@pytest.mark.acceptance("Clark-Ocone reconstruction")
def test_clark_ocone(record_property):
    rng = np.random.default_rng(2024)
    tr = TruncationSpec(3, 32)
    basis = [np.eye(4)[i] for i in range(4)]  # every cubic is a combination of these
    worst = 0.0
    for H in (0.3, 0.5, 0.7):
        for coefs in basis + [rng.standard_normal(4) for _ in range(3)]:
            co = clark_ocone_polynomial(WickPolynomial.in_terminal_value(coefs), H, 1.0, tr)
            worst = max(worst, co.max_coefficient_error)
            assert co.mean == pytest.approx(coefs[0])
    record_property("max_coef_error", f"{worst:.1e} (tol 1e-10)")
    assert worst < 1e-10


@pytest.mark.acceptance("G-heat solver")
def test_g_heat(record_property):
    x = TimeGrid(-10.0, 10.0, 400)
    tg = TimeGrid(0.0, 1.0, 400)
    errs = []
    sq = SampledFunction.from_callable(lambda v: v**2, x)
    neg = SampledFunction.from_callable(lambda v: -(v**2), x)
    flat = VolatilityBand(0.7, 0.7)
    errs.append(abs(solve_g_heat(sq, flat, tg).value(1.0, 0.0) - 0.49) / 0.49)
    band = VolatilityBand(0.5, 1.0)
    errs.append(abs(solve_g_heat(sq, band, tg).value(1.0, 0.0) - 1.0))
    errs.append(abs(solve_g_heat(neg, band, tg).value(1.0, 0.0) + 0.25) / 0.25)
    record_property("max_rel_err", f"{max(errs):.1e} (tol 5e-3)")
    assert max(errs) < 5e-3


@pytest.mark.acceptance("bid-ask pricing")
def test_bid_ask(record_property):
    m = MarketModel(100.0, 0.0, 0.5, BAND, 1.0)
    call = Payoff.call(100.0)
    hi, lo = bs_closed_form(100, 100, 0, 0.09, 1), bs_closed_form(100, 100, 0, 0.01, 1)
    pde = price_bid_ask(m, call, "Pde", grid_n=800)
    pde_err = max(abs(pde.bid - hi) / hi, abs(pde.ask - lo) / lo)
    mc = price_bid_ask(m, call, "ScenarioMC", num_paths=100_000, seed=SeedSpec(8))
    z = max(abs(mc.bid - hi) / mc.diagnostics["stderr_bid"], abs(mc.ask - lo) / mc.diagnostics["stderr_ask"])
    exact = True
    for T in (0.5, 1.0, 3.0):
        q = price_bid_ask(MarketModel(100.0, 0.0, 0.7, BAND, T), call, "PerScenarioClosedForm")
        exact &= q.bid == bs_closed_form(100, 100, 0, 0.09 * T**1.4, T)
        exact &= q.ask == bs_closed_form(100, 100, 0, 0.01 * T**1.4, T)
    ordered = all(q.bid >= q.ask for q in (pde, mc))
    for K in (60.0, 100.0, 150.0):
        for kind in ("Call", "Put"):
            for H in (0.3, 0.7):
                mm = MarketModel(100.0, 0.03, H, BAND, 1.0)
                ordered &= all(q.bid >= q.ask for q in (
                    price_bid_ask(mm, Payoff(kind, K), "PerScenarioClosedForm"),
                    price_bid_ask(mm, Payoff(kind, K), "ScenarioMC", num_paths=5000, seed=SeedSpec(1))))
    record_property("pde_rel_err", f"{pde_err:.1e} (tol 5e-3)")
    record_property("mc_max_z", f"{z:.2f} (tol 3)")
    record_property("closed_form_exact", exact)
    record_property("bid_ge_ask", ordered)
    assert pde_err < 5e-3 and z < 3.0 and exact and ordered


@pytest.mark.acceptance("G-Girsanov drift removal")
def test_girsanov(record_property):
    g = SampledFunction.from_callable(lambda v: 1.0 + 0 * v, TimeGrid(0.0, 1.0, 1024))
    worst_rt, worst_corr = 0.0, 1.0
    for H in (0.3, 0.7):
        d = girsanov_phi(g, H, 1.0)
        worst_rt = max(worst_rt, d.roundtrip_residual, d.roundtrip_residual_time_domain)
        t, phi = d.on_horizon()
        inner = (t > 0.05) & (t < 0.95)
        ref = (1 - t[inner]) ** (0.5 - H) + t[inner] ** (0.5 - H)
        worst_corr = min(worst_corr, np.corrcoef(phi[inner], ref)[0, 1])
        assert np.allclose(phi[inner], girsanov_phi_closed_form(H, 1.0, 1.0, t[inner]), rtol=0.02)
    d = girsanov_phi(g, 0.5, 1.0)
    t, phi = d.on_horizon()
    identity = bool(np.all(phi[(t > 0) & (t < 1)] == 1.0))
    record_property("roundtrip", f"{worst_rt:.2e} (tol 2e-2)")
    record_property("one_minus_shape_corr", f"{1 - worst_corr:.1e} (tol 1e-3)")
    record_property("identity_at_half", identity)
    assert worst_rt < 0.02 and worst_corr > 0.999 and identity


@pytest.mark.acceptance("sublinear expectation axioms")
def test_sublinear_axioms(record_property):
    rng = np.random.default_rng(7)
    grid = TimeGrid(0.0, 1.0, 8)
    fam = ScenarioFamily.extremes(BAND)
    cache = {}

    def gen(scen, num, seed):  # common random numbers across payoffs
        key = scen.label
        if key not in cache:
            cache[key] = gen_cholesky_oracle(0.7, grid, scen.sigma, num, seed).paths
        return cache[key]

    n, seed = 20_000, SeedSpec(12)

    def E(f):
        return upper_lower_expectation_mc(f, fam, gen, n, seed)

    checks = {"monotone": True, "constants": True, "subadditive": True, "homogeneous": True}
    for _ in range(20):
        a, b, c = rng.normal(size=3)
        k = int(rng.integers(1, 9))
        X = lambda p, a=a, k=k: a * p[:, k] ** 2 + np.sin(b * p[:, -1])
        Y = lambda p, c=c, k=k: np.maximum(p[:, k] - c * 0.1, 0.0) - p[:, -1] ** 3
        d = abs(rng.normal()) * 0.01
        checks["monotone"] &= E(X).upper[()] <= E(lambda p: X(p) + d).upper[()]
        const = float(rng.normal())
        checks["constants"] &= E(lambda p: const + 0 * p[:, 0]).upper[()] == const
        ex, ey, exy = E(X), E(Y), E(lambda p: X(p) + Y(p))
        tol = 3 * np.sqrt(ex.stderr_upper[()] ** 2 + ey.stderr_upper[()] ** 2 + exy.stderr_upper[()] ** 2)
        checks["subadditive"] &= exy.upper[()] <= ex.upper[()] + ey.upper[()] + tol
        lam = float(2.0 ** rng.integers(-3, 4))  # powers of two scale without rounding
        checks["homogeneous"] &= E(lambda p: lam * X(p)).upper[()] == lam * ex.upper[()]
    record_property("axioms", ", ".join(f"{k}={'ok' if v else 'FAIL'}" for k, v in checks.items()))
    assert all(checks.values())
