from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from fgbm.core import ScenarioFamily, SeedSpec, TimeGrid, VolatilityBand, make_scenario_family
from fgbm.fracops import SampledFunction
from fgbm.gexp import (
    GFunction,
    exact_mean,
    g_function,
    girsanov_phi,
    girsanov_phi_closed_form,
    solve_g_heat,
    upper_lower_expectation_mc,
)
from fgbm.synth import gen_cholesky_oracle, gen_moving_average

BAND = VolatilityBand(0.5, 1.0)
SMALL = VolatilityBand(0.1, 0.3)


def brownian_generator(H=0.5, n=8):
    """Exact constant-volatility paths, cached so repeated payoffs see identical draws."""
    grid = TimeGrid(0.0, 1.0, n)
    cache = {}

    def gen(scen, num, seed):
        key = (scen.label, num, seed.master_seed)
        if key not in cache:
            cache[key] = gen_cholesky_oracle(H, grid, scen.sigma, num, seed).paths
        return cache[key]

    return gen


def test_g_function_values():
    assert g_function(1.0, BAND) == 0.5
    assert g_function(-1.0, BAND) == -0.125
    np.testing.assert_allclose(GFunction(BAND)(np.array([2.0, -2.0, 0.0])), [1.0, -0.25, 0.0])
    flat = VolatilityBand(0.4, 0.4)
    a = np.linspace(-3, 3, 11)
    np.testing.assert_allclose(GFunction(flat)(a), 0.08 * a)


@given(st.floats(-10, 10), st.floats(-10, 10), st.floats(0, 5))
@settings(max_examples=60, deadline=None)
def test_g_is_sublinear(a, b, lam):
    G = GFunction(BAND)
    assert G(a + b) <= G(a) + G(b) + 1e-12
    assert G(lam * a) == pytest.approx(lam * G(a), abs=1e-12)
    if a <= b:
        assert G(a) <= G(b)


def heat(phi, band=BAND, T=1.0, L=6.0, nx=240):
    x = TimeGrid(-L, L, nx)
    dt = 0.9 * x.dt**2 / band.sigma_hi**2
    nt = int(np.ceil(T / dt))
    return solve_g_heat(SampledFunction.from_callable(phi, x), band, TimeGrid(0.0, T, nt))


def test_heat_quadratic_oracles():
    up = heat(lambda x: x**2)
    down = heat(lambda x: -(x**2))
    for x in (-1.0, 0.0, 0.7):
        assert up.value(1.0, x) == pytest.approx(x**2 + 1.0, abs=1e-10)
        assert down.value(1.0, x) == pytest.approx(-(x**2) - 0.25, abs=1e-10)


def test_heat_convex_payoff_uses_upper_volatility():
    sol = heat(lambda x: np.abs(x))
    exact = 1.0 * np.sqrt(2 / np.pi)  # E|sigma_hi B_1|
    assert sol.value(1.0, 0.0) == pytest.approx(exact, abs=2e-3)
    conc = heat(lambda x: -np.abs(x))
    assert conc.value(1.0, 0.0) == pytest.approx(-0.5 * np.sqrt(2 / np.pi), abs=2e-3)


def test_heat_mixed_payoff_lies_between_extremes():
    # a payoff that is neither convex nor concave: the G-value exceeds both constant-volatility values
    phi = lambda x: np.where(x > 0, x**2, -(x**2)) * np.exp(-(x**2) / 8)
    sol = heat(phi)
    x, w = np.polynomial.hermite_e.hermegauss(80)
    w = w / w.sum()
    for s in (0.5, 1.0):
        assert sol.value(1.0, 0.3) >= float(phi(0.3 + s * x) @ w) - 1e-3


def test_heat_cfl_error_suggests_step():
    x = TimeGrid(-1, 1, 100)
    phi = SampledFunction.from_callable(lambda v: v**2, x)
    with pytest.raises(ValueError, match="time steps"):
        solve_g_heat(phi, BAND, TimeGrid(0.0, 1.0, 10))


def test_heat_solution_csv(tmp_path):
    sol = heat(lambda x: x**2, nx=20)
    p = tmp_path / "u.csv"
    sol.to_csv(p)
    rows = p.read_text().splitlines()
    assert len(rows) == sol.tgrid.n + 2
    assert float(rows[-1].split(",")[0]) == 1.0


def test_mc_upper_lower_of_square():
    fam = ScenarioFamily.extremes(SMALL)
    stat = upper_lower_expectation_mc(lambda p: p[:, -1] ** 2, fam, brownian_generator(), 20000, SeedSpec(1))
    assert abs(stat.upper[()] - 0.09) < 3 * stat.stderr_upper[()]
    assert abs(stat.lower[()] - 0.01) < 3 * stat.stderr_lower[()]
    assert stat.meta["per_scenario"]["ConstantHi(0.3)"] == stat.upper[()]


def test_mc_mean_of_terminal_value_is_zero():
    fam = make_scenario_family(SMALL, 4, TimeGrid(0, 1, 1), n_breaks=2)
    gen = lambda scen, num, seed: gen_moving_average(0.7, TimeGrid(0.0, 1.0, 4), scen, num, seed, fine_cells=512)
    stat = upper_lower_expectation_mc(lambda p: p[:, -1], fam, gen, 5000, SeedSpec(3))
    assert abs(stat.upper[()]) < 3 * stat.stderr_upper[()] + 1e-12
    assert abs(stat.lower[()]) < 3 * stat.stderr_lower[()] + 1e-12


def test_pde_matches_mc_for_convex_payoff():
    # at H = 1/2 the G-heat solution is the sublinear expectation; for convex data sigma_hi attains it
    sol = heat(lambda x: np.maximum(x - 0.1, 0.0), band=SMALL, L=2.0, nx=200)
    fam = ScenarioFamily.extremes(SMALL)
    stat = upper_lower_expectation_mc(lambda p: np.maximum(p[:, -1] - 0.1, 0.0), fam, brownian_generator(),
                                      40000, SeedSpec(9))
    assert abs(sol.value(1.0, 0.0) - stat.upper[()]) < 3 * stat.stderr_upper[()] + 1e-3
    bs = 0.3 * stats.norm.pdf(0.1 / 0.3) - 0.1 * stats.norm.cdf(-0.1 / 0.3)
    assert sol.value(1.0, 0.0) == pytest.approx(bs, abs=1e-3)


def fixed_paths(num=4000):
    fam = ScenarioFamily.extremes(SMALL)
    gen = brownian_generator(0.3, 4)
    return fam, gen, num


@pytest.mark.parametrize("seed", [0, 1])
def test_sublinear_axioms(seed):
    fam, gen, num = fixed_paths()
    s = SeedSpec(seed)
    E = lambda f: upper_lower_expectation_mc(f, fam, gen, num, s).upper[()]
    X = lambda p: p[:, -1] ** 2
    Y = lambda p: np.sin(5 * p[:, 2])
    # monotonicity
    assert E(X) <= E(lambda p: X(p) + 0.01)
    # constants
    assert E(lambda p: 0 * p[:, 0] + 2.5) == 2.5
    # sub-additivity
    assert E(lambda p: X(p) + Y(p)) <= E(X) + E(Y) + 1e-15
    # positive homogeneity (lambda = 2 is exact in floating point)
    assert E(lambda p: 2 * X(p)) == 2 * E(X)
    # translation by constants
    assert E(lambda p: X(p) + 1.0) == pytest.approx(E(X) + 1.0, abs=1e-15)
    # lower = -upper(-X)
    low = upper_lower_expectation_mc(X, fam, gen, num, s).lower[()]
    assert low == -E(lambda p: -X(p))


def test_exact_mean_is_exact_on_constants():
    assert exact_mean(np.full(1001, 0.1)) == 0.1
    x = np.random.default_rng(0).standard_normal(999)
    assert exact_mean(x) <= exact_mean(x + 1e-12)


def test_mc_rejects_bad_payload():
    fam = ScenarioFamily.extremes(SMALL)
    with pytest.raises(ValueError):
        upper_lower_expectation_mc(lambda p: p, fam, brownian_generator(), 10, SeedSpec(0))
    with pytest.raises(ValueError):
        ScenarioFamily(SMALL, ())


def test_clip_records_fraction():
    fam = ScenarioFamily.extremes(SMALL)
    gen = lambda scen, num, seed: gen_cholesky_oracle(0.5, TimeGrid(0, 1, 4), scen.sigma, num, seed)
    stat = upper_lower_expectation_mc(lambda p: p[:, -1], fam, gen, 2000, SeedSpec(0), clip=(-0.2, 0.2))
    assert 0 < stat.meta["clip_fraction"] < 1
    assert stat.upper[()] <= 0.2


def test_girsanov_roundtrip_and_closed_form():
    g = SampledFunction.from_callable(lambda x: 1.0 + 0 * x, TimeGrid(0.0, 1.0, 1024))
    for H in (0.3, 0.7):
        d = girsanov_phi(g, H, 1.0)
        assert not d.flagged
        assert d.roundtrip_residual < 0.02
        t, phi = d.on_horizon()
        inner = (t > 0.05) & (t < 0.95)
        closed = girsanov_phi_closed_form(H, 1.0, 1.0, t[inner])
        assert np.max(np.abs(phi[inner] - closed)) / np.max(np.abs(closed)) < 0.02
        ref = t[inner] ** (0.5 - H) + (1 - t[inner]) ** (0.5 - H)
        assert np.corrcoef(phi[inner], ref)[0, 1] > 1 - 1e-6


def test_girsanov_identity_at_half():
    g = SampledFunction.from_callable(lambda x: np.cos(x), TimeGrid(0.0, 1.0, 256))
    d = girsanov_phi(g, 0.5, 1.0)
    t, phi = d.on_horizon()
    inner = (t > 0) & (t < 1)
    np.testing.assert_array_equal(phi[inner], np.cos(t[inner]))
    assert d.roundtrip_residual == 0.0


def test_girsanov_is_linear_in_drift():
    grid = TimeGrid(0.0, 1.0, 512)
    a = girsanov_phi(SampledFunction.from_callable(lambda x: 1.0 + 0 * x, grid), 0.7, 1.0)
    b = girsanov_phi(SampledFunction.from_callable(lambda x: 3.0 + 0 * x, grid), 0.7, 1.0)
    np.testing.assert_allclose(b.phi.values, 3 * a.phi.values, rtol=1e-10, atol=1e-14)


def test_girsanov_rejects_wrong_grid():
    g = SampledFunction.from_callable(lambda x: x, TimeGrid(0.0, 2.0, 64))
    with pytest.raises(ValueError):
        girsanov_phi(g, 0.7, 1.0)
