from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fgbm.core import ScenarioFamily, SeedSpec, TimeGrid, VolatilityBand, VolatilityScenario
from fgbm.synth import (
    PathEnsemble,
    autocorr_closed_form,
    estimate_upper_lower_covariance,
    fbm_covariance,
    gen_cholesky_oracle,
    gen_moving_average,
    gen_wavelet,
    generate,
    holder_moment_check,
    moving_average_matrix,
    self_similarity_check,
    sup_inf,
    wavelet_matrix,
)
from fgbm.wavelets import WaveletParams, daubechies_filter, dwt_periodic, idwt_periodic

BAND = VolatilityBand(0.1, 0.3)
HI = VolatilityScenario.constant(0.3, BAND)
GRID16 = TimeGrid(0.0, 1.0, 16)


def zmax(sample_products: np.ndarray, target: np.ndarray) -> float:
    n = sample_products.shape[0]
    m = sample_products.mean(axis=0)
    se = sample_products.std(axis=0, ddof=1) / np.sqrt(n)
    mask = se > 0
    return float(np.max(np.abs(m - target)[mask] / se[mask]))


def outer_products(paths: np.ndarray) -> np.ndarray:
    return paths[:, :, None] * paths[:, None, :]


def test_closed_form_covariance():
    t = np.linspace(0, 2, 9)
    c = fbm_covariance(0.5, t[:, None], t[None, :])
    np.testing.assert_allclose(c, np.minimum.outer(t, t), atol=1e-15)
    c7 = fbm_covariance(0.7, t[:, None], t[None, :], sigma=0.3)
    np.testing.assert_allclose(c7, c7.T)
    assert c7[-1, -1] == pytest.approx(0.09 * 2**1.4)


def test_cholesky_determinism_and_threads():
    a = gen_cholesky_oracle(0.7, GRID16, 0.3, 50, SeedSpec(7), threads=1)
    b = gen_cholesky_oracle(0.7, GRID16, 0.3, 50, SeedSpec(7), threads=4)
    np.testing.assert_array_equal(a.paths, b.paths)
    c = gen_cholesky_oracle(0.7, GRID16, 0.3, 1, SeedSpec(7))
    # path 0 draws the same normals in any batch; BLAS blocking may change the last ulp
    np.testing.assert_allclose(c.paths[0], a.paths[0], rtol=1e-13, atol=1e-16)


def test_cholesky_covariance_within_three_stderr():
    g = TimeGrid(0, 1, 8)
    ens = gen_cholesky_oracle(0.7, g, 1.0, 10_000, SeedSpec(3))
    t = g.points[1:]
    P = ens.paths[:, 1:]
    assert zmax(outer_products(P), fbm_covariance(0.7, t[:, None], t[None, :])) < 3


def test_brownian_case_has_independent_increments():
    ens = gen_cholesky_oracle(0.5, GRID16, 0.3, 10_000, SeedSpec(4))
    inc = np.diff(ens.paths, axis=1)
    target = np.eye(16) * 0.09 / 16
    assert zmax(outer_products(inc), target) < 4  # 136 distinct entries


def test_moving_average_brownian_kernel_is_exact():
    times = np.linspace(0, 1, 9)
    A, _ = moving_average_matrix(0.5, times, 1 / 64, 20.0)
    np.testing.assert_allclose(A @ A.T, np.minimum.outer(times, times), atol=1e-13)


@pytest.mark.parametrize("H", [0.3, 0.5, 0.7])
def test_moving_average_terminal_variance(H):
    ens = gen_moving_average(H, GRID16, HI, 10_000, SeedSpec(5), fine_cells=1024)
    x2 = ens.paths[:, -1] ** 2
    assert abs(x2.mean() - 0.09) / (x2.std(ddof=1) / 100) < 3
    exact = ens.metadata["exact_covariance"]
    closed = fbm_covariance(H, GRID16.points[:, None], GRID16.points[None, :], 0.3)
    assert np.sqrt(np.mean((exact - closed) ** 2)) / np.sqrt(np.mean(closed**2)) < 5e-3


def test_moving_average_covariance_on_eight_points():
    g = TimeGrid(0, 1, 8)
    ens = gen_moving_average(0.7, g, VolatilityScenario.constant(1.0, VolatilityBand(1, 1)), 10_000, SeedSpec(6),
                             fine_cells=1024)
    t = g.points[1:]
    assert zmax(outer_products(ens.paths[:, 1:]), fbm_covariance(0.7, t[:, None], t[None, :])) < 3


def test_moving_average_window_warning():
    with pytest.warns(RuntimeWarning, match="truncated tail"):
        gen_moving_average(0.9, GRID16, HI, 4, SeedSpec(0), window_factor=20)
    with pytest.raises(ValueError):
        gen_moving_average(0.7, GRID16, HI, 4, SeedSpec(0), window_factor=5)


def test_non_constant_scenario_modulates_the_noise():
    bb = VolatilityScenario.bang_bang([0.5], BAND, start_high=False)
    ens = gen_moving_average(0.7, GRID16, bb, 10_000, SeedSpec(8), fine_cells=512)
    exact = ens.metadata["exact_covariance"]
    x2 = ens.paths[:, -1] ** 2
    assert abs(x2.mean() - exact[-1, -1]) / (x2.std(ddof=1) / 100) < 3
    lo = fbm_covariance(0.7, 1.0, 1.0, 0.1)
    hi = fbm_covariance(0.7, 1.0, 1.0, 0.3)
    assert lo < exact[-1, -1] < hi
    # early times only see the low level (plus the low past)
    assert exact[4, 4] == pytest.approx(fbm_covariance(0.7, 0.25, 0.25, 0.1), rel=5e-3)


def test_wavelet_zero_coefficients_give_zero_path():
    phi, pos = wavelet_matrix(0.7, GRID16.points, WaveletParams(levels=6), window=32)
    assert np.all(phi @ np.zeros(phi.shape[1]) == 0)
    assert phi.shape[1] == len(pos) == 32 << 6


def test_wavelet_brownian_variance():
    ens = gen_wavelet(0.5, WaveletParams(levels=8), HI, 10_000, SeedSpec(9))
    x2 = ens.paths[:, -1] ** 2
    assert abs(x2.mean() - 0.09) / (x2.std(ddof=1) / 100) < 3


def test_wavelet_covariance_against_oracle_at_j8():
    t = GRID16.points
    phi, _ = wavelet_matrix(0.3, t, WaveletParams(levels=8))
    closed = fbm_covariance(0.3, t[:, None], t[None, :])
    rms = np.sqrt(np.mean((phi @ phi.T - closed) ** 2)) / np.sqrt(np.mean(closed**2))
    assert rms < 0.05


def test_wavelet_rejects_unresolvable_grid():
    with pytest.raises(ValueError):
        gen_wavelet(0.7, WaveletParams(levels=3), HI, 2, SeedSpec(0), grid=GRID16)
    with pytest.raises(ValueError):
        gen_wavelet(0.7, WaveletParams(levels=6), HI, 2, SeedSpec(0), grid=TimeGrid(0, 2, 16))


@pytest.mark.parametrize("method", ["movavg", "wavelet"])
def test_thread_count_does_not_change_paths(method):
    kw = {"params": WaveletParams(levels=6)} if method == "wavelet" else {"fine_cells": 256}
    a = generate(method, 0.7, GRID16, HI, 40, SeedSpec(1), threads=1, **kw)
    b = generate(method, 0.7, GRID16, HI, 40, SeedSpec(1), threads=3, **kw)
    np.testing.assert_array_equal(a.paths, b.paths)


def test_generate_rejects_bad_requests():
    bb = VolatilityScenario.bang_bang([0.5], BAND)
    with pytest.raises(ValueError):
        generate("cholesky", 0.7, GRID16, bb, 4, SeedSpec(0))
    with pytest.raises(ValueError):
        generate("fourier", 0.7, GRID16, HI, 4, SeedSpec(0))


def test_path_ensemble_invariants():
    with pytest.raises(ValueError):
        PathEnsemble(None, GRID16, HI, np.ones((2, 17)), SeedSpec(0), "x")
    with pytest.raises(ValueError):
        PathEnsemble(None, GRID16, HI, np.full((2, 17), np.nan), SeedSpec(0), "x")


def test_upper_lower_covariance_for_band():
    fam = ScenarioFamily.extremes(BAND)
    st_ = estimate_upper_lower_covariance(fam, 0.7, GRID16, 10_000, SeedSpec(2), method="movavg", fine_cells=512)
    assert np.all(st_.upper >= st_.lower)
    assert abs(st_.upper[-1, -1] - 0.09) < 3 * st_.stderr_upper[-1, -1]
    assert abs(st_.lower[-1, -1] - 0.01) < 3 * st_.stderr_lower[-1, -1]
    d = st_.to_dict()
    assert d["attaining_upper"][-1][-1] == "ConstantHi(0.3)"


def test_upper_lower_covariance_degenerate_band():
    b = VolatilityBand(0.2, 0.2)
    fam = ScenarioFamily.extremes(b)
    st_ = estimate_upper_lower_covariance(fam, 0.3, GRID16, 5000, SeedSpec(2))
    np.testing.assert_array_equal(st_.upper, st_.lower)
    t = GRID16.points
    closed = fbm_covariance(0.3, t[:, None], t[None, :], 0.2)
    mask = st_.stderr > 0
    assert np.max(np.abs(st_.upper - closed)[mask] / st_.stderr[mask]) < 4


@given(st.lists(st.floats(-5, 5), min_size=3, max_size=3), st.lists(st.floats(-5, 5), min_size=3, max_size=3))
@settings(max_examples=50, deadline=None)
def test_sup_inf_ordering(a, b):
    s = sup_inf(np.array([a, b]), np.ones((2, 3)), ("a", "b"))
    assert np.all(s.upper >= s.lower)
    np.testing.assert_array_equal(s.upper, np.maximum(a, b))


def test_autocorrelation_closed_form():
    assert autocorr_closed_form(3, 0.5, BAND) == (0.0, 0.0)
    r_hi, r_lo = autocorr_closed_form(1, 0.7, VolatilityBand(1.0, 1.0))
    assert r_hi == pytest.approx(0.5 * (2**1.4 - 2))
    r = np.array([autocorr_closed_form(n, 0.7, VolatilityBand(1, 1))[0] for n in range(1, 101)])
    assert np.all(r > 0) and np.all(np.diff(np.cumsum(r)) > 0)
    hi, lo = autocorr_closed_form(2, 0.3, BAND)
    assert hi < lo < 0  # anti-persistent: the upper value comes from sigma_lo
    with pytest.raises(ValueError):
        autocorr_closed_form(0, 0.3, BAND)


def test_self_similarity_reports():
    g = TimeGrid(0, 1, 16)
    e5 = gen_cholesky_oracle(0.5, g, 1.0, 20_000, SeedSpec(11))
    assert self_similarity_check(e5, 1.0, 0.5).ks_statistic == 0.0
    r = self_similarity_check(e5, 4.0, 0.25)
    assert r.expected_ratio == 4.0 and abs(r.z_score) < 3
    e7 = gen_cholesky_oracle(0.7, g, 1.0, 20_000, SeedSpec(12))
    r7 = self_similarity_check(e7, 2.0)
    assert r7.expected_ratio == pytest.approx(2**1.4) and abs(r7.z_score) < 3
    with pytest.raises(ValueError):
        self_similarity_check(e7, 3.0, 0.5)


@pytest.mark.parametrize("H,alpha", [(0.7, 2), (0.5, 2), (0.3, 4)])
def test_holder_slopes(H, alpha):
    ens = gen_cholesky_oracle(H, TimeGrid(0, 1, 256), 1.0, 2000, SeedSpec(13))
    rep = holder_moment_check(ens, alpha, lags=(1, 2, 4, 8, 16))
    assert rep.expected_slope == pytest.approx(alpha * H)
    assert rep.covered
    with pytest.raises(ValueError):
        holder_moment_check(ens, 3)


# -- wavelets -----------------------------------------------------------------

@pytest.mark.parametrize("n", [2, 4, 6, 10])
def test_daubechies_filters_are_orthonormal(n):
    h = daubechies_filter(n)
    assert h.sum() == pytest.approx(np.sqrt(2))
    for m in range(n):
        assert np.dot(h[: len(h) - 2 * m], h[2 * m:]) == pytest.approx(float(m == 0), abs=1e-12)
    # vanishing moments of the high-pass filter
    g = WaveletParams(vanishing_moments=n).highpass
    k = np.arange(len(g))
    for p in range(n):
        assert abs(np.sum(g * k**p)) < 1e-6 * max(1, len(g) ** p)


@given(st.integers(0, 2**31 - 1), st.integers(2, 5))
@settings(max_examples=25, deadline=None)
def test_dwt_is_orthogonal_and_invertible(seed, levels):
    x = np.random.default_rng(seed).standard_normal((3, 64))
    p = WaveletParams(vanishing_moments=3, levels=levels)
    c = dwt_periodic(x, p)
    np.testing.assert_allclose(np.sum(c**2, axis=1), np.sum(x**2, axis=1), rtol=1e-12)
    np.testing.assert_allclose(idwt_periodic(c, p), x, atol=1e-12)


def test_wavelet_params_validation():
    with pytest.raises(ValueError):
        WaveletParams(vanishing_moments=1)
    with pytest.raises(ValueError):
        WaveletParams(vanishing_moments=2, filter=(1.0, 0.0, 0.0, 0.0))
    with pytest.raises(ValueError):
        daubechies_filter(40)
    with pytest.raises(ValueError):
        dwt_periodic(np.ones(24), WaveletParams(levels=4))
