"""Fractional operators on sampled functions.

``M_H`` is the Fourier multiplier ``c_H |y|^(1/2-H)`` normalised so that
``||M_H 1_[0,t]||^2 = t^(2H)``; ``unnormalized=True`` drops ``c_H``.  The
canonical implementation is spectral (zero-padded FFT).  Closed-form
time-domain kernels are provided as independent oracles.

Fourier convention: ``f^(y) = (2 pi)^(-1/2) * int f(x) exp(-i x y) dx``.
"""
from __future__ import annotations

import csv
import functools
from dataclasses import dataclass
from math import cos, gamma, pi, sin, sqrt
from pathlib import Path
from typing import Callable

import numpy as np
from scipy import integrate, special

from .core import HurstIndex, TimeGrid, as_hurst

__all__ = [
    "SampledFunction",
    "OperatorParams",
    "mh_constant",
    "mh_time_constant",
    "mw_constant",
    "apply_MH",
    "apply_MH_inverse",
    "mh_indicator",
    "mh_piecewise_constant",
    "mh_time_domain",
    "liouville_integral",
    "marchaud_integral",
    "marchaud_cell_weights",
    "hermite_function",
    "hermite_functions",
    "mh_hermite",
    "parseval_closed_form",
    "parseval_fourier",
    "parseval_time_domain",
    "parseval_grid",
]


@dataclass(frozen=True)
class SampledFunction:
    """Samples of ``f`` on a uniform grid; ``f`` is taken as 0 outside ``support_hint``."""

    grid: TimeGrid
    values: np.ndarray
    support_hint: tuple[float, float] | None = None

    def __post_init__(self) -> None:
        v = np.array(self.values, dtype=float)
        if v.shape != (self.grid.n + 1,):
            raise ValueError(f"expected {self.grid.n + 1} samples, got shape {v.shape}")
        if not np.all(np.isfinite(v)):
            raise ValueError("sampled values must be finite")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)
        if self.support_hint is None:
            object.__setattr__(self, "support_hint", (self.grid.t0, self.grid.t1))
        else:
            a, b = map(float, self.support_hint)
            if a > b:
                raise ValueError("support_hint must be an interval (a <= b)")
            object.__setattr__(self, "support_hint", (a, b))

    @classmethod
    def from_callable(cls, f: Callable, grid: TimeGrid, support: tuple[float, float] | None = None) -> "SampledFunction":
        x = grid.points
        v = np.asarray(f(x), dtype=float) * np.ones_like(x)
        if support is not None:
            v = np.where((x >= support[0]) & (x <= support[1]), v, 0.0)
        return cls(grid, v, support)

    @classmethod
    def indicator(cls, a: float, b: float, grid: TimeGrid) -> "SampledFunction":
        """Samples of ``1_[a,b]`` with half weight at the jumps (midpoint rule for the edges)."""
        x = grid.points
        v = ((x > a) & (x < b)).astype(float)
        v[np.isclose(x, a, atol=1e-12 * grid.dt)] = 0.5
        v[np.isclose(x, b, atol=1e-12 * grid.dt)] = 0.5
        return cls(grid, v, (a, b))

    @property
    def x(self) -> np.ndarray:
        return self.grid.points

    def __add__(self, other: "SampledFunction") -> "SampledFunction":
        self._check_same_grid(other)
        lo = min(self.support_hint[0], other.support_hint[0])
        hi = max(self.support_hint[1], other.support_hint[1])
        return SampledFunction(self.grid, self.values + other.values, (lo, hi))

    def __mul__(self, a: float) -> "SampledFunction":
        return SampledFunction(self.grid, a * self.values, self.support_hint)

    __rmul__ = __mul__

    def _check_same_grid(self, other: "SampledFunction") -> None:
        if self.grid != other.grid:
            raise ValueError("sampled functions live on different grids")

    def l2_norm(self) -> float:
        return float(sqrt(integrate.trapezoid(self.values**2, self.x)))

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["t", "value"])
            for t, v in zip(self.x, self.values):
                w.writerow([repr(float(t)), repr(float(v))])


def mh_constant(h: HurstIndex | float) -> float:
    """``c_H = sqrt(sin(pi H) Gamma(2H + 1))``; makes ``||M_H 1_[0,t]|| = t^H``."""
    H = float(as_hurst(h).h)
    return sqrt(sin(pi * H) * gamma(2 * H + 1))


def mh_time_constant(h: HurstIndex | float) -> float:
    """Constant of the time-domain kernels of the normalised ``M_H`` (H != 1/2)."""
    H = float(as_hurst(h).h)
    if H == 0.5:
        raise ValueError("no time-domain kernel at H = 1/2 (M_H is the identity)")
    return mh_constant(H) / (2.0 * gamma(H - 0.5) * cos(pi * (H - 0.5) / 2.0))


def mw_constant(h: HurstIndex | float) -> float:
    """Moving-average constant ``sqrt(2H sin(pi H) Gamma(2H)) / Gamma(H + 1/2)``."""
    H = float(as_hurst(h).h)
    return sqrt(2 * H * sin(pi * H) * gamma(2 * H)) / gamma(H + 0.5)


@dataclass(frozen=True)
class OperatorParams:
    """Parameters of the spectral operators.

    ``fft_pad_factor`` multiplies the next power of two above the sample count.
    ``regularization`` replaces ``|y|`` by ``sqrt(y^2 + eps^2)`` in the symbol;
    with ``eps = 0`` the zero-frequency bin uses the cell average of the symbol.
    """

    h: HurstIndex
    fft_pad_factor: int = 8
    regularization: float = 0.0

    def __post_init__(self) -> None:
        object.__setattr__(self, "h", as_hurst(self.h))
        p = int(self.fft_pad_factor)
        if p < 2 or p & (p - 1):
            raise ValueError(f"fft_pad_factor must be a power of two >= 2, got {self.fft_pad_factor}")
        if self.regularization < 0:
            raise ValueError("regularization must be >= 0")

    @property
    def beta(self) -> float:
        return 0.5 - self.h.h

    @property
    def c_h(self) -> float:
        return mh_constant(self.h)

    @property
    def c_h_time(self) -> float:
        return mh_time_constant(self.h)

    @property
    def c_h_prime(self) -> float:
        """Time-domain constant of the unnormalised operator."""
        return self.c_h_time / self.c_h


def _spectral_apply(f: SampledFunction, p: OperatorParams, power: float, scale: float) -> SampledFunction:
    g = f.grid
    lo, hi = f.support_hint
    if lo < g.t0 - 1e-12 or hi > g.t1 + 1e-12:
        raise ValueError(f"support {f.support_hint} exceeds the sampling window [{g.t0}, {g.t1}]; "
                         "widen the grid to avoid wrap-around")
    n = g.n + 1
    length = p.fft_pad_factor * (1 << (n - 1).bit_length())
    omega = 2 * pi * np.fft.rfftfreq(length, g.dt)
    if p.regularization > 0:
        sym = (omega**2 + p.regularization**2) ** (power / 2)
    else:
        sym = np.empty_like(omega)
        sym[1:] = omega[1:] ** power
        half = omega[1] / 2
        sym[0] = half**power / (power + 1)  # mean of |y|^power over the zero bin
    spectrum = np.fft.rfft(f.values, length)
    out = np.fft.irfft(spectrum * (scale * sym), length)[:n]
    return SampledFunction(g, out, (g.t0, g.t1))


def apply_MH(f: SampledFunction, p: OperatorParams, unnormalized: bool = False) -> SampledFunction:
    """Apply ``M_H`` spectrally; output is sampled on the input grid."""
    if p.h.is_brownian:
        return SampledFunction(f.grid, f.values, f.support_hint)
    scale = 1.0 if unnormalized else p.c_h
    return _spectral_apply(f, p, p.beta, scale)


def apply_MH_inverse(f: SampledFunction, p: OperatorParams, unnormalized: bool = False) -> SampledFunction:
    """Apply ``M_H^{-1}`` (symbol ``|y|^(H-1/2) / c_H``) spectrally."""
    if p.h.is_brownian:
        return SampledFunction(f.grid, f.values, f.support_hint)
    scale = 1.0 if unnormalized else 1.0 / p.c_h
    return _spectral_apply(f, p, -p.beta, scale)


# -- time-domain oracles -----------------------------------------------------

def _spow(x, e):
    x = np.asarray(x, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.sign(x) * np.abs(x) ** e


def mh_indicator(h: HurstIndex | float, a: float, b: float, x) -> np.ndarray:
    """Closed form of ``M_H 1_(a,b)`` at points ``x``."""
    H = float(as_hurst(h).h)
    x = np.asarray(x, dtype=float)
    if H == 0.5:
        return ((x > a) & (x < b)).astype(float) + 0.5 * (np.isclose(x, a) | np.isclose(x, b))
    e = H - 0.5
    return mh_time_constant(H) / e * (_spow(x - a, e) - _spow(x - b, e))


def mh_piecewise_constant(h: HurstIndex | float, edges, cell_values, x) -> np.ndarray:
    """``M_H`` of a piecewise-constant function, by superposing indicator closed forms."""
    H = float(as_hurst(h).h)
    edges = np.asarray(edges, dtype=float)
    c = np.asarray(cell_values, dtype=float)
    x = np.asarray(x, dtype=float)
    if H == 0.5:
        idx = np.clip(np.searchsorted(edges, x, side="right") - 1, 0, len(c) - 1)
        inside = (x >= edges[0]) & (x < edges[-1])
        return np.where(inside, c[idx], 0.0)
    e = H - 0.5
    # sum_j c_j [s(x - a_j) - s(x - a_{j+1})] = sum_k (c_k - c_{k-1}) s(x - a_k)
    jumps = np.diff(np.concatenate([[0.0], c, [0.0]]))
    return mh_time_constant(H) / e * (_spow(x[..., None] - edges, e) @ jumps)


def mh_time_domain(h: HurstIndex | float, f: Callable, x: float, support: tuple[float, float]) -> float:
    """``M_H f(x)`` by adaptive quadrature of the singular time-domain kernel.

    H > 1/2: ``C * int f(t) |t - x|^(H - 3/2) dt``.
    H < 1/2: ``C * int (f(x - t) - f(x)) |t|^(H - 3/2) dt``.
    ``f`` must be smooth and vanish outside ``support``.
    """
    H = float(as_hurst(h).h)
    if H == 0.5:
        return float(f(x))
    C = mh_time_constant(H)
    a, b = support
    e = H - 1.5
    if H > 0.5:
        if x <= a or x >= b:
            val, _ = integrate.quad(lambda t: f(t) * np.abs(t - x) ** e, a, b, limit=200)
            return C * val
        left, _ = integrate.quad(f, a, x, weight="alg", wvar=(0.0, e))
        right, _ = integrate.quad(f, x, b, weight="alg", wvar=(e, 0.0))
        return C * (left + right)
    fx = f(x)
    # near t = 0 use a Taylor-subtracted integrand; the |t| > 1 tail is split off
    def g(t):
        return (f(x - t) + f(x + t) - 2 * fx) * t**e

    near, _ = integrate.quad(g, 0.0, 1.0, limit=400)
    R = max(1.0, abs(x - a), abs(x - b)) + 1.0
    far, _ = integrate.quad(lambda t: (f(x - t) + f(x + t)) * t**e, 1.0, R, limit=400)
    far -= 2 * fx * (1.0 / (-e - 1.0))  # int_1^inf t^e dt
    return C * (near + far)


# -- fractional integrals ----------------------------------------------------

def _pw_linear_kernel(x: np.ndarray, f: np.ndarray, c: float, alpha: float) -> float:
    """``int (c - s)_+^(alpha-1) f(s) ds`` for piecewise-linear ``f`` on nodes ``x``."""
    if c <= x[0]:
        return 0.0
    if c < x[-1]:
        k = int(np.searchsorted(x, c, side="right"))
        fc = f[k - 1] + (f[k] - f[k - 1]) * (c - x[k - 1]) / (x[k] - x[k - 1])
        xs = np.concatenate([x[:k], [c]]) if c > x[k - 1] else x[:k]
        fs = np.concatenate([f[:k], [fc]]) if c > x[k - 1] else f[:k]
    else:
        xs, fs = x, f
    if len(xs) < 2:
        return 0.0
    u = c - xs
    u0, u1 = u[:-1], u[1:]
    hh = xs[1:] - xs[:-1]
    m0 = (u0**alpha - u1**alpha) / alpha
    m1 = (u0 ** (alpha + 1) - u1 ** (alpha + 1)) / (alpha + 1)
    w_left = (m1 - u1 * m0) / hh
    w_right = (u0 * m0 - m1) / hh
    return float(np.sum(fs[:-1] * w_left + fs[1:] * w_right))


def liouville_integral(f: SampledFunction, alpha: float, t: float) -> float:
    """Left Riemann-Liouville integral ``(1/Gamma(a)) int_0^t (t - x)^(a-1) f(x) dx``.

    ``f`` is interpolated linearly between samples and the kernel is integrated
    exactly on every cell, so the endpoint singularity for ``a < 1`` costs no
    accuracy.
    """
    if not alpha > 0:
        raise ValueError(f"alpha must be > 0, got {alpha}")
    x, v = f.x, f.values
    if t < x[0] - 1e-12 or 0.0 < x[0] - 1e-12:
        raise ValueError(f"f must be sampled on [0, {t}]")
    keep = x >= 0.0
    x, v = x[keep], v[keep]
    if x[0] > 0:
        x = np.concatenate([[0.0], x])
        v = np.concatenate([[np.interp(0.0, f.x, f.values)], v])
    return _pw_linear_kernel(x, v, t, alpha) / gamma(alpha)


def marchaud_integral(f: SampledFunction, alpha: float, t: float) -> float:
    """``(1/Gamma(a)) int [(t - x)_+^(a-1) - (-x)_+^(a-1)] f(x) dx`` over the sampled support."""
    if not alpha > 0:
        raise ValueError(f"the kernel is not locally integrable for alpha={alpha}")
    x, v = f.x, f.values
    return (_pw_linear_kernel(x, v, t, alpha) - _pw_linear_kernel(x, v, 0.0, alpha)) / gamma(alpha)


def marchaud_cell_weights(edges, alpha: float, t) -> np.ndarray:
    """Exact integrals of the Marchaud kernel over the cells ``[edges[i], edges[i+1])``.

    Returns an array of shape ``(len(t), len(edges) - 1)``;
    ``w @ cell_averages`` is the Marchaud integral of a piecewise-constant function.
    """
    if not alpha > 0:
        raise ValueError(f"alpha must be > 0, got {alpha}")
    e = np.asarray(edges, dtype=float)
    tt = np.atleast_1d(np.asarray(t, dtype=float))[:, None]

    def prim(c):
        p = np.maximum(c - e, 0.0) ** alpha
        return p[..., :-1] - p[..., 1:]

    return (prim(tt) - prim(np.zeros_like(tt))) / gamma(alpha + 1)


# -- Hermite functions -------------------------------------------------------

def hermite_functions(K: int, x) -> np.ndarray:
    """Rows ``h_1 .. h_K`` (orthonormal Hermite functions) evaluated at ``x``."""
    x = np.asarray(x, dtype=float)
    out = np.empty((K,) + x.shape)
    out[0] = pi**-0.25 * np.exp(-x * x / 2)
    if K > 1:
        out[1] = sqrt(2.0) * x * out[0]
    for m in range(2, K):
        out[m] = sqrt(2.0 / m) * x * out[m - 1] - sqrt((m - 1) / m) * out[m - 2]
    return out


def hermite_function(n: int, x):
    """``h_n(x)`` for ``n >= 1``; ``h_1`` is the normalised Gaussian ``pi^(-1/4) e^(-x^2/2)``."""
    if int(n) != n or n < 1:
        raise ValueError(f"Hermite functions are indexed from 1, got {n}")
    r = hermite_functions(int(n), x)[-1]
    return float(r) if np.ndim(r) == 0 else r


@functools.lru_cache(maxsize=64)
def _half_line_rule(power: float, ymax: float, panel: float = 0.5, m: int = 24, mj: int = 40):
    """Nodes/weights for ``int_0^ymax y^power g(y) dy`` with smooth ``g``."""
    xj, wj = special.roots_jacobi(mj, 0.0, power)
    y0 = (xj + 1) / 2
    w0 = wj * 0.5 ** (power + 1)
    xs, ws = np.polynomial.legendre.leggauss(m)
    edges = np.arange(1.0, ymax + panel, panel)
    a, b = edges[:-1, None], edges[1:, None]
    y1 = ((b - a) / 2 * xs + (a + b) / 2).ravel()
    w1 = ((b - a) / 2 * ws).ravel() * y1**power
    return np.concatenate([y0, y1]), np.concatenate([w0, w1])


def mh_hermite(K: int, t, h: HurstIndex | float, integrated: bool = False, inverse: bool = False) -> np.ndarray:
    """``M_H h_k(t)`` for k = 1..K, as a ``(K, len(t))`` array.

    ``integrated`` gives ``int_0^t`` of the same functions and ``inverse`` uses
    ``M_H^{-1}`` instead.  Hermite functions are eigenfunctions of the Fourier
    transform (``h_k^ = (-i)^(k-1) h_k``), so each value is a one-dimensional
    half-line integral with an algebraic weight, done by Gauss-Jacobi near 0
    and panel Gauss-Legendre beyond.
    """
    H = float(as_hurst(h).h)
    t = np.atleast_1d(np.asarray(t, dtype=float))
    power = (H - 0.5) if inverse else (0.5 - H)
    scale = (1.0 / mh_constant(H)) if inverse else mh_constant(H)
    ymax = sqrt(2 * K + 1) + 12.0
    y, w = _half_line_rule(round(power, 15), ymax)
    hk = hermite_functions(K, y) * w
    yt = np.outer(y, t)
    if integrated:
        even_part = np.sin(yt) / y[:, None]          # int_0^t cos(ys) ds
        odd_part = (1.0 - np.cos(yt)) / y[:, None]   # int_0^t sin(ys) ds
    else:
        even_part, odd_part = np.cos(yt), np.sin(yt)
    k = np.arange(1, K + 1)
    sign = (-1.0) ** ((k - 1) // 2)
    res = np.where((k % 2 == 1)[:, None], hk @ even_part, hk @ odd_part)
    return scale * sqrt(2 / pi) * sign[:, None] * res


# -- Parseval identity -------------------------------------------------------

def parseval_closed_form(h: HurstIndex | float, a: float = 0.0, b: float = 1.0) -> float:
    """``||M'_H 1_[a,b]||^2 = (b - a)^(2H) / (sin(pi H) Gamma(2H + 1))`` for the unnormalised operator."""
    H = float(as_hurst(h).h)
    return (b - a) ** (2 * H) / (sin(pi * H) * gamma(2 * H + 1))


def parseval_fourier(h: HurstIndex | float, a: float = 0.0, b: float = 1.0) -> float:
    """Same norm as a frequency integral ``(4/pi) int_0^inf y^(-1-2H) sin^2(Ly/2) dy``."""
    H = float(as_hurst(h).h)
    L = b - a
    # split at 1: algebraic weight near 0, oscillatory tail by QAWF
    near, _ = integrate.quad(lambda y: (np.sin(L * y / 2) / y) ** 2 * y ** (1 - 2 * H), 0.0, 1.0, limit=200)
    tail_const, _ = integrate.quad(lambda y: 0.5 * y ** (-1 - 2 * H), 1.0, np.inf)
    tail_cos, _ = integrate.quad(lambda y: -0.5 * y ** (-1 - 2 * H), 1.0, np.inf, weight="cos", wvar=L)
    return 4 / pi * (near + tail_const + tail_cos)


def parseval_time_domain(h: HurstIndex | float, a: float = 0.0, b: float = 1.0) -> float:
    """Same norm by quadrature of the squared closed-form kernel over the real line."""
    H = float(as_hurst(h).h)
    if H == 0.5:
        return b - a
    c = mh_constant(H)
    f = lambda x: (mh_indicator(H, a, b, x) / c) ** 2
    pieces = [(-np.inf, a - 1.0), (a - 1.0, a), (a, b), (b, b + 1.0), (b + 1.0, np.inf)]
    total = 0.0
    for lo, hi in pieces:
        if np.isfinite(lo) and np.isfinite(hi):
            points = [p for p in (a, b) if lo < p < hi]
            v, _ = integrate.quad(f, lo, hi, points=points or None, limit=400)
        else:
            v, _ = integrate.quad(f, lo, hi, limit=400)
        total += v
    return total


def parseval_grid(h: HurstIndex | float, n: int = 4096, window: float = 64.0, pad: int = 8) -> float:
    """Same norm via ``apply_MH`` on a grid, with the ``|x|^(2H-3)`` tail added analytically.

    Accuracy is limited by the sampled jump of the indicator; this route is a
    consistency check, not the reference value.
    """
    H = float(as_hurst(h).h)
    g = TimeGrid(-window / 2, window / 2, int(n * window))
    f = SampledFunction.indicator(0.0, 1.0, g)
    m = apply_MH(f, OperatorParams(H, pad), unnormalized=True)
    inside = float(integrate.trapezoid(m.values**2, m.x))
    if H == 0.5:
        return inside
    # far field of the unnormalised kernel ~ C' |x|^(H - 3/2)
    cp = mh_time_constant(H) / mh_constant(H)
    R = window / 2
    tail = 2 * cp**2 * R ** (2 * H - 2) / (2 - 2 * H)
    return inside + tail
