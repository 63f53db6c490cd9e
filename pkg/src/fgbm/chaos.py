"""Finite Hermite chaos and Wick calculus for fractional G-Brownian motion.

A random variable is a finite sum ``sum_a c_a H_a`` where
``H_a = prod_k He_{a_k}(xi_k)`` and the ``xi_k`` are independent standard
normals, one per Hermite function ``h_k``.  The fGBm enters only through its
coefficients: ``B_H(t) = sum_k (int_0^t M_H h_k) xi_k``.  Coefficients are
scalars or arrays over a shared set of time nodes.

Identities are stated for unit volatility.  Under a constant-volatility
scenario ``sigma`` the process is ``sigma B_H`` and every identity scales
accordingly.
"""
from __future__ import annotations

import itertools
import json
from collections import Counter
from dataclasses import dataclass, field
from math import factorial, sqrt
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np
from scipy import special

from .core import HurstIndex, SeedSpec, TimeGrid, VolatilityBand, as_hurst
from .fracops import mh_hermite

__all__ = [
    "MultiIndex",
    "TruncationSpec",
    "ChaosExpansion",
    "time_quadrature",
    "gnoise_coeffs",
    "fgbm_chaos",
    "wick_product",
    "wick_power",
    "wick_exp",
    "ordinary_power",
    "wick_power_values",
    "wick_ito_integral",
    "verify_fractional_ito",
    "ItoReport",
    "malliavin_derivative",
    "directional_derivative_fd",
    "quasi_conditional",
    "WickPolynomial",
    "ClarkOcone",
    "clark_ocone_integrand",
    "clark_ocone_polynomial",
]


class MultiIndex(tuple):
    """Multi-index stored as the sorted list of basis indices, with repetition.

    ``MultiIndex((1, 1, 3))`` is ``2 e_1 + e_3``.
    """

    def __new__(cls, indices: Iterable[int] = ()):
        idx = tuple(sorted(int(i) for i in indices))
        if idx and idx[0] < 1:
            raise ValueError("basis indices start at 1")
        return super().__new__(cls, idx)

    @classmethod
    def unit(cls, k: int) -> "MultiIndex":
        return cls((k,))

    @classmethod
    def from_exponents(cls, exps: Mapping[int, int]) -> "MultiIndex":
        if any(m < 0 for m in exps.values()):
            raise ValueError("multiplicities must be non-negative")
        return cls(itertools.chain.from_iterable([k] * m for k, m in exps.items()))

    @property
    def order(self) -> int:
        return len(self)

    @property
    def exponents(self) -> dict[int, int]:
        return dict(Counter(self))

    @property
    def factorial(self) -> int:
        out = 1
        for m in Counter(self).values():
            out *= factorial(m)
        return out

    @property
    def max_index(self) -> int:
        return self[-1] if self else 0

    def __add__(self, other) -> "MultiIndex":
        return MultiIndex(tuple.__add__(self, other))

    def multiplicity(self, k: int) -> int:
        return self.count(k)

    def lower(self, k: int) -> "MultiIndex":
        lst = list(self)
        lst.remove(k)
        return MultiIndex(lst)

    def __repr__(self) -> str:
        if not self:
            return "MultiIndex(0)"
        return "MultiIndex(" + " + ".join(f"{m}e{k}" if m > 1 else f"e{k}" for k, m in sorted(Counter(self).items())) + ")"


ZERO = MultiIndex()


@dataclass(frozen=True)
class TruncationSpec:
    """Finite chaos: orders ``<= max_order`` over basis indices ``<= K``."""

    max_order: int = 4
    K: int = 32

    def __post_init__(self) -> None:
        if self.max_order < 1 or self.K < 1:
            raise ValueError("truncation limits must be positive")
        if self.K > 512:
            raise ValueError("at most 512 basis functions are supported")

    def admits(self, a: MultiIndex) -> bool:
        return a.order <= self.max_order and a.max_index <= self.K


def _as_coef(c):
    if np.ndim(c) == 0:
        return float(c)
    a = np.array(c, dtype=float)
    a.setflags(write=False)
    return a


def _sq_mass(c) -> float:
    return float(np.max(np.asarray(c) ** 2)) if np.ndim(c) else float(c) ** 2


@dataclass(frozen=True)
class ChaosExpansion:
    """Immutable finite chaos expansion.

    ``times`` is set when coefficients are arrays over time nodes.  ``dropped``
    accumulates the ``a!``-weighted squared mass of every term discarded by
    truncation (the maximum over time for time-indexed coefficients).
    """

    coeffs: Mapping[MultiIndex, object]
    trunc: TruncationSpec = field(default_factory=TruncationSpec)
    times: np.ndarray | None = None
    dropped: float = 0.0

    def __post_init__(self) -> None:
        clean = {}
        for a, c in self.coeffs.items():
            a = a if isinstance(a, MultiIndex) else MultiIndex(a)
            if not self.trunc.admits(a):
                raise ValueError(f"{a!r} is outside the truncation {self.trunc}")
            c = _as_coef(c)
            if self.times is None and np.ndim(c):
                raise ValueError("array coefficients need a time axis")
            if self.times is not None and np.ndim(c) and np.shape(c) != np.shape(self.times):
                raise ValueError("coefficient arrays must match the time nodes")
            clean[a] = c
        object.__setattr__(self, "coeffs", clean)
        if self.times is not None:
            t = np.array(self.times, dtype=float)
            t.setflags(write=False)
            object.__setattr__(self, "times", t)

    # construction
    @classmethod
    def constant(cls, c: float, trunc: TruncationSpec | None = None, times=None) -> "ChaosExpansion":
        return cls({ZERO: c}, trunc or TruncationSpec(), times)

    @classmethod
    def zero(cls, trunc: TruncationSpec | None = None, times=None) -> "ChaosExpansion":
        return cls({}, trunc or TruncationSpec(), times)

    @classmethod
    def first_order(cls, coefs, trunc: TruncationSpec | None = None, times=None) -> "ChaosExpansion":
        """``sum_k coefs[k-1] xi_k``; ``coefs`` has shape ``(K,)`` or ``(K, len(times))``."""
        trunc = trunc or TruncationSpec()
        coefs = np.asarray(coefs, dtype=float)
        return cls({MultiIndex.unit(k + 1): coefs[k] for k in range(coefs.shape[0])}, trunc, times)

    # access
    def __getitem__(self, a) -> object:
        a = a if isinstance(a, MultiIndex) else MultiIndex(a)
        return self.coeffs.get(a, 0.0)

    def __contains__(self, a) -> bool:
        return MultiIndex(a) in self.coeffs

    def __len__(self) -> int:
        return len(self.coeffs)

    def __iter__(self):
        return iter(self.coeffs.items())

    @property
    def is_time_indexed(self) -> bool:
        return self.times is not None

    @property
    def max_order(self) -> int:
        return max((a.order for a in self.coeffs), default=0)

    @property
    def mean(self):
        """Expectation (order-0 coefficient); the same under every constant scenario."""
        return self[ZERO]

    def order_part(self, n: int) -> "ChaosExpansion":
        return ChaosExpansion({a: c for a, c in self.coeffs.items() if a.order == n}, self.trunc, self.times)

    def at(self, i: int) -> "ChaosExpansion":
        """Scalar expansion at time node ``i``."""
        if self.times is None:
            return self
        return ChaosExpansion({a: (c[i] if np.ndim(c) else c) for a, c in self.coeffs.items()}, self.trunc,
                              None, self.dropped)

    def norm2(self):
        """``sum_a a! c_a^2`` (per time node for time-indexed expansions)."""
        tot = 0.0
        for a, c in self.coeffs.items():
            tot = tot + a.factorial * np.asarray(c) ** 2
        return tot if np.ndim(tot) else float(tot)

    # arithmetic
    def _compatible(self, other: "ChaosExpansion") -> tuple[TruncationSpec, np.ndarray | None]:
        if self.trunc != other.trunc:
            raise ValueError(f"incompatible truncations {self.trunc} and {other.trunc}")
        if self.times is not None and other.times is not None:
            if self.times.shape != other.times.shape or not np.allclose(self.times, other.times, rtol=0, atol=1e-14):
                raise ValueError("time-indexed expansions live on different nodes")
        return self.trunc, self.times if self.times is not None else other.times

    def __add__(self, other) -> "ChaosExpansion":
        if not isinstance(other, ChaosExpansion):
            other = ChaosExpansion.constant(other, self.trunc, self.times if np.ndim(other) else None)
        trunc, times = self._compatible(other)
        out = dict(self.coeffs)
        for a, c in other.coeffs.items():
            out[a] = out[a] + c if a in out else c
        return ChaosExpansion(out, trunc, times, self.dropped + other.dropped)

    __radd__ = __add__

    def __neg__(self) -> "ChaosExpansion":
        return self * -1.0

    def __sub__(self, other) -> "ChaosExpansion":
        return self + (-other if isinstance(other, ChaosExpansion) else -other)

    def __rsub__(self, other) -> "ChaosExpansion":
        return (-self) + other

    def __mul__(self, s) -> "ChaosExpansion":
        """Scalar multiple; ``s`` may also be an array over the time nodes."""
        if isinstance(s, ChaosExpansion):
            raise TypeError("use wick_product (or ordinary_power) to multiply expansions")
        if np.ndim(s) and self.times is None:
            raise ValueError("array scaling needs a time-indexed expansion")
        return ChaosExpansion({a: c * s for a, c in self.coeffs.items()}, self.trunc, self.times,
                              self.dropped * float(np.max(np.abs(s))) ** 2)

    __rmul__ = __mul__

    def __truediv__(self, s) -> "ChaosExpansion":
        return self * (1.0 / s)

    def max_abs_diff(self, other: "ChaosExpansion") -> float:
        keys = set(self.coeffs) | set(other.coeffs)
        return max((float(np.max(np.abs(np.asarray(self[a]) - np.asarray(other[a])))) for a in keys), default=0.0)

    def weighted_diff(self, other: "ChaosExpansion") -> float:
        """``sqrt(sum_a a! (c_a - d_a)^2)``, maximised over time nodes."""
        d = self - other
        return float(np.sqrt(np.max(d.norm2())))

    def prune(self, tol: float = 0.0) -> "ChaosExpansion":
        keep = {a: c for a, c in self.coeffs.items() if np.max(np.abs(c)) > tol}
        return ChaosExpansion(keep, self.trunc, self.times, self.dropped)

    # evaluation
    def evaluate(self, xi: np.ndarray) -> np.ndarray:
        """Value at noise samples ``xi`` of shape ``(n_samples, K)``.

        Returns ``(n_samples,)`` or ``(n_samples, len(times))``.
        """
        xi = np.atleast_2d(np.asarray(xi, dtype=float))
        if xi.shape[1] < self.trunc.K:
            raise ValueError(f"need {self.trunc.K} noise coordinates, got {xi.shape[1]}")
        top = max(self.max_order, 1)
        he = [np.ones_like(xi), xi]
        for n in range(2, top + 1):
            he.append(xi * he[n - 1] - (n - 1) * he[n - 2])
        shape = (xi.shape[0],) if self.times is None else (xi.shape[0], len(self.times))
        out = np.zeros(shape)
        for a, c in self.coeffs.items():
            v = np.ones(xi.shape[0])
            for k, m in Counter(a).items():
                v = v * he[m][:, k - 1]
            out += v[:, None] * c if self.times is not None else v * c
        return out

    # serialisation
    def to_dict(self) -> dict:
        def val(c):
            return np.asarray(c).tolist()

        return {
            "truncation": {"max_order": self.trunc.max_order, "K": self.trunc.K},
            "times": None if self.times is None else self.times.tolist(),
            "dropped": self.dropped,
            "coeffs": [{"index": {str(k): m for k, m in sorted(a.exponents.items())}, "value": val(c)}
                       for a, c in sorted(self.coeffs.items())],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, d: dict) -> "ChaosExpansion":
        trunc = TruncationSpec(**d["truncation"])
        coeffs = {MultiIndex.from_exponents({int(k): m for k, m in e["index"].items()}): e["value"]
                  for e in d["coeffs"]}
        return cls(coeffs, trunc, d.get("times"), d.get("dropped", 0.0))

    @classmethod
    def from_json(cls, s: str) -> "ChaosExpansion":
        return cls.from_dict(json.loads(s))


# -- time quadrature ---------------------------------------------------------

def time_quadrature(T: float, cells: int = 64, order: int = 8, levels: int = 50) -> tuple[np.ndarray, np.ndarray]:
    """Composite Gauss-Legendre rule on ``[0, T]``.

    The first of ``cells`` uniform cells is split geometrically ``levels``
    times towards 0, which integrates ``s^g * smooth(s)`` (``g > -1``) to
    near machine precision.
    """
    if T <= 0:
        return np.zeros(0), np.zeros(0)
    h = T / cells
    geo = h * 0.5 ** np.arange(levels, -1, -1)
    edges = np.concatenate([[0.0], geo, h * np.arange(2, cells + 1)])
    x, w = np.polynomial.legendre.leggauss(order)
    a, b = edges[:-1, None], edges[1:, None]
    nodes = ((b - a) / 2 * x + (a + b) / 2).ravel()
    weights = ((b - a) / 2 * w).ravel()
    return nodes, weights


# -- fGBm coefficients -------------------------------------------------------

def gnoise_coeffs(t, h: HurstIndex | float, trunc: TruncationSpec) -> np.ndarray:
    """``M_H h_k(t)`` for ``k = 1..K``: shape ``(K,)`` for scalar ``t``, else ``(K, len(t))``."""
    out = mh_hermite(trunc.K, t, h)
    return out[:, 0] if np.ndim(t) == 0 else out


def fgbm_chaos(t, h: HurstIndex | float, trunc: TruncationSpec) -> ChaosExpansion:
    """First-order expansion of ``B_H(t)`` with coefficients ``int_0^t M_H h_k``."""
    b = mh_hermite(trunc.K, t, h, integrated=True)
    if np.ndim(t) == 0:
        return ChaosExpansion.first_order(b[:, 0], trunc)
    return ChaosExpansion.first_order(b, trunc, np.asarray(t, dtype=float))


# -- Wick algebra ------------------------------------------------------------

def wick_product(F: ChaosExpansion, G: ChaosExpansion) -> ChaosExpansion:
    """``F <> G``: coefficients of ``H_a`` and ``H_b`` multiply into ``H_(a+b)``.

    Terms above ``max_order`` are discarded and their mass recorded.
    """
    trunc, times = F._compatible(G)
    out: dict[MultiIndex, object] = {}
    dropped = F.dropped + G.dropped
    for a, ca in F.coeffs.items():
        for b, cb in G.coeffs.items():
            g = a + b
            c = ca * cb
            if g.order > trunc.max_order:
                dropped += g.factorial * _sq_mass(c)
                continue
            out[g] = out[g] + c if g in out else c
    return ChaosExpansion(out, trunc, times, dropped)


def wick_power(F: ChaosExpansion, n: int) -> ChaosExpansion:
    if n < 0:
        raise ValueError("Wick powers are defined for n >= 0")
    out = ChaosExpansion.constant(1.0, F.trunc, F.times)
    for _ in range(n):
        out = wick_product(out, F)
    return out


def _first_order_parts(F: ChaosExpansion):
    if F.max_order > 1:
        raise ValueError("only first-order expansions are accepted here")
    c0 = F[ZERO]
    lin = {a[0]: c for a, c in F.coeffs.items() if a.order == 1}
    return c0, lin


def wick_exp(F: ChaosExpansion) -> ChaosExpansion:
    """``exp<>(F) = sum_n F^<>n / n!`` for first-order ``F``, truncated at ``max_order``.

    With ``F = c_0 + sum_k c_k xi_k`` the coefficient of ``H_a`` is
    ``e^(c_0) prod_k c_k^(a_k) / a_k!``; the discarded tail has mass
    ``e^(2 c_0) (e^s - sum_(n <= N) s^n / n!)`` with ``s = sum_k c_k^2``.
    """
    c0, lin = _first_order_parts(F)
    trunc = F.trunc
    keys = sorted(lin)
    e0 = np.exp(c0)
    out: dict[MultiIndex, object] = {}
    for n in range(trunc.max_order + 1):
        for combo in itertools.combinations_with_replacement(keys, n):
            c = e0
            for k, m in Counter(combo).items():
                c = c * lin[k] ** m / factorial(m)
            out[MultiIndex(combo)] = c
    s = sum(np.asarray(c) ** 2 for c in lin.values()) if lin else 0.0
    kept = sum(np.asarray(s) ** n / factorial(n) for n in range(trunc.max_order + 1))
    tail = np.exp(2 * np.asarray(c0)) * (np.exp(s) - kept)
    return ChaosExpansion(out, trunc, F.times, F.dropped + float(np.max(tail)))


def ordinary_power(F: ChaosExpansion, n: int, variance) -> ChaosExpansion:
    """Ordinary ``n``-th power of a centred Gaussian ``F`` in Wick form.

    ``x^n = sum_j n! / (j! (n-2j)! 2^j) v^j x^<>(n-2j)`` where ``v`` is the
    variance used for pairing.  Passing the exact variance (rather than the
    truncated ``sum_k c_k^2``) keeps identities free of truncation bias.
    """
    c0, _ = _first_order_parts(F)
    if np.any(np.asarray(c0) != 0):
        raise ValueError("F must be centred")
    out = ChaosExpansion.zero(F.trunc, F.times)
    for j in range(n // 2 + 1):
        coef = factorial(n) / (factorial(j) * factorial(n - 2 * j) * 2**j)
        out = out + wick_power(F, n - 2 * j) * (coef * np.asarray(variance) ** j)
    return out


def wick_power_values(x, n: int, variance) -> np.ndarray:
    """Sample value of ``X^<>n`` for a Gaussian sample ``x`` of the given variance."""
    v = np.asarray(variance, dtype=float)
    x = np.asarray(x, dtype=float)
    if n == 0:
        return np.ones_like(x)
    sd = np.sqrt(v)
    with np.errstate(invalid="ignore", divide="ignore"):
        out = sd**n * special.eval_hermitenorm(n, np.where(sd > 0, x / np.where(sd > 0, sd, 1), 0.0))
    return np.where(sd > 0, out, x**n)


# -- Ito-Wick integral -------------------------------------------------------

def _as_time_indexed(Y, nodes: np.ndarray, trunc: TruncationSpec | None) -> ChaosExpansion:
    if isinstance(Y, ChaosExpansion):
        if Y.times is None:
            return ChaosExpansion({a: np.full(len(nodes), c) for a, c in Y.coeffs.items()}, Y.trunc, nodes,
                                  Y.dropped)
        if Y.times.shape != nodes.shape or not np.allclose(Y.times, nodes, rtol=0, atol=1e-14):
            raise ValueError("integrand is tabulated on different time nodes than the quadrature")
        return Y
    if callable(Y):
        v = Y(nodes)
        if isinstance(v, ChaosExpansion):
            return _as_time_indexed(v, nodes, trunc)
        v = np.asarray(v, dtype=float) * np.ones_like(nodes)
        return ChaosExpansion({ZERO: v}, trunc or TruncationSpec(), nodes)
    return ChaosExpansion({ZERO: np.full(len(nodes), float(Y))}, trunc or TruncationSpec(), nodes)


def wick_ito_integral(Y, h: HurstIndex | float, T: float, trunc: TruncationSpec | None = None,
                      quad: tuple[np.ndarray, np.ndarray] | None = None) -> ChaosExpansion:
    """``int_0^T Y(t) <> W_H(t) dt`` by Gauss-Legendre quadrature in time.

    ``Y`` is a scalar, a deterministic function of time, a constant expansion,
    a callable returning a time-indexed expansion, or an expansion tabulated on
    the quadrature nodes.
    """
    nodes, w = quad if quad is not None else time_quadrature(T)
    Yt = _as_time_indexed(Y, np.asarray(nodes, dtype=float), trunc)
    tr = Yt.trunc
    if not np.isfinite(w).all():
        raise FloatingPointError("quadrature weights are not finite")
    noise = gnoise_coeffs(nodes, h, tr)  # (K, Q)
    alphas = list(Yt.coeffs)
    if not alphas:
        return ChaosExpansion.zero(tr)
    C = np.stack([np.broadcast_to(Yt.coeffs[a], nodes.shape) for a in alphas])
    R = (C * w) @ noise.T  # (n_alpha, K)
    if not np.isfinite(R).all():
        raise FloatingPointError("non-finite values in the Ito-Wick quadrature")
    out: dict[MultiIndex, float] = {}
    dropped = Yt.dropped
    for i, a in enumerate(alphas):
        for k in range(tr.K):
            g = a + (k + 1,)
            c = float(R[i, k])
            if g.order > tr.max_order:
                dropped += g.factorial * c * c
                continue
            out[g] = out.get(g, 0.0) + c
    return ChaosExpansion(out, tr, None, dropped)


def stieltjes_weights(nodes: np.ndarray, weights: np.ndarray, h: HurstIndex | float) -> np.ndarray:
    """Weights for ``int g(s) d(s^2H)`` on the same nodes."""
    H = as_hurst(h).h
    return weights * 2 * H * nodes ** (2 * H - 1)


# -- fractional Ito formula --------------------------------------------------

@dataclass(frozen=True)
class ItoReport:
    function: str
    h: float
    T: float
    coefficient_residual: float
    mc_z_scores: dict
    mc_upper: tuple[float, float, float]
    mc_lower: tuple[float, float, float]
    details: dict = field(default_factory=dict)

    def passed(self, coef_tol: float = 1e-6, z: float = 3.0) -> bool:
        return self.coefficient_residual < coef_tol and all(abs(v) < z for v in self.mc_z_scores.values())


_CATALOG = ("x2", "x3", "exp")


def _ito_chaos_check(name: str, h, T: float, trunc: TruncationSpec, alpha: float, beta0: float):
    H = as_hurst(h).h
    nodes, w = time_quadrature(T)
    dw = stieltjes_weights(nodes, w, H)
    B = fgbm_chaos(nodes, H, trunc)
    BT = fgbm_chaos(T, H, trunc)
    v = nodes ** (2 * H)
    if name == "x2":
        lhs = ordinary_power(BT, 2, T ** (2 * H))
        f1 = B * 2.0
        corr = ChaosExpansion.constant(0.5 * 2.0 * float(np.sum(dw)), trunc)
        rhs = wick_ito_integral(f1, H, T, quad=(nodes, w)) + corr
    elif name == "x3":
        lhs = ordinary_power(BT, 3, T ** (2 * H))
        f1 = ordinary_power(B, 2, v) * 3.0
        f2 = B * 6.0
        corr = _integrate_nodes(f2, 0.5 * dw)
        rhs = wick_ito_integral(f1, H, T, quad=(nodes, w)) + corr
    else:
        # f(x) = exp(alpha x + beta0): f(B_s) = exp<>(beta0 + alpha B_s + alpha^2 s^2H / 2)
        Y = wick_exp(B * alpha + (beta0 + 0.5 * alpha**2 * v))
        lhs = wick_exp(BT * alpha + (beta0 + 0.5 * alpha**2 * T ** (2 * H)))
        drift = _integrate_nodes(Y * alpha**2, 0.5 * dw)
        rhs = wick_ito_integral(Y * alpha, H, T, quad=(nodes, w)) + drift + float(np.exp(beta0))
    return lhs, rhs


def _integrate_nodes(F: ChaosExpansion, w: np.ndarray) -> ChaosExpansion:
    return ChaosExpansion({a: float(np.sum(np.asarray(c) * w)) for a, c in F.coeffs.items()}, F.trunc, None,
                          F.dropped)


def verify_fractional_ito(f: str, h: HurstIndex | float, T: float = 1.0, band: VolatilityBand | None = None,
                          num_paths: int = 20000, seed: SeedSpec | None = None, alpha: float = 1.0,
                          trunc: TruncationSpec | None = None, grid_n: int = 64) -> ItoReport:
    """Check ``f(B_T) = f(0) + int f'(B) dB_H + (1/2) int f''(B_s) d(s^2H)``.

    * Chaos level: both sides are expanded and compared coefficient-wise, with
      ordinary products converted to Wick form using the exact variance.
    * Expectation level: for every constant extreme of ``band`` the Monte
      Carlo mean of ``f(sigma B_T)`` is compared with
      ``f(0) + (sigma^2 / 2) int E f''(sigma B_s) d(s^2H)`` on the same paths;
      sup and inf over the two scenarios are reported as well.
    """
    from .synth import gen_cholesky_oracle  # local import keeps module layering flat

    if f not in _CATALOG:
        raise ValueError(f"unknown catalog function {f!r}; choose from {_CATALOG}")
    H = as_hurst(h).h
    band = band or VolatilityBand(1.0, 1.0)
    seed = seed or SeedSpec(0)
    if trunc is None:
        trunc = TruncationSpec(max_order=5, K=12) if f == "exp" else TruncationSpec(max_order=3, K=16)
    lhs, rhs = _ito_chaos_check(f, H, T, trunc, alpha, 0.0)
    resid = lhs.max_abs_diff(rhs)

    funcs = {
        "x2": (lambda x: x**2, lambda x: 2.0 + 0 * x),
        "x3": (lambda x: x**3, lambda x: 6.0 * x),
        "exp": (lambda x: np.exp(alpha * x), lambda x: alpha**2 * np.exp(alpha * x)),
    }
    fn, fpp = funcs[f]
    grid = TimeGrid(0.0, T, grid_n)
    u = grid.points ** (2 * H)
    z, lhs_m, rhs_m, se_l, se_r = {}, [], [], [], []
    for sigma in sorted({band.sigma_lo, band.sigma_hi}):
        P = gen_cholesky_oracle(H, grid, sigma, num_paths, seed).paths
        left = fn(P[:, -1])
        g = fpp(P)
        right = fn(0.0) + 0.5 * sigma**2 * np.sum(0.5 * (g[:, 1:] + g[:, :-1]) * np.diff(u), axis=1)
        d = left - right
        z[f"sigma={sigma:g}"] = float(d.mean() / (d.std(ddof=1) / sqrt(num_paths)))
        lhs_m.append(left.mean())
        rhs_m.append(right.mean())
        se_l.append(left.std(ddof=1) / sqrt(num_paths))
        se_r.append(right.std(ddof=1) / sqrt(num_paths))
    iu, il = int(np.argmax(lhs_m)), int(np.argmin(lhs_m))
    ju, jl = int(np.argmax(rhs_m)), int(np.argmin(rhs_m))
    upper = (float(lhs_m[iu]), float(rhs_m[ju]), float(np.hypot(se_l[iu], se_r[ju])))
    lower = (float(lhs_m[il]), float(rhs_m[jl]), float(np.hypot(se_l[il], se_r[jl])))
    return ItoReport(f, H, T, float(resid), z, upper, lower,
                     {"dropped_lhs": lhs.dropped, "dropped_rhs": rhs.dropped, "K": trunc.K,
                      "max_order": trunc.max_order})


# -- Malliavin derivative and quasi-conditional expectation -------------------

def malliavin_derivative(F: ChaosExpansion, t, h: HurstIndex | float) -> ChaosExpansion:
    """``D_t F = sum_a c_a sum_i a_i H_(a - e_i) e_i(t)`` with ``e_i = M_H^{-1} h_i``."""
    if F.is_time_indexed:
        raise ValueError("differentiate a scalar-coefficient expansion")
    e = mh_hermite(F.trunc.K, t, h, inverse=True)
    scalar_t = np.ndim(t) == 0
    times = None if scalar_t else np.asarray(t, dtype=float)
    out: dict[MultiIndex, object] = {}
    for a, c in F.coeffs.items():
        for k, m in Counter(a).items():
            ei = e[k - 1, 0] if scalar_t else e[k - 1]
            b = a.lower(k)
            out[b] = out[b] + c * m * ei if b in out else c * m * ei
    return ChaosExpansion(out, F.trunc, times, F.dropped)


def directional_derivative_fd(F: ChaosExpansion, shift: np.ndarray, xi: np.ndarray, eps: float = 1e-6) -> np.ndarray:
    """Central finite difference of ``F`` along the noise shift ``xi -> xi + eps * shift``."""
    shift = np.asarray(shift, dtype=float)[None, :]
    return (F.evaluate(xi + eps * shift) - F.evaluate(xi - eps * shift)) / (2 * eps)


def _window_matrix(t: float, h, K: int) -> np.ndarray:
    """``P[k, j] = int_0^t e_k(s) M_H h_j(s) ds``: the image of ``e_k 1_(0,t)`` in the ``h_j`` basis."""
    if t <= 0:
        return np.zeros((K, K))
    nodes, w = time_quadrature(t, cells=32)
    e = mh_hermite(K, nodes, h, inverse=True)
    m = mh_hermite(K, nodes, h)
    return (e * w) @ m.T


def quasi_conditional(F: ChaosExpansion, t: float, h: HurstIndex | float, horizon: float | None = None) -> ChaosExpansion:
    """Window every kernel of ``F`` by ``1_(0,t)`` in each time argument.

    Supports chaos orders 0 to 2.  When ``horizon`` is given, ``F`` is declared
    measurable up to ``horizon`` and is returned unchanged for ``t >= horizon``.
    The windowing is computed in the truncated basis, so it is approximate for
    ``H != 1/2`` and for kernels that are not smooth.
    """
    if F.is_time_indexed:
        raise ValueError("condition a scalar-coefficient expansion")
    if F.max_order > 2:
        raise ValueError("quasi-conditional expectation supports chaos orders <= 2")
    if horizon is not None and t >= horizon:
        return F
    K = F.trunc.K
    P = _window_matrix(t, h, K)
    out: dict[MultiIndex, float] = {}
    if ZERO in F.coeffs:
        out[ZERO] = F[ZERO]
    c1 = np.zeros(K)
    A = np.zeros((K, K))
    for a, c in F.coeffs.items():
        if a.order == 1:
            c1[a[0] - 1] += c
        elif a.order == 2:
            i, j = a[0] - 1, a[1] - 1
            if i == j:
                A[i, i] += c
            else:
                A[i, j] += c / 2
                A[j, i] += c / 2
    new1 = c1 @ P
    for j in np.nonzero(new1)[0]:
        out[MultiIndex.unit(j + 1)] = float(new1[j])
    if A.any():
        A2 = P.T @ A @ P
        for i in range(K):
            out[MultiIndex((i + 1, i + 1))] = float(A2[i, i])
            for j in range(i + 1, K):
                out[MultiIndex((i + 1, j + 1))] = float(A2[i, j] + A2[j, i])
    return ChaosExpansion(out, F.trunc, None, F.dropped)


# -- Clark-Ocone for Wick polynomials ----------------------------------------

@dataclass(frozen=True)
class WickPolynomial:
    """``P<>(X_1, ..., X_n)`` with ``X_i = int_0^T f_i dB_H``.

    ``terms`` maps exponent tuples to coefficients; ``integrands`` holds each
    ``f_i`` as a constant or a callable of time.
    """

    terms: Mapping[tuple[int, ...], float]
    integrands: tuple = (1.0,)

    def __post_init__(self) -> None:
        n = len(self.integrands)
        for e in self.terms:
            if len(e) != n or any(x < 0 for x in e):
                raise ValueError(f"exponent tuple {e} does not match {n} variables")
        object.__setattr__(self, "terms", {tuple(e): float(c) for e, c in self.terms.items()})
        object.__setattr__(self, "integrands", tuple(self.integrands))

    @classmethod
    def in_terminal_value(cls, coefs: Sequence[float]) -> "WickPolynomial":
        """``sum_n coefs[n] B_H(T)^<>n``."""
        return cls({(n,): c for n, c in enumerate(coefs) if c != 0}, (1.0,))

    @property
    def n_vars(self) -> int:
        return len(self.integrands)

    @property
    def degree(self) -> int:
        return max((sum(e) for e in self.terms), default=0)

    @property
    def constant_term(self) -> float:
        return self.terms.get((0,) * self.n_vars, 0.0)

    def partial(self, i: int) -> "WickPolynomial":
        out: dict[tuple[int, ...], float] = {}
        for e, c in self.terms.items():
            if e[i] > 0:
                f = list(e)
                f[i] -= 1
                out[tuple(f)] = out.get(tuple(f), 0.0) + c * e[i]
        return WickPolynomial(out, self.integrands)

    def evaluate(self, X: Sequence[ChaosExpansion]) -> ChaosExpansion:
        """Wick-evaluate at first-order expansions ``X``."""
        base = X[0]
        out = ChaosExpansion.zero(base.trunc, base.times)
        cache: dict[tuple[int, int], ChaosExpansion] = {}
        for e, c in self.terms.items():
            term = ChaosExpansion.constant(c, base.trunc, base.times)
            for i, p in enumerate(e):
                if p:
                    if (i, p) not in cache:
                        cache[(i, p)] = wick_power(X[i], p)
                    term = wick_product(term, cache[(i, p)])
            out = out + term
        return out

    def evaluate_samples(self, x: np.ndarray, variance) -> np.ndarray:
        """Sample values for a single variable given Gaussian samples and their variance."""
        if self.n_vars != 1:
            raise ValueError("sample evaluation supports one variable")
        return sum(c * wick_power_values(x, e[0], variance) for e, c in self.terms.items())


def _integrand_values(f, t: np.ndarray) -> np.ndarray:
    return np.asarray(f(t), dtype=float) * np.ones_like(t) if callable(f) else np.full(t.shape, float(f))


def _x_coefficients(f, t, h, K: int) -> np.ndarray:
    """Coefficients ``int_0^t f(s) M_H h_k(s) ds`` for each entry of ``t``: shape ``(K, len(t))``."""
    t = np.atleast_1d(np.asarray(t, dtype=float))
    if not callable(f):
        return float(f) * mh_hermite(K, t, h, integrated=True)
    out = np.empty((K, len(t)))
    for j, tj in enumerate(t):
        nodes, w = time_quadrature(tj, cells=16)
        out[:, j] = mh_hermite(K, nodes, h) @ (w * _integrand_values(f, nodes)) if tj > 0 else 0.0
    return out


def clark_ocone_integrand(F: WickPolynomial, h: HurstIndex | float, t, trunc: TruncationSpec) -> ChaosExpansion:
    """``psi(t) = sum_i f_i(t) (d_i P)<>(X^t)`` tabulated at the times ``t``."""
    t = np.atleast_1d(np.asarray(t, dtype=float))
    Xt = [ChaosExpansion.first_order(_x_coefficients(f, t, h, trunc.K), trunc, t) for f in F.integrands]
    psi = ChaosExpansion.zero(trunc, t)
    for i, f in enumerate(F.integrands):
        dP = F.partial(i)
        if dP.terms:
            psi = psi + dP.evaluate(Xt) * _integrand_values(f, t)
    return psi


@dataclass(frozen=True)
class ClarkOcone:
    """Clark-Ocone integrand on quadrature nodes and the reconstruction it implies."""

    psi: ChaosExpansion
    mean: float
    target: ChaosExpansion
    reconstruction: ChaosExpansion
    nodes: np.ndarray
    weights: np.ndarray

    @property
    def residual(self) -> float:
        return self.target.weighted_diff(self.reconstruction)

    @property
    def max_coefficient_error(self) -> float:
        return self.target.max_abs_diff(self.reconstruction)


def clark_ocone_polynomial(F: WickPolynomial, h: HurstIndex | float, T: float,
                           trunc: TruncationSpec | None = None, route: str = "chain",
                           quad: tuple[np.ndarray, np.ndarray] | None = None) -> ClarkOcone:
    """Integrand ``psi(t) = E~[D_t F | F_t]`` of ``F = E F + int_0^T psi dB_H``.

    ``route='chain'`` uses the Wick chain rule: differentiating
    ``P<>(X_1, ..., X_n)`` and windowing every kernel to ``(0, t)`` gives
    ``psi(t) = sum_i f_i(t) (d_i P)<>(X^t)`` with ``X_i^t = int_0^t f_i dB_H``.
    ``route='generic'`` applies :func:`malliavin_derivative` and
    :func:`quasi_conditional` node by node (orders up to 2 after
    differentiation; approximate under truncation).
    """
    if not isinstance(F, WickPolynomial):
        raise TypeError("Clark-Ocone needs a WickPolynomial")
    trunc = trunc or TruncationSpec(max_order=max(F.degree, 1), K=32)
    if F.degree > trunc.max_order:
        raise ValueError("truncation order is below the polynomial degree")
    nodes, w = quad if quad is not None else time_quadrature(T)
    K = trunc.K
    XT = [ChaosExpansion.first_order(_x_coefficients(f, T, h, K)[:, 0], trunc) for f in F.integrands]
    target = F.evaluate(XT)
    mean = F.constant_term
    if route == "chain":
        psi = clark_ocone_integrand(F, h, nodes, trunc)
    elif route == "generic":
        cols: dict[MultiIndex, np.ndarray] = {}
        for q, tq in enumerate(nodes):
            D = malliavin_derivative(target, float(tq), h)
            # D_t F vanishes for t > T; all nodes lie in (0, T)
            Q = quasi_conditional(D, float(tq), h)
            for a, c in Q.coeffs.items():
                cols.setdefault(a, np.zeros(len(nodes)))[q] = c
        psi = ChaosExpansion(cols, trunc, nodes)
    else:
        raise ValueError(f"unknown route {route!r}")
    recon = wick_ito_integral(psi, h, T, quad=(nodes, w)) + mean
    return ClarkOcone(psi, mean, target, recon, nodes, w)
