"""Shared value types: Hurst index, volatility band, grids, scenarios, seeds, config.

A sublinear expectation is represented concretely by a finite family of
volatility scenarios; ``E^[X] = max_theta E_theta[X]``.  Everything here is an
immutable value and safe to share between threads.
"""
from __future__ import annotations

import itertools
import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

__all__ = [
    "HurstIndex",
    "VolatilityBand",
    "TimeGrid",
    "VolatilityScenario",
    "ScenarioFamily",
    "SeedSpec",
    "Config",
    "make_scenario_family",
    "evaluate_scenario",
    "load_config",
    "parse_config_text",
]


@dataclass(frozen=True)
class HurstIndex:
    h: float

    def __post_init__(self) -> None:
        h = float(self.h)
        if not 0.0 < h < 1.0:
            raise ValueError(f"Hurst index must lie strictly inside (0, 1), got {self.h!r}")
        object.__setattr__(self, "h", h)

    def __float__(self) -> float:
        return self.h

    @property
    def is_brownian(self) -> bool:
        return self.h == 0.5


def as_hurst(h: HurstIndex | float) -> HurstIndex:
    return h if isinstance(h, HurstIndex) else HurstIndex(h)


@dataclass(frozen=True)
class VolatilityBand:
    """Volatility uncertainty interval ``[sigma_lo, sigma_hi]``."""

    sigma_lo: float
    sigma_hi: float

    def __post_init__(self) -> None:
        lo, hi = float(self.sigma_lo), float(self.sigma_hi)
        if not (np.isfinite(lo) and np.isfinite(hi)):
            raise ValueError("volatility band must be finite")
        if lo < 0:
            raise ValueError(f"sigma_lo must be >= 0, got {lo}")
        if hi <= 0:
            raise ValueError(f"sigma_hi must be > 0, got {hi}")
        if lo > hi:
            raise ValueError(f"invalid band: sigma_lo={lo} exceeds sigma_hi={hi}")
        object.__setattr__(self, "sigma_lo", lo)
        object.__setattr__(self, "sigma_hi", hi)

    @property
    def degenerate(self) -> bool:
        return self.sigma_lo == self.sigma_hi

    def contains(self, sigma: float | np.ndarray, atol: float = 1e-12) -> bool:
        s = np.asarray(sigma)
        return bool(np.all((s >= self.sigma_lo - atol) & (s <= self.sigma_hi + atol)))


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid ``t0 < t0 + dt < ... < t1`` with ``n`` steps."""

    t0: float
    t1: float
    n: int

    def __post_init__(self) -> None:
        if int(self.n) != self.n or self.n < 1:
            raise ValueError(f"grid needs n >= 1 steps, got {self.n!r}")
        if not float(self.t0) < float(self.t1):
            raise ValueError(f"grid needs t0 < t1, got [{self.t0}, {self.t1}]")
        object.__setattr__(self, "t0", float(self.t0))
        object.__setattr__(self, "t1", float(self.t1))
        object.__setattr__(self, "n", int(self.n))

    @property
    def dt(self) -> float:
        return (self.t1 - self.t0) / self.n

    @property
    def points(self) -> np.ndarray:
        return np.linspace(self.t0, self.t1, self.n + 1)

    @property
    def horizon(self) -> float:
        return self.t1 - self.t0

    def index_of(self, t: float, atol: float = 1e-9) -> int:
        """Index of grid point ``t``; raises if ``t`` is not on the grid."""
        pos = (t - self.t0) / self.dt
        i = int(round(pos))
        if abs(pos - i) > atol * max(1.0, abs(pos)) or not 0 <= i <= self.n:
            raise ValueError(f"t={t} is not a point of {self}")
        return i


_KINDS = ("ConstantLo", "ConstantHi", "Constant", "PiecewiseConstant", "BangBang")


@dataclass(frozen=True)
class VolatilityScenario:
    """Right-continuous step volatility path on ``[t0, t1]``.

    Every kind is stored in the same normal form: ``levels[i]`` holds on
    ``[breakpoints[i-1], breakpoints[i])``.  Times before ``t0`` (the past of a
    two-sided noise) use ``levels[0]``.
    """

    kind: str
    band: VolatilityBand
    t0: float
    t1: float
    breakpoints: tuple[float, ...] = ()
    levels: tuple[float, ...] = ()

    def __post_init__(self) -> None:
        if self.kind not in _KINDS:
            raise ValueError(f"unknown scenario kind {self.kind!r}")
        bps = tuple(float(b) for b in self.breakpoints)
        lv = tuple(float(x) for x in self.levels)
        if len(lv) != len(bps) + 1:
            raise ValueError("need exactly one more level than breakpoints")
        if any(b2 <= b1 for b1, b2 in zip(bps, bps[1:])):
            raise ValueError(f"breakpoints must be strictly increasing: {bps}")
        if bps and not (self.t0 < bps[0] and bps[-1] < self.t1):
            raise ValueError(f"breakpoints {bps} must lie inside ({self.t0}, {self.t1})")
        if not self.band.contains(np.array(lv)):
            raise ValueError(f"levels {lv} leave the band {self.band}")
        object.__setattr__(self, "breakpoints", bps)
        object.__setattr__(self, "levels", lv)

    @classmethod
    def constant(cls, sigma: float, band: VolatilityBand, t0: float = 0.0, t1: float = 1.0) -> "VolatilityScenario":
        if sigma == band.sigma_lo:
            kind = "ConstantLo"
        elif sigma == band.sigma_hi:
            kind = "ConstantHi"
        else:
            kind = "Constant"
        return cls(kind, band, t0, t1, (), (sigma,))

    @classmethod
    def piecewise(cls, breakpoints: Sequence[float], levels: Sequence[float], band: VolatilityBand,
                  t0: float = 0.0, t1: float = 1.0) -> "VolatilityScenario":
        return cls("PiecewiseConstant", band, t0, t1, tuple(breakpoints), tuple(levels))

    @classmethod
    def bang_bang(cls, switch_times: Sequence[float], band: VolatilityBand, start_high: bool = True,
                  t0: float = 0.0, t1: float = 1.0) -> "VolatilityScenario":
        hi, lo = band.sigma_hi, band.sigma_lo
        levels = [hi if (i % 2 == 0) == start_high else lo for i in range(len(switch_times) + 1)]
        return cls("BangBang", band, t0, t1, tuple(switch_times), tuple(levels))

    @property
    def is_constant(self) -> bool:
        return len(set(self.levels)) == 1

    @property
    def sigma(self) -> float:
        """The level of a constant scenario."""
        if not self.is_constant:
            raise ValueError(f"{self.label} is not constant")
        return self.levels[0]

    @property
    def label(self) -> str:
        if self.is_constant:
            return f"{self.kind}({self.levels[0]:g})"
        return f"{self.kind}(breaks={list(self.breakpoints)}, levels={list(self.levels)})"

    def __call__(self, t):
        return evaluate_scenario(self, t, strict=False)

    def to_dict(self) -> dict:
        return {"kind": self.kind, "breakpoints": list(self.breakpoints), "levels": list(self.levels),
                "t0": self.t0, "t1": self.t1}


def evaluate_scenario(s: VolatilityScenario, t, strict: bool = True):
    """Volatility of scenario ``s`` at time(s) ``t`` (right-continuous)."""
    ta = np.asarray(t, dtype=float)
    if strict and np.any((ta < s.t0 - 1e-12) | (ta > s.t1 + 1e-12)):
        raise ValueError(f"t={t} outside the scenario horizon [{s.t0}, {s.t1}]")
    idx = np.searchsorted(np.asarray(s.breakpoints), ta, side="right")
    out = np.asarray(s.levels)[idx]
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class ScenarioFamily:
    band: VolatilityBand
    scenarios: tuple[VolatilityScenario, ...]

    def __post_init__(self) -> None:
        if not self.scenarios:
            raise ValueError("scenario family is empty")

    def __iter__(self) -> Iterator[VolatilityScenario]:
        return iter(self.scenarios)

    def __len__(self) -> int:
        return len(self.scenarios)

    def __getitem__(self, i: int) -> VolatilityScenario:
        return self.scenarios[i]

    @property
    def all_constant(self) -> bool:
        return all(s.is_constant for s in self.scenarios)

    @classmethod
    def extremes(cls, band: VolatilityBand, t0: float = 0.0, t1: float = 1.0) -> "ScenarioFamily":
        return make_scenario_family(band, 2, TimeGrid(t0, t1, 1))


def make_scenario_family(band: VolatilityBand, m: int, horizon: TimeGrid, n_breaks: int = 2) -> ScenarioFamily:
    """Deterministic finite family of ``m`` scenarios.

    Members 0 and 1 are the constant extremes ``sigma_lo`` and ``sigma_hi``.
    The remaining ``m - 2`` are step functions with ``n_breaks`` equally spaced
    breakpoints.  Their levels are taken from the lattice ``linspace(lo, hi, q)``
    for q = 2, 3, ... in lexicographic order, skipping constant and repeated
    level sequences.
    """
    if m < 2:
        raise ValueError(f"a scenario family needs m >= 2 members, got {m}")
    t0, t1 = horizon.t0, horizon.t1
    lo, hi = band.sigma_lo, band.sigma_hi
    members = [VolatilityScenario.constant(lo, band, t0, t1), VolatilityScenario.constant(hi, band, t0, t1)]
    if m == 2:
        return ScenarioFamily(band, tuple(members))
    bps = tuple(t0 + (t1 - t0) * (i + 1) / (n_breaks + 1) for i in range(n_breaks))
    pieces = n_breaks + 1
    if band.degenerate:
        members += [VolatilityScenario.piecewise(bps, (lo,) * pieces, band, t0, t1) for _ in range(m - 2)]
        return ScenarioFamily(band, tuple(members))
    seen: set[tuple[float, ...]] = set()
    q = 2
    while len(members) < m:
        lattice = np.linspace(lo, hi, q)
        for combo in itertools.product(lattice, repeat=pieces):
            if len(members) == m:
                break
            key = tuple(round(float(c), 15) for c in combo)
            if len(set(key)) == 1 or key in seen:
                continue
            seen.add(key)
            kind = "BangBang" if set(key) <= {lo, hi} else "PiecewiseConstant"
            members.append(VolatilityScenario(kind, band, t0, t1, bps, tuple(float(c) for c in combo)))
        q += 1
    return ScenarioFamily(band, tuple(members))


@dataclass(frozen=True)
class SeedSpec:
    """Order-independent seed derivation.

    Path ``i`` of stream ``s`` draws from ``SeedSequence(master_seed,
    spawn_key=(s, i))``; the stream of a draw never depends on which other
    paths are generated, in what order, or on how many threads.
    """

    master_seed: int = 0

    def __post_init__(self) -> None:
        if not 0 <= int(self.master_seed) < 2**64:
            raise ValueError("master_seed must be a 64-bit unsigned integer")
        object.__setattr__(self, "master_seed", int(self.master_seed))

    def rng(self, stream: int, index: int) -> np.random.Generator:
        ss = np.random.SeedSequence(self.master_seed, spawn_key=(int(stream), int(index)))
        return np.random.Generator(np.random.PCG64(ss))

    def normals(self, stream: int, indices: Sequence[int] | range, size: int) -> np.ndarray:
        """Matrix of standard normals, one row per path index."""
        out = np.empty((len(indices), size))
        for row, i in enumerate(indices):
            out[row] = self.rng(stream, i).standard_normal(size)
        return out


# -- configuration -----------------------------------------------------------

@dataclass(frozen=True)
class Config:
    """Run configuration; every default lives here.

    ==============  ====================  ========
    file key        meaning               default
    ==============  ====================  ========
    hurst           Hurst index           0.7
    sigma_lo        lower volatility      0.1
    sigma_hi        upper volatility      0.3
    grid.n          time steps            16
    horizon         time horizon T        1.0
    seed            master seed           20240101
    scenarios.m     family size           2
    ==============  ====================  ========
    """

    hurst: float = 0.7
    sigma_lo: float = 0.1
    sigma_hi: float = 0.3
    grid_n: int = 16
    horizon: float = 1.0
    seed: int = 20240101
    scenarios_m: int = 2
    extra: dict = field(default_factory=dict)

    def validate(self) -> "Config":
        HurstIndex(self.hurst)
        VolatilityBand(self.sigma_lo, self.sigma_hi)
        TimeGrid(0.0, self.horizon, self.grid_n)
        SeedSpec(self.seed)
        if self.scenarios_m < 2:
            raise ValueError("scenarios.m must be >= 2")
        return self

    def with_overrides(self, **kw) -> "Config":
        known = {f.name for f in fields(self)}
        base = asdict(self)
        extra = dict(base.pop("extra"))
        for k, v in kw.items():
            if v is None:
                continue
            if k in known:
                base[k] = v
            else:
                extra[k] = v
        return Config(**base, extra=extra)

    @property
    def band(self) -> VolatilityBand:
        return VolatilityBand(self.sigma_lo, self.sigma_hi)

    @property
    def grid(self) -> TimeGrid:
        return TimeGrid(0.0, self.horizon, self.grid_n)

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)


_FILE_KEYS = {
    "hurst": ("hurst", float),
    "sigma_lo": ("sigma_lo", float),
    "sigma_hi": ("sigma_hi", float),
    "grid.n": ("grid_n", int),
    "horizon": ("horizon", float),
    "seed": ("seed", int),
    "scenarios.m": ("scenarios_m", int),
}


def parse_config_text(text: str) -> dict:
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"config line {lineno}: expected 'key = value', got {raw!r}")
        key, value = (p.strip() for p in line.split("=", 1))
        if key not in _FILE_KEYS:
            raise ValueError(f"config line {lineno}: unknown key {key!r}")
        name, conv = _FILE_KEYS[key]
        out[name] = conv(value)
    return out


def load_config(path: str | Path | None = None, **overrides) -> Config:
    """Defaults, then the config file, then explicit overrides (flags)."""
    cfg = Config()
    if path is not None:
        cfg = cfg.with_overrides(**parse_config_text(Path(path).read_text()))
    return cfg.with_overrides(**overrides).validate()
