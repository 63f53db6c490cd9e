"""``fgbm`` command-line front end.

Exit codes: 0 success, 1 usage error, 2 numerical failure.  Every run writes
its outputs only after all computation has succeeded, followed by
``manifest.json`` (resolved configuration, versions, timings and SHA-256
digests of each output file).
"""
from __future__ import annotations

import argparse
import hashlib
import json
import os
import platform
import sys
import time
from dataclasses import asdict
from datetime import datetime, timezone
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from .core import Config, ScenarioFamily, SeedSpec, VolatilityScenario, load_config
from .market import MarketModel, Payoff, price_bid_ask
from .suites import SUITES, run_suite
from .synth import METHODS, fbm_covariance, generate, sup_inf
from .wavelets import WaveletParams

__all__ = ["main", "build_parser"]

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC = 0, 1, 2
ENGINE_NAMES = {"mc": "ScenarioMC", "pde": "Pde", "closed-form": "PerScenarioClosedForm"}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _positive_int(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text}")
    return v


def _model_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--hurst", type=float, help="Hurst index in (0, 1)")
    p.add_argument("--sigma-lo", type=float, help="lower volatility")
    p.add_argument("--sigma-hi", type=float, help="upper volatility")
    p.add_argument("--seed", type=int, help="master seed")
    p.add_argument("--config", type=Path, help="key = value config file (flags override it)")
    p.add_argument("--threads", type=_positive_int, help="worker threads (default: $FGBM_THREADS or 1)")
    p.add_argument("--out", type=Path, required=True, help="output directory")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="fgbm", description="Fractional G-Brownian motion toolkit.")
    parser.add_argument("--version", action="version", version=f"fgbm {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("synth", help="simulate paths under the extreme volatility scenarios")
    _model_flags(s)
    s.add_argument("--method", choices=METHODS, default="movavg")
    s.add_argument("--paths", type=_positive_int, default=1000)
    s.add_argument("--grid-n", type=_positive_int)
    s.add_argument("--horizon", type=float)
    s.add_argument("--scenario", choices=("both", "hi", "lo"), default="both")
    s.add_argument("--levels", type=_positive_int, default=10, help="wavelet levels J")

    v = sub.add_parser("verify", help="run a property suite")
    v.add_argument("suite", choices=sorted(SUITES) + ["all"])
    v.add_argument("--quick", action="store_true", help="smaller Monte Carlo sizes")
    v.add_argument("--out", type=Path, required=True)

    p = sub.add_parser("price", help="bid/ask quote for a European call or put")
    _model_flags(p)
    p.add_argument("--payoff", choices=("call", "put"), default="call")
    p.add_argument("--strike", type=float, default=100.0)
    p.add_argument("--spot", type=float, default=100.0)
    p.add_argument("--rate", type=float, default=0.0)
    p.add_argument("--maturity", type=float)
    p.add_argument("--engine", choices=sorted(ENGINE_NAMES), default="mc")
    p.add_argument("--paths", type=_positive_int, default=100_000)
    p.add_argument("--grid-n", type=_positive_int, default=800, help="PDE space steps")

    r = sub.add_parser("replay", help="re-run the command recorded in a manifest")
    r.add_argument("manifest", type=Path)
    r.add_argument("--out", type=Path, required=True)
    return parser


# -- helpers -----------------------------------------------------------------

def _threads(args) -> int:
    if getattr(args, "threads", None):
        return args.threads
    env = os.environ.get("FGBM_THREADS")
    if env is None:
        return 1
    try:
        n = int(env)
    except ValueError:
        raise UsageError(f"FGBM_THREADS must be a positive integer, got {env!r}") from None
    if n < 1:
        raise UsageError(f"FGBM_THREADS must be a positive integer, got {env!r}")
    return n


def _config(args, **extra) -> Config:
    try:
        return load_config(args.config, hurst=args.hurst, sigma_lo=args.sigma_lo, sigma_hi=args.sigma_hi,
                           seed=args.seed, **extra)
    except (ValueError, OSError) as exc:
        raise UsageError(str(exc)) from None


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _versions() -> dict:
    return {"fgbm": __version__, "python": platform.python_version(), "numpy": np.__version__,
            "scipy": scipy.__version__}


def _json_text(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, default=_default) + "\n"


def _default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, Path):
        return str(o)
    raise TypeError(f"not serialisable: {type(o).__name__}")


def _emit(out: Path, files: dict[str, str], argv: list[str], command: str, config: dict, seed,
          started: float) -> Path:
    """Write all outputs, then the manifest; remove partial output on failure."""
    out.mkdir(parents=True, exist_ok=True)
    written = []
    try:
        for name, text in files.items():
            path = out / name
            with open(path, "w", newline="\n") as fh:
                fh.write(text)
            written.append(path)
        manifest = {
            "command": command,
            "argv": argv,
            "config": config,
            "seed": seed,
            "versions": _versions(),
            "started_utc": datetime.fromtimestamp(started, timezone.utc).isoformat(),
            "wall_clock_seconds": time.time() - started,
            "outputs": [{"file": p.name, "sha256": _sha256(p)} for p in written],
        }
        mpath = out / "manifest.json"
        mpath.write_text(_json_text(manifest))
    except BaseException:
        for p in written:
            p.unlink(missing_ok=True)
        raise
    return mpath


def _csv_paths(times: np.ndarray, paths: np.ndarray) -> str:
    header = ["t"] + [f"path_{i}" for i in range(paths.shape[0])]
    rows = [",".join(header)]
    for j, t in enumerate(times):
        rows.append(",".join([repr(float(t))] + [repr(float(x)) for x in paths[:, j]]))
    return "\n".join(rows) + "\n"


# -- commands ----------------------------------------------------------------

def cmd_synth(args, argv: list[str]) -> int:
    started = time.time()
    cfg = _config(args, grid_n=args.grid_n, horizon=args.horizon)
    threads = _threads(args)
    band = cfg.band
    scen = {"hi": VolatilityScenario.constant(band.sigma_hi, band, 0.0, cfg.horizon),
            "lo": VolatilityScenario.constant(band.sigma_lo, band, 0.0, cfg.horizon)}
    chosen = ("hi", "lo") if args.scenario == "both" else (args.scenario,)
    kw = {}
    if args.method == "wavelet":
        if cfg.horizon != 1.0:
            raise UsageError("--method wavelet needs --horizon 1")
        if (1 << args.levels) % cfg.grid_n:
            raise UsageError(f"--levels {args.levels} cannot resolve --grid-n {cfg.grid_n}")
        kw["params"] = WaveletParams(levels=args.levels)
    seed = SeedSpec(cfg.seed)
    grid = cfg.grid
    files, stats, means, errs = {}, {"method": args.method, "hurst": cfg.hurst, "paths": args.paths,
                                     "times": grid.points, "scenarios": {}}, [], []
    for key in chosen:
        s = scen[key]
        if args.method == "wavelet":
            from .synth import gen_wavelet
            ens = gen_wavelet(cfg.hurst, kw["params"], s, args.paths, seed, grid=grid, threads=threads)
        else:
            ens = generate(args.method, cfg.hurst, grid, s, args.paths, seed, threads=threads)
        P = ens.paths
        prod = P[:, :, None] * P[:, None, :]
        cov = prod.mean(axis=0)
        se = prod.std(axis=0, ddof=1) / np.sqrt(args.paths) if args.paths > 1 else np.full_like(cov, np.inf)
        means.append(cov)
        errs.append(se)
        t = grid.points
        closed = fbm_covariance(cfg.hurst, t[:, None], t[None, :], s.sigma)
        exact = ens.metadata.get("exact_covariance", closed)
        scale = np.sqrt(np.mean(closed**2))
        stats["scenarios"][s.label] = {
            "sigma": s.sigma,
            "sample_covariance": cov,
            "stderr": se,
            "method_covariance": exact,
            "closed_form_covariance": closed,
            "method_rms_vs_closed_form": float(np.sqrt(np.mean((exact - closed) ** 2)) / scale),
            "sample_rms_vs_closed_form": float(np.sqrt(np.mean((cov - closed) ** 2)) / scale),
        }
        files[f"paths_{key}.csv"] = _csv_paths(t, P)
    stats["documented_tolerance"] = 0.05
    if len(chosen) == 2:
        ul = sup_inf(np.array(means), np.array(errs), tuple(scen[k].label for k in chosen))
        stats["upper_covariance"] = ul.upper
        stats["lower_covariance"] = ul.lower
    if not all(np.all(np.isfinite(v["sample_covariance"])) for v in stats["scenarios"].values()):
        raise FloatingPointError("non-finite sample covariance")
    files["stats.json"] = _json_text(stats)
    echo = {**asdict(cfg), "method": args.method, "paths": args.paths, "threads": threads}
    _emit(args.out, files, argv, "synth", echo, cfg.seed, started)
    return EXIT_OK


def cmd_verify(args, argv: list[str]) -> int:
    started = time.time()
    names = sorted(SUITES) if args.suite == "all" else [args.suite]
    reports = [run_suite(n, quick=args.quick) for n in names]
    files = {f"report_{r.suite}.json": _json_text(r.to_dict()) for r in reports}
    _emit(args.out, files, argv, "verify", {"suites": names, "quick": args.quick}, None, started)
    for r in reports:
        for c in r.checks:
            flag = "PASS" if c.passed else "FAIL"
            print(f"{flag} {r.suite}:{c.name} measured={c.measured:.3g} tol={c.tolerance:.3g}")
    return EXIT_OK if all(r.passed for r in reports) else EXIT_NUMERIC


def cmd_price(args, argv: list[str]) -> int:
    started = time.time()
    cfg = _config(args, horizon=args.maturity)
    engine = ENGINE_NAMES[args.engine]
    if engine == "Pde" and cfg.hurst != 0.5:
        raise UsageError(f"--engine pde requires --hurst 0.5: the pricing PDE exists only for H = 1/2 "
                         f"(got H = {cfg.hurst}); use --engine mc or --engine closed-form")
    try:
        model = MarketModel(args.spot, args.rate, cfg.hurst, cfg.band, cfg.horizon)
        payoff = Payoff(args.payoff.capitalize(), args.strike)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    family = ScenarioFamily.extremes(cfg.band, 0.0, cfg.horizon)
    quote = price_bid_ask(model, payoff, engine, family, num_paths=args.paths, seed=SeedSpec(cfg.seed),
                          grid_n=args.grid_n)
    if not (np.isfinite(quote.bid) and np.isfinite(quote.ask)):
        raise FloatingPointError("non-finite quote")
    err = quote.to_dict()["stderr_or_grid_error"]
    echo = {**asdict(cfg), "spot": args.spot, "strike": args.strike, "rate": args.rate, "payoff": args.payoff,
            "engine": engine, "paths": args.paths, "grid_n": args.grid_n}
    text = quote.to_json(config=echo, spread_tolerance=3 * float(err) if engine == "ScenarioMC" else float(err))
    _emit(args.out, {"quote.json": text + "\n"}, argv, "price", echo, cfg.seed, started)
    print(f"bid={quote.bid:.6g} ask={quote.ask:.6g} engine={engine}")
    return EXIT_OK


def cmd_replay(args, argv: list[str]) -> int:
    try:
        manifest = json.loads(args.manifest.read_text())
        old = list(manifest["argv"])
    except (OSError, ValueError, KeyError) as exc:
        raise UsageError(f"cannot read manifest: {exc}") from None
    if "--config" in old:  # the resolved values below replace the file
        i = old.index("--config")
        del old[i:i + 2]
    cfg = manifest.get("config", {})
    if manifest.get("command") in ("synth", "price"):
        keys = [("hurst", "--hurst"), ("sigma_lo", "--sigma-lo"), ("sigma_hi", "--sigma-hi"), ("seed", "--seed")]
        if manifest["command"] == "synth":
            keys += [("grid_n", "--grid-n"), ("horizon", "--horizon")]
        else:
            keys += [("horizon", "--maturity")]
        for key, flag in keys:
            if key in cfg:
                old += [flag, repr(cfg[key])]
    old += ["--out", str(args.out)]  # argparse keeps the last occurrence
    return main(old)


COMMANDS = {"synth": cmd_synth, "verify": cmd_verify, "price": cmd_price, "replay": cmd_replay}


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = build_parser().parse_args(argv)
        return COMMANDS[args.command](args, argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    except (ValueError, TypeError) as exc:
        print(f"fgbm: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ArithmeticError, np.linalg.LinAlgError) as exc:
        print(f"fgbm: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
