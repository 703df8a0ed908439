"""Command-line front end.

Every output file starts with the run configuration: JSON reports carry it
under ``"config"``, CSV files as a ``# config: {...}`` comment line. The
thread count is left out so that reports do not depend on it.

Exit codes: 0 when every invoked check passes, 1 when a check fails,
2 on configuration errors.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import FIXTURES, fixture_path
from .ncpoly import MatrixNCPoly, load_poly
from .rmt import DEFAULT_SEED


THREADS_ENV = "NCSPEC_THREADS"
SUBCOMMANDS = ("linearize", "moments", "density", "support", "simulate", "master-eq", "confine",
               "separate", "bias-scan", "correction", "verify")


class ConfigError(ValueError):
    """Invalid command-line configuration; the message names the field."""


@dataclass
class RunConfig:
    subcommand: str
    poly: str | None
    mix: list[str] | None
    n: int | None
    n_list: list[int] | None
    trials: int | None
    seed: int
    tol: float
    y_schedule: list[float] | None
    grid_step: float | None
    eps: float | None
    lam: list[float] | None
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)


# ------------------------------------------------------------ parsing helpers


def _float_list(text: str, name: str) -> list[float]:
    try:
        vals = [float(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise ConfigError(f"{name}: expected comma-separated numbers, got {text!r}") from exc
    if not vals:
        raise ConfigError(f"{name}: empty list")
    return vals


def _int_list(text: str, name: str) -> list[int]:
    vals = _float_list(text, name)
    if any(v != int(v) for v in vals):
        raise ConfigError(f"{name}: expected integers, got {text!r}")
    return [int(v) for v in vals]


def _complex(text: str, name: str) -> complex:
    try:
        return complex(text.replace(" ", "").replace("i", "j"))
    except ValueError as exc:
        raise ConfigError(f"{name}: cannot parse {text!r} as a complex number") from exc


def _positive(value, name: str):
    if value is not None and not value > 0:
        raise ConfigError(f"{name} must be positive, got {value}")
    return value


def _resolve_poly_path(text: str) -> Path:
    stem = text[:-5] if text.endswith(".json") else text
    path = Path(text)
    if not path.exists() and stem in FIXTURES:
        return fixture_path(stem)
    if not path.exists():
        raise ConfigError(f"poly: file {text!r} not found (fixtures: {', '.join(FIXTURES)})")
    return path


def _load(args) -> MatrixNCPoly:
    if args.poly is None:
        raise ConfigError("poly: --poly is required for this subcommand")
    try:
        return load_poly(_resolve_poly_path(args.poly))
    except ConfigError:
        raise
    except (ValueError, KeyError, TypeError, json.JSONDecodeError) as exc:
        raise ConfigError(f"poly: {exc}") from exc


def _phi_from_text(text: str):
    """``bump:c,r``, ``window:a,b`` or ``plateau:a,b,lo,hi``."""
    from .spectrum import TestFunction

    kind, _, rest = text.partition(":")
    vals = _float_list(rest, "phi")
    try:
        if kind == "bump" and len(vals) == 2:
            return TestFunction.bump(*vals)
        if kind == "window" and len(vals) == 2:
            return TestFunction.constant_window(*vals)
        if kind == "plateau" and len(vals) == 4:
            return TestFunction.plateau_bump((vals[0], vals[1]), (vals[2], vals[3]))
    except ValueError as exc:
        raise ConfigError(f"phi: {exc}") from exc
    raise ConfigError(f"phi: expected bump:c,r | window:a,b | plateau:a,b,lo,hi, got {text!r}")


def _threads(args) -> int:
    if args.threads is not None:
        t = args.threads
    else:
        env = os.environ.get(THREADS_ENV)
        try:
            t = int(env) if env else 1
        except ValueError as exc:
            raise ConfigError(f"threads: {THREADS_ENV}={env!r} is not an integer") from exc
    if t < 1:
        raise ConfigError(f"threads must be >= 1, got {t}")
    return t


def _mix(args, p: MatrixNCPoly) -> list[str]:
    from .rmt import normalize_kind

    kinds = args.mix.split(",") if args.mix else ["SGRM"]
    if len(kinds) == 1 and p.r > 1:
        kinds = kinds * p.r
    if len(kinds) != p.r:
        raise ConfigError(f"mix: {len(kinds)} ensembles given for r = {p.r} generators")
    try:
        return [normalize_kind(k) for k in kinds]
    except ValueError as exc:
        raise ConfigError(f"mix: {exc}") from exc


def _config(args, mix=None) -> RunConfig:
    lam = _complex(args.lam, "lam") if args.lam is not None else None
    return RunConfig(
        subcommand=args.command,
        poly=args.poly,
        mix=mix,
        n=args.n,
        n_list=_int_list(args.n_list, "n-list") if args.n_list else None,
        trials=args.trials,
        seed=args.seed,
        tol=args.tol,
        y_schedule=_float_list(args.y_schedule, "y-schedule") if args.y_schedule else None,
        grid_step=args.grid_step,
        eps=args.eps,
        lam=[lam.real, lam.imag] if lam is not None else None,
    )


def _write_json(path: str | None, cfg: RunConfig, result: dict) -> None:
    text = json.dumps({"config": cfg.to_dict(), "result": result}, indent=1, sort_keys=True,
                      default=_json_default)
    if path is None:
        sys.stdout.write(text + "\n")
        return
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(text + "\n")


def _json_default(obj):
    if isinstance(obj, (complex, np.complexfloating)):
        return [float(obj.real), float(obj.imag)]
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def _write_csv(path: str | None, cfg: RunConfig, header: Sequence[str], rows) -> None:
    fh = open(path, "w", newline="") if path else sys.stdout
    try:
        fh.write("# config: " + json.dumps(cfg.to_dict(), sort_keys=True) + "\n")
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])
    finally:
        if path:
            fh.close()


def _schedule_kw(args) -> dict:
    kw = {"tol": args.tol}
    if args.y_schedule:
        kw["y_schedule"] = tuple(_float_list(args.y_schedule, "y-schedule"))
    if args.grid_step:
        kw["grid_step"] = args.grid_step
    return kw


# ------------------------------------------------------------ subcommands


def cmd_linearize(args) -> int:
    from .linearize import factorize, linearize, pencil_to_dict

    p = _load(args)
    pencil = linearize(p)
    cfg = _config(args)
    _write_json(args.out, cfg, {"pencil": pencil_to_dict(pencil), "dims": list(factorize(p).dims),
                                "k": pencil.k})
    return 0


def cmd_moments(args) -> int:
    from .freemoments import poly_moments

    p = _load(args)
    cfg = _config(args)
    cfg.extra["jmax"] = args.jmax
    _write_json(args.out, cfg, {"moments": poly_moments(p, args.jmax)})
    return 0


def cmd_density(args) -> int:
    from .spectrum import DEFAULT_GRID_STEP, density, norm_bound

    p = _load(args)
    step = args.grid_step or DEFAULT_GRID_STEP
    bound = norm_bound(p)
    lo = args.x_min if args.x_min is not None else -bound - 0.5
    hi = args.x_max if args.x_max is not None else bound + 0.5
    if not hi > lo:
        raise ConfigError("x-max must exceed x-min")
    xs = np.arange(np.floor(lo / step), np.ceil(hi / step) + 1) * step
    kw = _schedule_kw(args)
    kw.pop("grid_step", None)
    grid = density(p, xs, **kw)
    cfg = _config(args)
    cfg.extra.update({"x_min": float(xs[0]), "x_max": float(xs[-1]), **grid.to_dict()})
    _write_csv(args.out, cfg, ["x", "rho"], zip(xs, grid.rho))
    return 0


def cmd_support(args) -> int:
    from .spectrum import integer_mass_check, support_components

    p = _load(args)
    comps = support_components(p, **_schedule_kw(args))
    checks = integer_mass_check(p, comps)
    ok = all(c.passed for c in checks) and len(comps.intervals) <= p.m
    _write_json(args.out, _config(args), {"support": comps.to_dict(),
                                           "mass_checks": [c.to_dict() for c in checks], "pass": ok})
    return 0 if ok else 1


def _need(args, *names):
    for name in names:
        if getattr(args, name.replace("-", "_")) is None:
            raise ConfigError(f"{name}: --{name} is required for {args.command}")


def cmd_simulate(args) -> int:
    from .rmt import empirical_spectrum

    p = _load(args)
    _need(args, "n", "trials")
    mix = _mix(args, p)
    eigs = empirical_spectrum(p, mix, args.n, args.trials, args.seed, _threads(args))
    cfg = _config(args, mix)
    rows = ((t, i, v) for t, row in enumerate(eigs) for i, v in enumerate(row))
    _write_csv(args.out, cfg, ["trial", "index", "value"], rows)
    return 0


def cmd_master_eq(args) -> int:
    from .rmt import master_equation_residual

    p = _load(args)
    _need(args, "n", "trials")
    mix = _mix(args, p)
    lam = _complex(args.lam or "2j", "lam")
    if lam.imag <= 0:
        raise ConfigError("lam: imaginary part must be positive")
    res = master_equation_residual(p, lam, args.n, args.trials, args.seed, mix, _threads(args))
    complex_case = all(k == "SGRM" for k in mix)
    if complex_case:
        ok = res.norm <= max(0.05, 5 * res.stderr)
    else:
        ok = res.corrected_norm is not None and res.corrected_norm <= max(0.05, 5 * res.corrected_stderr)
    result = {"norm": res.norm, "stderr": res.stderr, "stderr_defined": not res.flagged,
              "mean": res.mean, "pass": bool(ok)}
    if res.corrected_norm is not None:
        result.update({"norm_plus_R_over_n": res.corrected_norm, "stderr_plus_R_over_n": res.corrected_stderr,
                       "R_n": res.R_n})
    cfg = _config(args, mix)
    _write_json(args.out, cfg, result)
    return 0 if ok else 1


def _report_cmd(args, fn) -> int:
    p = _load(args)
    _need(args, "n", "trials", "eps")
    mix = _mix(args, p)
    rep = fn(p, mix, args.n, args.eps, args.trials, args.seed, _threads(args))
    _write_json(args.out, _config(args, mix), rep.to_dict())
    return 0 if rep.passed else 1


def cmd_confine(args) -> int:
    from .rmt import confinement_check

    _positive(args.eps, "eps")
    return _report_cmd(args, confinement_check)


def cmd_separate(args) -> int:
    from .rmt import separation_check

    _positive(args.eps, "eps")
    return _report_cmd(args, separation_check)


def cmd_bias_scan(args) -> int:
    from .rmt import gn_bias_scan

    p = _load(args)
    _need(args, "n-list", "trials")
    mix = _mix(args, p)
    n_list = _int_list(args.n_list, "n-list")
    if any(n < 1 for n in n_list):
        raise ConfigError("n-list: sizes must be positive")
    lam = _complex(args.lam or "2j", "lam")
    try:
        rep = gn_bias_scan(p, mix, lam, n_list, args.trials, args.seed, _threads(args))
    except ValueError as exc:
        raise ConfigError(f"n-list: {exc}") from exc
    _write_json(args.out, _config(args, mix), rep.to_dict())
    return 0 if rep.passed is not False else 1


def cmd_correction(args) -> int:
    from .correction import compute_l, delta_functional

    p = _load(args)
    mix = _mix(args, p) if args.mix else ["GOE"] * p.r
    lam = _complex(args.lam or "2j", "lam")
    result = {"lambda": [lam.real, lam.imag], "l": compute_l(p, lam, args.tol, mix=mix)}
    ok = True
    if args.phi:
        phi = _phi_from_text(args.phi)
        kw = {"tol": args.tol}
        if args.y_schedule:
            kw["y_schedule"] = tuple(_float_list(args.y_schedule, "y-schedule"))
        d = delta_functional(p, phi, mix=mix, **kw)
        result["phi"] = phi.to_dict()
        result["delta"] = d.to_dict()
    cfg = _config(args, mix)
    cfg.extra["phi"] = args.phi
    _write_json(args.out, cfg, result)
    return 0 if ok else 1


def cmd_verify(args) -> int:
    from .acceptance import SUITES, run_criteria, summary

    extra = {}
    if args.poly is not None:
        from .spectrum import integer_mass_check

        p = _load(args)
        checks = integer_mass_check(p, **_schedule_kw(args))
        extra = {"poly_mass_checks": [c.to_dict() for c in checks], "poly_pass": all(c.passed for c in checks)}
    only = _int_list(args.only, "only") if args.only else list(SUITES[args.suite])
    bad = [k for k in only if k not in SUITES[args.suite]]
    if bad:
        raise ConfigError(f"only: unknown criteria {bad}")
    results = run_criteria(only, _threads(args), args.seed, log=lambda s: print(s, flush=True))
    summ = summary(results)
    summ.update(extra)
    cfg = _config(args)
    cfg.extra.update({"suite": args.suite, "only": only})
    _write_json(args.out or "verify.json", cfg, summ)
    ok = summ["all_pass"] and extra.get("poly_pass", True)
    print(f"{summ['passed']}/{summ['total']} criteria passed")
    return 0 if ok else 1


HANDLERS = {
    "linearize": cmd_linearize,
    "moments": cmd_moments,
    "density": cmd_density,
    "support": cmd_support,
    "simulate": cmd_simulate,
    "master-eq": cmd_master_eq,
    "confine": cmd_confine,
    "separate": cmd_separate,
    "bias-scan": cmd_bias_scan,
    "correction": cmd_correction,
    "verify": cmd_verify,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--poly", help="polynomial JSON path or fixture name (semicircle, square, anticomm, twoband)")
    common.add_argument("--out", help="output file (stdout when omitted)")
    common.add_argument("--seed", type=int, default=DEFAULT_SEED, help=f"base seed (default {DEFAULT_SEED})")
    common.add_argument("--threads", type=int, default=None,
                        help=f"worker threads; {THREADS_ENV} overrides the default of 1")
    common.add_argument("--tol", type=float, default=1e-10, help="fixed-point residual tolerance")
    common.add_argument("--y-schedule", help="comma-separated decreasing imaginary parts")
    common.add_argument("--grid-step", type=float, help="density grid step")
    common.add_argument("--mix", help="ensemble per generator, comma-separated (GUE/SGRM, GOE, GOE*, GSE, GSE*)")
    common.add_argument("--n", type=int, help="matrix size")
    common.add_argument("--n-list", help="comma-separated matrix sizes")
    common.add_argument("--trials", type=int, help="Monte Carlo trials")
    common.add_argument("--eps", type=float, help="distance to the support")
    common.add_argument("--lam", help="spectral parameter, e.g. 2j or 0.5+1j")

    parser = argparse.ArgumentParser(prog="ncspec", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in SUBCOMMANDS:
        sp = sub.add_parser(name, parents=[common])
        if name == "moments":
            sp.add_argument("--jmax", type=int, default=8)
        if name == "density":
            sp.add_argument("--x-min", type=float)
            sp.add_argument("--x-max", type=float)
        if name == "correction":
            sp.add_argument("--phi", help="test function: bump:c,r | window:a,b | plateau:a,b,lo,hi")
        if name == "verify":
            sp.add_argument("--suite", choices=["quick"], default="quick")
            sp.add_argument("--only", help="comma-separated criterion numbers")
    return parser


def _validate(args) -> None:
    for name in ("n", "trials", "tol", "grid_step", "eps"):
        _positive(getattr(args, name), name.replace("_", "-"))
    if getattr(args, "jmax", 1) is not None and getattr(args, "jmax", 1) < 0:
        raise ConfigError("jmax must be >= 0")
    if args.y_schedule:
        ys = _float_list(args.y_schedule, "y-schedule")
        if any(y <= 0 for y in ys):
            raise ConfigError("y-schedule: values must be positive")


def run(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if isinstance(exc.code, int) else 2
    try:
        _validate(args)
        return HANDLERS[args.command](args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
