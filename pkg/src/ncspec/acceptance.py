"""Acceptance criteria, each run at its stated tolerance.

Every criterion is a function returning a :class:`CriterionResult`; the
runner prints one pass/fail line per criterion. Nothing here loosens a
threshold: a criterion that cannot be met at desk scale fails and says why.
"""

from __future__ import annotations

import json
import math
import tempfile
import time
import traceback
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import fixture_path
from .correction import delta_functional
from .freemoments import catalan, poly_moments
from .linearize import factorize, linearize, pencil_block_inverse, pencil_matrix
from .ncpoly import (
    MatrixNCPoly,
    block_diag_poly,
    constant,
    generator,
    load_poly,
    random_poly,
    random_self_adjoint_poly,
)
from .rmt import (
    DEFAULT_SEED,
    confinement_check,
    gn_bias_scan,
    master_equation_residual,
    separation_check,
)
from .spectrum import (
    SpectrumError,
    TestFunction,
    density,
    density_moments,
    integer_mass_check,
    support_components,
)

__all__ = ["CriterionResult", "CRITERIA", "SUITES", "run_criteria", "oracle_polys", "mass_suite_polys"]


@dataclass
class CriterionResult:
    number: int
    title: str
    passed: bool
    measured: dict
    threshold: str
    seconds: float = 0.0
    error: str | None = None
    notes: list[str] = field(default_factory=list)

    def line(self) -> str:
        tag = "PASS" if self.passed else "FAIL"
        shown = ", ".join(f"{k}={_fmt(v)}" for k, v in self.measured.items() if not isinstance(v, (list, dict)))
        msg = f"[{tag}] criterion {self.number:2d} {self.title}: {shown} (need {self.threshold}; {self.seconds:.1f}s)"
        if self.error:
            msg += f" error: {self.error}"
        return msg

    def to_dict(self) -> dict:
        return {"criterion": self.number, "title": self.title, "pass": self.passed,
                "measured": _jsonable(self.measured), "threshold": self.threshold,
                "seconds": round(self.seconds, 3), "error": self.error, "notes": self.notes}


def _fmt(v) -> str:
    if isinstance(v, bool):
        return str(v)
    if isinstance(v, float):
        return f"{v:.4g}"
    if isinstance(v, complex):
        return f"{v.real:.4g}{v.imag:+.4g}j"
    return str(v)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (complex, np.complexfloating)):
        return [float(obj.real), float(obj.imag)]
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    return obj


# ------------------------------------------------------------ polynomial suites


def oracle_polys() -> list[tuple[str, MatrixNCPoly]]:
    """X1^2, the anticommutator and three random self-adjoint polynomials."""
    x, y = generator(1, 2), generator(2, 2)
    x1 = generator(1, 1)
    out = [("X1^2", x1 @ x1), ("X1X2+X2X1", x @ y + y @ x)]
    rng = np.random.default_rng(3)
    for m, r, d in [(1, 2, 3), (2, 2, 2), (2, 1, 3)]:
        out.append((f"random(m={m},r={r},d={d})", random_self_adjoint_poly(rng, m, r, d, scale=0.5)))
    return out


def mass_suite_polys(count: int = 20, seed: int = 9) -> list[tuple[str, MatrixNCPoly]]:
    """Random self-adjoint polynomials, every fourth one block diagonal.

    The block diagonal members ``p1 (+) (p2 + c)`` usually have two
    components, so the suite exercises masses other than 1.
    """
    rng = np.random.default_rng(seed)
    shapes = [(1, 1, 2), (1, 2, 2), (2, 1, 1), (2, 2, 1), (2, 1, 2), (1, 2, 1)]
    out = []
    for i in range(count):
        if i % 4 == 3:
            r = int(rng.integers(1, 3))
            p1 = random_self_adjoint_poly(rng, 1, r, 1 + int(rng.integers(0, 2)))
            p2 = random_self_adjoint_poly(rng, 1, r, 1 + int(rng.integers(0, 2)))
            shift = float(rng.uniform(3.0, 8.0))
            out.append((f"blockdiag#{i}", block_diag_poly(p1, p2 + constant(np.array([[shift]]), r))))
        else:
            m, r, d = shapes[i % len(shapes)]
            out.append((f"random#{i}(m={m},r={r},d={d})", random_self_adjoint_poly(rng, m, r, d)))
    return out


# ------------------------------------------------------------ criteria


def _semicircle_density(x):
    return np.sqrt(np.clip(4 - x * x, 0, None)) / (2 * np.pi)


def crit_semicircle(**_) -> CriterionResult:
    t0 = time.perf_counter()
    p = load_poly(fixture_path("semicircle"))
    xs = np.arange(-380, 381) * 0.005
    grid = density(p, xs)
    sup = float(np.max(np.abs(grid.rho - _semicircle_density(xs))))
    comps = support_components(p)
    (a, b), = comps.intervals
    end_err = max(abs(a + 2), abs(b - 2))
    secs = time.perf_counter() - t0
    ok = sup <= 1e-3 and end_err <= 2e-2 and secs <= 60
    return CriterionResult(1, "semicircle pipeline", ok,
                           {"sup_err": sup, "left": a, "right": b, "endpoint_err": end_err, "runtime_s": secs},
                           "sup_err<=1e-3, endpoint_err<=2e-2, runtime<=60s")


def crit_free_poisson(**_) -> CriterionResult:
    p = load_poly(fixture_path("square"))
    comps = support_components(p)
    (a, b), = comps.intervals
    rho2 = float(density(p, np.array([1.995, 2.0, 2.005])).rho[1])
    moms, _ = density_moments(p, 6, (-1.0, 5.0))
    oracle = poly_moments(p, 6)
    rel = [abs(moms[j] - catalan(j)) / catalan(j) for j in range(1, 7)]
    rel_oracle = [abs(oracle[j] - catalan(j)) / catalan(j) for j in range(1, 7)]
    ok = (abs(b - 4) <= 2e-2 and abs(a) <= 5e-2 and abs(rho2 - 1 / (2 * np.pi)) <= 2e-3
          and max(rel) <= 1e-3 and max(rel_oracle) == 0)
    return CriterionResult(2, "free Poisson pipeline", ok,
                           {"left": a, "right": b, "rho(2)": rho2, "rho(2)_err": abs(rho2 - 1 / (2 * np.pi)),
                            "max_moment_rel_err": max(rel), "moment_rel_err": rel},
                           "|right-4|<=2e-2, |left|<=5e-2, |rho(2)-1/2pi|<=2e-3, moments rel<=1e-3")


def crit_oracle(**_) -> CriterionResult:
    worst, rows, ok = 0.0, {}, True
    for name, p in oracle_polys():
        comps = support_components(p, grid_step=0.01)
        window = (comps.intervals[0][0] - 0.3, comps.intervals[-1][1] + 0.3)
        moms, _ = density_moments(p, 6, window)
        oracle = poly_moments(p, 6)
        errs = [abs(moms[j] - oracle[j]) / max(1.0, abs(oracle[j])) for j in range(1, 7)]
        rows[name] = max(errs)
        worst = max(worst, max(errs))
        ok &= max(errs) <= 1e-3
    return CriterionResult(3, "oracle equivalence", ok, {"worst_err": worst, "per_poly": rows},
                           "moments j<=6 within 1e-3 relative (absolute when |m_j|<1)")


def crit_roundtrip(**_) -> CriterionResult:
    rng = np.random.default_rng(4)
    worst = 0.0
    for _ in range(100):
        m, mp, r, d = (int(rng.integers(1, 4)), int(rng.integers(1, 4)), int(rng.integers(1, 4)),
                       int(rng.integers(1, 5)))
        p = random_poly(rng, m, mp, r, d)
        worst = max(worst, factorize(p).product().max_coeff_diff(p))
    return CriterionResult(4, "symbolic round-trip", worst <= 1e-12, {"instances": 100, "max_coeff_err": worst},
                           "max_coeff_err<=1e-12")


def crit_block_inverse(**_) -> CriterionResult:
    rng = np.random.default_rng(5)
    worst = 0.0
    for _ in range(50):
        m, r, d, n = int(rng.integers(1, 3)), int(rng.integers(1, 3)), int(rng.integers(1, 4)), int(rng.integers(1, 4))
        p = random_self_adjoint_poly(rng, m, r, d)
        v = []
        for _ in range(r):
            z = rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))
            v.append((z + z.conj().T) / 2)
        lam = complex(rng.uniform(-3, 3), rng.choice([-1, 1]) * rng.uniform(0.5, 2))
        f = factorize(p)
        A = pencil_matrix(linearize(p), lam, v)
        BC = pencil_block_inverse(f, lam, v)
        worst = max(worst, float(np.linalg.norm(BC @ A - np.eye(A.shape[0]), 2)))
    return CriterionResult(5, "block-inverse identity", worst <= 1e-10, {"instances": 50, "max_err": worst},
                           "||(B+C)A - 1||<=1e-10")


def crit_master_equation(threads: int = 1, seed: int = DEFAULT_SEED, **_) -> CriterionResult:
    t0 = time.perf_counter()
    x1 = generator(1, 1)
    x, y = generator(1, 2), generator(2, 2)
    meas, ok = {}, True
    for name, p in (("X1", x1), ("X1X2+X2X1", x @ y + y @ x)):
        res = master_equation_residual(p, 2j, 50, 2000, seed, ["SGRM"] * p.r, threads)
        bound = max(0.05, 5 * res.stderr)
        meas[f"{name}_norm"] = res.norm
        meas[f"{name}_stderr"] = res.stderr
        ok &= res.norm <= bound
    secs = time.perf_counter() - t0
    meas["runtime_s"] = secs
    return CriterionResult(6, "master equation", ok and secs <= 300, meas,
                           "||mean||<=max(0.05, 5 stderr), runtime<=300s")


def crit_confinement(threads: int = 1, seed: int = DEFAULT_SEED, **_) -> CriterionResult:
    sq = load_poly(fixture_path("square"))
    sc = load_poly(fixture_path("semicircle"))
    r1 = confinement_check(sq, ["SGRM"], 500, 0.25, 20, seed, threads)
    r2 = confinement_check(sc, ["GOE"], 500, 0.3, 20, seed, threads)
    ok = r1.estimates["trials_passed"] >= 19 and r2.estimates["trials_passed"] >= 19
    return CriterionResult(7, "confinement", ok,
                           {"X1^2_GUE_passed": r1.estimates["trials_passed"],
                            "X1_GOE_passed": r2.estimates["trials_passed"]}, ">=19/20 trials each")


def crit_separation(threads: int = 1, seed: int = DEFAULT_SEED, **_) -> CriterionResult:
    p = load_poly(fixture_path("twoband"))
    comps = support_components(p)
    meas, ok = {}, True
    for kind in ("SGRM", "GOE"):
        rep = separation_check(p, [kind], 200, 0.5, 20, seed, threads, components=comps)
        meas[f"{kind}_exact"] = rep.estimates["trials_exact"]
        meas[f"{kind}_expected"] = rep.estimates["expected_counts"]
        ok &= rep.estimates["trials_exact"] >= 19 and rep.estimates["expected_counts"] == [200, 200]
    return CriterionResult(8, "exact separation", ok, meas, "counts (200,200) in >=19/20 trials for GUE and GOE")


def crit_integer_masses(**_) -> CriterionResult:
    rows, ok, worst = {}, True, 0.0
    for name, p in mass_suite_polys():
        try:
            comps = support_components(p, grid_step=0.01)
        except SpectrumError as exc:
            rows[name] = f"error: {exc}"
            ok = False
            continue
        checks = integer_mass_check(p, comps)
        dev = max(abs(c.mass_times_m - c.nearest_integer) for c in checks)
        worst = max(worst, dev)
        rows[name] = {"components": len(comps.intervals), "m": p.m,
                      "mass_times_m": [c.mass_times_m for c in checks]}
        ok &= len(comps.intervals) <= p.m and all(c.passed for c in checks)
    return CriterionResult(9, "integer masses and component bound", ok,
                           {"polynomials": len(rows), "worst_integer_dev": worst, "per_poly": rows},
                           "components<=m, |mass*m - k|<=5e-3 with k>=1")


def crit_gue_rate(threads: int = 1, seed: int = DEFAULT_SEED, **_) -> CriterionResult:
    rep = gn_bias_scan(generator(1, 1), ["SGRM"], 2j, [25, 50, 100, 200], 500, seed, threads)
    slope = rep.estimates["slope"]
    return CriterionResult(10, "GUE rate", bool(rep.passed),
                           {"slope": slope, "abs_bias": [r["abs_bias"] for r in rep.estimates["rows"]]},
                           "slope in [-2.6, -1.4]", notes=rep.notes)


def crit_goe_correction(threads: int = 1, seed: int = DEFAULT_SEED, **_) -> CriterionResult:
    x1 = generator(1, 1)
    window = TestFunction.constant_window(-4.0, 6.0)
    d_x1 = delta_functional(x1, window, mix=["GOE"]).delta_phi
    d_sq = delta_functional(x1 @ x1, window, mix=["GOE"]).delta_phi
    tb = load_poly(fixture_path("twoband"))
    comps = support_components(tb)
    (a, b) = comps.intervals[1]
    # plateau over the upper component, support inside the gap and beyond
    bump = TestFunction.plateau_bump((a - 0.1, b + 0.1), (a - 0.4, b + 0.4))
    d_bump = delta_functional(tb, bump, mix=["GOE"]).delta_phi
    rep = gn_bias_scan(x1, ["GOE"], 2j, [100, 200, 400], 1000, seed, threads)
    z = max(rep.estimates["z_scores_plus_l"])
    ok = abs(d_x1) <= 1e-3 and abs(d_sq) <= 1e-3 and abs(d_bump) <= 1e-3 and z <= 3
    return CriterionResult(11, "GOE correction", ok,
                           {"Delta1_X1": d_x1, "Delta1_X1^2": d_sq, "Delta_bump_twoband": d_bump,
                            "l(2i)": complex(*rep.estimates["l"]), "max_z": z,
                            "n_times_bias": [complex(*r["n_times_bias"]) for r in rep.estimates["rows"]]},
                           "|Delta|<=1e-3 (a,b); n(g_n-g) within 3 stderr of +l(2i) (c)")


def crit_determinism(seed: int = DEFAULT_SEED, **_) -> CriterionResult:
    from .cli import run

    outs = []
    with tempfile.TemporaryDirectory() as tmp:
        for threads in (1, 3):
            for cmd in (["separate", "--poly", "twoband", "--n", "60", "--trials", "6", "--eps", "0.5"],
                        ["bias-scan", "--poly", "semicircle", "--mix", "GOE", "--n-list", "20,40,80",
                         "--trials", "20"]):
                path = Path(tmp) / f"{cmd[0]}-{threads}.json"
                code = run(cmd + ["--seed", str(seed), "--threads", str(threads), "--out", str(path)])
                outs.append((cmd[0], threads, code, path.read_bytes() if path.exists() else b""))
    same = all(a[3] == b[3] and a[3] for a, b in zip(outs[:2], outs[2:]))
    return CriterionResult(12, "determinism across threads", same,
                           {"reports_compared": 2, "byte_identical": same},
                           "byte-identical JSON for --threads 1 and 3")


CRITERIA: dict[int, Callable[..., CriterionResult]] = {
    1: crit_semicircle,
    2: crit_free_poisson,
    3: crit_oracle,
    4: crit_roundtrip,
    5: crit_block_inverse,
    6: crit_master_equation,
    7: crit_confinement,
    8: crit_separation,
    9: crit_integer_masses,
    10: crit_gue_rate,
    11: crit_goe_correction,
    12: crit_determinism,
}
SUITES = {"quick": tuple(CRITERIA)}


def run_criterion(number: int, threads: int = 1, seed: int = DEFAULT_SEED) -> CriterionResult:
    t0 = time.perf_counter()
    try:
        res = CRITERIA[number](threads=threads, seed=seed)
    except Exception as exc:  # a crash is a failed criterion, not a crashed suite
        res = CriterionResult(number, CRITERIA[number].__name__, False, {}, "-",
                              error=f"{type(exc).__name__}: {exc}", notes=[traceback.format_exc()])
    res.seconds = time.perf_counter() - t0
    return res


def run_criteria(numbers: Sequence[int] | None = None, threads: int = 1, seed: int = DEFAULT_SEED,
                 log: Callable[[str], None] | None = print) -> list[CriterionResult]:
    out = []
    for k in numbers if numbers is not None else CRITERIA:
        res = run_criterion(int(k), threads, seed)
        if log is not None:
            log(res.line())
        out.append(res)
    return out


def summary(results: Sequence[CriterionResult]) -> dict:
    return {"passed": sum(r.passed for r in results), "total": len(results),
            "all_pass": all(r.passed for r in results), "criteria": [r.to_dict() for r in results]}


if __name__ == "__main__":
    print(json.dumps(summary(run_criteria()), indent=1))
