"""Spectral density, support components and component masses of ``q = p(x)``.

The density comes from Stieltjes inversion ``rho(x) = -Im g(x + iy) / pi``,
evaluated for a short decreasing schedule of ``y`` and extrapolated to
``y = 0``. Component masses use the exact contour identity for the measure of
an interval whose endpoints lie outside the support, which avoids the
smoothing error of the inversion.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.integrate import simpson

from .linearize import LinearPencil, linearize
from .ncpoly import MatrixNCPoly
from .ovcauchy import DEFAULT_TOL, scalar_g_batch

__all__ = [
    "DEFAULT_Y_SCHEDULE",
    "DEFAULT_GRID_STEP",
    "RHO_THRESH",
    "SpectrumError",
    "DensityGrid",
    "SupportComponents",
    "MassCheck",
    "TestFunction",
    "richardson_zero",
    "density",
    "norm_bound",
    "interval_mass",
    "support_components",
    "integer_mass_check",
    "trace_phi",
    "density_moments",
]

DEFAULT_Y_SCHEDULE = (0.02, 0.01, 0.005)
DEFAULT_GRID_STEP = 0.005
RHO_THRESH = 1e-4
MAX_FAILURE_FRACTION = 0.01
NEG_TOL = 1e-8


class SpectrumError(RuntimeError):
    """Density or support computation could not be completed."""


# ------------------------------------------------------------ test functions


def _smooth_step(t: np.ndarray) -> np.ndarray:
    """C-infinity step: 0 for t <= 0, 1 for t >= 1, built from exp(-1/t)."""
    t = np.asarray(t, dtype=float)
    with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
        f0 = np.where(t > 0, np.exp(-1.0 / np.where(t > 0, t, 1.0)), 0.0)
        f1 = np.where(t < 1, np.exp(-1.0 / np.where(t < 1, 1.0 - t, 1.0)), 0.0)
        out = f0 / (f0 + f1)
    return np.clip(out, 0.0, 1.0)


@dataclass(frozen=True)
class TestFunction:
    """Smooth compactly supported test function.

    Kinds
    -----
    ``bump``
        ``exp(1 - 1/(1 - t^2))`` with ``t = (x - center) / radius``; peak 1.
    ``plateau-bump``
        Equal to 1 on ``[plateau_left, plateau_right]``, 0 outside
        ``[support_left, support_right]``, smooth in between.
    ``constant-window``
        The constant 1, integrated over ``[left, right]`` only. Meant for
        windows that contain the spectrum with room to spare.
    """

    __test__ = False  # not a pytest class

    kind: str
    params: tuple[tuple[str, float], ...] = field(default=())

    @classmethod
    def bump(cls, center: float, radius: float) -> "TestFunction":
        return cls("bump", (("center", float(center)), ("radius", float(radius))))

    @classmethod
    def plateau_bump(cls, plateau: tuple[float, float], support: tuple[float, float]) -> "TestFunction":
        a, b = plateau
        lo, hi = support
        if not lo < a <= b < hi:
            raise ValueError("need support_left < plateau_left <= plateau_right < support_right")
        return cls(
            "plateau-bump",
            (("plateau_left", float(a)), ("plateau_right", float(b)),
             ("support_left", float(lo)), ("support_right", float(hi))),
        )

    @classmethod
    def constant_window(cls, left: float, right: float) -> "TestFunction":
        return cls("constant-window", (("left", float(left)), ("right", float(right))))

    @property
    def p(self) -> dict:
        return dict(self.params)

    def support(self) -> tuple[float, float]:
        q = self.p
        if self.kind == "bump":
            return q["center"] - q["radius"], q["center"] + q["radius"]
        if self.kind == "plateau-bump":
            return q["support_left"], q["support_right"]
        if self.kind == "constant-window":
            return q["left"], q["right"]
        raise ValueError(f"unknown test function kind {self.kind!r}")

    def __call__(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        q = self.p
        if self.kind == "bump":
            t = (x - q["center"]) / q["radius"]
            inside = np.abs(t) < 1
            with np.errstate(divide="ignore", over="ignore"):
                val = np.exp(1.0 - 1.0 / np.where(inside, 1.0 - t * t, 1.0))
            return np.where(inside, val, 0.0)
        if self.kind == "plateau-bump":
            up = _smooth_step((x - q["support_left"]) / (q["plateau_left"] - q["support_left"]))
            down = _smooth_step((q["support_right"] - x) / (q["support_right"] - q["plateau_right"]))
            return up * down
        if self.kind == "constant-window":
            return np.where((x >= q["left"]) & (x <= q["right"]), 1.0, 0.0)
        raise ValueError(f"unknown test function kind {self.kind!r}")

    def to_dict(self) -> dict:
        return {"kind": self.kind, **self.p}

    @classmethod
    def from_dict(cls, d: dict) -> "TestFunction":
        d = dict(d)
        kind = d.pop("kind")
        if kind == "bump":
            return cls.bump(d["center"], d["radius"])
        if kind == "plateau-bump":
            return cls.plateau_bump((d["plateau_left"], d["plateau_right"]),
                                    (d["support_left"], d["support_right"]))
        if kind == "constant-window":
            return cls.constant_window(d["left"], d["right"])
        raise ValueError(f"unknown test function kind {kind!r}")


# ------------------------------------------------------------ density


def richardson_zero(ys: Sequence[float], values: Sequence[np.ndarray]) -> np.ndarray:
    """Polynomial extrapolation of ``values(y)`` to ``y = 0``.

    With three levels in ratio 2 this is two-level Richardson extrapolation
    (cancels the ``y`` and ``y^2`` terms).
    """
    ys = np.asarray(ys, dtype=float)
    out = 0.0
    for i, (yi, vi) in enumerate(zip(ys, values)):
        w = 1.0
        for j, yj in enumerate(ys):
            if j != i:
                w *= (0.0 - yj) / (yi - yj)
        out = out + w * np.asarray(vi)
    return out


def _check_schedule(ys: Sequence[float]) -> tuple[float, ...]:
    ys = tuple(float(y) for y in ys)
    if not ys or any(y <= 0 for y in ys):
        raise ValueError("y_schedule must be positive")
    if any(b >= a for a, b in zip(ys, ys[1:])):
        raise ValueError("y_schedule must be strictly decreasing")
    return ys


@dataclass
class DensityGrid:
    """Extrapolated density on a grid.

    ``min_unclamped`` is the smallest extrapolated value before negative
    values were clamped to zero.
    """

    xs: np.ndarray
    rho: np.ndarray
    y_used: tuple[float, ...]
    mass: float
    min_unclamped: float
    failures: int
    g_levels: list[np.ndarray] = field(default_factory=list, repr=False)
    G_last: np.ndarray | None = field(default=None, repr=False)

    def to_dict(self) -> dict:
        return {"y_schedule": list(self.y_used), "mass_total": self.mass,
                "min_unclamped": self.min_unclamped, "solver_failures": self.failures}


def _g_levels(pencil: LinearPencil, xs: np.ndarray, ys: Sequence[float], tol: float, G0=None):
    levels, G, fails = [], G0, np.zeros(xs.size, dtype=bool)
    for y in ys:
        g, out = scalar_g_batch(pencil, xs + 1j * y, tol, G0=G)
        fails |= ~out.converged
        # keep failed points' iterates out of the next warm start
        G = np.where(out.converged[:, None, None], out.G, np.nan)
        G = _fill_nan_neighbours(G)
        levels.append(g)
    return levels, fails, G


def _fill_nan_neighbours(G: np.ndarray) -> np.ndarray:
    bad = np.flatnonzero(np.isnan(G.reshape(G.shape[0], -1)).any(axis=1))
    if bad.size == 0:
        return G
    good = np.setdiff1d(np.arange(G.shape[0]), bad)
    if good.size == 0:
        return None
    G = G.copy()
    for i in bad:
        G[i] = G[good[np.argmin(np.abs(good - i))]]
    return G


def density(
    p,
    x_grid: np.ndarray,
    y_schedule: Sequence[float] = DEFAULT_Y_SCHEDULE,
    tol: float = DEFAULT_TOL,
) -> DensityGrid:
    """Density of ``q`` on ``x_grid`` by extrapolated Stieltjes inversion.

    Parameters
    ----------
    p : MatrixNCPoly or LinearPencil
    x_grid : array
        Increasing grid.
    y_schedule : sequence of float
        Strictly decreasing heights; each level warm-starts the next.
    tol : float
        Fixed-point residual tolerance.

    Raises
    ------
    SpectrumError
        If the solver fails on more than 1% of the grid points.
    """
    xs = np.asarray(x_grid, dtype=float)
    if xs.ndim != 1 or xs.size < 3 or np.any(np.diff(xs) <= 0):
        raise ValueError("x_grid must be increasing with at least 3 points")
    ys = _check_schedule(y_schedule)
    pencil = p if isinstance(p, LinearPencil) else linearize(p)
    levels, fails, G_last = _g_levels(pencil, xs, ys, tol)
    nfail = int(fails.sum())
    if nfail > MAX_FAILURE_FRACTION * xs.size:
        bad = xs[fails]
        raise SpectrumError(
            f"solver failed at {nfail}/{xs.size} grid points "
            f"(first failures at x={bad[:5].round(4).tolist()})"
        )
    rho = richardson_zero(ys, [-lv.imag / np.pi for lv in levels])
    if nfail:
        ok = ~fails
        rho[fails] = np.interp(xs[fails], xs[ok], rho[ok])
    min_raw = float(rho.min())
    rho = np.maximum(rho, 0.0)
    mass = float(simpson(rho, x=xs))
    return DensityGrid(xs, rho, ys, mass, min_raw, nfail, levels, G_last)


def norm_bound(p: MatrixNCPoly) -> float:
    """Upper bound ``sum_w ||c_w|| 2^{|w|}`` on ``||p(x)||``."""
    return float(sum(np.linalg.norm(c, 2) * 2.0 ** len(w) for w, c in p.terms.items()))


def _point_density(pencil, x: float, ys, tol) -> float:
    levels, fails, _ = _g_levels(pencil, np.array([x]), ys, tol)
    if fails.any():
        raise SpectrumError(f"solver failed at x={x}")
    return float(richardson_zero(ys, [-lv.imag / np.pi for lv in levels])[0])


# ------------------------------------------------------------ masses


def _gauss_panels(a: float, b: float, width: float, order: int = 16):
    nodes, weights = np.polynomial.legendre.leggauss(order)
    npan = max(1, int(np.ceil((b - a) / width)))
    edges = np.linspace(a, b, npan + 1)
    xs, ws = [], []
    for lo, hi in zip(edges[:-1], edges[1:]):
        xs.append(0.5 * (hi - lo) * nodes + 0.5 * (hi + lo))
        ws.append(0.5 * (hi - lo) * weights)
    return np.concatenate(xs), np.concatenate(ws)


def _graded_panels(height: float, first: float, order: int = 16):
    """Gauss nodes on ``[0, height]`` with panels doubling in width from ``first``."""
    edges = [0.0]
    w = first
    while edges[-1] + w < height:
        edges.append(edges[-1] + w)
        w *= 2
    edges.append(height)
    nodes, weights = np.polynomial.legendre.leggauss(order)
    xs = [0.5 * (hi - lo) * nodes + 0.5 * (hi + lo) for lo, hi in zip(edges[:-1], edges[1:])]
    ws = [0.5 * (hi - lo) * weights for lo, hi in zip(edges[:-1], edges[1:])]
    return np.concatenate(xs), np.concatenate(ws)


def interval_mass(p, a: float, b: float, tol: float = DEFAULT_TOL, height: float | None = None,
                  margin: float | None = None) -> float:
    """Measure ``mu_q([a, b])`` for ``a, b`` outside the support.

    Uses the rectangle contour through ``a`` and ``b`` at height ``+-Y``:

        mu = -(1/pi) int_a^b Im g(x + iY) dx
             + (1/pi) int_0^Y [Re g(b + it) - Re g(a + it)] dt,

    exact for any ``Y > 0`` by the residue theorem and the reflection
    ``g(conj z) = conj g(z)``.

    Parameters
    ----------
    margin : float, optional
        Lower bound on the distance from ``a`` and ``b`` to the support; sets
        the first panel width on the vertical sides, which then doubles.
    """
    pencil = p if isinstance(p, LinearPencil) else linearize(p)
    if not b > a:
        raise ValueError("need b > a")
    Y = height if height is not None else min(1.0, 0.5 * (b - a))
    margin = margin if margin is not None else Y
    xs, wx = _gauss_panels(a, b, Y / 2)
    ts, wt = _graded_panels(Y, max(min(margin, Y) / 2, 1e-3))
    g_top, out_top = scalar_g_batch(pencil, xs + 1j * Y, tol)
    g_l, out_l = scalar_g_batch(pencil, a + 1j * ts, tol)
    g_r, out_r = scalar_g_batch(pencil, b + 1j * ts, tol)
    if not (out_top.converged.all() and out_l.converged.all() and out_r.converged.all()):
        raise SpectrumError(f"solver failed on the contour around [{a}, {b}]")
    top = -np.sum(wx * g_top.imag) / np.pi
    sides = np.sum(wt * (g_r.real - g_l.real)) / np.pi
    return float(top + sides)


# ------------------------------------------------------------ support


@dataclass
class SupportComponents:
    """Connected components of the support with their masses.

    ``masses`` come from :func:`interval_mass` over each component widened
    by ``margin``; ``density_masses`` are the plain quadratures of the
    extrapolated density over the same intervals, kept for comparison.
    """

    intervals: list[tuple[float, float]]
    masses: list[float]
    eps0: float
    m: int
    margin: float
    density_masses: list[float] = field(default_factory=list)
    atoms: list[bool] = field(default_factory=list)
    grid: DensityGrid | None = field(default=None, repr=False)

    @property
    def mass_total(self) -> float:
        return float(sum(self.masses))

    def to_dict(self) -> dict:
        return {
            "intervals": [[float(a), float(b)] for a, b in self.intervals],
            "masses": [float(x) for x in self.masses],
            "density_masses": [float(x) for x in self.density_masses],
            "atoms": list(self.atoms),
            "eps0": float(self.eps0) if np.isfinite(self.eps0) else None,
            "margin": float(self.margin),
            "mass_total": self.mass_total,
            "m": self.m,
        }


def _runs(mask: np.ndarray) -> list[tuple[int, int]]:
    """Inclusive index ranges of maximal True runs."""
    padded = np.concatenate([[False], mask, [False]]).astype(int)
    d = np.diff(padded)
    starts, ends = np.flatnonzero(d == 1), np.flatnonzero(d == -1) - 1
    return list(zip(starts.tolist(), ends.tolist()))


def _bisect(f, lo: float, hi: float, inside_hi: bool, resolution: float, max_iter: int = 40) -> float:
    """Crossing of ``f > thresh`` between ``lo`` and ``hi``.

    ``inside_hi`` says which end lies inside the support.
    """
    for _ in range(max_iter):
        if hi - lo <= resolution:
            break
        mid = 0.5 * (lo + hi)
        if f(mid) == inside_hi:
            hi = mid
        else:
            lo = mid
    return 0.5 * (lo + hi)


def _scan_window(p: MatrixNCPoly, pencil, ys, tol, thresh) -> tuple[float, float]:
    bound = norm_bound(p)
    step = max(0.02, 2 * bound / 3000)
    xs = np.arange(-bound - 1, bound + 1 + step / 2, step)
    grid = density(pencil, xs, ys, tol)
    hit = xs[grid.rho > thresh]
    if hit.size == 0:
        raise SpectrumError("no spectral mass found inside the norm bound")
    return float(hit.min()), float(hit.max())


def support_components(
    p: MatrixNCPoly,
    grid_step: float = DEFAULT_GRID_STEP,
    rho_thresh: float = RHO_THRESH,
    y_schedule: Sequence[float] = DEFAULT_Y_SCHEDULE,
    tol: float = DEFAULT_TOL,
    resolution: float = 1e-4,
    window: tuple[float, float] | None = None,
) -> SupportComponents:
    """Locate the connected components of ``supp mu_q``.

    Components are maximal runs with ``rho > rho_thresh`` on a grid of step
    ``grid_step``; endpoints are refined by bisection on the extrapolated
    density. The window is widened until the density stays below threshold
    within distance 1 of both ends.

    Raises
    ------
    SpectrumError
        If more than ``m`` components are found.
    """
    if p.m != p.m_prime:
        raise ValueError("support needs a square polynomial")
    ys = _check_schedule(y_schedule)
    pencil = linearize(p)
    lo, hi = window if window is not None else _scan_window(p, pencil, ys, tol, rho_thresh)
    lo, hi = lo - 1.0, hi + 1.0
    for _ in range(20):
        xs = np.arange(lo, hi + grid_step / 2, grid_step)
        grid = density(pencil, xs, ys, tol)
        left_busy = grid.rho[xs < lo + 1.0].max() > rho_thresh
        right_busy = grid.rho[xs > hi - 1.0].max() > rho_thresh
        if not (left_busy or right_busy):
            break
        lo -= 1.0 if left_busy else 0.0
        hi += 1.0 if right_busy else 0.0
    else:
        raise SpectrumError("could not bracket the support")

    def above(x: float) -> bool:
        return _point_density(pencil, x, ys, tol) > rho_thresh

    runs = _runs(grid.rho > rho_thresh)
    intervals, atoms = [], []
    for i0, i1 in runs:
        a = _bisect(above, xs[i0 - 1], xs[i0], True, resolution)
        b = _bisect(above, xs[i1], xs[i1 + 1], False, resolution)
        intervals.append((a, b))
        atoms.append(i1 - i0 + 1 < 2)
    gaps = [c - b for (_, b), (c, _) in zip(intervals, intervals[1:])]
    eps0 = min(gaps) if gaps else np.inf
    margin = min(0.25, eps0 / 3)
    masses, dmasses = [], []
    for (a, b), atom in zip(intervals, atoms):
        lo_i, hi_i = a - margin, b + margin
        masses.append(interval_mass(pencil, lo_i, hi_i, tol, margin=margin))
        sel = (xs >= lo_i) & (xs <= hi_i)
        dmasses.append(float(simpson(grid.rho[sel], x=xs[sel])) if sel.sum() >= 3 else 0.0)
    # narrow runs that do not carry an atom's worth of mass are threshold noise
    keep = [not at or ms > 1.0 / (2 * p.m) for at, ms in zip(atoms, masses)]
    intervals = [iv if not at else (0.5 * (iv[0] + iv[1]),) * 2
                 for iv, at, k in zip(intervals, atoms, keep) if k]
    masses = [x for x, k in zip(masses, keep) if k]
    dmasses = [x for x, k in zip(dmasses, keep) if k]
    atoms = [x for x, k in zip(atoms, keep) if k]
    if len(intervals) > p.m:
        raise SpectrumError(
            f"found {len(intervals)} support components but m = {p.m}; "
            "the density is not resolved (try a smaller y schedule or grid step)"
        )
    return SupportComponents(intervals, masses, eps0, p.m, margin, dmasses, atoms, grid)


@dataclass(frozen=True)
class MassCheck:
    interval: tuple[float, float]
    mass: float
    mass_times_m: float
    nearest_integer: int
    passed: bool

    def to_dict(self) -> dict:
        return {"interval": list(self.interval), "mass": self.mass, "mass_times_m": self.mass_times_m,
                "nearest_integer": self.nearest_integer, "pass": self.passed}


def integer_mass_check(p: MatrixNCPoly, components: SupportComponents | None = None,
                       atol: float = 5e-3, **kwargs) -> list[MassCheck]:
    """Check that every component mass is a positive multiple of ``1/m``."""
    comps = components if components is not None else support_components(p, **kwargs)
    out = []
    for iv, ms in zip(comps.intervals, comps.masses):
        scaled = ms * p.m
        k = int(round(scaled))
        out.append(MassCheck(tuple(iv), float(ms), float(scaled), k, abs(scaled - k) <= atol and k >= 1))
    return out


def trace_phi(
    p,
    phi: TestFunction,
    grid_step: float = DEFAULT_GRID_STEP,
    y_schedule: Sequence[float] = DEFAULT_Y_SCHEDULE,
    tol: float = DEFAULT_TOL,
) -> float:
    """``(tr_m (x) tau) phi(q) = int phi rho``, by Simpson over ``supp phi``."""
    lo, hi = phi.support()
    npts = int(np.ceil((hi - lo) / grid_step)) + 1
    npts += 1 - npts % 2  # odd count for Simpson
    xs = np.linspace(lo, hi, npts)
    grid = density(p, xs, y_schedule, tol)
    return float(simpson(phi(xs) * grid.rho, x=xs))


def density_moments(
    p,
    jmax: int,
    window: tuple[float, float],
    grid_step: float = DEFAULT_GRID_STEP,
    y_schedule: Sequence[float] = DEFAULT_Y_SCHEDULE,
    tol: float = DEFAULT_TOL,
) -> tuple[np.ndarray, DensityGrid]:
    """Moments ``int x^j rho(x) dx`` for ``j = 0..jmax`` by Simpson.

    The grid is snapped to integer multiples of ``grid_step`` so that points
    such as a hard edge at ``0`` fall on nodes.
    """
    lo = np.floor(window[0] / grid_step)
    hi = np.ceil(window[1] / grid_step)
    if (hi - lo) % 2:
        hi += 1
    xs = np.arange(lo, hi + 1) * grid_step
    grid = density(p, xs, y_schedule, tol)
    return np.array([simpson(grid.rho * xs**j, x=xs) for j in range(jmax + 1)]), grid
