"""First-order (1/n) correction for real Gaussian ensembles.

For ``S_n = a_0 (x) 1 + sum_j a_j (x) X_j`` with ``X_j`` drawn from GOE
(``eps_j = +1``) or GOE* (``eps_j = -1``), the averaged resolvent differs from
its free limit at order ``1/n``. The correction is expressed through the
two-sided resolvent functional

    K(lam, x) = -(id (x) tau)[(Lam^T - s^t)^{-1} (x (x) 1) (Lam - s)^{-1}],

which is linear in ``x`` and occupies the off-diagonal block of the
Cauchy transform of a doubled, block-triangular pencil. ``K`` yields
``R(lam)``; the correction ``L(lam)`` is then the derivative of ``G`` along
``-R G^{-1}``, i.e. ``(id (x) tau)[(Lam - s)^{-1} (R G^{-1} (x) 1) (Lam - s)^{-1}]``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .linearize import LinearPencil, linearize
from .ovcauchy import DEFAULT_TOL, SolverError, solve_fixed_point, solve_G_batch

__all__ = [
    "DoubledPencil",
    "CorrectionPoint",
    "DeltaResult",
    "build_doubled",
    "eps_from_mix",
    "solve_doubled_G",
    "solve_K_linear",
    "k_operator",
    "compute_R",
    "compute_L",
    "compute_l",
    "correction_point",
    "l_batch",
    "delta_functional",
    "DEFAULT_DELTA_Y",
    "MAX_K",
]

DEFAULT_DELTA_Y = (0.05, 0.025, 0.0125)
MAX_K = 64
K_COND_LIMIT = 1e12


@dataclass(frozen=True)
class DoubledPencil:
    """Pencil with coefficients ``a_hat_j = diag(eps_j a_j^T, a_j)``.

    ``a_hat_0 = diag(a_0^T, a_0)``. ``base`` keeps the original pencil.
    """

    base: LinearPencil
    eps: tuple[int, ...]
    a_hat: np.ndarray

    @property
    def k(self) -> int:
        return self.base.k

    @property
    def k2(self) -> int:
        return 2 * self.base.k


def eps_from_mix(mix: Sequence[str]) -> tuple[int, ...]:
    """Sign per generator: +1 for GOE, -1 for GOE*."""
    out = []
    for kind in mix:
        key = kind.upper().replace("*", "STAR")
        if key == "GOE":
            out.append(1)
        elif key == "GOESTAR":
            out.append(-1)
        else:
            raise ValueError(f"the 1/n correction is defined for GOE/GOE* generators, got {kind!r}")
    return tuple(out)


def build_doubled(pencil: LinearPencil, eps: Sequence[int] | None = None) -> DoubledPencil:
    """Doubled pencil for real ensembles; ``eps`` defaults to all GOE."""
    if pencil.k > MAX_K:
        raise ValueError(f"k = {pencil.k} exceeds the supported maximum {MAX_K}")
    eps = tuple(int(e) for e in (eps if eps is not None else [1] * pencil.r))
    if len(eps) != pencil.r or any(e not in (1, -1) for e in eps):
        raise ValueError(f"eps must be {pencil.r} values in {{+1, -1}}")
    k = pencil.k
    a_hat = np.zeros((pencil.r + 1, 2 * k, 2 * k), dtype=complex)
    for j, aj in enumerate(pencil.a):
        sign = 1 if j == 0 else eps[j - 1]
        a_hat[j, :k, :k] = sign * aj.T
        a_hat[j, k:, k:] = aj
    a_hat.setflags(write=False)
    return DoubledPencil(pencil, eps, a_hat)


def _lambda_upper(lam) -> complex:
    lam = complex(lam)
    if lam.imag <= 0:
        raise ValueError("Im lambda must be positive")
    return lam


def solve_doubled_G(dp: DoubledPencil, lam: complex, x: np.ndarray, tol: float = DEFAULT_TOL) -> np.ndarray:
    """Cauchy transform of the doubled pencil at ``mu = [[Lam^T, x], [0, Lam]]``.

    The result is ``[[G^T, K(lam, x)], [0, G]]``.

    Raises
    ------
    ValueError
        If ``||x|| >= 1`` or ``Im lam <= 0``.
    """
    lam = _lambda_upper(lam)
    x = np.asarray(x, dtype=complex)
    if np.linalg.norm(x, 2) >= 1:
        raise ValueError("||x|| must be < 1 (K is linear in x; rescale)")
    k = dp.k
    big = dp.base.big_lambda(lam)
    mu = np.zeros((2 * k, 2 * k), dtype=complex)
    mu[:k, :k] = big.T
    mu[:k, k:] = x
    mu[k:, k:] = big
    coefs = np.array([a for a in dp.a_hat[1:] if np.any(a)]) if dp.base.r else np.zeros((0, 2 * k, 2 * k))
    out = solve_fixed_point(dp.a_hat[0], coefs, mu[None], tol)
    if not out.converged[0]:
        raise SolverError(f"doubled system did not converge at lambda={lam}", float(out.residual[0]))
    return out.G[0]


def _k_operator_from_G(G: np.ndarray, coefs: np.ndarray, eps: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Batched ``K_op`` and ``cond`` of the linear system.

    Off-diagonal block of the doubled equation:
    ``K = -G^T x G + sum_j eps_j (G^T a_j^T) K (a_j G)``; with row-major
    vectorization ``vec(A X B) = (A kron B^T) vec(X)``.
    """
    N, k, _ = G.shape
    Gt = np.swapaxes(G, 1, 2)
    M = np.broadcast_to(np.eye(k * k, dtype=complex), (N, k * k, k * k)).copy()
    for e, aj in zip(eps, coefs):
        T = Gt @ aj.T
        M -= e * np.einsum("nab,ncd->nacbd", T, T).reshape(N, k * k, k * k)
    rhs = -np.einsum("nab,ncd->nacbd", Gt, Gt).reshape(N, k * k, k * k)
    cond = np.linalg.cond(M)
    return np.linalg.solve(M, rhs), cond


def _active(pencil: LinearPencil, eps: Sequence[int]):
    idx = [j for j in range(1, pencil.r + 1) if np.any(pencil.a[j])]
    return (np.array([pencil.a[j] for j in idx]) if idx else np.zeros((0, pencil.k, pencil.k)),
            np.array([eps[j - 1] for j in idx], dtype=float))


def solve_K_linear(dp: DoubledPencil, lam: complex, tol: float = DEFAULT_TOL,
                   G: np.ndarray | None = None) -> np.ndarray:
    """Matrix of the linear map ``vec(x) -> vec(K(lam, x))`` (row-major).

    Falls back to ``k^2`` doubled nonlinear solves when the linear system
    is ill-conditioned (condition number above 1e12).
    """
    lam = _lambda_upper(lam)
    pencil = dp.base
    if G is None:
        out = solve_G_batch(pencil, np.array([lam]), tol)
        if not out.converged[0]:
            raise SolverError(f"no converged G at lambda={lam}", float(out.residual[0]))
        G = out.G[0]
    coefs, eps = _active(pencil, dp.eps)
    K_op, cond = _k_operator_from_G(np.asarray(G)[None], coefs, eps)
    if np.isfinite(cond[0]) and cond[0] <= K_COND_LIMIT:
        return K_op[0]
    k = pencil.k
    cols = []
    for s in range(k):
        for t in range(k):
            x = np.zeros((k, k), dtype=complex)
            x[s, t] = 0.5
            cols.append(2.0 * solve_doubled_G(dp, lam, x, tol)[:k, k:].reshape(-1))
    return np.array(cols).T


def k_operator(dp: DoubledPencil, lam: complex, tol: float = DEFAULT_TOL) -> np.ndarray:
    """Alias of :func:`solve_K_linear`."""
    return solve_K_linear(dp, lam, tol)


def _R_from_Kop(K_op: np.ndarray, coefs: np.ndarray, eps: np.ndarray) -> np.ndarray:
    # R = sum_j eps_j sum_uv a_j e_uv (id (x) tau)[... (e_uv a_j) ...] = -sum eps_j a_j e_uv K(e_uv a_j)
    N = K_op.shape[0]
    k = coefs.shape[1] if coefs.size else int(round(np.sqrt(K_op.shape[1])))
    T = K_op.reshape(N, k, k, k, k)
    R = np.zeros((N, k, k), dtype=complex)
    for e, aj in zip(eps, coefs):
        R -= e * np.einsum("iu,nvqut,vt->niq", aj, T, aj)
    return R


def _dG_apply(G: np.ndarray, pencil: LinearPencil, h: np.ndarray) -> np.ndarray:
    """Batched derivative of ``Lam -> G`` applied to ``h``.

    Differentiating ``a_0 + sum_i a_i G a_i + G^{-1} = Lam`` gives
    ``sum_i a_i D a_i - G^{-1} D G^{-1} = h``; row-major ``vec`` turns this
    into ``(sum_i a_i (x) a_i^T - G^{-1} (x) G^{-T}) vec(D) = vec(h)``.
    """
    N, k, _ = G.shape
    ginv = np.linalg.inv(G)
    base = sum((np.kron(ai, ai.T) for ai in pencil.a[1:]), np.zeros((k * k, k * k), dtype=complex))
    J = base[None] - np.einsum("nij,nlk->nikjl", ginv, ginv).reshape(N, k * k, k * k)
    return np.linalg.solve(J, h.reshape(N, -1, 1)).reshape(N, k, k)


def _L_from_R(G: np.ndarray, pencil: LinearPencil, R: np.ndarray) -> np.ndarray:
    """``L = -DG[R G^{-1}]`` for a batch."""
    return -_dG_apply(G, pencil, R @ np.linalg.inv(G))


def compute_R(dp: DoubledPencil, lam: complex, K_op: np.ndarray | None = None,
              tol: float = DEFAULT_TOL) -> np.ndarray:
    """``R(lam) = sum_j eps_j sum_uv a_j e_uv (id (x) tau)[(Lam - s)^{-t} (e_uv a_j) (Lam - s)^{-1}]``.

    In terms of ``K`` this is ``-sum_j eps_j sum_uv a_j e_uv K(lam, e_uv a_j)``.
    """
    K_op = solve_K_linear(dp, lam, tol) if K_op is None else K_op
    coefs, eps = _active(dp.base, dp.eps)
    return _R_from_Kop(np.asarray(K_op)[None], coefs, eps)[0]


def compute_L(dp: DoubledPencil, lam: complex, tol: float = DEFAULT_TOL) -> np.ndarray:
    """``L(lam) = -DG(lam)[R(lam) G(lam)^{-1}]``, the first-order shift of ``G``."""
    return correction_point(dp, lam, tol).L


@dataclass(frozen=True)
class CorrectionPoint:
    lam: complex
    G: np.ndarray
    K_op: np.ndarray
    R: np.ndarray
    L: np.ndarray
    l: complex


def _batch_upper(pencil: LinearPencil, eps: Sequence[int], lams: np.ndarray, tol: float,
                 G0: np.ndarray | None = None):
    """Batched ``(G, K_op, R, L, l, converged)`` for ``Im lams > 0``."""
    out = solve_G_batch(pencil, lams, tol, G0)
    coefs, epsv = _active(pencil, eps)
    k, m = pencil.k, pencil.m
    N = lams.size
    l = np.full(N, np.nan + 0j)
    ok = out.converged.copy()
    chunk = max(1, int(2e7 // (k**4 + 1)))
    Ls = np.full((N, k, k), np.nan + 0j)
    for s in range(0, N, chunk):
        sl = slice(s, min(N, s + chunk))
        G = out.G[sl]
        K_op, cond = _k_operator_from_G(G, coefs, epsv)
        R = _R_from_Kop(K_op, coefs, epsv)
        L = _L_from_R(G, pencil, R)
        Ls[sl] = L
        l[sl] = np.trace(L[:, :m, :m], axis1=1, axis2=2) / m
        ok[sl] &= np.isfinite(cond) & (cond <= K_COND_LIMIT)
    l = np.where(ok, l, np.nan)
    return out, Ls, l, ok


def correction_point(dp: DoubledPencil, lam: complex, tol: float = DEFAULT_TOL) -> CorrectionPoint:
    """All correction objects at one ``lam`` with ``Im lam > 0``."""
    lam = _lambda_upper(lam)
    pencil = dp.base
    out = solve_G_batch(pencil, np.array([lam]), tol)
    if not out.converged[0]:
        raise SolverError(f"no converged G at lambda={lam}", float(out.residual[0]))
    G = out.G[0]
    K_op = solve_K_linear(dp, lam, tol, G=G)
    R = compute_R(dp, lam, K_op)
    m = pencil.m
    L = _L_from_R(G[None], pencil, R[None])[0]
    return CorrectionPoint(lam, G, K_op, R, L, complex(np.trace(L[:m, :m]) / m))


def _pencil_eps(p, mix, eps):
    pencil = p if isinstance(p, LinearPencil) else linearize(p)
    if eps is None:
        eps = eps_from_mix(mix) if mix is not None else (1,) * pencil.r
    return pencil, tuple(eps)


def compute_l(p, lam: complex, tol: float = DEFAULT_TOL, mix: Sequence[str] | None = None,
              eps: Sequence[int] | None = None, direct_lower: bool = False) -> complex:
    """Scalar correction ``l(lam) = (1/m) Tr[L(lam 1_m)]_{corner}``.

    Parameters
    ----------
    p : MatrixNCPoly or LinearPencil
    mix : sequence of str, optional
        Ensemble per generator (``"GOE"`` or ``"GOE*"``); default all GOE.
    direct_lower : bool
        For ``Im lam < 0``, solve the fixed point directly in the lower
        half-plane instead of returning ``conj(l(conj lam))``.
    """
    lam = complex(lam)
    if lam.imag == 0:
        raise ValueError("Im lambda must be nonzero")
    pencil, eps = _pencil_eps(p, mix, eps)
    if lam.imag < 0 and not direct_lower:
        return complex(np.conj(compute_l(pencil, lam.conjugate(), tol, eps=eps)))
    if lam.imag > 0:
        return correction_point(build_doubled(pencil, eps), lam, tol).l
    out = solve_fixed_point(pencil.a[0], np.array(pencil.a[1:]), pencil.big_lambda(lam)[None], tol)
    if not out.converged[0]:
        raise SolverError(f"no converged G at lambda={lam}", float(out.residual[0]))
    coefs, epsv = _active(pencil, eps)
    K_op, _ = _k_operator_from_G(out.G, coefs, epsv)
    R = _R_from_Kop(K_op, coefs, epsv)
    L = _L_from_R(out.G, pencil, R)[0]
    m = pencil.m
    return complex(np.trace(L[:m, :m]) / m)


def l_batch(p, lams, tol: float = DEFAULT_TOL, mix=None, eps=None, G0=None):
    """Vectorized ``l`` for ``Im lams > 0``; returns ``(l, G)`` with NaN on failure."""
    pencil, eps = _pencil_eps(p, mix, eps)
    lams = np.atleast_1d(np.asarray(lams, dtype=complex))
    out, _, l, ok = _batch_upper(pencil, eps, lams, tol, G0)
    return l, out.G, ok


@dataclass
class DeltaResult:
    """``Delta(phi)`` with per-level integrals and an extrapolation error estimate."""

    delta_phi: float
    y_schedule: tuple[float, ...]
    level_values: list[float]
    extrapolation_error: float
    xs: np.ndarray
    l_levels: list[np.ndarray]

    def to_dict(self) -> dict:
        return {"delta_phi": self.delta_phi, "y_schedule": list(self.y_schedule),
                "level_values": self.level_values, "extrapolation_error": self.extrapolation_error}


def delta_functional(
    p,
    phi,
    y_schedule: Sequence[float] = DEFAULT_DELTA_Y,
    tol: float = DEFAULT_TOL,
    mix: Sequence[str] | None = None,
    eps: Sequence[int] | None = None,
    max_step: float = 0.01,
) -> DeltaResult:
    """``Delta(phi) = lim_{y->0} (i/2pi) int phi(x) [l(x+iy) - l(x-iy)] dx``.

    With ``l(conj z) = conj l(z)`` the integrand is ``-(1/pi) phi Im l(x+iy)``.
    Each level uses composite Simpson on a uniform grid over ``supp phi``
    with step ``min(max_step, y_min / 4)``; the levels are extrapolated to
    ``y = 0`` polynomially (two Richardson levels for ratio-2 schedules).

    Raises
    ------
    ValueError
        If the schedule is not strictly decreasing.
    """
    from scipy.integrate import simpson

    from .spectrum import richardson_zero

    ys = tuple(float(y) for y in y_schedule)
    if len(ys) < 2 or any(b >= a for a, b in zip(ys, ys[1:])) or ys[-1] <= 0:
        raise ValueError("y_schedule must be positive and strictly decreasing (>= 2 levels)")
    pencil, eps = _pencil_eps(p, mix, eps)
    lo, hi = phi.support()
    step = min(max_step, ys[-1] / 4)
    npts = int(np.ceil((hi - lo) / step)) + 1
    npts += 1 - npts % 2
    xs = np.linspace(lo, hi, npts)
    weights = phi(xs)
    sel = weights > 0
    vals, levels, G = [], [], None
    for y in ys:
        lv = np.zeros(npts, dtype=complex)
        l_sel, G_sel, ok = l_batch(pencil, xs[sel] + 1j * y, tol, eps=eps, G0=G)
        if not ok.all():
            raise SolverError(f"correction failed at {int((~ok).sum())} points for y={y}")
        G = G_sel
        lv[sel] = l_sel
        levels.append(lv)
        vals.append(float(-simpson(weights * lv.imag, x=xs) / np.pi))
    est = float(richardson_zero(ys, vals))
    lower = float(richardson_zero(ys[1:], vals[1:]))
    return DeltaResult(est, ys, vals, abs(est - lower), xs, levels)
