"""Matrix-valued Cauchy transform of a linear pencil in semicircular variables.

For ``s = a_0 (x) 1 + sum_i a_i (x) x_i`` with a free semicircular family the
transform ``G(lam) = (id (x) tau)[(Lam - s)^{-1}]`` solves

    a_0 + sum_i a_i G a_i + G^{-1} = Lam.

It is computed by damped fixed-point iteration. The solver is vectorized over
a batch of spectral parameters so that whole grids are swept at once.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .linearize import LinearPencil, linearize
from .ncpoly import MatrixNCPoly

__all__ = [
    "CauchyPoint",
    "SolverError",
    "FixedPointResult",
    "solve_fixed_point",
    "solve_G",
    "solve_G_batch",
    "scalar_g",
    "scalar_g_batch",
    "mc_scalar_gn",
    "DEFAULT_TOL",
    "MAX_ITER",
]

DEFAULT_TOL = 1e-10
MAX_ITER = 100_000
STALL_WINDOW = 500
BETA_FLOOR = 1.0 / 64
COND_LIMIT = 1e13
ETA_SHIFTS = (1e-2, 5e-3, 2.5e-3)
# cold starts climb down from Im Lam scaled up to this height
LADDER_HEIGHT = 4.0
LADDER_TOL = 1e-6
LADDER_RUNG_ITERS = 60
# Newton polish: used for k <= NEWTON_MAX_K after NEWTON_AFTER damped steps
NEWTON_MAX_K = 24
NEWTON_AFTER = 20
NEWTON_STEPS = 30
NEWTON_RADIUS = 1e-1


class SolverError(RuntimeError):
    """Fixed-point iteration failed; ``best_residual`` holds the best value reached."""

    def __init__(self, message: str, best_residual: float = np.inf):
        super().__init__(message)
        self.best_residual = best_residual


@dataclass(frozen=True)
class CauchyPoint:
    """Solution of the fixed-point equation at one spectral parameter."""

    lam: np.ndarray
    G: np.ndarray
    residual: float
    iterations: int
    shifted: bool = False

    @property
    def im_part(self) -> np.ndarray:
        """``(G - G^*) / 2i``."""
        return (self.G - self.G.conj().T) / 2j


@dataclass
class FixedPointResult:
    """Batched solver output; ``converged[i]`` is False where the solve failed."""

    G: np.ndarray
    residual: np.ndarray
    iterations: np.ndarray
    converged: np.ndarray
    shifted: np.ndarray


def _coefficients(pencil: LinearPencil) -> tuple[np.ndarray, np.ndarray]:
    a0 = np.asarray(pencil.a[0])
    lin = [ai for ai in pencil.a[1:] if np.any(ai)]
    k = pencil.k
    return a0, (np.array(lin) if lin else np.zeros((0, k, k), dtype=complex))


def _eta(coefs: np.ndarray, G: np.ndarray) -> np.ndarray:
    """``sum_i a_i G a_i`` for a batch ``G`` of shape (N, k, k)."""
    out = np.zeros_like(G)
    for ai in coefs:
        out += ai @ G @ ai
    return out


def _iterate(a0, coefs, lams, G, tol, max_iter, stall_window=STALL_WINDOW):
    """Damped iteration ``G <- (1-b) G + b (Lam - a_0 - eta(G))^{-1}``.

    Returns the final batch, Frobenius residuals, iteration counts and a
    status array (1 converged, 0 running out of iterations, -1 stalled).
    """
    N = lams.shape[0]
    G = G.copy()
    beta = np.ones(N)
    prev = np.full(N, np.inf)
    best = np.full(N, np.inf)
    checkpoint = np.full(N, np.inf)
    res_out = np.full(N, np.inf)
    iters = np.zeros(N, dtype=int)
    status = np.zeros(N, dtype=int)
    active = np.arange(N)
    for it in range(max_iter + 1):
        if active.size == 0:
            break
        Ga = G[active]
        h_inv = lams[active] - a0 - _eta(coefs, Ga)
        with np.errstate(all="ignore"):
            try:
                g_inv = np.linalg.inv(Ga)
            except np.linalg.LinAlgError:
                g_inv = np.full_like(Ga, np.nan)
            res = np.linalg.norm((g_inv - h_inv).reshape(active.size, -1), axis=1)
        res = np.where(np.isfinite(res), res, np.inf)
        res_out[active] = res
        iters[active] = it
        done = res <= tol
        status[active[done]] = 1
        bad = ~np.isfinite(res)
        improved = res < best[active]
        best[active] = np.where(improved, res, best[active])
        stalled = bad.copy()
        if it and it % stall_window == 0:
            stalled |= best[active] > 0.9 * checkpoint[active]
            checkpoint[active] = best[active]
        stalled &= ~done
        status[active[stalled]] = -1
        keep = ~(done | stalled)
        if it == max_iter or not keep.any():
            break
        idx = active[keep]
        worse = res[keep] >= prev[idx]
        beta[idx] = np.where(worse, np.maximum(beta[idx] / 2, BETA_FLOOR), beta[idx])
        prev[idx] = res[keep]
        with np.errstate(all="ignore"):
            try:
                H = np.linalg.inv(h_inv[keep])
            except np.linalg.LinAlgError:
                H = _safe_inv(h_inv[keep])
        b = beta[idx][:, None, None]
        G[idx] = (1 - b) * Ga[keep] + b * H
        active = idx
    return G, res_out, iters, status


def _safe_inv(mats: np.ndarray) -> np.ndarray:
    out = np.full_like(mats, np.nan)
    for i, a in enumerate(mats):
        try:
            out[i] = np.linalg.inv(a)
        except np.linalg.LinAlgError:
            pass
    return out


def _initial_guess(lams: np.ndarray) -> np.ndarray:
    k = lams.shape[1]
    norms = np.linalg.norm(lams, ord=2, axis=(1, 2))
    return (-1j / (1.0 + norms))[:, None, None] * np.eye(k)[None]


def _fp_residual(a0, coefs, lams, G) -> np.ndarray:
    """``a_0 + eta(G) + G^{-1} - Lam`` for a batch."""
    with np.errstate(all="ignore"):
        return a0 + _eta(coefs, G) + np.linalg.inv(G) - lams


def _newton(a0, coefs, lams, G, tol, steps=NEWTON_STEPS):
    """Newton's method on ``F(G) = a_0 + eta(G) + G^{-1} - Lam``.

    The derivative is ``H -> sum_i a_i H a_i - G^{-1} H G^{-1}``; in
    row-major ``vec`` it is ``sum_i a_i (x) a_i^T - G^{-1} (x) G^{-T}``.
    Steps are halved until the Frobenius residual decreases. Returns the
    batch, Frobenius residuals and a converged mask.
    """
    N, k, _ = G.shape
    G = G.copy()
    base = sum((np.kron(ai, ai.T) for ai in coefs), np.zeros((k * k, k * k), dtype=complex))
    F = _fp_residual(a0, coefs, lams, G)
    res = np.linalg.norm(F.reshape(N, -1), axis=1)
    res = np.where(np.isfinite(res), res, np.inf)
    active = np.flatnonzero(np.isfinite(res) & (res > tol))
    for _ in range(steps):
        if active.size == 0:
            break
        with np.errstate(all="ignore"):
            ginv = np.linalg.inv(G[active])
            J = base[None] - np.einsum("nij,nlk->nikjl", ginv, ginv).reshape(active.size, k * k, k * k)
            try:
                dG = np.linalg.solve(J, -F[active].reshape(active.size, -1, 1)).reshape(-1, k, k)
            except np.linalg.LinAlgError:
                break
        t = np.ones(active.size)
        accepted = np.zeros(active.size, dtype=bool)
        for _ in range(6):
            trial = G[active] + t[:, None, None] * dG
            Ft = _fp_residual(a0, coefs, lams[active], trial)
            rt = np.linalg.norm(Ft.reshape(active.size, -1), axis=1)
            ok = np.isfinite(rt) & (rt < res[active]) & ~accepted
            idx = active[ok]
            G[idx], F[idx], res[idx] = trial[ok], Ft[ok], rt[ok]
            accepted |= ok
            if accepted.all():
                break
            t = np.where(accepted, t, t / 2)
        active = active[accepted & (res[active] > tol)]
    return G, res, res <= tol


def _converge(a0, coefs, lams, G, tol, max_iter):
    """Damped iteration, with a Newton polish for small pencils."""
    k = lams.shape[1]
    if k > NEWTON_MAX_K or max_iter <= NEWTON_AFTER:
        return _iterate(a0, coefs, lams, G, tol, max_iter)
    G, res, iters, status = _iterate(a0, coefs, lams, G, tol, NEWTON_AFTER)
    todo = np.flatnonzero((status != 1) & (res < NEWTON_RADIUS))
    if todo.size:
        Gn, rn, ok = _newton(a0, coefs, lams[todo], G[todo], tol)
        done = todo[ok]
        G[done], res[done], status[done] = Gn[ok], rn[ok], 1
    rest = np.flatnonzero(status != 1)
    if rest.size:
        Gr, rr, ir, sr = _iterate(a0, coefs, lams[rest], G[rest], tol, max_iter - NEWTON_AFTER)
        G[rest], res[rest], iters[rest], status[rest] = Gr, rr, iters[rest] + ir, sr
    return G, res, iters, status


def _split(lams: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Hermitian parts ``(Re Lam, Im Lam)`` of a batch."""
    herm = (lams + np.conj(np.swapaxes(lams, 1, 2))) / 2
    return herm, (lams - herm) / 1j


def _ladder(a0, coefs, lams, tol, max_iter) -> np.ndarray:
    """Warm start for ``Lam`` from solutions along ``Re Lam + i s Im Lam``.

    The top rung sits at height ``LADDER_HEIGHT + ||Re Lam||``, where the
    iteration started at ``-i/(1 + ||Lam||)`` converges to the analytic
    branch; ``s`` then halves, each rung warm-starting the next, and the
    result is the last rung above ``s = 1``. Rungs only need to stay in the
    basin of the branch, so each gets a short iteration budget.
    """
    herm, im = _split(lams)
    h = np.linalg.norm(herm, ord=2, axis=(1, 2))
    y = np.linalg.norm(im, ord=2, axis=(1, 2))
    s0 = np.maximum(1.0, (LADDER_HEIGHT + h) / np.where(y > 0, y, 1.0))
    levels = int(np.ceil(np.log2(s0.max())))
    G = _initial_guess(lams if levels == 0 else herm + 1j * s0[:, None, None] * im)
    for j in range(levels):
        s = np.maximum(1.0, s0 / 2.0**j)[:, None, None]
        G, _, _, _ = _iterate(a0, coefs, herm + 1j * s * im, G, max(tol, LADDER_TOL), min(max_iter, LADDER_RUNG_ITERS))
    return G


def _op_residual(a0, coefs, lams, G) -> np.ndarray:
    with np.errstate(all="ignore"):
        r = a0 + _eta(coefs, G) + np.linalg.inv(G) - lams
    return np.linalg.norm(r, ord=2, axis=(1, 2))


def solve_fixed_point(
    a0: np.ndarray,
    coefs: np.ndarray,
    lams: np.ndarray,
    tol: float = DEFAULT_TOL,
    G0: np.ndarray | None = None,
    max_iter: int = MAX_ITER,
    eta_shifts: Sequence[float] = ETA_SHIFTS,
) -> FixedPointResult:
    """Solve ``a_0 + sum_i a_i G a_i + G^{-1} = Lam`` for a batch of ``Lam``.

    Parameters
    ----------
    a0 : (k, k) array
    coefs : (r, k, k) array
        Linear coefficients ``a_1..a_r``.
    lams : (N, k, k) array
        Right-hand sides (not necessarily of the ``lam (+) 1`` form).
    tol : float
        Target residual in operator norm.
    G0 : (N, k, k) array, optional
        Warm start. Without one, the solution is continued down from a large
        imaginary part (see :func:`_ladder`); a cold start at the target can
        settle on a spurious fixed point once the pencil is not self-adjoint.
    eta_shifts : sequence of float
        Shifts ``Lam + i eta Im Lam / ||Im Lam||`` used, followed by linear
        extrapolation to ``eta = 0``, for points where the plain iteration
        stalls.

    Notes
    -----
    The stopping test uses the Frobenius norm, which bounds the operator norm
    from above. Points that still fail are flagged in ``converged``.
    """
    lams = np.asarray(lams, dtype=complex)
    N, k, _ = lams.shape
    if G0 is None:
        G = _ladder(a0, coefs, lams, tol, max_iter)
    else:
        G = np.array(G0, dtype=complex)
    # iterate past tol so that recomputing the residual cannot tip it over
    G, res, iters, status = _converge(a0, coefs, lams, G, tol / 2, max_iter)
    status[(status != 1) & (_op_residual(a0, coefs, lams, G) <= tol)] = 1
    shifted = np.zeros(N, dtype=bool)
    failed = np.flatnonzero(status != 1)
    if failed.size and eta_shifts:
        sub = lams[failed]
        _, im = _split(sub)
        direction = im / np.linalg.norm(im, ord=2, axis=(1, 2))[:, None, None]
        history, Gs = [], None
        for eta in eta_shifts:
            shifted_lams = sub + 1j * eta * direction
            if Gs is None:
                Gs = _ladder(a0, coefs, shifted_lams, tol, max_iter)
            else:
                Gs, _, _, _ = _converge(a0, coefs, shifted_lams, Gs, tol, max_iter)
            history.append(Gs.copy())
        e1, e2 = eta_shifts[-2], eta_shifts[-1]
        G_ext = history[-1] + (history[-1] - history[-2]) * (0 - e2) / (e2 - e1)
        # polish the extrapolated value with the unshifted map
        G_pol, _, it2, _ = _converge(a0, coefs, sub, G_ext, tol, max_iter)
        r_pol = _op_residual(a0, coefs, sub, G_pol)
        ok = np.isfinite(r_pol) & (r_pol <= 10 * tol)
        G[failed[ok]] = G_pol[ok]
        iters[failed] += it2
        shifted[failed[ok]] = True
    op_res = _op_residual(a0, coefs, lams, G)
    op_res = np.where(np.isfinite(op_res), op_res, np.inf)
    converged = (status == 1) | shifted
    converged &= op_res <= np.where(shifted, 10 * tol, tol)
    return FixedPointResult(G, op_res, iters, converged, shifted)


def _check_lambda(lam: np.ndarray) -> None:
    im = (lam - lam.conj().T) / 2j
    if np.linalg.eigvalsh(im).min() <= 0:
        raise ValueError("Im lambda must be positive definite")


def solve_G(
    pencil: LinearPencil,
    lam,
    tol: float = DEFAULT_TOL,
    G0: np.ndarray | None = None,
    max_iter: int = MAX_ITER,
) -> CauchyPoint:
    """Operator-valued Cauchy transform ``G(lam)`` of the pencil.

    Parameters
    ----------
    pencil : LinearPencil
    lam : complex or (m, m) array
        Spectral parameter with positive definite imaginary part.
    tol : float
        Residual tolerance (operator norm).
    G0 : (k, k) array, optional
        Warm start.

    Raises
    ------
    ValueError
        If ``Im lam`` is not positive definite.
    SolverError
        If the iteration (including the shifted fallback) does not reach ``tol``.
    """
    big = pencil.big_lambda(lam)
    _check_lambda(big[: pencil.m, : pencil.m])
    a0, coefs = _coefficients(pencil)
    out = solve_fixed_point(
        a0, coefs, big[None], tol, None if G0 is None else np.asarray(G0)[None], max_iter
    )
    if not out.converged[0]:
        raise SolverError(
            f"fixed-point iteration did not converge at lambda={np.asarray(lam).tolist()!r}; "
            f"best residual {out.residual[0]:.3g}",
            float(out.residual[0]),
        )
    return CauchyPoint(big[: pencil.m, : pencil.m].copy(), out.G[0], float(out.residual[0]),
                       int(out.iterations[0]), bool(out.shifted[0]))


def solve_G_batch(
    pencil: LinearPencil,
    lams: np.ndarray,
    tol: float = DEFAULT_TOL,
    G0: np.ndarray | None = None,
    max_iter: int = MAX_ITER,
) -> FixedPointResult:
    """Vectorized :func:`solve_G` over scalar parameters ``lams`` (Im > 0)."""
    lams = np.atleast_1d(np.asarray(lams, dtype=complex))
    if np.any(lams.imag <= 0):
        raise ValueError("Im lambda must be positive for every grid point")
    big = np.broadcast_to(np.eye(pencil.k, dtype=complex), (lams.size, pencil.k, pencil.k)).copy()
    m = pencil.m
    big[:, :m, :m] = lams[:, None, None] * np.eye(m)
    a0, coefs = _coefficients(pencil)
    return solve_fixed_point(a0, coefs, big, tol, G0, max_iter)


def _as_pencil(p) -> LinearPencil:
    return p if isinstance(p, LinearPencil) else linearize(p)


def _corner_trace(G: np.ndarray, m: int) -> np.ndarray:
    return np.trace(G[..., :m, :m], axis1=-2, axis2=-1) / m


def scalar_g(p, lam: complex, tol: float = DEFAULT_TOL) -> complex:
    """Scalar Cauchy transform ``g(lam) = (1/m) Tr[G(lam 1_m)]_{corner}``.

    ``p`` may be a polynomial or an already assembled pencil. For
    ``Im lam < 0`` the value is ``conj(g(conj lam))``.
    """
    lam = complex(lam)
    if lam.imag == 0:
        raise ValueError("Im lambda must be nonzero")
    pencil = _as_pencil(p)
    if lam.imag < 0:
        return complex(np.conj(scalar_g(pencil, lam.conjugate(), tol)))
    cp = solve_G(pencil, lam, tol)
    return complex(_corner_trace(cp.G, pencil.m))


def scalar_g_batch(p, lams, tol: float = DEFAULT_TOL, G0=None, max_iter: int = MAX_ITER):
    """Vectorized :func:`scalar_g` for ``Im lams > 0``.

    Returns
    -------
    g : ndarray of complex
        NaN where the solver failed.
    result : FixedPointResult
    """
    pencil = _as_pencil(p)
    out = solve_G_batch(pencil, lams, tol, G0, max_iter)
    g = _corner_trace(out.G, pencil.m)
    g = np.where(out.converged, g, np.nan + 0j)
    return g, out


def mc_scalar_gn(
    p: MatrixNCPoly,
    lam: complex,
    n: int,
    trials: int,
    seed: int,
    mix: Sequence[str] | None = None,
    threads: int = 1,
) -> tuple[complex, float]:
    """Monte Carlo estimate of ``E (tr_m (x) tr_n)(lam - Q_n)^{-1}``.

    ``Q_n = p(X_1, ..., X_r)`` with independent draws from the ensembles in
    ``mix`` (GUE by default). Returns the mean and its standard error.
    """
    from .rmt import resolvent_traces

    if trials < 2:
        raise ValueError("trials must be >= 2")
    vals = resolvent_traces(p, [lam], n, trials, seed, mix, threads)[:, 0]
    return complex(vals.mean()), float(np.sqrt(np.var(vals, ddof=1) / trials))
