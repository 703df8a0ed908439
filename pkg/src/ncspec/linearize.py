"""Degree-one factorization of a polynomial and the linearizing pencil.

A polynomial ``p`` of degree ``d`` is written as a product ``u_1 ... u_d`` of
matrix polynomials of degree at most one. The factors are then arranged in a
``d x d`` block matrix

    A(lam) = [[lam,  -u_1,                  ],
              [      1,    -u_2,            ],
              [              ...,   -u_{d-1}],
              [-u_d,                 1      ]]

which is affine in the generators, ``A = Lam - a_0 - sum_i a_i X_i`` with
``Lam = lam (+) 1``. Its inverse has ``(lam - p)^{-1}`` in the corner.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .ncpoly import MatrixNCPoly, build_poly, evaluate

__all__ = [
    "Factorization",
    "LinearPencil",
    "SingularPencilError",
    "factorize",
    "assemble_pencil",
    "linearize",
    "pencil_matrix",
    "pencil_block_inverse",
    "pencil_to_dict",
    "SINGULAR_COND",
]

SINGULAR_COND = 1e12


class SingularPencilError(ValueError):
    """``lam - p(v)`` is numerically singular."""


@dataclass(frozen=True)
class Factorization:
    """Factors ``u_1 ... u_d`` with ``u_j`` of shape ``dims[j-1] x dims[j]``."""

    factors: tuple[MatrixNCPoly, ...]
    dims: tuple[int, ...]

    def __post_init__(self):
        if len(self.dims) != len(self.factors) + 1:
            raise ValueError("need len(dims) == len(factors) + 1")
        for j, u in enumerate(self.factors):
            if (u.m, u.m_prime) != (self.dims[j], self.dims[j + 1]):
                raise ValueError(f"factor {j + 1} has shape {u.m}x{u.m_prime}, dims say "
                                 f"{self.dims[j]}x{self.dims[j + 1]}")
            if u.degree > 1:
                raise ValueError(f"factor {j + 1} has degree {u.degree} > 1")

    @property
    def d(self) -> int:
        return len(self.factors)

    @property
    def r(self) -> int:
        return self.factors[0].r

    def product(self) -> MatrixNCPoly:
        out = self.factors[0]
        for u in self.factors[1:]:
            out = out @ u
        return out


@dataclass(frozen=True)
class LinearPencil:
    """Coefficients of ``s = a_0 (x) 1 + sum_i a_i (x) x_i``.

    Attributes
    ----------
    a : ndarray, shape (r + 1, k, k)
        ``a[0]`` is the constant part, ``a[i]`` multiplies generator ``i``.
    block_dims : tuple of int
        Diagonal block sizes ``m_1, ..., m_d``.
    m : int
        Size of the corner block carrying ``lam``.
    """

    a: np.ndarray = field(repr=False)
    block_dims: tuple[int, ...]
    m: int

    @property
    def k(self) -> int:
        return int(self.a.shape[1])

    @property
    def r(self) -> int:
        return int(self.a.shape[0]) - 1

    @property
    def corner(self) -> np.ndarray:
        """The projection ``E = 1_m (+) 0``."""
        e = np.zeros((self.k, self.k))
        e[: self.m, : self.m] = np.eye(self.m)
        return e

    def big_lambda(self, lam) -> np.ndarray:
        """Embed ``lam`` (scalar or ``m x m``) as ``lam (+) 1_{k-m}``."""
        out = np.eye(self.k, dtype=complex)
        out[: self.m, : self.m] = _as_square(lam, self.m)
        return out

    def evaluate_s(self, v: Sequence[np.ndarray]) -> np.ndarray:
        """``S = a_0 (x) 1_n + sum_i a_i (x) v_i`` (k-index outer)."""
        n = np.asarray(v[0]).shape[0] if len(v) else 1
        out = np.kron(self.a[0], np.eye(n))
        for ai, vi in zip(self.a[1:], v):
            if np.any(ai):
                out = out + np.kron(ai, vi)
        return out


def _as_square(lam, m: int) -> np.ndarray:
    lam = np.asarray(lam, dtype=complex)
    if lam.ndim == 0:
        return lam * np.eye(m)
    if lam.shape != (m, m):
        raise ValueError(f"lambda must be scalar or {m}x{m}, got shape {lam.shape}")
    return lam


def _padded_tuple(word: tuple[int, ...], d: int) -> tuple[int, ...]:
    # letters first, trailing X_0 = 1 padding; the trailing slot lands in u_d
    return word + (0,) * (d - len(word))


def factorize(p: MatrixNCPoly) -> Factorization:
    """Canonical factorization ``p = u_1 ... u_d``.

    For ``j < d`` the factor ``u_j`` is the fixed row
    ``(1 X_0, 1 X_1, ..., 1 X_r)`` of size ``m_j x (r+1) m_j`` with
    ``X_0 = 1`` and ``m_j = (r+1)^{j-1} m``. The last factor ``u_d`` is a block
    column carrying the coefficients: its block at multi-index
    ``(i_1, ..., i_{d-1})`` is ``sum_{i_d} c(i_1..i_d) X_{i_d}``, where each
    word of ``p`` is assigned to the single tuple formed by its letters
    followed by zeros.
    """
    if p.is_zero:
        raise ValueError("cannot factorize the zero polynomial")
    d = p.degree
    m, mp, r = p.m, p.m_prime, p.r
    if d == 0:
        raise ValueError("constant polynomial has no degree-1 factorization (d must be >= 1)")
    if d == 1:
        return Factorization((p,), (m, mp))
    dims = tuple((r + 1) ** j * m for j in range(d)) + (mp,)
    factors = []
    for j in range(d - 1):
        mj = dims[j]
        terms = []
        for i in range(r + 1):
            blk = np.zeros((mj, (r + 1) * mj), dtype=complex)
            blk[:, i * mj : (i + 1) * mj] = np.eye(mj)
            terms.append(((i,) if i else (), blk))
        factors.append(build_poly(mj, (r + 1) * mj, r, terms))
    # u_1 ... u_{d-1} has its m-block for (i_1..i_{d-1}) at little-endian offset
    md = dims[d - 1]
    last = []
    for w, c in p.terms.items():
        t = _padded_tuple(w, d)
        head, tail = t[:-1], t[-1]
        offset = sum(i * (r + 1) ** pos for pos, i in enumerate(head)) * m
        blk = np.zeros((md, mp), dtype=complex)
        blk[offset : offset + m, :] = c
        last.append(((tail,) if tail else (), blk))
    factors.append(build_poly(md, mp, r, last))
    return Factorization(tuple(factors), dims)


def assemble_pencil(f: Factorization) -> LinearPencil:
    """Extract ``a_0, ..., a_r`` with ``A(lam) = Lam - a_0 - sum_i a_i X_i``.

    ``-u_j`` sits in block ``(j, j+1)`` and ``-u_d`` in block ``(d, 1)``, so the
    ``a_i`` carry the linear parts of the factors at those positions.
    """
    d, r = f.d, f.r
    m = f.dims[0]
    if f.dims[-1] != m:
        raise ValueError("pencil needs a square polynomial (m == m_prime)")
    block_dims = tuple(f.dims[:d])
    offs = np.concatenate([[0], np.cumsum(block_dims)])
    k = int(offs[-1])
    a = np.zeros((r + 1, k, k), dtype=complex)
    for j, u in enumerate(f.factors):
        row = slice(offs[j], offs[j + 1])
        col = slice(offs[(j + 1) % d], offs[(j + 1) % d] + f.dims[j + 1])
        for w, c in u.terms.items():
            a[w[0] if w else 0, row, col] += c
    a.setflags(write=False)
    return LinearPencil(a, block_dims, m)


def linearize(p: MatrixNCPoly) -> LinearPencil:
    """Shorthand for ``assemble_pencil(factorize(p))``."""
    return assemble_pencil(factorize(p))


def pencil_matrix(pencil: LinearPencil, lam, v: Sequence[np.ndarray]) -> np.ndarray:
    """Dense ``A(lam, v) = Lam (x) 1_n - S(v)``."""
    n = np.asarray(v[0]).shape[0] if len(v) else 1
    return np.kron(pencil.big_lambda(lam), np.eye(n)) - pencil.evaluate_s(v)


def pencil_block_inverse(f: Factorization, lam, v: Sequence[np.ndarray]) -> np.ndarray:
    """Closed-form inverse ``A(lam, v)^{-1} = B(lam) + C``.

    ``B = col(1, u_2...u_d, ..., u_d) (lam - p(v))^{-1} row(1, u_1, ..., u_1...u_{d-1})``
    and ``C`` is zero in the first block row and column, with ``1`` on the
    remaining diagonal blocks and ``u_i ... u_{j-1}`` above.

    Raises
    ------
    SingularPencilError
        If ``lam - p(v)`` has condition number above ``1e12``.
    """
    d = f.d
    m = f.dims[0]
    n = np.asarray(v[0]).shape[0] if len(v) else 1
    us = [evaluate(u, v) for u in f.factors]
    sizes = [dj * n for dj in f.dims[:d]]
    offs = np.concatenate([[0], np.cumsum(sizes)])
    lam_n = np.kron(_as_square(lam, m), np.eye(n))
    full = us[0]
    for u in us[1:]:
        full = full @ u
    core = lam_n - full
    cond = np.linalg.cond(core)
    if not np.isfinite(cond) or cond > SINGULAR_COND:
        raise SingularPencilError(f"lam - p(v) is singular at lam={np.asarray(lam).tolist()!r} "
                                  f"(condition number {cond:.3g})")
    resolvent = np.linalg.inv(core)
    # left[j] = u_{j+1} ... u_d for j >= 1, right[j] = u_1 ... u_j
    left = [np.eye(m * n, dtype=complex)] + [None] * (d - 1)
    acc = np.eye(m * n, dtype=complex)
    for j in range(d - 1, 0, -1):
        acc = us[j] @ acc
        left[j] = acc
    right = [np.eye(m * n, dtype=complex)]
    acc = np.eye(m * n, dtype=complex)
    for j in range(d - 1):
        acc = acc @ us[j]
        right.append(acc)
    k_n = int(offs[-1])
    out = np.zeros((k_n, k_n), dtype=complex)
    for i in range(d):
        li = left[i] @ resolvent
        for j in range(d):
            out[offs[i] : offs[i + 1], offs[j] : offs[j + 1]] = li @ right[j]
    for i in range(1, d):
        out[offs[i] : offs[i + 1], offs[i] : offs[i + 1]] += np.eye(sizes[i])
        acc = np.eye(sizes[i], dtype=complex)
        for j in range(i + 1, d):
            acc = acc @ us[j - 1]
            out[offs[i] : offs[i + 1], offs[j] : offs[j + 1]] += acc
    return out


def pencil_to_dict(pencil: LinearPencil) -> dict:
    """Debug export ``{"k", "block_dims", "a"}`` with ``[re, im]`` entries."""
    return {
        "k": pencil.k,
        "block_dims": list(pencil.block_dims),
        "a": [[[[float(z.real), float(z.imag)] for z in row] for row in ai] for ai in pencil.a],
    }

