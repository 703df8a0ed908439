"""Mixed moments of a free semicircular family by counting pairings.

For a standard semicircular system (``tau(x_i^2) = 1``) the trace of a word
equals the number of non-crossing perfect matchings of its positions that
only pair equal letters. This gives an oracle for moments of ``p`` that is
independent of linearization and of the fixed-point solver.
"""

from __future__ import annotations

from functools import lru_cache
from math import comb

import numpy as np

from .ncpoly import MatrixNCPoly, build_poly, multiply

__all__ = [
    "word_trace",
    "poly_moment",
    "poly_moments",
    "catalan",
    "is_noncrossing",
    "relabel",
    "MAX_EXPANSION_TERMS",
]

MAX_EXPANSION_TERMS = 10**6


def catalan(j: int) -> int:
    return comb(2 * j, j) // (j + 1)


def is_noncrossing(pairs) -> bool:
    """True when no two pairs ``(a, b), (c, e)`` satisfy ``a < c < b < e``."""
    ps = [tuple(sorted(p)) for p in pairs]
    return not any(a < c < b < e for a, b in ps for c, e in ps)


@lru_cache(maxsize=None)
def _count(word: tuple[int, ...]) -> int:
    if not word:
        return 1
    if len(word) % 2:
        return 0
    first = word[0]
    total = 0
    # position 0 pairs with j; the inside and outside must be matched separately
    for j in range(1, len(word), 2):
        if word[j] == first:
            inner = _count(word[1:j])
            if inner:
                total += inner * _count(word[j + 1 :])
    return total


def word_trace(word) -> int:
    """``tau(x_{w_1} ... x_{w_l})`` for a standard semicircular family."""
    return _count(tuple(int(x) for x in word))


def relabel(word, mapping: dict[int, int]) -> tuple[int, ...]:
    return tuple(mapping[x] for x in word)


def _trace_pairing(p: MatrixNCPoly, q: MatrixNCPoly) -> complex:
    # (tr_m (x) tau)(p q) without materializing the product
    total = 0.0 + 0.0j
    for u, a in p.terms.items():
        for v, b in q.terms.items():
            t = word_trace(u + v)
            if t:
                total += t * np.trace(a @ b)
    return total / p.m


def poly_moment(p: MatrixNCPoly, j: int, max_terms: int = MAX_EXPANSION_TERMS) -> float:
    """``(tr_m (x) tau)(p^j)`` by symbolic expansion.

    Parameters
    ----------
    p : MatrixNCPoly
        Self-adjoint polynomial.
    j : int
        Moment order, ``j >= 0``.
    max_terms : int
        Guard on the number of term products in the expansion.

    Raises
    ------
    ValueError
        If ``p`` is not square, ``j < 0``, the expansion guard trips, or the
        result has a non-negligible imaginary part.
    """
    return poly_moments(p, j, max_terms)[j]


def poly_moments(p: MatrixNCPoly, jmax: int, max_terms: int = MAX_EXPANSION_TERMS) -> list[float]:
    """Moments ``0..jmax`` of ``p`` (see :func:`poly_moment`)."""
    if p.m != p.m_prime:
        raise ValueError("moments need a square polynomial")
    if jmax < 0:
        raise ValueError("moment order must be >= 0")
    one = build_poly(p.m, p.m, p.r, [((), np.eye(p.m))])
    # p^j = p^{ceil(j/2)} p^{floor(j/2)}; only half-powers are expanded
    half = [one]
    for i in range(1, (jmax + 1) // 2 + 1):
        work = len(half[-1].terms) * len(p.terms)
        if work > max_terms:
            raise ValueError(f"expansion of p^{i} needs {work} term products (> {max_terms})")
        half.append(multiply(half[-1], p))
    out = []
    for j in range(jmax + 1):
        lo, hi = half[j // 2], half[j - j // 2]
        if len(lo.terms) * len(hi.terms) > max_terms:
            raise ValueError(f"moment {j} needs {len(lo.terms) * len(hi.terms)} term pairs (> {max_terms})")
        val = _trace_pairing(hi, lo)
        scale = max(1.0, abs(val))
        if abs(val.imag) > 1e-10 * scale:
            raise ValueError(f"moment {j} has imaginary part {val.imag:.3g}; is p self-adjoint?")
        out.append(float(val.real))
    return out
