"""Noncommutative polynomials with complex matrix coefficients.

A polynomial in generators ``X_1, ..., X_r`` is stored as a map from words
(tuples of generator indices, 1-based) to dense ``m x m_prime`` complex
coefficient matrices. The empty word is the constant monomial.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

__all__ = [
    "NCWord",
    "MatrixNCPoly",
    "build_poly",
    "adjoint",
    "multiply",
    "evaluate",
    "generator",
    "constant",
    "block_diag_poly",
    "poly_to_dict",
    "poly_from_dict",
    "load_poly",
    "save_poly",
    "random_poly",
    "random_self_adjoint_poly",
]

NCWord = tuple[int, ...]


def _word_key(word: NCWord) -> tuple[int, NCWord]:
    return (len(word), word)


@dataclass(frozen=True)
class MatrixNCPoly:
    """Canonical matrix-coefficient noncommutative polynomial.

    Use :func:`build_poly` rather than the constructor; it validates input
    and brings the term map to canonical form.

    Attributes
    ----------
    m, m_prime : int
        Coefficient shape.
    r : int
        Number of generators.
    terms : dict
        Word -> coefficient, ordered by (length, letters), no zero entries.
    """

    m: int
    m_prime: int
    r: int
    terms: Mapping[NCWord, np.ndarray] = field(repr=False)

    @property
    def degree(self) -> int:
        return max((len(w) for w in self.terms), default=0)

    d = degree

    @property
    def is_zero(self) -> bool:
        return not self.terms

    def coeff(self, word: Sequence[int]) -> np.ndarray:
        """Coefficient of ``word`` (zero matrix when absent)."""
        w = tuple(word)
        if w in self.terms:
            return self.terms[w].copy()
        return np.zeros((self.m, self.m_prime), dtype=complex)

    def is_self_adjoint(self, atol: float = 1e-12) -> bool:
        if self.m != self.m_prime:
            return False
        words = set(self.terms) | {w[::-1] for w in self.terms}
        return all(
            np.allclose(self.coeff(w[::-1]), self.coeff(w).conj().T, atol=atol, rtol=0)
            for w in words
        )

    def __add__(self, other: "MatrixNCPoly") -> "MatrixNCPoly":
        _check_compatible(self, other)
        return build_poly(
            self.m, self.m_prime, self.r, list(self.terms.items()) + list(other.terms.items())
        )

    def __sub__(self, other: "MatrixNCPoly") -> "MatrixNCPoly":
        return self + other.scaled(-1.0)

    def __matmul__(self, other: "MatrixNCPoly") -> "MatrixNCPoly":
        return multiply(self, other)

    def scaled(self, c: complex) -> "MatrixNCPoly":
        return build_poly(self.m, self.m_prime, self.r, [(w, c * a) for w, a in self.terms.items()])

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, MatrixNCPoly):
            return NotImplemented
        return (
            (self.m, self.m_prime, self.r) == (other.m, other.m_prime, other.r)
            and self.terms.keys() == other.terms.keys()
            and all(np.array_equal(self.terms[w], other.terms[w]) for w in self.terms)
        )

    __hash__ = None  # type: ignore[assignment]

    def max_coeff_diff(self, other: "MatrixNCPoly") -> float:
        """Largest entrywise coefficient difference against ``other``."""
        words = set(self.terms) | set(other.terms)
        return max((float(np.max(np.abs(self.coeff(w) - other.coeff(w)))) for w in words), default=0.0)


def _check_compatible(p: MatrixNCPoly, q: MatrixNCPoly) -> None:
    if (p.m, p.m_prime, p.r) != (q.m, q.m_prime, q.r):
        raise ValueError(
            f"incompatible polynomials: shapes {p.m}x{p.m_prime} (r={p.r}) "
            f"and {q.m}x{q.m_prime} (r={q.r})"
        )


def build_poly(
    m: int,
    m_prime: int,
    r: int,
    terms: Iterable[tuple[Sequence[int], object]],
    atol: float = 0.0,
) -> MatrixNCPoly:
    """Build a canonical polynomial from ``(word, coefficient)`` pairs.

    Duplicate words are summed and zero coefficients dropped.

    Parameters
    ----------
    m, m_prime : int
        Coefficient shape.
    r : int
        Number of generators; letters must lie in ``1..r``.
    terms : iterable of (word, matrix)
        Scalars are accepted when ``m == m_prime == 1``.
    atol : float, optional
        Coefficients with max-abs entry ``<= atol`` count as zero.

    Raises
    ------
    ValueError
        On a coefficient of the wrong shape or a letter outside ``1..r``.
    """
    if m < 1 or m_prime < 1 or r < 0:
        raise ValueError(f"invalid dimensions m={m}, m_prime={m_prime}, r={r}")
    acc: dict[NCWord, np.ndarray] = {}
    for word, c in terms:
        w = tuple(int(x) for x in word)
        for letter in w:
            if not 1 <= letter <= r:
                raise ValueError(f"letter {letter} in word {list(w)} is outside 1..{r}")
        a = np.array(c, dtype=complex)
        if a.ndim == 0 and m == m_prime == 1:
            a = a.reshape(1, 1)
        if a.shape != (m, m_prime):
            raise ValueError(
                f"coefficient of word {list(w)} has shape {a.shape}, expected {(m, m_prime)}"
            )
        acc[w] = acc[w] + a if w in acc else a.copy()
    canon = {}
    for w in sorted(acc, key=_word_key):
        a = acc[w]
        if a.size and np.max(np.abs(a)) > atol:
            a.setflags(write=False)
            canon[w] = a
    return MatrixNCPoly(m, m_prime, r, canon)


def adjoint(p: MatrixNCPoly) -> MatrixNCPoly:
    """Return ``p*``: conjugate-transpose every coefficient and reverse every word."""
    return build_poly(p.m_prime, p.m, p.r, [(w[::-1], a.conj().T) for w, a in p.terms.items()])


def multiply(p: MatrixNCPoly, q: MatrixNCPoly) -> MatrixNCPoly:
    """Symbolic product ``p q``."""
    if p.m_prime != q.m:
        raise ValueError(f"inner dimensions differ: {p.m_prime} vs {q.m}")
    if p.r != q.r:
        raise ValueError(f"generator counts differ: {p.r} vs {q.r}")
    return build_poly(
        p.m,
        q.m_prime,
        p.r,
        [(u + v, a @ b) for u, a in p.terms.items() for v, b in q.terms.items()],
    )


def evaluate(p: MatrixNCPoly, v: Sequence[np.ndarray]) -> np.ndarray:
    """Evaluate ``p`` at matrices ``v``.

    Returns ``sum_w coeff(w) kron v[w_1] ... v[w_l]`` of shape
    ``(m n, m_prime n)``; the coefficient index is the outer one.
    """
    if len(v) != p.r:
        raise ValueError(f"expected {p.r} matrices, got {len(v)}")
    mats = [np.asarray(x) for x in v]
    if mats:
        n = mats[0].shape[0]
        for x in mats:
            if x.shape != (n, n):
                raise ValueError(f"all inputs must be {n}x{n}, got {x.shape}")
    else:
        n = 1
    dtype = np.result_type(complex, *mats) if mats else complex
    out = np.zeros((p.m * n, p.m_prime * n), dtype=dtype)
    cache: dict[NCWord, np.ndarray] = {(): np.eye(n, dtype=dtype)}

    def word_matrix(w: NCWord) -> np.ndarray:
        if w not in cache:
            cache[w] = word_matrix(w[:-1]) @ mats[w[-1] - 1]
        return cache[w]

    for w, a in p.terms.items():
        out += np.kron(a, word_matrix(w))
    return out


def generator(i: int, r: int, m: int = 1) -> MatrixNCPoly:
    """The polynomial ``1_m X_i``."""
    return build_poly(m, m, r, [((i,), np.eye(m))])


def constant(c, r: int) -> MatrixNCPoly:
    """Constant polynomial with coefficient ``c`` (scalar or matrix)."""
    a = np.atleast_2d(np.asarray(c, dtype=complex))
    return build_poly(a.shape[0], a.shape[1], r, [((), a)])


def block_diag_poly(*blocks: MatrixNCPoly) -> MatrixNCPoly:
    """Block-diagonal direct sum of polynomials in the same generators."""
    r = blocks[0].r
    m = sum(b.m for b in blocks)
    mp = sum(b.m_prime for b in blocks)
    terms = []
    i0 = j0 = 0
    for b in blocks:
        if b.r != r:
            raise ValueError("all blocks must use the same generator count")
        for w, a in b.terms.items():
            big = np.zeros((m, mp), dtype=complex)
            big[i0 : i0 + b.m, j0 : j0 + b.m_prime] = a
            terms.append((w, big))
        i0 += b.m
        j0 += b.m_prime
    return build_poly(m, mp, r, terms)


# ---------------------------------------------------------------- JSON


def poly_to_dict(p: MatrixNCPoly) -> dict:
    """JSON-ready dict; complex entries as ``[re, im]`` pairs, row-major."""

    def enc(a: np.ndarray) -> list:
        return [[[float(z.real), float(z.imag)] for z in row] for row in a]

    return {
        "m": p.m,
        "m_prime": p.m_prime,
        "r": p.r,
        "terms": [{"word": list(w), "coeff": enc(a)} for w, a in p.terms.items()],
    }


def poly_from_dict(data: Mapping, require_terms: bool = True) -> MatrixNCPoly:
    """Parse the JSON polynomial schema.

    Raises
    ------
    ValueError
        With a message naming the offending field.
    """
    for key in ("m", "m_prime", "r", "terms"):
        if key not in data:
            raise ValueError(f"{key} is missing")
    m, mp, r = data["m"], data["m_prime"], data["r"]
    for key, val in (("m", m), ("m_prime", mp)):
        if not isinstance(val, int) or val < 1:
            raise ValueError(f"{key} must be a positive integer")
    if not isinstance(r, int) or r < 0:
        raise ValueError("r must be a non-negative integer")
    raw = data["terms"]
    if not isinstance(raw, list):
        raise ValueError("terms must be a list")
    if require_terms and not raw:
        raise ValueError("terms must be non-empty")
    terms = []
    for idx, t in enumerate(raw):
        if "word" not in t or "coeff" not in t:
            raise ValueError(f"terms[{idx}] needs 'word' and 'coeff'")
        try:
            c = np.asarray(t["coeff"], dtype=float)
        except (TypeError, ValueError) as exc:
            raise ValueError(f"terms[{idx}].coeff is not numeric") from exc
        if c.ndim != 3 or c.shape[2] != 2:
            raise ValueError(f"terms[{idx}].coeff must be an m x m_prime array of [re, im] pairs")
        terms.append((t["word"], c[..., 0] + 1j * c[..., 1]))
    p = build_poly(m, mp, r, terms)
    if require_terms and p.is_zero:
        raise ValueError("terms must be non-empty (all coefficients cancel)")
    return p


def load_poly(path, require_terms: bool = True) -> MatrixNCPoly:
    with open(path) as fh:
        return poly_from_dict(json.load(fh), require_terms=require_terms)


def save_poly(p: MatrixNCPoly, path) -> None:
    with open(path, "w") as fh:
        json.dump(poly_to_dict(p), fh, indent=1)


# ---------------------------------------------------------------- random


def random_poly(
    rng: np.random.Generator,
    m: int,
    m_prime: int,
    r: int,
    d: int,
    n_terms: int | None = None,
) -> MatrixNCPoly:
    """Random polynomial of degree exactly ``d``.

    Coefficient entries have real and imaginary parts uniform on [-1, 1].
    """
    words: list[NCWord] = [tuple(rng.integers(1, r + 1, size=d))]
    n_terms = n_terms if n_terms is not None else int(rng.integers(1, 5))
    for _ in range(n_terms):
        length = int(rng.integers(0, d + 1))
        words.append(tuple(int(x) for x in rng.integers(1, r + 1, size=length)))

    def coeff() -> np.ndarray:
        return rng.uniform(-1, 1, (m, m_prime)) + 1j * rng.uniform(-1, 1, (m, m_prime))

    return build_poly(m, m_prime, r, [(w, coeff()) for w in words])


def random_self_adjoint_poly(
    rng: np.random.Generator, m: int, r: int, d: int, scale: float = 1.0
) -> MatrixNCPoly:
    """Random self-adjoint polynomial ``(q + q*) scale / 2`` of degree ``d``."""
    while True:
        q = random_poly(rng, m, m, r, d)
        p = (q + adjoint(q)).scaled(0.5 * scale)
        if p.degree == d:
            return p
