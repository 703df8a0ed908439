import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ncspec.freemoments import catalan, is_noncrossing, poly_moment, poly_moments, relabel, word_trace
from ncspec.ncpoly import block_diag_poly, constant, generator, random_self_adjoint_poly


@pytest.mark.parametrize(
    "word, value",
    [((1, 1), 1), ((1, 1, 1, 1), 2), ((1, 2, 1, 2), 0), ((1, 2, 2, 1), 1), ((1,), 0), ((), 1)],
)
def test_word_trace_examples(word, value):
    assert word_trace(word) == value


def test_catalan_numbers_for_powers_of_one_generator():
    for j in range(9):
        assert word_trace((1,) * (2 * j)) == catalan(j)
    assert [catalan(j) for j in range(7)] == [1, 1, 2, 5, 14, 42, 132]


def test_noncrossing_test():
    assert is_noncrossing([(0, 3), (1, 2)])
    assert not is_noncrossing([(0, 2), (1, 3)])


def test_poly_moment_examples():
    x1 = generator(1, 1)
    assert poly_moment(x1, 2) == 1
    assert poly_moment(x1 @ x1, 2) == 2
    two = block_diag_poly(x1, x1 + constant(np.array([[5.0]]), 1))
    assert poly_moment(two, 1) == pytest.approx(2.5)


def test_poly_moments_of_square_are_catalan():
    x1 = generator(1, 1)
    assert poly_moments(x1 @ x1, 6) == [catalan(j) for j in range(7)]


def test_anticommutator_moments():
    # (xy + yx)^2 traces to 2; fourth moment counts noncrossing pairings of the expansion
    x, y = generator(1, 2), generator(2, 2)
    m = poly_moments(x @ y + y @ x, 4)
    assert m[:5] == pytest.approx([1, 0, 2, 0, 10])


@settings(max_examples=50, deadline=None)
@given(word=st.lists(st.integers(1, 3), max_size=10))
def test_word_trace_invariant_under_relabeling(word):
    w = tuple(word)
    assert word_trace(relabel(w, {1: 3, 2: 1, 3: 2})) == word_trace(w)


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_moment_sequence_is_real_and_positive(seed):
    rng = np.random.default_rng(seed)
    p = random_self_adjoint_poly(rng, int(rng.integers(1, 3)), 2, 2)
    m = poly_moments(p, 6)
    assert all(isinstance(v, float) for v in m)
    hankel = np.array([[m[i + j] for j in range(4)] for i in range(4)])
    assert np.linalg.eigvalsh(hankel).min() >= -1e-8 * max(1.0, np.abs(hankel).max())
