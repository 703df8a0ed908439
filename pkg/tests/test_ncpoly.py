import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import random_hermitian
from ncspec.ncpoly import (
    adjoint,
    block_diag_poly,
    build_poly,
    constant,
    evaluate,
    generator,
    load_poly,
    multiply,
    poly_from_dict,
    poly_to_dict,
    random_poly,
    random_self_adjoint_poly,
    save_poly,
)

ONE = np.array([[1.0]])


def test_empty_terms_give_zero_polynomial():
    p = build_poly(1, 1, 1, [])
    assert p.is_zero and p.degree == 0


def test_single_generator():
    p = build_poly(1, 1, 1, [([1], ONE)])
    assert p.degree == 1
    assert p == generator(1, 1)


def test_cancelling_terms_drop_out():
    p = build_poly(1, 1, 1, [([1], ONE), ([1], -ONE)])
    assert p.is_zero and p.terms == {}


def test_letter_out_of_range_rejected():
    with pytest.raises(ValueError, match="letter"):
        build_poly(1, 1, 2, [([3], ONE)])


def test_coefficient_shape_checked():
    with pytest.raises(ValueError):
        build_poly(2, 2, 1, [([1], ONE)])


def test_terms_sorted_by_length_then_letters():
    p = build_poly(1, 1, 2, [([2, 1], ONE), ([1], ONE), ([], ONE), ([1, 2], ONE)])
    assert list(p.terms) == [(), (1,), (1, 2), (2, 1)]


def test_adjoint_examples():
    x, y = generator(1, 2), generator(2, 2)
    assert adjoint(generator(1, 1)) == generator(1, 1)
    assert adjoint((x @ y).scaled(1j)) == (y @ x).scaled(-1j)
    anti = x @ y + y @ x
    assert adjoint(anti) == anti
    assert anti.is_self_adjoint()
    assert not (x @ y).is_self_adjoint()


def test_multiply_examples():
    x, y = generator(1, 2), generator(2, 2)
    xy = multiply(x, y)
    assert list(xy.terms) == [(1, 2)]
    np.testing.assert_array_equal(xy.coeff((1, 2)), ONE)
    x1 = generator(1, 1)
    one = constant(ONE, 1)
    assert (x1 + one) @ (x1 - one) == x1 @ x1 - one


def test_evaluate_examples(rng):
    a = random_hermitian(rng, 3)
    np.testing.assert_allclose(evaluate(generator(1, 1), [a]), a)
    c = np.array([[1.0, 2.0], [3.0, 4.0]])
    np.testing.assert_allclose(evaluate(constant(c, 1), [a]), np.kron(c, np.eye(3)))
    b1 = np.array([[1.0, 2j], [-2j, 0.5]])
    b2 = np.array([[0.0, 1.0], [1.0, -1.0]])
    x, y = generator(1, 2), generator(2, 2)
    np.testing.assert_allclose(evaluate(x @ y, [b1, b2]), b1 @ b2)


def test_matrix_coefficients_use_outer_kron():
    c = np.array([[0.0, 1.0], [1.0, 0.0]])
    p = build_poly(2, 2, 1, [([1], c)])
    a = np.diag([1.0, 2.0])
    np.testing.assert_allclose(evaluate(p, [a]), np.kron(c, a))


def test_product_of_random_quadratics_matches_evaluation(rng):
    p = random_poly(rng, 2, 2, 2, 2)
    q = random_poly(rng, 2, 2, 2, 2)
    pq = p @ q
    assert pq.degree <= 4
    v = [random_hermitian(rng, 3) for _ in range(2)]
    lhs, rhs = evaluate(pq, v), evaluate(p, v) @ evaluate(q, v)
    assert np.linalg.norm(lhs - rhs) <= 1e-12 * max(1.0, np.linalg.norm(rhs))


def test_block_diag():
    x1 = generator(1, 1)
    p = block_diag_poly(x1, x1 + constant(5 * ONE, 1))
    assert (p.m, p.m_prime) == (2, 2)
    np.testing.assert_allclose(p.coeff(()), np.diag([0.0, 5.0]))
    np.testing.assert_allclose(p.coeff((1,)), np.eye(2))


def test_json_round_trip(tmp_path, rng):
    p = random_poly(rng, 2, 3, 2, 3)
    path = tmp_path / "p.json"
    save_poly(p, path)
    assert load_poly(path) == p
    assert json.loads(path.read_text())["m_prime"] == 3


@pytest.mark.parametrize(
    "data, field",
    [
        ({"m": 1, "m_prime": 1, "r": 1, "terms": []}, "terms must be non-empty"),
        ({"m_prime": 1, "r": 1, "terms": []}, "m is missing"),
        ({"m": 0, "m_prime": 1, "r": 1, "terms": []}, "m must be a positive integer"),
        ({"m": 1, "m_prime": 1, "r": 1, "terms": [{"word": [1]}]}, r"terms\[0\]"),
        ({"m": 1, "m_prime": 1, "r": 1, "terms": [{"word": [1], "coeff": [[1.0]]}]}, r"terms\[0\].coeff"),
    ],
)
def test_schema_errors_name_the_field(data, field):
    with pytest.raises(ValueError, match=field):
        poly_from_dict(data)


def test_empty_terms_allowed_when_not_required():
    assert poly_from_dict({"m": 1, "m_prime": 1, "r": 1, "terms": []}, require_terms=False).is_zero


seeds = st.integers(0, 2**32 - 1)


@settings(max_examples=40, deadline=None)
@given(seed=seeds)
def test_evaluation_is_multiplicative(seed):
    rng = np.random.default_rng(seed)
    m = int(rng.integers(1, 3))
    r = int(rng.integers(1, 3))
    p = random_poly(rng, m, m, r, int(rng.integers(1, 4)))
    q = random_poly(rng, m, m, r, int(rng.integers(1, 4)))
    v = [random_hermitian(rng, 4) for _ in range(r)]
    rhs = evaluate(p, v) @ evaluate(q, v)
    assert np.linalg.norm(evaluate(p @ q, v) - rhs) <= 1e-12 * max(1.0, np.linalg.norm(rhs))


@settings(max_examples=40, deadline=None)
@given(seed=seeds)
def test_adjoint_commutes_with_evaluation(seed):
    rng = np.random.default_rng(seed)
    r = int(rng.integers(1, 3))
    p = random_poly(rng, 2, 3, r, int(rng.integers(1, 4)))
    v = [random_hermitian(rng, 3) for _ in range(r)]
    np.testing.assert_allclose(evaluate(adjoint(p), v), evaluate(p, v).conj().T, atol=1e-12)


@settings(max_examples=40, deadline=None)
@given(seed=seeds)
def test_canonical_form_is_idempotent(seed):
    rng = np.random.default_rng(seed)
    p = random_poly(rng, 2, 2, 2, 3)
    again = build_poly(p.m, p.m_prime, p.r, list(p.terms.items()))
    assert again == p
    assert poly_from_dict(poly_to_dict(p)) == p
    assert all(np.any(c) for c in p.terms.values())
    assert p.degree == max(len(w) for w in p.terms)


@settings(max_examples=30, deadline=None)
@given(seed=seeds)
def test_random_self_adjoint_poly_is_self_adjoint(seed):
    rng = np.random.default_rng(seed)
    p = random_self_adjoint_poly(rng, 2, 2, 3)
    assert p.is_self_adjoint() and p.degree == 3
