import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import random_hermitian
from ncspec.linearize import (
    Factorization,
    SingularPencilError,
    assemble_pencil,
    factorize,
    linearize,
    pencil_block_inverse,
    pencil_matrix,
)
from ncspec.ncpoly import build_poly, constant, evaluate, generator, random_poly, random_self_adjoint_poly

ONE = np.array([[1.0]])


def test_degree_one_is_its_own_factor():
    x1 = generator(1, 1)
    f = factorize(x1)
    assert f.dims == (1, 1) and f.factors == (x1,)


def test_product_of_two_generators():
    x, y = generator(1, 2), generator(2, 2)
    f = factorize(x @ y)
    assert f.dims == (1, 3, 1)
    assert f.product() == x @ y


def test_quadratic_with_lower_terms():
    x1 = generator(1, 1)
    p = x1 @ x1 + x1 + constant(ONE, 1)
    f = factorize(p)
    assert f.dims == (1, 2, 1)
    assert f.product().max_coeff_diff(p) == 0


def test_pencil_of_single_generator():
    pen = linearize(generator(1, 1))
    assert pen.k == 1
    np.testing.assert_array_equal(pen.a[0], [[0]])
    np.testing.assert_array_equal(pen.a[1], [[1]])


def test_pencil_blocks_sit_on_the_cyclic_superdiagonal():
    x, y = generator(1, 2), generator(2, 2)
    pen = linearize(x @ y)
    assert pen.k == 4 and pen.block_dims == (1, 3)
    offs = np.cumsum((0,) + pen.block_dims)
    d = len(pen.block_dims)
    allowed = np.zeros((4, 4), dtype=bool)
    for j in range(d):
        jn = (j + 1) % d
        allowed[offs[j]:offs[j + 1], offs[jn]:offs[jn + 1]] = True
    for ai in pen.a[1:]:
        assert np.any(ai)
        assert not np.any(ai[~allowed])


def test_lambda_embedding():
    pen = linearize(generator(1, 2) @ generator(2, 2))
    big = pen.big_lambda(2j)
    np.testing.assert_array_equal(big, np.diag([2j, 1, 1, 1]))


def test_corner_of_pencil_inverse_is_resolvent(rng):
    p = random_poly(rng, 1, 1, 2, 3)
    pen = linearize(p)
    assert pen.k == 13
    v = [random_hermitian(rng, 3) for _ in range(2)]
    A = pencil_matrix(pen, 2j, v)
    corner = np.linalg.inv(A)[:3, :3]
    np.testing.assert_allclose(corner, np.linalg.inv(2j * np.eye(3) - evaluate(p, v)), atol=1e-10)


def test_block_inverse_for_degree_one_is_resolvent(rng):
    p = random_self_adjoint_poly(rng, 2, 2, 1)
    v = [random_hermitian(rng, 3) for _ in range(2)]
    BC = pencil_block_inverse(factorize(p), 1 + 1j, v)
    np.testing.assert_allclose(BC, np.linalg.inv((1 + 1j) * np.eye(6) - evaluate(p, v)), atol=1e-12)


def test_block_inverse_matches_dense_inverse(rng):
    p = random_poly(rng, 1, 1, 2, 3)
    v = [random_hermitian(rng, 4) for _ in range(2)]
    f = factorize(p)
    A = pencil_matrix(linearize(p), 2j, v)
    BC = pencil_block_inverse(f, 2j, v)
    assert np.linalg.norm(BC @ A - np.eye(A.shape[0]), 2) <= 1e-10
    inv = np.linalg.inv(A)
    assert np.linalg.norm(BC - inv) <= 1e-10 * np.linalg.norm(inv)


def test_singular_lambda_is_detected(rng):
    p = random_self_adjoint_poly(rng, 1, 1, 2)
    v = [random_hermitian(rng, 3)]
    lam = np.linalg.eigvalsh(evaluate(p, v))[0]
    with pytest.raises(SingularPencilError, match="singular"):
        pencil_block_inverse(factorize(p), lam, v)
    A = pencil_matrix(linearize(p), lam, v)
    s = np.linalg.svd(A, compute_uv=False)
    assert s[-1] < 1e-8 * s[0]


def test_factor_shapes_validated():
    x1 = generator(1, 1)
    with pytest.raises(ValueError, match="degree"):
        Factorization((x1 @ x1,), (1, 1))
    with pytest.raises(ValueError):
        Factorization((x1,), (1, 2))


def test_alternative_factorization_assembles():
    x1 = generator(1, 1)
    one = constant(ONE, 1)
    p = x1 @ x1 + x1 + one
    u1 = build_poly(1, 2, 1, [([], np.array([[1.0, 0.0]])), ([1], np.array([[0.0, 1.0]]))])
    u2 = build_poly(2, 1, 1, [([], np.array([[1.0], [0.0]])), ([1], np.array([[1.0], [1.0]]))])
    f = Factorization((u1, u2), (1, 2, 1))
    assert f.product() == p
    pen = assemble_pencil(f)
    assert pen.k == 3


seeds = st.integers(0, 2**32 - 1)


@settings(max_examples=50, deadline=None)
@given(seed=seeds)
def test_factorization_round_trip(seed):
    rng = np.random.default_rng(seed)
    p = random_poly(rng, int(rng.integers(1, 3)), int(rng.integers(1, 3)), int(rng.integers(1, 4)),
                    int(rng.integers(1, 5)))
    assert factorize(p).product().max_coeff_diff(p) <= 1e-12


@settings(max_examples=30, deadline=None)
@given(seed=seeds)
def test_pencil_matrix_is_lambda_minus_s(seed):
    rng = np.random.default_rng(seed)
    r = int(rng.integers(1, 3))
    p = random_self_adjoint_poly(rng, int(rng.integers(1, 3)), r, int(rng.integers(1, 4)))
    pen = linearize(p)
    v = [random_hermitian(rng, 3) for _ in range(r)]
    lam = complex(rng.uniform(-2, 2), rng.uniform(0.5, 2))
    expected = np.kron(pen.big_lambda(lam), np.eye(3)) - pen.evaluate_s(v)
    np.testing.assert_array_equal(pencil_matrix(pen, lam, v), expected)


@settings(max_examples=30, deadline=None)
@given(seed=seeds)
def test_pencil_is_well_conditioned_when_resolvent_is(seed):
    rng = np.random.default_rng(seed)
    p = random_self_adjoint_poly(rng, 1, 2, 2)
    v = [random_hermitian(rng, 3) for _ in range(2)]
    lam = complex(rng.uniform(-2, 2), 1.0)
    assert np.linalg.cond(lam * np.eye(3) - evaluate(p, v)) < 1e3
    assert np.linalg.cond(pencil_matrix(linearize(p), lam, v)) < 1e8
