import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from mfa_cgra import dense, faddeeva
from mfa_cgra.matrix_io import MatrixFormatError, format_matrix, parse_matrix
from conftest import diag_dominant


def oracle(a, b, c, d):
    x = dense.getrs(dense.getrf(a, pivot=True), b)
    return d + c @ x


def rel_err(got, want):
    return np.max(np.abs(got - want)) / max(1.0, np.max(np.abs(want)))


# matrix text format -------------------------------------------------------

def test_matrix_round_trip_exact(rng):
    m = rng.standard_normal((3, 4)) * 1e-7
    assert np.array_equal(parse_matrix(format_matrix(m)), m)


def test_matrix_scientific_notation():
    np.testing.assert_array_equal(parse_matrix("1 2\n1e3 -2.5E-1\n"), [[1000.0, -0.25]])


@pytest.mark.parametrize("text", ["", "2\n1 2\n", "1 2\n1\n", "2 1\n1\n", "1 1\nabc\n", "1 1\nnan\n"])
def test_matrix_parse_errors(text):
    with pytest.raises(MatrixFormatError):
        parse_matrix(text)


# compound matrix ----------------------------------------------------------

def test_build_compound_negates_c():
    m = faddeeva.build_compound(np.eye(2), np.eye(2), np.eye(2), np.zeros((2, 2)))
    np.testing.assert_array_equal(m.neg_c, -np.eye(2))


def test_build_compound_zero_c():
    m = faddeeva.build_compound(np.eye(2), np.eye(2), np.zeros((2, 2)), np.zeros((2, 2)))
    assert not m.neg_c.any()


def test_build_compound_dims():
    m = faddeeva.build_compound(np.eye(2), np.ones((2, 3)), np.ones((4, 2)), np.ones((4, 3)))
    assert m.dims == (2, 2, 4, 3)


def test_build_compound_mismatch_names_block():
    with pytest.raises(dense.DimensionError, match="D"):
        faddeeva.build_compound(np.eye(2), np.ones((2, 3)), np.ones((4, 2)), np.ones((4, 2)))


# mfa ----------------------------------------------------------------------

def test_mfa_identity_a_returns_b():
    b = np.array([[1.0, 2.0], [3.0, 4.0]])
    res = faddeeva.mfa(faddeeva.build_compound(np.eye(2), b, np.eye(2), np.zeros((2, 2))))
    np.testing.assert_allclose(res.value, b, atol=1e-15)


def test_mfa_small_schur():
    res = faddeeva.mfa(faddeeva.build_compound(np.eye(2), [[1.0], [1.0]], [[1.0, 1.0]], [[0.0]]))
    np.testing.assert_allclose(res.value, [[2.0]], atol=1e-15)


def test_mfa_random_vs_oracle(rng):
    a = diag_dominant(rng, 4)
    b, c, d = rng.standard_normal((4, 2)), rng.standard_normal((3, 4)), rng.standard_normal((3, 2))
    res = faddeeva.mfa(faddeeva.build_compound(a, b, c, d))
    assert res.value.shape == (3, 2)
    assert rel_err(res.value, oracle(a, b, c, d)) <= 1e-9
    assert res.r_diag_min_abs > 0


def test_mfa_near_singular_reports_index():
    a = np.array([[1.0, 2.0], [2.0, 4.0]])
    with pytest.raises(faddeeva.NearSingularError) as info:
        faddeeva.mfa(faddeeva.build_compound(a, np.ones((2, 1)), np.ones((1, 2)), np.zeros((1, 1))))
    assert info.value.index == 1
    assert info.value.r_diag_min_abs < 1e-12


def test_mfa_does_not_mutate_input(rng):
    a = diag_dominant(rng, 5)
    m = faddeeva.build_compound(a, rng.standard_normal((5, 2)), rng.standard_normal((3, 5)), rng.standard_normal((3, 2)))
    before = m.as_array().copy()
    faddeeva.mfa(m)
    assert np.array_equal(m.as_array(), before)


def test_mfa_zero_c_leaves_d_bit_identical(rng):
    d = rng.standard_normal((3, 2))
    res = faddeeva.mfa(faddeeva.build_compound(diag_dominant(rng, 4), rng.standard_normal((4, 2)), np.zeros((3, 4)), d))
    assert np.array_equal(res.value, d)


# operation menu -----------------------------------------------------------

def test_op_multiply_examples(rng):
    b = rng.standard_normal((3, 2))
    np.testing.assert_allclose(faddeeva.op_multiply(np.eye(3), b), b, atol=1e-15)
    np.testing.assert_allclose(faddeeva.op_multiply(2 * np.eye(2), np.ones((2, 2))), 2 * np.ones((2, 2)))


def test_op_add_examples():
    d = np.array([[3.0, 4.0]])
    np.testing.assert_array_equal(faddeeva.op_add(np.zeros((1, 2)), d), d)
    np.testing.assert_array_equal(faddeeva.op_add(d, np.zeros((1, 2))), d)
    np.testing.assert_array_equal(faddeeva.op_add(np.array([[1.0, 2.0]]), d), [[4.0, 6.0]])


def test_op_solve_examples():
    b = np.array([[2.0], [8.0]])
    np.testing.assert_allclose(faddeeva.op_solve(np.eye(2), b), b)
    np.testing.assert_allclose(faddeeva.op_solve(np.diag([2.0, 4.0]), b), [[1.0], [2.0]])


def test_op_schur_reductions(rng):
    b, c, d = rng.standard_normal((3, 2)), rng.standard_normal((4, 3)), rng.standard_normal((4, 2))
    np.testing.assert_allclose(faddeeva.op_schur(np.eye(3), b, np.zeros((4, 3)), d), d)
    np.testing.assert_allclose(faddeeva.op_schur(np.eye(3), b, c, d), d + c @ b, atol=1e-13)


def test_op_dimension_errors():
    with pytest.raises(dense.DimensionError):
        faddeeva.op_multiply(np.ones((2, 3)), np.ones((2, 2)))
    with pytest.raises(dense.DimensionError):
        faddeeva.op_add(np.ones((2, 3)), np.ones((3, 2)))
    with pytest.raises(dense.DimensionError):
        faddeeva.op_solve(np.ones((2, 3)), np.ones((2, 1)))


shapes = st.tuples(st.integers(1, 8), st.integers(1, 8), st.integers(1, 8), st.integers(0, 2**31))


@given(shapes)
def test_op_multiply_equals_gemm(args):
    k, n, p, seed = args
    r = np.random.default_rng(seed)
    c, b = r.standard_normal((k, n)), r.standard_normal((n, p))
    want = dense.gemm(1.0, c, b, 0.0, np.zeros((k, p)))
    assert rel_err(faddeeva.op_multiply(c, b), want) <= 1e-10


@given(shapes)
def test_op_add_within_one_ulp(args):
    k, _, p, seed = args
    r = np.random.default_rng(seed)
    b, d = r.standard_normal((k, p)), r.standard_normal((k, p))
    want = b + d
    assert np.all(np.abs(faddeeva.op_add(b, d) - want) <= np.spacing(np.abs(want)))


@given(shapes)
def test_op_solve_residual(args):
    n, _, p, seed = args
    r = np.random.default_rng(seed)
    a, b = diag_dominant(r, n), r.standard_normal((n, p))
    x = faddeeva.op_solve(a, b)
    assert np.max(np.abs(a @ x - b)) <= 1e-9 * np.max(np.abs(b))
