import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from mfa_cgra import dense
from conftest import diag_dominant

ULP = np.finfo(np.float64).eps


def naive_gemm(alpha, a, b, beta, c):
    m, k = a.shape
    p = b.shape[1]
    out = np.empty((m, p))
    for i in range(m):
        for j in range(p):
            s = 0.0
            for t in range(k):
                s += a[i, t] * b[t, j]
            out[i, j] = alpha * s + beta * c[i, j]
    return out


# gemm ---------------------------------------------------------------------

def test_gemm_identity():
    b = np.array([[5.0, 6.0], [7.0, 8.0]])
    np.testing.assert_array_equal(dense.gemm(1.0, np.eye(2), b, 0.0, np.zeros((2, 2))), b)


def test_gemm_alpha_zero_returns_beta_c():
    out = dense.gemm(0.0, np.ones((1, 3)), np.ones((3, 1)), 1.0, np.array([[9.0]]))
    np.testing.assert_array_equal(out, [[9.0]])


def test_gemm_small_product():
    a = np.array([[1.0, 2.0], [3.0, 4.0]])
    b = np.array([[5.0, 6.0], [7.0, 8.0]])
    np.testing.assert_array_equal(dense.gemm(1.0, a, b, 0.0, np.zeros((2, 2))), [[19, 22], [43, 50]])


def test_gemm_dimension_error_names_pair():
    with pytest.raises(dense.DimensionError, match="a.cols"):
        dense.gemm(1.0, np.ones((2, 3)), np.ones((2, 2)), 0.0, np.zeros((2, 2)))


def test_gemm_bit_identical_repeat(rng):
    a, b, c = rng.standard_normal((7, 5)), rng.standard_normal((5, 6)), rng.standard_normal((7, 6))
    assert np.array_equal(dense.gemm(1.3, a, b, -0.7, c), dense.gemm(1.3, a, b, -0.7, c))


def test_gemm_rejects_non_finite():
    with pytest.raises(ValueError):
        dense.gemm(1.0, np.array([[np.nan]]), np.ones((1, 1)), 0.0, np.zeros((1, 1)))


@pytest.mark.parametrize("block", [1, 3, 8])
def test_gemm_blocked_matches_naive(rng, block):
    a, b, c = rng.standard_normal((8, 8)), rng.standard_normal((8, 8)), rng.standard_normal((8, 8))
    want = naive_gemm(1.0, a, b, 1.0, c)
    got = dense.gemm_blocked(1.0, a, b, 1.0, c, block)
    assert np.max(np.abs(got - want)) <= 1e-12 * np.max(np.abs(want))


def test_gemm_blocked_single_block_is_gemm(rng):
    a, b, c = rng.standard_normal((4, 3)), rng.standard_normal((3, 5)), rng.standard_normal((4, 5))
    assert np.array_equal(dense.gemm_blocked(2.0, a, b, 0.5, c, 16), dense.gemm(2.0, a, b, 0.5, c))


@given(st.integers(1, 9), st.integers(1, 9), st.integers(1, 9), st.integers(1, 10), st.integers(0, 2**31))
def test_gemm_blocked_reassociation_bound(m, k, p, block, seed):
    r = np.random.default_rng(seed)
    a, b, c = r.standard_normal((m, k)), r.standard_normal((k, p)), r.standard_normal((m, p))
    ref = dense.gemm(1.0, a, b, 1.0, c)
    got = dense.gemm_blocked(1.0, a, b, 1.0, c, block)
    # bound relative to the magnitude of the summed terms
    scale = np.abs(a) @ np.abs(b) + np.abs(c)
    assert np.all(np.abs(got - ref) <= 16 * k * ULP * scale + 1e-300)


# QR -----------------------------------------------------------------------

def qr_checks(a, f):
    m = a.shape[0]
    q = f.q()
    r = np.zeros_like(a)
    r[: a.shape[1], :] = f.r
    assert np.allclose(np.tril(f.r, -1), 0.0)
    assert np.max(np.abs(q.T @ q - np.eye(m))) <= 1e-13 * m
    assert np.max(np.abs(a - q @ r)) <= 1e-12 * np.max(np.abs(a))


def test_geqr2_identity_no_reflection():
    f = dense.geqr2(np.eye(3))
    np.testing.assert_array_equal(f.packed, np.eye(3))
    np.testing.assert_array_equal(f.tau, np.zeros(3))


def test_geqr2_sign_convention():
    f = dense.geqr2(np.array([[3.0], [4.0]]))
    assert f.r[0, 0] == pytest.approx(-5.0, abs=1e-15)
    qr_checks(np.array([[3.0], [4.0]]), f)


def test_geqr2_random_4x4(rng):
    a = rng.uniform(-1, 1, (4, 4))
    qr_checks(a, dense.geqr2(a))


def test_geqr2_rejects_wide():
    with pytest.raises(dense.DimensionError):
        dense.geqr2(np.ones((2, 3)))


@pytest.mark.parametrize("block", [1, 4, 8])
def test_geqrf_agrees_with_geqr2(rng, block):
    a = rng.uniform(-1, 1, (8, 8))
    f, g = dense.geqrf(a, block), dense.geqr2(a)
    qr_checks(a, f)
    assert np.max(np.abs(f.r - g.r)) <= 1e-11 * np.max(np.abs(a))


@given(st.integers(1, 12), st.integers(0, 6), st.integers(0, 2**31))
def test_qr_tall_property(n, extra, seed):
    a = np.random.default_rng(seed).uniform(-1, 1, (n + extra, n))
    qr_checks(a, dense.geqr2(a))


# LU -----------------------------------------------------------------------

def test_getrf2_identity():
    f = dense.getrf2(np.eye(2), pivot=False)
    np.testing.assert_array_equal(f.l, np.eye(2))
    np.testing.assert_array_equal(f.u, np.eye(2))
    assert f.perm is None


def test_getrf2_hand_example():
    f = dense.getrf2(np.array([[2.0, 1.0], [4.0, 5.0]]), pivot=False)
    np.testing.assert_array_equal(f.l, [[1, 0], [2, 1]])
    np.testing.assert_array_equal(f.u, [[2, 1], [0, 3]])


def test_getrf2_zero_pivot_names_k():
    with pytest.raises(dense.SingularMatrixError) as info:
        dense.getrf2(np.array([[0.0, 1.0], [1.0, 0.0]]), pivot=False)
    assert info.value.index == 0


def test_getrf2_pivoted_singular_column():
    with pytest.raises(dense.SingularMatrixError):
        dense.getrf2(np.array([[0.0, 1.0], [0.0, 2.0]]), pivot=True)


def test_getrf2_pivoting(rng):
    a = rng.uniform(-1, 1, (6, 6))
    f = dense.getrf2(a, pivot=True)
    assert sorted(f.perm.tolist()) == list(range(6))
    assert np.max(np.abs(a[f.perm] - f.l @ f.u)) <= 1e-12 * np.max(np.abs(a))


@pytest.mark.parametrize("block", [1, 3, 8])
def test_getrf_blocked_no_pivot(rng, block):
    a = diag_dominant(rng, 8)
    f, g = dense.getrf(a, pivot=False, block=block), dense.getrf2(a, pivot=False)
    assert np.max(np.abs(a - f.l @ f.u)) <= 1e-12 * np.max(np.abs(a))
    assert np.max(np.abs(f.packed - g.packed)) <= 1e-11 * np.max(np.abs(a))


# triangular solves ----------------------------------------------------------

def test_trsm_upper_identity(rng):
    b = rng.standard_normal((3, 2))
    np.testing.assert_array_equal(dense.trsm_upper(np.eye(3), b), b)


def test_trsm_upper_diagonal():
    np.testing.assert_array_equal(dense.trsm_upper(np.diag([2.0, 4.0]), np.array([[2.0], [8.0]])), [[1], [2]])


def test_trsm_upper_zero_diagonal():
    with pytest.raises(dense.SingularMatrixError) as info:
        dense.trsm_upper(np.array([[1.0, 2.0], [0.0, 0.0]]), np.ones((2, 1)))
    assert info.value.index == 1


def test_trsm_upper_residual(rng):
    r = np.triu(rng.uniform(-1, 1, (6, 6))) + 3 * np.eye(6)
    b = rng.standard_normal((6, 3))
    x = dense.trsm_upper(r, b)
    assert np.max(np.abs(r @ x - b)) <= 1e-12 * np.max(np.abs(b))


def test_getrs_solves(rng):
    a = rng.uniform(-1, 1, (5, 5)) + 2 * np.eye(5)
    b = rng.standard_normal((5, 2))
    x = dense.getrs(dense.getrf(a, pivot=True), b)
    assert np.allclose(a @ x, b, atol=1e-12)


def test_trsm_right_upper(rng):
    r = np.triu(rng.uniform(-1, 1, (4, 4))) + 3 * np.eye(4)
    c = rng.standard_normal((3, 4))
    x = dense.trsm_right_upper(r, c)
    assert np.allclose(x @ r, c, atol=1e-13)


# compact WY ---------------------------------------------------------------

def test_larfb_matches_ormqr(rng):
    a = rng.uniform(-1, 1, (8, 8))
    c = rng.standard_normal((8, 5))
    f = dense.geqr2(a)
    t = dense.larft(f)
    got = dense.larfb(f.packed, t, c)
    assert np.max(np.abs(got - dense.ormqr(f, c))) <= 1e-13
    assert np.allclose(got, f.q().T @ c, atol=1e-13)
