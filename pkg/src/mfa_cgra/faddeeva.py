"""Modified Faddeeva algorithm on the compound matrix ``[[A, B], [-C, D]]``.

Step 1 triangularizes A with Householder QR, applying the same reflectors
to B.  Step 2 eliminates the ``-C`` rows against the diagonal of R, carrying
the row operations through to D.  What is left in the D block is the Schur
complement ``D + C A^{-1} B``.

Choosing the blocks differently turns the same procedure into a multiply,
an add or a linear solve; see :func:`op_multiply`, :func:`op_add`,
:func:`op_solve` and :func:`op_schur`.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from mfa_cgra.dense import (
    DimensionError,
    SingularMatrixError,
    _qr_factor,
    as_matrix,
    max_abs,
)
from mfa_cgra.tracing import traced

NEAR_SINGULAR_RTOL = 1e-12
QR_BLOCK = 32


class NearSingularError(SingularMatrixError):
    """The triangularized A block has a (numerically) vanishing diagonal entry."""

    def __init__(self, message: str, index: int, r_diag_min_abs: float):
        super().__init__(message, index=index)
        self.r_diag_min_abs = r_diag_min_abs


@dataclass(frozen=True)
class CompoundMatrix:
    """Blocks of ``M = [[A, B], [-C, D]]``.  ``neg_c`` holds ``-C``."""

    a: np.ndarray
    b: np.ndarray
    neg_c: np.ndarray
    d: np.ndarray

    def __post_init__(self):
        a, b, neg_c, d = self.a, self.b, self.neg_c, self.d
        if a.shape[0] != a.shape[1]:
            raise DimensionError(f"A must be square, got {a.shape}")
        if b.shape[0] != a.shape[0]:
            raise DimensionError(f"B has {b.shape[0]} rows, A has {a.shape[0]}")
        if neg_c.shape[1] != a.shape[1]:
            raise DimensionError(f"C has {neg_c.shape[1]} columns, A has {a.shape[1]}")
        if d.shape != (neg_c.shape[0], b.shape[1]):
            raise DimensionError(f"D has shape {d.shape}, expected (C.rows, B.cols)={(neg_c.shape[0], b.shape[1])}")

    @property
    def dims(self) -> tuple[int, int, int, int]:
        """(m, n, k, p) as in ``A: m x n, B: m x p, C: k x n, D: k x p``."""
        return self.a.shape[0], self.a.shape[1], self.neg_c.shape[0], self.b.shape[1]

    def as_array(self) -> np.ndarray:
        return np.block([[self.a, self.b], [self.neg_c, self.d]])


@dataclass(frozen=True)
class SchurResult:
    value: np.ndarray
    r_diag_min_abs: float


def build_compound(a, b, c, d) -> CompoundMatrix:
    """Assemble the compound matrix from un-negated ``C``."""
    a, b, c, d = (as_matrix(x, name) for x, name in ((a, "A"), (b, "B"), (c, "C"), (d, "D")))
    return CompoundMatrix(a, b, np.asfortranarray(-c), d)


@traced("mfa")
def mfa(m: CompoundMatrix) -> SchurResult:
    n = m.a.shape[0]
    p = m.b.shape[1]

    # step 1: R | Q^T B
    top = np.asfortranarray(np.hstack([m.a, m.b]))
    _qr_factor(top, n, QR_BLOCK)
    diag = np.abs(np.diag(top[:, :n]))
    rmin = float(diag.min())
    limit = NEAR_SINGULAR_RTOL * max_abs(m.a)
    if rmin <= limit:
        i = int(np.argmin(diag))
        raise NearSingularError(
            f"A is near-singular: |R[{i},{i}]| = {rmin:.3e} <= {limit:.3e}", index=i, r_diag_min_abs=rmin
        )

    # step 2: annihilate -C against diag(R), same row operations on D
    bottom = np.asfortranarray(np.hstack([m.neg_c, m.d]))
    for j in range(n):
        mult = -bottom[:, j] / top[j, j]
        bottom[:, j] = 0.0
        if not mult.any():
            continue
        bottom[:, j + 1:] += np.outer(mult, top[j, j + 1:])
    return SchurResult(np.asfortranarray(bottom[:, n:n + p]), rmin)


@traced("op_multiply")
def op_multiply(c, b) -> np.ndarray:
    """``c @ b`` as an MFA with ``A = I`` and ``D = 0``."""
    c, b = as_matrix(c, "c"), as_matrix(b, "b")
    if c.shape[1] != b.shape[0]:
        raise DimensionError(f"op_multiply: c.cols={c.shape[1]} does not match b.rows={b.shape[0]}")
    n = b.shape[0]
    return mfa(build_compound(np.eye(n), b, c, np.zeros((c.shape[0], b.shape[1])))).value


@traced("op_add")
def op_add(b, d) -> np.ndarray:
    """``b + d`` as an MFA with ``A = C = I``."""
    b, d = as_matrix(b, "b"), as_matrix(d, "d")
    if b.shape != d.shape:
        raise DimensionError(f"op_add: shapes {b.shape} and {d.shape} differ")
    n = b.shape[0]
    return mfa(build_compound(np.eye(n), b, np.eye(n), d)).value


@traced("op_solve")
def op_solve(a, b) -> np.ndarray:
    """``a^{-1} b`` as an MFA with ``C = I`` and ``D = 0``."""
    a, b = as_matrix(a, "a"), as_matrix(b, "b")
    if a.shape[0] != a.shape[1]:
        raise DimensionError(f"op_solve: a must be square, got {a.shape}")
    if b.shape[0] != a.shape[0]:
        raise DimensionError(f"op_solve: b.rows={b.shape[0]} does not match a.rows={a.shape[0]}")
    n = a.shape[0]
    return mfa(build_compound(a, b, np.eye(n), np.zeros_like(b))).value


@traced("op_schur")
def op_schur(a, b, c, d) -> np.ndarray:
    """``d + c a^{-1} b``."""
    return mfa(build_compound(a, b, c, d)).value
