"""Dense kernels: GEMM, Householder QR and LU, LAPACK-style packed factors.

Every routine takes and returns float64 arrays in column-major (Fortran)
order.  Factorizations follow the LAPACK packing convention so the results
can be compared against any LAPACK-backed oracle:

* QR: ``R`` in the upper triangle, Householder vectors (implicit unit
  leading element) below the diagonal, ``tau`` alongside.
* LU: ``U`` on and above the diagonal, unit-lower ``L`` strictly below,
  optional row permutation as an index vector.

Householder sign convention: the diagonal of ``R`` gets the sign opposite to
the leading element of its column subproblem, ``beta = -sign(alpha) * norm``.
A column whose subdiagonal is already zero is left alone (``tau = 0``).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from mfa_cgra.tracing import traced

__all__ = [
    "DimensionError",
    "SingularMatrixError",
    "PIVOT_TINY",
    "QrFactors",
    "LuFactors",
    "as_matrix",
    "max_abs",
    "gemm",
    "gemm_blocked",
    "geqr2",
    "geqrf",
    "getrf2",
    "getrf",
    "getrs",
    "trsm_upper",
    "trsm_unit_lower",
    "trsm_right_upper",
    "ormqr",
    "larft",
    "larfb",
]

PIVOT_TINY = 1e-300


class DimensionError(ValueError):
    """Operand shapes are incompatible."""


class SingularMatrixError(ArithmeticError):
    """A pivot or diagonal entry is numerically zero."""

    def __init__(self, message: str, index: Optional[int] = None):
        super().__init__(message)
        self.index = index


def as_matrix(x, name: str = "matrix") -> np.ndarray:
    """Validate ``x`` as a finite 2-D float64 matrix and return a Fortran-ordered copy."""
    arr = np.array(x, dtype=np.float64, order="F", copy=True)
    if arr.ndim == 1:
        arr = arr.reshape(-1, 1, order="F")
    if arr.ndim != 2:
        raise DimensionError(f"{name} must be 2-D, got shape {arr.shape}")
    if arr.shape[0] < 1 or arr.shape[1] < 1:
        raise DimensionError(f"{name} must have positive dimensions, got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains NaN or Inf")
    return arr


def max_abs(a: np.ndarray) -> float:
    return float(np.max(np.abs(a))) if a.size else 0.0


@dataclass(frozen=True)
class QrFactors:
    packed: np.ndarray
    tau: np.ndarray

    @property
    def r(self) -> np.ndarray:
        n = self.packed.shape[1]
        return np.triu(self.packed[:n, :])

    def q(self) -> np.ndarray:
        """Explicit orthogonal factor, built by applying the reflectors to the identity."""
        m, n = self.packed.shape
        q = np.eye(m, order="F")
        for j in reversed(range(min(m, n))):
            if self.tau[j] == 0.0:
                continue
            v = np.empty(m - j)
            v[0] = 1.0
            v[1:] = self.packed[j + 1:, j]
            w = v @ q[j:, :]
            q[j:, :] -= self.tau[j] * np.outer(v, w)
        return q


@dataclass(frozen=True)
class LuFactors:
    packed: np.ndarray
    perm: Optional[np.ndarray] = None

    @property
    def l(self) -> np.ndarray:
        n = self.packed.shape[0]
        return np.tril(self.packed, -1) + np.eye(n)

    @property
    def u(self) -> np.ndarray:
        return np.triu(self.packed)


def _check_gemm(a: np.ndarray, b: np.ndarray, c: np.ndarray) -> None:
    if a.shape[1] != b.shape[0]:
        raise DimensionError(f"gemm: a.cols={a.shape[1]} does not match b.rows={b.shape[0]}")
    if c.shape != (a.shape[0], b.shape[1]):
        raise DimensionError(
            f"gemm: c has shape {c.shape}, expected (a.rows, b.cols)={(a.shape[0], b.shape[1])}"
        )


@traced("gemm")
def gemm(alpha: float, a, b, beta: float, c) -> np.ndarray:
    """Return ``alpha*a@b + beta*c`` with inner products accumulated in ascending k."""
    a, b, c = as_matrix(a, "a"), as_matrix(b, "b"), as_matrix(c, "c")
    _check_gemm(a, b, c)
    acc = np.zeros(c.shape, order="F")
    for k in range(a.shape[1]):
        acc += np.outer(a[:, k], b[k, :])
    return np.asfortranarray(alpha * acc + beta * c)


@traced("gemm_blocked")
def gemm_blocked(alpha: float, a, b, beta: float, c, block: int) -> np.ndarray:
    """Tiled GEMM.  Each k-tile is summed on its own and then folded into the result.

    With ``block`` at least every dimension there is one tile and the result is
    bit-identical to :func:`gemm`.
    """
    if block < 1:
        raise ValueError(f"block must be >= 1, got {block}")
    a, b, c = as_matrix(a, "a"), as_matrix(b, "b"), as_matrix(c, "c")
    _check_gemm(a, b, c)
    m, kdim = a.shape
    n = b.shape[1]
    acc = np.zeros(c.shape, order="F")
    for i0 in range(0, m, block):
        i1 = min(i0 + block, m)
        for j0 in range(0, n, block):
            j1 = min(j0 + block, n)
            for k0 in range(0, kdim, block):
                k1 = min(k0 + block, kdim)
                part = np.zeros((i1 - i0, j1 - j0))
                for k in range(k0, k1):
                    part += np.outer(a[i0:i1, k], b[k, j0:j1])
                acc[i0:i1, j0:j1] += part
    return np.asfortranarray(alpha * acc + beta * c)


def _larfg(x: np.ndarray) -> tuple[float, float, np.ndarray]:
    """Generate a reflector for column ``x``; returns (beta, tau, v_tail)."""
    alpha = x[0]
    tail = x[1:]
    if tail.size == 0:
        return alpha, 0.0, tail.copy()
    xnorm2 = float(tail @ tail)
    if xnorm2 == 0.0:
        return alpha, 0.0, np.zeros_like(tail)
    nrm = np.sqrt(alpha * alpha + xnorm2)
    beta = -nrm if alpha >= 0.0 else nrm
    tau = (beta - alpha) / beta
    v = tail / (alpha - beta)
    return beta, tau, v


def _apply_reflector(work: np.ndarray, j: int, v_tail: np.ndarray, tau: float, cols: slice) -> None:
    block = work[j:, cols]
    if block.shape[1] == 0 or tau == 0.0:
        return
    w = block[0, :] + v_tail @ block[1:, :]
    g = tau * w
    block[0, :] -= g
    block[1:, :] -= np.outer(v_tail, g)


def _geqr2_inplace(work: np.ndarray, ncols: int, tau: np.ndarray, col0: int = 0, update_to: Optional[int] = None) -> None:
    """Unblocked Householder QR of columns ``col0:col0+ncols``.

    Reflectors are applied to the columns up to ``update_to`` (default: all).
    """
    stop = work.shape[1] if update_to is None else update_to
    for jj in range(ncols):
        j = col0 + jj
        beta, t, v = _larfg(work[j:, j])
        tau[j] = t
        work[j, j] = beta
        work[j + 1:, j] = v
        _apply_reflector(work, j, v, t, slice(j + 1, stop))


def _larft(v: np.ndarray, tau: np.ndarray) -> np.ndarray:
    """Upper-triangular T with H_1 ... H_k = I - V T V^T (forward, columnwise)."""
    k = v.shape[1]
    t = np.zeros((k, k), order="F")
    for i in range(k):
        t[i, i] = tau[i]
        if i and tau[i] != 0.0:
            z = v[:, :i].T @ v[:, i]
            t[:i, i] = -tau[i] * (t[:i, :i] @ z)
    return t


def _qr_factor(work: np.ndarray, ncols: int, block: int) -> np.ndarray:
    """Blocked Householder QR of the first ``ncols`` columns of ``work``, in place.

    Columns past ``ncols`` receive the same orthogonal transformation.
    Returns tau.
    """
    total = work.shape[1]
    tau = np.zeros(ncols)
    for j in range(0, ncols, block):
        jb = min(block, ncols - j)
        _geqr2_inplace(work, jb, tau, col0=j, update_to=j + jb)
        if j + jb < total:
            v = np.tril(work[j:, j:j + jb], -1)
            v[np.arange(jb), np.arange(jb)] = 1.0
            t = _larft(v, tau[j:j + jb])
            trail = work[j:, j + jb:]
            w = gemm(1.0, v.T, trail, 0.0, np.zeros((jb, trail.shape[1])))
            w = gemm(1.0, t.T, w, 0.0, np.zeros_like(w))
            work[j:, j + jb:] = gemm(-1.0, v, w, 1.0, trail)
    return tau


def _check_tall(a: np.ndarray, name: str) -> None:
    if a.shape[0] < a.shape[1]:
        raise DimensionError(f"{name}: rows={a.shape[0]} < cols={a.shape[1]} is not supported")


@traced("geqr2")
def geqr2(a) -> QrFactors:
    """Unblocked Householder QR (one reflector per column, matrix-vector updates)."""
    work = as_matrix(a, "a")
    _check_tall(work, "geqr2")
    tau = np.zeros(work.shape[1])
    _geqr2_inplace(work, work.shape[1], tau)
    return QrFactors(work, tau)


@traced("geqrf")
def geqrf(a, block: int) -> QrFactors:
    """Blocked Householder QR: panels via :func:`geqr2`, trailing update via GEMM (compact WY)."""
    if block < 1:
        raise ValueError(f"block must be >= 1, got {block}")
    work = as_matrix(a, "a")
    _check_tall(work, "geqrf")
    tau = _qr_factor(work, work.shape[1], block)
    return QrFactors(work, tau)


def _lu_panel(work: np.ndarray, perm: Optional[np.ndarray], j0: int, ncols: int, update_to: int) -> None:
    """Right-looking unblocked LU of columns ``j0:j0+ncols`` on rows ``j0:``.

    Row interchanges are applied across the full row width so the packed
    result stays consistent.
    """
    n = work.shape[0]
    for k in range(j0, j0 + ncols):
        if perm is not None:
            p = k + int(np.argmax(np.abs(work[k:, k])))
            if abs(work[p, k]) <= PIVOT_TINY:
                raise SingularMatrixError(f"matrix is singular: pivot column {k} is zero", index=k)
            if p != k:
                work[[k, p], :] = work[[p, k], :]
                perm[[k, p]] = perm[[p, k]]
        elif abs(work[k, k]) <= PIVOT_TINY:
            raise SingularMatrixError(f"zero pivot at k={k} (pivoting disabled)", index=k)
        if k + 1 < n:
            work[k + 1:, k] /= work[k, k]
            work[k + 1:, k + 1:update_to] -= np.outer(work[k + 1:, k], work[k, k + 1:update_to])


def _check_square(a: np.ndarray, name: str) -> None:
    if a.shape[0] != a.shape[1]:
        raise DimensionError(f"{name}: matrix must be square, got {a.shape}")


@traced("getrf2")
def getrf2(a, pivot: bool = True) -> LuFactors:
    """Unblocked LU; ``pivot=False`` drops the pivot search and row interchanges."""
    work = as_matrix(a, "a")
    _check_square(work, "getrf2")
    n = work.shape[0]
    perm = np.arange(n) if pivot else None
    _lu_panel(work, perm, 0, n, n)
    return LuFactors(work, perm)


@traced("getrf")
def getrf(a, pivot: bool = True, block: int = 32) -> LuFactors:
    """Blocked right-looking LU with a GEMM trailing update."""
    if block < 1:
        raise ValueError(f"block must be >= 1, got {block}")
    work = as_matrix(a, "a")
    _check_square(work, "getrf")
    n = work.shape[0]
    perm = np.arange(n) if pivot else None
    for j in range(0, n, block):
        jb = min(block, n - j)
        _lu_panel(work, perm, j, jb, j + jb)
        if j + jb < n:
            l11 = work[j:j + jb, j:j + jb]
            work[j:j + jb, j + jb:] = trsm_unit_lower(l11, work[j:j + jb, j + jb:])
            work[j + jb:, j + jb:] = gemm(
                -1.0, work[j + jb:, j:j + jb], work[j:j + jb, j + jb:], 1.0, work[j + jb:, j + jb:]
            )
    return LuFactors(work, perm)


def trsm_unit_lower(l, b) -> np.ndarray:
    """Solve ``L X = b`` with L unit lower triangular (strict lower part of ``l`` used)."""
    l = np.asarray(l, dtype=np.float64)
    x = np.array(b, dtype=np.float64, order="F", copy=True)
    for i in range(1, l.shape[0]):
        x[i, :] -= l[i, :i] @ x[:i, :]
    return x


@traced("trsm_upper")
def trsm_upper(r, b) -> np.ndarray:
    """Back substitution: return X with ``r @ X = b`` for upper-triangular ``r``."""
    r, b = as_matrix(r, "r"), as_matrix(b, "b")
    _check_square(r, "trsm_upper")
    if r.shape[0] != b.shape[0]:
        raise DimensionError(f"trsm_upper: r.rows={r.shape[0]} does not match b.rows={b.shape[0]}")
    diag = np.abs(np.diag(r))
    bad = np.flatnonzero(diag <= PIVOT_TINY)
    if bad.size:
        i = int(bad[0])
        raise SingularMatrixError(f"trsm_upper: zero diagonal at index {i}", index=i)
    n = r.shape[0]
    x = b.copy()
    for i in reversed(range(n)):
        if i + 1 < n:
            x[i, :] -= r[i, i + 1:] @ x[i + 1:, :]
        x[i, :] /= r[i, i]
    return x


@traced("getrs")
def getrs(factors: LuFactors, b) -> np.ndarray:
    """Solve ``A X = b`` from LU factors of A."""
    b = as_matrix(b, "b")
    if b.shape[0] != factors.packed.shape[0]:
        raise DimensionError(f"getrs: b.rows={b.shape[0]} does not match n={factors.packed.shape[0]}")
    if factors.perm is not None:
        b = b[factors.perm, :]
    y = trsm_unit_lower(factors.packed, b)
    return trsm_upper(np.triu(factors.packed), y)


@traced("ormqr")
def ormqr(factors: QrFactors, c) -> np.ndarray:
    """Return ``Q^T c`` by applying the stored reflectors in order."""
    c = as_matrix(c, "c")
    v = factors.packed
    if c.shape[0] != v.shape[0]:
        raise DimensionError(f"ormqr: c.rows={c.shape[0]} does not match reflector length {v.shape[0]}")
    out = c.copy()
    for j in range(v.shape[1]):
        _apply_reflector(out, j, v[j + 1:, j], float(factors.tau[j]), slice(None))
    return out


@traced("trsm_right_upper")
def trsm_right_upper(r, c) -> np.ndarray:
    """Column sweep: return X with ``X @ r = c`` for upper-triangular ``r``."""
    r, c = as_matrix(r, "r"), as_matrix(c, "c")
    _check_square(r, "trsm_right_upper")
    n = r.shape[0]
    if c.shape[1] != n:
        raise DimensionError(f"trsm_right_upper: c.cols={c.shape[1]} does not match n={n}")
    x = c.copy()
    for j in range(n):
        if abs(r[j, j]) <= PIVOT_TINY:
            raise SingularMatrixError(f"trsm_right_upper: zero diagonal at index {j}", index=j)
        x[:, j] /= r[j, j]
        if j + 1 < n:
            x[:, j + 1:] -= np.outer(x[:, j], r[j, j + 1:])
    return x


def _unit_lower(packed: np.ndarray) -> np.ndarray:
    k = packed.shape[1]
    v = np.tril(packed[:, :k], -1)
    v[np.arange(k), np.arange(k)] = 1.0
    return v


@traced("larft")
def larft(factors: QrFactors) -> np.ndarray:
    """Triangular factor T of the compact WY form Q = I - V T V^T."""
    return _larft(_unit_lower(factors.packed), factors.tau)


@traced("larfb")
def larfb(packed, t, c) -> np.ndarray:
    """Return ``Q^T c`` with Q = I - V T V^T (V: unit lower part of ``packed``)."""
    packed, t, c = as_matrix(packed, "packed"), as_matrix(t, "t"), as_matrix(c, "c")
    v = _unit_lower(packed)
    if c.shape[0] != v.shape[0] or t.shape != (v.shape[1], v.shape[1]):
        raise DimensionError("larfb: incompatible shapes")
    w = gemm(1.0, v.T, c, 0.0, np.zeros((v.shape[1], c.shape[1])))
    w = gemm(1.0, t.T, w, 0.0, np.zeros_like(w))
    return gemm(-1.0, v, w, 1.0, c)
