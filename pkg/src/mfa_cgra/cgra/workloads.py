"""Generated workloads for the timing model.

Every generator is deterministic in ``seed``.  The Kalman workload mirrors
the MFA schedule of :mod:`mfa_cgra.kalman` call for call, with the
operation-menu identity and zero blocks passed as literal matrices.
"""

from __future__ import annotations

from typing import Optional

import numpy as np

from mfa_cgra.cgra.lower import Ref, Workload

WORKLOADS = ("kf", "mfa", "gemm")


def _spd(rng: np.random.Generator, n: int, scale: float = 1.0) -> np.ndarray:
    g = rng.standard_normal((n, n))
    return scale * (g @ g.T / n + np.eye(n))


def _mfa(w: Workload, out: str, a, b, c, d) -> Ref:
    return w.add("mfa", out, a=a, b=b, c=c, d=d)


def kf_workload(n: int, m: Optional[int] = None, seed: int = 0, steps: int = 1) -> Workload:
    """``steps`` predict+update iterations of an n-state, m-measurement filter."""
    if n < 1:
        raise ValueError("n must be >= 1")
    m = max(1, n // 2) if m is None else m
    if not 1 <= m <= n:
        raise ValueError(f"need 1 <= m <= n, got m={m}, n={n}")
    rng = np.random.default_rng(seed)
    f = np.eye(n) + 0.1 * rng.standard_normal((n, n))
    h = rng.standard_normal((m, n))
    q = _spd(rng, n, 0.01)
    r = _spd(rng, m, 0.25)
    p0 = _spd(rng, n)
    x0 = rng.standard_normal((n, 1))
    zs = rng.standard_normal((steps, m, 1))
    i_n, i_m = np.eye(n), np.eye(m)

    w = Workload(name=f"kf_n{n}_m{m}")
    x, p = x0, p0
    for k in range(steps):
        s = f"{k}."
        # predict
        x = _mfa(w, s + "x_pred", i_n, x, f, np.zeros((n, 1)))
        t = _mfa(w, s + "pft", i_n, f.T, p, np.zeros((n, n)))
        p = _mfa(w, s + "p_pred", i_n, t, f, q)
        # update
        t = _mfa(w, s + "pht", i_n, h.T, p, np.zeros((n, m)))
        sm = _mfa(w, s + "s", i_n, t, h, r)
        kt = _mfa(w, s + "kt", sm, t.T, i_m, np.zeros((m, n)))
        y = _mfa(w, s + "y", i_n, x, -h, zs[k])
        x = _mfa(w, s + "x", i_m, y, kt.T, x)
        hp = _mfa(w, s + "hp", i_n, p, h, np.zeros((m, n)))
        p = _mfa(w, s + "p", i_m, hp, -kt.T, p)
    return w


def mfa_workload(n: int, seed: int = 0) -> Workload:
    """One general Schur complement D + C A^-1 B with n x n blocks."""
    rng = np.random.default_rng(seed)
    a = rng.standard_normal((n, n)) + n * np.eye(n)
    b, c, d = (rng.standard_normal((n, n)) for _ in range(3))
    w = Workload(name=f"mfa_n{n}")
    _mfa(w, "s", a, b, c, d)
    return w


def gemm_workload(n: int, seed: int = 0) -> Workload:
    rng = np.random.default_rng(seed)
    a, b, c = (rng.standard_normal((n, n)) for _ in range(3))
    w = Workload(name=f"gemm_n{n}")
    w.add("gemm", "c", a=a, b=b, c=c)
    return w


def make_workload(kind: str, n: int, seed: int = 0) -> Workload:
    if kind == "kf":
        return kf_workload(n, seed=seed)
    if kind == "mfa":
        return mfa_workload(n, seed)
    if kind == "gemm":
        return gemm_workload(n, seed)
    raise ValueError(f"unknown workload {kind!r}; choose one of {WORKLOADS}")
