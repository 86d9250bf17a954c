"""Discrete-time Kalman filter built from Faddeeva operations.

:func:`predict` and :func:`update` perform every product and solve through
:mod:`mfa_cgra.faddeeva`.  :func:`direct_predict` and :func:`direct_update`
are plain NumPy/LU versions of the same recurrences, kept as an oracle.

Recurrences (short-form covariance update)::

    predict:  x = F x + G u          P = F P F^T + Q
    update:   S = H P H^T + R        K^T = S^{-1} (P H^T)^T
              y = z - H x            x = x + K y          P = P - K H P

P is re-symmetrized as ``(P + P^T) / 2`` after each step.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from mfa_cgra import dense
from mfa_cgra.dense import DimensionError, SingularMatrixError, as_matrix
from mfa_cgra.faddeeva import op_multiply, op_schur, op_solve
from mfa_cgra.matrix_io import read_matrix

SYMMETRY_TOL = 1e-12


class ScenarioError(ValueError):
    pass


class StepError(ArithmeticError):
    def __init__(self, step: int, cause: Exception):
        super().__init__(f"step {step}: {cause}")
        self.step = step
        self.cause = cause


def _symmetrize(p: np.ndarray) -> np.ndarray:
    return np.asfortranarray((p + p.T) / 2.0)


@dataclass(frozen=True)
class KalmanModel:
    f: np.ndarray
    h: np.ndarray
    q: np.ndarray
    r: np.ndarray
    g: Optional[np.ndarray] = None

    def __post_init__(self):
        for name in ("f", "h", "q", "r"):
            object.__setattr__(self, name, as_matrix(getattr(self, name), name.upper()))
        if self.g is not None:
            object.__setattr__(self, "g", as_matrix(self.g, "G"))
        n, m = self.n, self.m
        if self.f.shape != (n, n):
            raise DimensionError(f"F must be square, got {self.f.shape}")
        if self.h.shape[1] != n:
            raise DimensionError(f"H has {self.h.shape[1]} columns, state dimension is {n}")
        if self.q.shape != (n, n):
            raise DimensionError(f"Q has shape {self.q.shape}, expected {(n, n)}")
        if self.r.shape != (m, m):
            raise DimensionError(f"R has shape {self.r.shape}, expected {(m, m)}")
        if self.g is not None and self.g.shape[0] != n:
            raise DimensionError(f"G has {self.g.shape[0]} rows, state dimension is {n}")
        for name in ("q", "r"):
            mat = getattr(self, name)
            if np.max(np.abs(mat - mat.T)) > SYMMETRY_TOL:
                raise ValueError(f"{name.upper()} is not symmetric")
        try:
            np.linalg.cholesky(self.r)
        except np.linalg.LinAlgError as exc:
            raise ValueError("R is not positive definite") from exc

    @property
    def n(self) -> int:
        return self.f.shape[0]

    @property
    def m(self) -> int:
        return self.h.shape[0]


@dataclass(frozen=True)
class KalmanState:
    x: np.ndarray
    p: np.ndarray

    def __post_init__(self):
        x = as_matrix(self.x, "x")
        p = as_matrix(self.p, "P")
        if x.shape[1] != 1:
            raise DimensionError(f"x must be a column vector, got {x.shape}")
        if p.shape != (x.shape[0], x.shape[0]):
            raise DimensionError(f"P has shape {p.shape}, expected {(x.shape[0], x.shape[0])}")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "p", p)


def _check_state(s: KalmanState, mdl: KalmanModel) -> None:
    if s.x.shape[0] != mdl.n:
        raise DimensionError(f"state has dimension {s.x.shape[0]}, model expects {mdl.n}")


def _control(mdl: KalmanModel, u) -> Optional[np.ndarray]:
    if u is None:
        return None
    if mdl.g is None:
        raise DimensionError("control input given but the model has no G")
    u = as_matrix(u, "u")
    if u.shape != (mdl.g.shape[1], 1):
        raise DimensionError(f"u has shape {u.shape}, expected {(mdl.g.shape[1], 1)}")
    return u


def predict(s: KalmanState, mdl: KalmanModel, u=None) -> KalmanState:
    _check_state(s, mdl)
    u = _control(mdl, u)
    x = op_multiply(mdl.f, s.x)
    if u is not None:
        x = op_schur(np.eye(u.shape[0]), u, mdl.g, x)
    t = op_multiply(s.p, mdl.f.T)
    p = op_schur(np.eye(mdl.n), t, mdl.f, mdl.q)
    return KalmanState(x, _symmetrize(p))


def _mfa_update(s: KalmanState, mdl: KalmanModel, z) -> tuple[KalmanState, np.ndarray]:
    _check_state(s, mdl)
    z = as_matrix(z, "z")
    if z.shape != (mdl.m, 1):
        raise DimensionError(f"z has shape {z.shape}, expected {(mdl.m, 1)}")
    n, m = mdl.n, mdl.m
    t = op_multiply(s.p, mdl.h.T)                       # P H^T
    sm = op_schur(np.eye(n), t, mdl.h, mdl.r)           # R + H P H^T
    kt = op_solve(sm, t.T)                              # K^T
    k = kt.T
    y = op_schur(np.eye(n), s.x, -mdl.h, z)             # z - H x
    x = op_schur(np.eye(m), y, k, s.x)                  # x + K y
    w = op_multiply(mdl.h, s.p)                         # H P
    p = op_schur(np.eye(m), w, -k, s.p)                 # P - K H P
    return KalmanState(x, _symmetrize(p)), y


def update(s: KalmanState, mdl: KalmanModel, z) -> KalmanState:
    return _mfa_update(s, mdl, z)[0]


def direct_predict(s: KalmanState, mdl: KalmanModel, u=None) -> KalmanState:
    _check_state(s, mdl)
    u = _control(mdl, u)
    x = mdl.f @ s.x
    if u is not None:
        x = x + mdl.g @ u
    p = mdl.f @ s.p @ mdl.f.T + mdl.q
    return KalmanState(x, _symmetrize(p))


def _direct_update(s: KalmanState, mdl: KalmanModel, z) -> tuple[KalmanState, np.ndarray]:
    _check_state(s, mdl)
    z = as_matrix(z, "z")
    if z.shape != (mdl.m, 1):
        raise DimensionError(f"z has shape {z.shape}, expected {(mdl.m, 1)}")
    hp = mdl.h @ s.p
    sm = hp @ mdl.h.T + mdl.r
    kt = dense.getrs(dense.getrf2(sm, pivot=True), hp)
    y = z - mdl.h @ s.x
    x = s.x + kt.T @ y
    p = s.p - kt.T @ hp
    return KalmanState(x, _symmetrize(p)), y


def direct_update(s: KalmanState, mdl: KalmanModel, z) -> KalmanState:
    return _direct_update(s, mdl, z)[0]


ENGINES: dict[str, tuple[Callable, Callable]] = {
    "mfa": (predict, _mfa_update),
    "direct": (direct_predict, _direct_update),
}


@dataclass
class Scenario:
    model: KalmanModel
    x0: np.ndarray
    p0: np.ndarray
    measurements: list
    truth: list = field(default_factory=list)
    controls: Optional[list] = None
    seed: Optional[int] = None

    def __post_init__(self):
        if len(self.measurements) < 1:
            raise ScenarioError("scenario needs at least one measurement")
        self.measurements = [as_matrix(z, "z") for z in self.measurements]
        self.truth = [as_matrix(t, "truth") for t in self.truth]
        if self.controls is not None and len(self.controls) != len(self.measurements):
            raise ScenarioError("controls and measurements differ in length")


@dataclass(frozen=True)
class StepRecord:
    step: int
    state: KalmanState
    innovation: np.ndarray

    @property
    def trace_p(self) -> float:
        return float(np.trace(self.state.p))

    @property
    def innovation_norm(self) -> float:
        return float(np.linalg.norm(self.innovation))


def run_scenario(sc: Scenario, engine: str = "mfa") -> list[StepRecord]:
    """Alternate predict/update over every measurement (predict first)."""
    try:
        do_predict, do_update = ENGINES[engine]
    except KeyError:
        raise ValueError(f"unknown engine {engine!r}; choose from {sorted(ENGINES)}") from None
    state = KalmanState(sc.x0, sc.p0)
    trace = []
    for k, z in enumerate(sc.measurements):
        u = sc.controls[k] if sc.controls is not None else None
        try:
            state = do_predict(state, sc.model, u)
            state, y = do_update(state, sc.model, z)
        except (SingularMatrixError, DimensionError, ArithmeticError) as exc:
            raise StepError(k, exc) from exc
        trace.append(StepRecord(k, state, y))
    return trace


def constant_velocity_model(dt: float, q_intensity: float, r_diag: float) -> KalmanModel:
    """2-D position/velocity model; state ``(px, py, vx, vy)``, position measured."""
    if dt <= 0:
        raise ScenarioError(f"dt must be positive, got {dt}")
    f = np.eye(4)
    f[0, 2] = f[1, 3] = dt
    h = np.zeros((2, 4))
    h[0, 0] = h[1, 1] = 1.0
    # white-noise acceleration, per axis [[dt^3/3, dt^2/2], [dt^2/2, dt]]
    q = np.zeros((4, 4))
    for pos, vel in ((0, 2), (1, 3)):
        q[pos, pos] = dt ** 3 / 3.0
        q[pos, vel] = q[vel, pos] = dt ** 2 / 2.0
        q[vel, vel] = dt
    return KalmanModel(f=f, h=h, q=q_intensity * q, r=r_diag * np.eye(2))


def make_constant_velocity(
    dt: float = 1.0,
    q_intensity: float = 0.01,
    r_diag: float = 0.25,
    seed: int = 0,
    steps: int = 100,
    x0=(0.0, 0.0, 1.0, 0.5),
    p0_diag: float = 10.0,
) -> Scenario:
    """Synthetic constant-velocity track with Gaussian process and measurement noise."""
    model = constant_velocity_model(dt, q_intensity, r_diag)
    rng = np.random.default_rng(seed)
    x = np.asarray(x0, dtype=np.float64).reshape(4, 1)
    q_chol = np.linalg.cholesky(model.q) if q_intensity > 0 else None
    r_std = np.sqrt(r_diag)
    truth, meas = [], []
    for _ in range(steps):
        x = model.f @ x
        if q_chol is not None:
            x = x + q_chol @ rng.standard_normal((4, 1))
        truth.append(x.copy())
        meas.append(model.h @ x + r_std * rng.standard_normal((2, 1)))
    est_x0 = np.zeros((4, 1))
    return Scenario(model, est_x0, p0_diag * np.eye(4), meas, truth, seed=seed)


def _load_matrix_field(value, base: Path) -> np.ndarray:
    if isinstance(value, str):
        path = Path(value)
        return read_matrix(path if path.is_absolute() else base / path)
    return as_matrix(value)


def load_scenario(path) -> Scenario:
    """Read a scenario JSON file.

    Either ``{"generator": "constant_velocity", dt, q_intensity, r_diag, steps, seed}``
    or an explicit ``{"model": {...}, "x0", "p0", "measurements", ...}`` where
    each matrix is inline (list of rows) or a path to a matrix text file.
    """
    path = Path(path)
    try:
        cfg = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"{path}: invalid JSON: {exc}") from exc
    return scenario_from_dict(cfg, path.parent)


def scenario_from_dict(cfg: dict, base: Path = Path(".")) -> Scenario:
    gen = cfg.get("generator")
    if gen == "constant_velocity":
        steps = int(cfg.get("steps", 100))
        if steps < 1:
            raise ScenarioError("scenario needs at least one measurement")
        return make_constant_velocity(
            dt=float(cfg.get("dt", 1.0)),
            q_intensity=float(cfg.get("q_intensity", 0.01)),
            r_diag=float(cfg.get("r_diag", 0.25)),
            seed=int(cfg.get("seed", 0)),
            steps=steps,
        )
    if gen is not None:
        raise ScenarioError(f"unknown generator {gen!r}")
    try:
        mcfg = cfg["model"]
        model = KalmanModel(
            f=_load_matrix_field(mcfg["f"], base),
            h=_load_matrix_field(mcfg["h"], base),
            q=_load_matrix_field(mcfg["q"], base),
            r=_load_matrix_field(mcfg["r"], base),
            g=_load_matrix_field(mcfg["g"], base) if mcfg.get("g") is not None else None,
        )
        x0 = _load_matrix_field(cfg["x0"], base)
        p0 = _load_matrix_field(cfg["p0"], base)
        meas = [as_matrix(z) for z in cfg["measurements"]]
    except KeyError as exc:
        raise ScenarioError(f"scenario is missing field {exc}") from exc
    truth = [as_matrix(t) for t in cfg.get("truth", [])]
    controls = cfg.get("controls")
    if controls is not None:
        controls = [as_matrix(u) for u in controls]
    return Scenario(model, x0, p0, meas, truth, controls, cfg.get("seed"))


def trace_to_csv(trace: list[StepRecord]) -> str:
    """CSV with header ``step,x0..x{n-1},trace_p,innovation_norm``."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    n = trace[0].state.x.shape[0] if trace else 0
    writer.writerow(["step", *(f"x{i}" for i in range(n)), "trace_p", "innovation_norm"])
    for rec in trace:
        writer.writerow(
            [rec.step, *(format(float(v), ".17g") for v in rec.state.x[:, 0]),
             format(rec.trace_p, ".17g"), format(rec.innovation_norm, ".17g")]
        )
    return buf.getvalue()
