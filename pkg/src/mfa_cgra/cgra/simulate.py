"""Single-PE simulation: lower, optionally fuse, schedule, optionally overlap."""

from __future__ import annotations

from dataclasses import replace
from typing import Optional

import numpy as np

from mfa_cgra.cgra.config import ConfigError, PeConfig, SimConfig, load_config
from mfa_cgra.cgra.dag import InstrDag
from mfa_cgra.cgra.fuse import fuse
from mfa_cgra.cgra.lower import Workload, lower, reference
from mfa_cgra.cgra.schedule import CycleReport, Schedule, overlap, schedule, segment_streams

MODES = ("base", "hw", "sw")


def relative_error(got: dict, want: dict) -> float:
    """Max over results of ||got - want||_max / max(1, ||want||_max)."""
    err = 0.0
    for name, ref in want.items():
        if name not in got:
            continue
        scale = max(1.0, float(np.max(np.abs(ref))) if ref.size else 0.0)
        err = max(err, float(np.max(np.abs(got[name] - ref))) / scale if ref.size else 0.0)
    return err


def build_dag(workload: Workload, mode: str, cfg: PeConfig, sim: SimConfig) -> InstrDag:
    dag = lower(workload, unroll=cfg.unroll)
    if mode in ("hw", "sw"):
        dag = fuse(dag, sim.patterns, cfg)
    return dag


def run_schedule(dag: InstrDag, mode: str, cfg: PeConfig, sim: SimConfig) -> Schedule:
    if mode == "sw":
        # software scheduling: a deeper lookahead than the hardware window,
        # plus overlap of up to ``max_streams`` routine segments
        sw_cfg = replace(cfg, window=max(cfg.window, sim.sw_window))
        parts = [schedule(dag, sw_cfg, ids) for ids in segment_streams(dag)]
        return overlap(parts, sw_cfg, sim.max_streams)
    return schedule(dag, cfg)


def simulate_pe(
    workload: Workload,
    cfg: Optional[PeConfig] = None,
    mode: str = "hw",
    sim: Optional[SimConfig] = None,
    check: bool = True,
) -> CycleReport:
    """Cycle report of ``workload`` on one PE.

    ``base`` schedules the scalar DAG, ``hw`` fuses macro-ops first and
    ``sw`` additionally overlaps the routine segments.  ``cfg`` defaults to
    the mode's PE from ``sim`` (the packaged config when omitted).  With
    ``check`` the DAG's outputs are compared with the reference kernels and
    the error is stored in ``functional_error``.
    """
    if mode not in MODES:
        raise ConfigError(f"unknown mode {mode!r}; choose one of {MODES}")
    sim = load_config() if sim is None else sim
    cfg = sim.pe_for(mode) if cfg is None else cfg
    label = workload.name
    if not workload.calls:
        return CycleReport.build(0, 0, 0, 0, 0, cfg, mode=mode, label=label,
                                 functional_error=0.0 if check else None)
    dag = build_dag(workload, mode, cfg, sim)
    sch = run_schedule(dag, mode, cfg, sim)
    err = relative_error(dag.output_values(), reference(workload)) if check else None
    return sch.report(cfg, mode=mode, label=label, functional_error=err)
