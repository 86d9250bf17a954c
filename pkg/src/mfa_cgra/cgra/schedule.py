"""In-order issue model of the PE and the stall-filling overlap pass.

An instruction stream is a list of node ids in program order.  Each cycle
the PE looks at the oldest ``cfg.window`` unissued instructions of the
stream's current routine segment and issues up to ``cfg.issue_width`` of
them, oldest first, provided their operands have completed and a functional
unit is free.  Loads and stores go to the ``cfg.load_store_units`` memory
ports and do not take compute issue slots (decoupled access); stall slots
count unused compute issue slots.  Units are fully pipelined (initiation
interval 1).  A routine segment starts only after every instruction of the
previous segment has issued: library calls do not overlap unless the
overlap pass merges them.

Operands produced outside the scheduled node set are treated as resident
(ready at cycle 0).
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

from mfa_cgra.cgra.config import PeConfig
from mfa_cgra.cgra.dag import ADD_UNIT, MUL_UNIT, InstrDag

INF = float("inf")


class DependenceError(RuntimeError):
    """A merged schedule would read an operand before it is produced."""


@dataclass
class CycleReport:
    cycles: int
    flops: int
    stall_cycles: int
    filled_stalls: int
    achieved_gflops: float
    utilization: float
    peak_gflops: float
    instructions: int
    mode: str = ""
    per_tile: list = field(default_factory=list)
    noc_transfers: int = 0
    functional_error: Optional[float] = None
    label: str = ""

    @classmethod
    def build(cls, cycles: int, flops: int, stall_cycles: int, filled_stalls: int, instructions: int,
              cfg: PeConfig, tiles: int = 1, **extra) -> "CycleReport":
        peak_per_cycle = cfg.peak_flops_per_cycle * tiles
        if cycles > 0 and peak_per_cycle > 0:
            util = flops / (cycles * peak_per_cycle)
            gflops = flops * cfg.clock_hz / cycles / 1e9
        else:
            util = gflops = 0.0
        return cls(cycles, flops, stall_cycles, filled_stalls, gflops, util,
                   peak_per_cycle * cfg.clock_hz / 1e9, instructions, **extra)

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    CSV_FIELDS = ("label", "mode", "cycles", "flops", "stall_cycles", "filled_stalls", "instructions",
                  "achieved_gflops", "peak_gflops", "utilization", "noc_transfers")

    def csv_row(self) -> list:
        return [getattr(self, f) if not isinstance(getattr(self, f), float) else format(getattr(self, f), ".10g")
                for f in self.CSV_FIELDS]


def reports_to_csv(reports: Sequence[CycleReport]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CycleReport.CSV_FIELDS)
    for r in reports:
        w.writerow(r.csv_row())
    return buf.getvalue()


@dataclass
class Schedule:
    dag: InstrDag
    order: list
    issue: dict
    done: dict
    cycles: int
    stall_cycles: int
    filled_stalls: int = 0

    @property
    def flops(self) -> int:
        return sum(self.dag.node_flops(i) for i in self.order)

    def report(self, cfg: PeConfig, **extra) -> CycleReport:
        return CycleReport.build(self.cycles, self.flops, self.stall_cycles, self.filled_stalls,
                                 len(self.order), cfg, **extra)


def _latency(dag: InstrDag, i: int, cfg: PeConfig) -> int:
    k = dag.kind[i]
    if k == "mul":
        return cfg.mul_latency
    if k in ADD_UNIT:
        return cfg.add_latency
    if k == "load":
        return cfg.load_latency
    if k == "store":
        return cfg.store_latency
    if k == "div":
        return cfg.div_latency
    if k == "sqrt":
        return cfg.sqrt_latency
    if k == "macro":
        return dag.macro[i].latency
    raise ValueError(f"node {i} has no schedulable kind ({k!r})")


def _needs(dag: InstrDag, i: int) -> tuple[int, int, int]:
    """(multipliers, adders, memory ports) used in the issue cycle."""
    k = dag.kind[i]
    if k in MUL_UNIT:
        return 1, 0, 0
    if k in ADD_UNIT:
        return 0, 1, 0
    if k == "macro":
        m = dag.macro[i]
        return m.mults, m.adds, 0
    return 0, 0, 1


class _Stream:
    __slots__ = ("ids", "pos", "issued", "segs")

    def __init__(self, ids: list, dag: InstrDag):
        self.ids = ids
        self.pos = 0
        self.issued = bytearray(len(ids))
        self.segs = [dag.seg[i] for i in ids]

    def done(self) -> bool:
        return self.pos >= len(self.ids)

    def window(self, w: int):
        """Indices of candidate instructions: oldest ``w`` unissued in the current segment."""
        ids, issued = self.ids, self.issued
        p = self.pos
        seg = self.segs[p]
        out = []
        i = p
        n = len(ids)
        while i < n and len(out) < w and self.segs[i] == seg:
            if not issued[i]:
                out.append(i)
            i += 1
        return out

    def mark(self, idx: int) -> None:
        self.issued[idx] = 1
        while self.pos < len(self.ids) and self.issued[self.pos]:
            self.pos += 1


def _run(dag: InstrDag, streams: list, cfg: PeConfig, max_active: int) -> tuple[dict, dict, int, int, int]:
    """Multi-stream issue loop.  Stream 0 (or the oldest unfinished one) has priority."""
    member = {}
    for s in streams:
        for i in s.ids:
            member[i] = True
    lat = {i: _latency(dag, i, cfg) for s in streams for i in s.ids}
    need = {i: _needs(dag, i) for s in streams for i in s.ids}
    for i, (m, a, _) in need.items():
        if m > cfg.multipliers or a > cfg.adders:
            raise ValueError(f"node {i} needs {m} multipliers/{a} adders; PE has {cfg.multipliers}/{cfg.adders}")
    issue: dict[int, int] = {}
    done: dict[int, int] = {}
    args = dag.args
    width = cfg.issue_width
    t = 0
    stalls = 0
    filled = 0
    first_issue = None
    remaining = sum(len(s.ids) for s in streams)
    live = [s for s in streams if not s.done()]

    def ready_time(i: int) -> float:
        r = 0
        for a in args[i]:
            if a in member:
                d = done.get(a)
                if d is None:
                    return INF
                if d > r:
                    r = d
        return r

    while remaining:
        live = [s for s in live if not s.done()]
        active = live[:max_active]
        slots = width
        mem_slots = cfg.load_store_units
        mul_free, add_free = cfg.multipliers, cfg.adders
        next_t = INF
        primary_stalled = False
        for rank, s in enumerate(active):
            if not (slots or mem_slots):
                break
            got = False
            for idx in s.window(cfg.window):
                i = s.ids[idx]
                m, a, mem = need[i]
                if mem:
                    if not mem_slots:
                        continue
                elif not slots:
                    continue
                r = ready_time(i)
                if r > t:
                    if r < next_t:
                        next_t = r
                    continue
                if m > mul_free or a > add_free:
                    next_t = min(next_t, t + 1)
                    continue
                if mem:
                    mem_slots -= 1
                else:
                    mul_free -= m
                    add_free -= a
                    slots -= 1
                    got = True
                    if rank > 0 and primary_stalled:
                        filled += 1
                issue[i] = t
                done[i] = t + lat[i]
                s.mark(idx)
                remaining -= 1
            if rank == 0 and not got:
                primary_stalled = True
        issued_any = slots < width or mem_slots < cfg.load_store_units
        if issued_any:
            if first_issue is None:
                first_issue = t
            if remaining:
                stalls += slots
            t += 1
        else:
            if next_t == INF:
                # every candidate waits on a producer that cannot issue first
                # (later in its own stream, or in an inactive stream)
                raise DependenceError(f"issue deadlock at cycle {t}: no candidate can become ready")
            jump = int(next_t) - t
            if first_issue is not None:
                stalls += jump * width
            t = int(next_t)
    cycles = max(done.values()) if done else 0
    return issue, done, cycles, stalls, filled


def schedule(dag: InstrDag, cfg: PeConfig, order: Optional[list] = None) -> Schedule:
    """In-order issue of one instruction stream (default: every live node in id order)."""
    ids = dag.live_ids() if order is None else list(order)
    if not ids:
        return Schedule(dag, [], {}, {}, 0, 0)
    issue, done, cycles, stalls, _ = _run(dag, [_Stream(ids, dag)], cfg, 1)
    return Schedule(dag, ids, issue, done, cycles, stalls)


def segment_streams(dag: InstrDag) -> list[list[int]]:
    """Split live nodes into one stream per routine segment, in program order."""
    by_seg: dict[int, list[int]] = {}
    for i in dag.live_ids():
        by_seg.setdefault(dag.seg[i], []).append(i)
    return [by_seg[s] for s in sorted(by_seg)]


def overlap(schedules: Sequence[Schedule], cfg: PeConfig, max_active: Optional[int] = None) -> Schedule:
    """Merge routine schedules: stall slots of the oldest unfinished routine are
    filled with ready instructions of the following ones.

    Every routine keeps its internal order and dependences; cross-routine
    dependences are honoured and re-checked on the merged result.
    """
    scheds = [s for s in schedules if s.order]
    if not scheds:
        dag = schedules[0].dag if schedules else InstrDag()
        return Schedule(dag, [], {}, {}, 0, 0)
    dag = scheds[0].dag
    for s in scheds[1:]:
        if s.dag is not dag:
            raise ValueError("overlap: schedules must share one DAG")
    streams = [_Stream(list(s.order), dag) for s in scheds]
    seen: set = set()
    for st in streams:
        for i in st.ids:
            if i in seen:
                raise ValueError(f"overlap: node {i} appears in two schedules")
            seen.add(i)
    k = len(streams) if max_active is None else max(1, max_active)
    issue, done, cycles, stalls, filled = _run(dag, streams, cfg, k)
    order = sorted(issue, key=lambda i: (issue[i], i))
    for i in order:
        for a in dag.args[i]:
            if a in done and done[a] > issue[i]:
                raise DependenceError(f"node {i} issued at {issue[i]} before operand {a} completes at {done[a]}")
    return Schedule(dag, order, issue, done, cycles, stalls, filled)
