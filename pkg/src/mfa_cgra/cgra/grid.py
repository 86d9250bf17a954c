"""Tile-array model: block distribution, phases and NoC transfer cost.

The Schur complement of an ``mfa`` call is computed by a tiled right-looking
elimination of the compound matrix ``[[A, B], [-C, D]]``.  The matrix is cut
into ``k x k`` blocks per quadrant (``k`` = grid rows) and every block into
``sub_block`` pieces; the pivots are the diagonal sub-blocks of the ``A``
quadrant.  For pivot ``p``:

* ``geqr2`` of the diagonal sub-block and the ``larft`` factor of its
  reflectors, on one tile,
* phase ``apply{p}``: ``larfb`` (Q^T in WY form) on every sub-block right of
  the pivot and ``trsm`` against ``R`` on every sub-block below it,
* phase ``update{p}``: one ``gemm`` per trailing sub-block pair.  The next
  diagonal sub-block's update, its QR and its ``larft`` are pinned to one tile
  and run in this phase (lookahead).

Sub-blocks are eliminated without pivoting between them; the QR inside each
diagonal sub-block keeps every step orthogonal, which is adequate for the
diagonally dominant generated workloads (the report's functional error checks
it).  A ``gemm`` call is distributed as output sub-blocks in one phase.  With
a single compute tile the call runs undistributed.

Placement per phase: pinned groups first, each on the tile with the earliest
estimated finish; then ``gemm`` updates on the owner of their output sub-block
(2-D round-robin over the compute tiles) while that tile stays within an even
share of the phase's work; everything else, including the overflow, goes
largest-first to the tile with the earliest estimated finish, transfers
included.  Each tile then runs its task list as one workload through
:func:`simulate_pe`, so in ``sw`` mode the overlap pass interleaves a tile's
tasks.  ``serial_cycles`` is the sum of all tile workloads run back to back.

Transfers cost ``hops x hop_latency x ceil(words / flit_words)`` with XY hop
distance.  A tile fetches each operand sub-block once per phase from where it
lives.  With ``last_column_memory`` reads and writes go to the nearest
memory tile (the end of the tile's row); with ``per_tile_memory`` a result
stays in the producing tile's memory PE (a local write) and is read from
there later.  Phase cycles are the maximum over tiles of compute +
transfer cycles; the total is the sum over phases.  Router contention is not
modelled.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from mfa_cgra import dense
from mfa_cgra.cgra.config import GridConfig, PeConfig, SimConfig, load_config
from mfa_cgra.cgra.lower import Call, LoweringError, Ref, Workload, _resolve, reference
from mfa_cgra.cgra.schedule import CycleReport
from mfa_cgra.cgra.simulate import MODES, relative_error, simulate_pe


@dataclass(frozen=True)
class Block:
    row: int
    col: int
    rows: tuple[int, int]
    cols: tuple[int, int]
    tile: tuple[int, int]
    sub_rows: tuple
    sub_cols: tuple

    @property
    def shape(self) -> tuple[int, int]:
        return (self.rows[1] - self.rows[0], self.cols[1] - self.cols[0])


@dataclass(frozen=True)
class BlockMap:
    n: int
    bounds: tuple
    blocks: dict

    @property
    def k(self) -> int:
        return len(self.bounds)


def _split(n: int, k: int) -> list[tuple[int, int]]:
    base, extra = divmod(n, k)
    out, start = [], 0
    for b in range(k):
        size = base + (1 if b < extra else 0)
        out.append((start, start + size))
        start += size
    return out


def partition_blocks(n: int, grid: GridConfig, sub_block: int = 8) -> BlockMap:
    """Split an n x n matrix into k x k blocks (k = grid dimension, sizes differ by at most
    one, larger first), each cut into ``sub_block`` pieces; blocks go round-robin to
    the compute tiles along both grid dimensions (block-cyclic)."""
    k = grid.k
    if n < k:
        raise ValueError(f"cannot split n={n} into {k} blocks")
    if sub_block < 1:
        raise ValueError("sub_block must be >= 1")
    bounds = _split(n, k)
    blocks = {}
    for i, rb in enumerate(bounds):
        for j, cb in enumerate(bounds):
            blocks[(i, j)] = Block(i, j, rb, cb, _owner(grid, (i, j)),
                                   tuple(_chunks(*rb, sub_block)), tuple(_chunks(*cb, sub_block)))
    return BlockMap(n, tuple(bounds), blocks)


def _chunks(lo: int, hi: int, size: int) -> list[tuple[int, int]]:
    return [(s, min(s + size, hi)) for s in range(lo, hi, size)]


@dataclass
class Task:
    """One kernel call on one tile.

    ``reads`` are (block, words) pairs fetched from the block's home; ``writes``
    likewise for results.  ``pin`` forces a tile group: tasks with the same pin
    run on the same tile, in order.
    """

    call: Call
    reads: list
    writes: list
    pin: Optional[str] = None


@dataclass
class Phase:
    name: str
    tasks: list = field(default_factory=list)


def _arg_key(v):
    if isinstance(v, Ref):
        return ("ref", v.name, v.transpose, v.negate)
    return np.asarray(v).shape


def _call_key(call: Call) -> tuple:
    return (call.routine, call.out) + tuple((k, _arg_key(v)) for k, v in sorted(call.args.items()))


class _Costs:
    """Cycle counts of single tasks and of per-tile task lists, cached by shape."""

    def __init__(self, cfg: PeConfig, mode: str, sim: SimConfig):
        self.cfg, self.mode, self.sim = cfg, mode, sim
        self.cache: dict = {}

    def run(self, calls: list) -> tuple[int, int]:
        key = tuple(_call_key(c) for c in calls)
        hit = self.cache.get(key)
        if hit is None:
            rep = simulate_pe(Workload(list(calls), name="tile"), self.cfg, self.mode, self.sim, check=False)
            hit = self.cache[key] = (rep.cycles, rep.flops)
        return hit


def _tile_calls(tasks: list) -> list:
    """Rename task outputs by position so equal task lists share a cache entry."""
    names: dict = {}
    calls = []
    for pos, task in enumerate(tasks):
        args = {}
        for k, v in task.call.args.items():
            if isinstance(v, Ref):
                if v.name not in names:
                    raise LoweringError(f"task input {v.name!r} is not produced on the same tile")
                v = Ref(names[v.name], v.transpose, v.negate)
            args[k] = v
        names[task.call.out] = f"t{pos}"
        calls.append(Call(task.call.routine, args, f"t{pos}"))
    return calls


def _hops(a: tuple[int, int], b: tuple[int, int]) -> int:
    return abs(a[0] - b[0]) + abs(a[1] - b[1])


def _owner(grid: GridConfig, block: tuple[int, int]) -> tuple[int, int]:
    """Two-dimensional round-robin (block-cyclic) owner among the compute tiles."""
    i, j = block
    ccols = grid.cols - 1 if grid.placement == "last_column_memory" else grid.cols
    return (i % grid.rows, j % ccols)


class _Homes:
    """Where blocks are read from and written to.

    With ``last_column_memory`` every access goes to the nearest memory tile,
    the one at the end of the accessing tile's row.  With ``per_tile_memory`` a
    result stays in the global segment of the memory PE next to the tile that
    produced it (a local write) and later readers fetch it from there; blocks
    start at their round-robin owner.
    """

    def __init__(self, grid: GridConfig):
        self.grid = grid
        self.moved: dict = {}

    def source(self, block, tile) -> tuple[int, int]:
        """Where ``tile`` reads ``block`` from."""
        if self.grid.placement == "last_column_memory":
            return (tile[0], self.grid.cols - 1)
        return self.moved.get(block, _owner(self.grid, block))

    def write_target(self, block, tile) -> tuple[int, int]:
        if self.grid.placement == "last_column_memory":
            return (tile[0], self.grid.cols - 1)
        return tile

    def commit(self, block, tile) -> None:
        if self.grid.placement == "per_tile_memory":
            self.moved[block] = tile


def tiled_mfa_phases(a, b, c, d, grid: GridConfig, sub_block: int) -> tuple[list[Phase], np.ndarray]:
    """Build the phase list and compute the Schur complement with the same block steps."""
    n = a.shape[0]
    bmap = partition_blocks(n, grid, sub_block)
    k = bmap.k
    # sub-block intervals of the compound matrix, tagged with their block index
    units = []
    for off, tag in ((0, 0), (n, k)):
        for bi, (lo, hi) in enumerate(bmap.bounds):
            units += [(off + sl, off + sh, tag + bi) for sl, sh in _chunks(lo, hi, sub_block)]
    npiv = sum(1 for u in units if u[1] <= n)
    m = np.block([[a, b], [-c, d]]).astype(np.float64)
    nu = len(units)
    phases: list[Phase] = []

    def qr_tasks(p: int, src: Optional[Task] = None):
        lo, hi, _ = units[p]
        blk = m[lo:hi, lo:hi].copy()
        f = dense.geqr2(blk)
        t = dense.larft(f)
        m[lo:hi, lo:hi] = f.packed
        size = (hi - lo) ** 2
        a_in = blk if src is None else Ref(src.call.out)
        reads = [((p, p), size)] if src is None else []
        tasks = [
            Task(Call("geqr2", {"a": a_in}, f"qr{p}"), reads, [((p, p), size)], pin="diag"),
            Task(Call("larft", {"qr": Ref(f"qr{p}"), "tau": f.tau[None, :]}, f"t{p}"), [], [((p, p), size)],
                 pin="diag"),
        ]
        return tasks, f, t

    first = Phase("qr0")
    tasks, fac, tfac = qr_tasks(0)
    first.tasks.extend(tasks)
    phases.append(first)
    for p in range(npiv):
        lo, hi, _ = units[p]
        w = hi - lo
        r = np.triu(fac.packed)
        mid = Phase(f"apply{p}")
        for uj in range(p + 1, nu):
            jl, jh, _ = units[uj]
            blk = m[lo:hi, jl:jh].copy()
            m[lo:hi, jl:jh] = dense.larfb(fac.packed, tfac, blk)
            words = w * (jh - jl)
            mid.tasks.append(Task(Call("larfb", {"qr": fac.packed, "t": tfac, "c": blk}, f"o{jl}"),
                                  [((p, p), w * w), ((p, uj), words)], [((p, uj), words)]))
        for ui in range(p + 1, nu):
            il, ih, _ = units[ui]
            blk = m[il:ih, lo:hi].copy()
            m[il:ih, lo:hi] = dense.trsm_right_upper(r, blk)
            words = (ih - il) * w
            mid.tasks.append(Task(Call("trsm", {"r": r, "c": blk}, f"x{il}"),
                                  [((p, p), w * w), ((ui, p), words)], [((ui, p), words)]))
        phases.append(mid)
        upd = Phase(f"update{p}")
        nxt = p + 1 if p + 1 < npiv else None
        diag_task = None
        for ui in range(p + 1, nu):
            il, ih, _ = units[ui]
            for uj in range(p + 1, nu):
                jl, jh, _ = units[uj]
                x, y, cblk = m[il:ih, lo:hi], m[lo:hi, jl:jh], m[il:ih, jl:jh]
                out = dense.gemm(-1.0, x, y, 1.0, cblk)
                words = (ih - il) * (jh - jl)
                # the next diagonal sub-block is updated on the tile that factors it next
                lookahead = ui == uj == nxt
                task = Task(
                    Call("gemm", {"a": -x, "b": y.copy(), "c": cblk.copy()}, f"u{il}.{jl}"),
                    [((ui, p), (ih - il) * w), ((p, uj), w * (jh - jl)), ((ui, uj), words)],
                    [((ui, uj), words)],
                    pin="diag" if lookahead else None,
                )
                upd.tasks.append(task)
                if lookahead:
                    diag_task = task
                m[il:ih, jl:jh] = out
        if nxt is not None:
            tasks, fac, tfac = qr_tasks(nxt, diag_task)
            upd.tasks.extend(tasks)
        phases.append(upd)
    return phases, m[n:, n:].copy()


def gemm_phases(a, b, c, grid: GridConfig, sub_block: int) -> tuple[list[Phase], np.ndarray]:
    """``c + a b`` as one phase of ``sub_block`` output tiles."""
    (mr, kk), (_, p) = a.shape, b.shape
    c = np.zeros((mr, p)) if c is None else c
    out = np.empty((mr, p))
    ph = Phase("gemm")
    k = min(grid.k, mr, p)
    for bi, (r0, r1) in enumerate(_split(mr, k)):
        for bj, (c0, c1) in enumerate(_split(p, k)):
            for rl, rh in _chunks(r0, r1, sub_block):
                for cl, ch in _chunks(c0, c1, sub_block):
                    blk_a, blk_b, blk_c = a[rl:rh, :], b[:, cl:ch], c[rl:rh, cl:ch]
                    out[rl:rh, cl:ch] = dense.gemm(1.0, blk_a, blk_b, 1.0, blk_c)
                    words = (rh - rl) * (ch - cl)
                    ph.tasks.append(Task(
                        Call("gemm", {"a": blk_a, "b": blk_b, "c": blk_c}, f"g{rl}.{cl}"),
                        [((bi, 0), (rh - rl) * kk), ((0, bj), kk * (ch - cl)), ((bi, bj), words)],
                        [((bi, bj), words)]))
    return [ph], out


def whole_call_phases(call: Call, args: dict) -> tuple[list[Phase], np.ndarray]:
    """One compute tile: the call runs undistributed; only its operands and
    result travel between the tile and memory."""
    if call.routine not in ("mfa", "gemm"):
        raise LoweringError(f"simulate_grid does not distribute {call.routine!r}")
    keys = {"a": (0, 0), "b": (0, 1), "c": (1, 0), "d": (1, 1)}
    reads = [(keys[name], int(np.asarray(v).size)) for name, v in sorted(args.items())]
    result = reference(Workload([Call(call.routine, args, call.out)]))[call.out]
    task = Task(Call(call.routine, args, call.out), reads, [((1, 1), int(result.size))])
    return [Phase("whole", [task])], result


class _Noc:
    """Per-phase NoC bookkeeping for one tile: operand blocks are fetched once."""

    def __init__(self, grid: GridConfig, homes, tile, flit_words: int):
        self.grid, self.homes, self.tile, self.flit = grid, homes, tile, flit_words
        self.fetched: set = set()
        self.cycles = self.words = 0

    def _cost(self, moves) -> tuple[int, int]:
        cycles = words_moved = 0
        for dest, words in moves:
            h = _hops(self.tile, dest)
            if h:
                words_moved += words
                cycles += h * self.grid.hop_latency * math.ceil(words / self.flit)
        return cycles, words_moved

    def _moves(self, task: Task) -> list:
        reads = [(self.homes.source(b, self.tile), w) for b, w in task.reads if b not in self.fetched]
        return reads + [(self.homes.write_target(b, self.tile), w) for b, w in task.writes]

    def quote(self, task: Task) -> int:
        return self._cost(self._moves(task))[0]

    def add(self, task: Task) -> None:
        cyc, words = self._cost(self._moves(task))
        self.fetched.update(b for b, _ in task.reads)
        self.cycles += cyc
        self.words += words


def run_phases(phases: list[Phase], grid: GridConfig, homes, costs: _Costs, flit_words: int) -> dict:
    """Assign, cost and sum the phases; see the module docstring."""
    tiles = grid.compute_tiles
    order = {t: n for n, t in enumerate(tiles)}
    total = serial = flops = transfers = 0
    per_tile = {t: {"tile": list(t), "compute_cycles": 0, "transfer_cycles": 0, "tasks": 0} for t in tiles}
    phase_rows = []
    for ph in phases:
        est = {t: 0 for t in tiles}
        noc = {t: _Noc(grid, homes, t, flit_words) for t in tiles}
        assigned: dict = {t: [] for t in tiles}

        def place(tasks: list, cyc: int) -> None:
            # earliest estimated finish, counting the transfers this tile would add
            def finish(t):
                return est[t] + noc[t].cycles + cyc + sum(noc[t].quote(x) for x in tasks)
            tile = min(tiles, key=lambda t: (finish(t), order[t]))
            for x in tasks:
                noc[tile].add(x)
            assigned[tile].extend(tasks)
            est[tile] += cyc

        pins: dict = {}
        free = []
        for idx, task in enumerate(ph.tasks):
            if task.pin is None:
                cyc, fl = costs.run([task.call])
                flops += fl
                free.append((cyc, idx, task))
            else:
                pins.setdefault(task.pin, []).append(task)
        groups = []
        for pin in sorted(pins):
            cyc, fl = costs.run(_tile_calls(pins[pin]))
            flops += fl
            groups.append((pins[pin], cyc))
        for group, cyc in groups:
            place(group, cyc)
        # owner-computes for trailing updates (accumulators stay put), up to an
        # even share of the phase's work per tile; the overflow is placed like
        # the other tasks
        updates = [f for f in free if f[2].call.routine == "gemm"]
        rest = [f for f in free if f[2].call.routine != "gemm"]
        share = (sum(f[0] for f in updates) + sum(c for _, c in groups)) / len(tiles)
        for item in updates:
            cyc, _, task = item
            tile = _owner(grid, task.writes[0][0])
            if est[tile] + cyc / 2 > share:
                rest.append(item)
                continue
            noc[tile].add(task)
            assigned[tile].append(task)
            est[tile] += cyc
        for cyc, _, task in sorted(rest, key=lambda c: (-c[0], c[1])):
            place([task], cyc)
        span = 0
        for tile in tiles:
            tasks = assigned[tile]
            if not tasks:
                continue
            cyc, _ = costs.run(_tile_calls(tasks))
            tx = noc[tile].cycles
            serial += cyc
            transfers += noc[tile].words
            row = per_tile[tile]
            row["compute_cycles"] += cyc
            row["transfer_cycles"] += tx
            row["tasks"] += len(tasks)
            span = max(span, cyc + tx)
            for task in tasks:
                for blk, _ in task.writes:
                    homes.commit(blk, tile)
        total += span
        phase_rows.append({"phase": ph.name, "cycles": span, "tasks": len(ph.tasks)})
    return {"cycles": total, "serial_cycles": serial, "flops": flops, "noc_transfers": transfers,
            "per_tile": [per_tile[t] for t in tiles], "phases": phase_rows}


@dataclass
class GridReport:
    report: CycleReport
    serial_cycles: int
    phases: list

    @property
    def speedup(self) -> float:
        return self.serial_cycles / self.report.cycles if self.report.cycles else 0.0


def simulate_grid(
    workload: Workload,
    grid: GridConfig,
    cfg: Optional[PeConfig] = None,
    mode: str = "sw",
    sim: Optional[SimConfig] = None,
    sub_block: int = 8,
    flit_words: int = 8,
    check: bool = True,
) -> GridReport:
    """Distribute a single ``mfa`` or ``gemm`` call over the compute tiles of ``grid``."""
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}")
    if sub_block < 1 or flit_words < 1:
        raise ValueError("sub_block and flit_words must be >= 1")
    sim = load_config() if sim is None else sim
    cfg = sim.pe_for(mode) if cfg is None else cfg
    if len(workload.calls) != 1:
        raise LoweringError("simulate_grid takes a workload with exactly one mfa or gemm call")
    call = workload.calls[0]
    args = {key: _resolve(v, {}) for key, v in call.args.items()}
    if len(grid.compute_tiles) == 1:
        phases, result = whole_call_phases(call, args)
    elif call.routine == "mfa":
        phases, result = tiled_mfa_phases(args["a"], args["b"], args["c"], args["d"], grid, sub_block)
    elif call.routine == "gemm":
        phases, result = gemm_phases(args["a"], args["b"], args.get("c"), grid, sub_block)
    else:
        raise LoweringError(f"simulate_grid does not distribute {call.routine!r}")
    homes = _Homes(grid)
    res = run_phases(phases, grid, homes, _Costs(cfg, mode, sim), flit_words)
    err = relative_error({call.out: result}, reference(workload)) if check else None
    rep = CycleReport.build(
        res["cycles"], res["flops"], 0, 0, sum(len(p.tasks) for p in phases), cfg,
        tiles=len(grid.compute_tiles), mode=mode, per_tile=res["per_tile"],
        noc_transfers=res["noc_transfers"], functional_error=err,
        label=f"{workload.name}@{grid.rows}x{grid.cols}",
    )
    return GridReport(rep, res["serial_cycles"], res["phases"])
