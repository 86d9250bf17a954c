"""Scalar instruction DAG for the PE model.

Node ids are program order and also a topological order: every operand id
is smaller than the id of its consumer.  Each node belongs to a *segment*,
one invocation of a library routine (``geqrf``, ``getrf``, ``gemm``, ...).

Kinds and their semantics:

=======  ==================================================  =====
kind     value                                               flops
=======  ==================================================  =====
load     constant, or the value of the store it reads        0
store    +/- value of its operand                            0
mul      a * b                                               1
add      a + b                                               1
sub      a - b                                               1
div      a / b                                               1
sqrt     sqrt(a)                                             1
macro    replay of the fused scalar body                     body
=======  ==================================================  =====
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

ARITH = frozenset({"mul", "add", "sub", "div", "sqrt"})
MUL_UNIT = frozenset({"mul", "div", "sqrt"})
ADD_UNIT = frozenset({"add", "sub"})
MEM = frozenset({"load", "store"})


class DagError(ValueError):
    pass


@dataclass(frozen=True)
class Macro:
    """A fused region: the pattern that matched and the original scalar ops it replays."""

    pattern: str
    body: tuple  # ((orig_id, kind, args), ...) in topological order
    mults: int
    adds: int
    latency: int
    issue_cost: int = 1

    @property
    def flops(self) -> int:
        return self.mults + self.adds


class InstrDag:
    def __init__(self):
        self.kind: list[Optional[str]] = []
        self.args: list[tuple] = []
        self.seg: list[int] = []
        self.value: list[float] = []
        self.const: dict[int, float] = {}
        self.neg: set[int] = set()
        self.macro: dict[int, Macro] = {}
        self.seg_routine: list[str] = []
        self.seg_call: list[int] = []
        self.outputs: dict[str, list[list[int]]] = {}

    # construction -------------------------------------------------------
    def new_segment(self, routine: str, call: int) -> int:
        self.seg_routine.append(routine)
        self.seg_call.append(call)
        return len(self.seg_routine) - 1

    def add_node(self, kind: str, args: tuple, value: float, seg: int) -> int:
        self.kind.append(kind)
        self.args.append(args)
        self.seg.append(seg)
        self.value.append(value)
        return len(self.kind) - 1

    def copy(self) -> "InstrDag":
        out = InstrDag()
        out.kind = list(self.kind)
        out.args = list(self.args)
        out.seg = list(self.seg)
        out.value = list(self.value)
        out.const = dict(self.const)
        out.neg = set(self.neg)
        out.macro = dict(self.macro)
        out.seg_routine = list(self.seg_routine)
        out.seg_call = list(self.seg_call)
        out.outputs = {k: [list(r) for r in v] for k, v in self.outputs.items()}
        return out

    # queries ------------------------------------------------------------
    def __len__(self) -> int:
        return len(self.kind)

    def live_ids(self) -> list[int]:
        return [i for i, k in enumerate(self.kind) if k is not None]

    @property
    def n_live(self) -> int:
        return sum(1 for k in self.kind if k is not None)

    def node_flops(self, i: int) -> int:
        k = self.kind[i]
        if k in ARITH:
            return 1
        if k == "macro":
            return self.macro[i].flops
        return 0

    @property
    def flops(self) -> int:
        return sum(self.node_flops(i) for i in range(len(self.kind)))

    def counts(self) -> dict[str, int]:
        out: dict[str, int] = {}
        for k in self.kind:
            if k is not None:
                out[k] = out.get(k, 0) + 1
        return out

    def consumers(self) -> list[list[int]]:
        cons: list[list[int]] = [[] for _ in self.kind]
        for i, k in enumerate(self.kind):
            if k is None:
                continue
            for a in self.args[i]:
                cons[a].append(i)
        return cons

    def validate(self) -> None:
        """Acyclic and def-before-use: every operand is a live, earlier node."""
        for i, k in enumerate(self.kind):
            if k is None:
                continue
            for a in self.args[i]:
                if not (0 <= a < i) or self.kind[a] is None:
                    raise DagError(f"node {i} ({k}) uses {a}, which is not a live earlier node")

    # evaluation ---------------------------------------------------------
    def evaluate(self) -> list[float]:
        """Recompute every node from the load constants, in id order."""
        vals: list[float] = [math.nan] * len(self.kind)
        for i, k in enumerate(self.kind):
            if k is None:
                continue
            a = self.args[i]
            if k == "macro":
                vals[i] = _replay(self.macro[i].body, vals)
            elif k == "load":
                v = self.const[i] if not a else vals[a[0]]
                vals[i] = -v if i in self.neg else v
            elif k == "store":
                v = vals[a[0]]
                vals[i] = -v if i in self.neg else v
            else:
                vals[i] = _apply(k, [vals[x] for x in a])
        return vals

    def output_values(self, vals: Optional[list[float]] = None) -> dict:
        import numpy as np

        if vals is None:
            vals = self.evaluate()
        return {
            name: np.array([[vals[i] for i in row] for row in rows], dtype=np.float64)
            for name, rows in self.outputs.items()
        }


def _apply(kind: str, ops: list[float]) -> float:
    if kind == "mul":
        return ops[0] * ops[1]
    if kind == "add":
        return ops[0] + ops[1]
    if kind == "sub":
        return ops[0] - ops[1]
    if kind == "div":
        return ops[0] / ops[1]
    if kind == "sqrt":
        return math.sqrt(ops[0])
    raise DagError(f"cannot evaluate kind {kind!r}")


def _replay(body: tuple, vals: list[float]) -> float:
    local: dict[int, float] = {}
    out = math.nan
    for orig, kind, args in body:
        out = _apply(kind, [local[a] if a in local else vals[a] for a in args])
        local[orig] = out
    return out


class Tracer:
    """Builds an :class:`InstrDag` while computing concrete values alongside."""

    def __init__(self):
        self.dag = InstrDag()
        self.seg = -1

    def begin(self, routine: str, call: int) -> int:
        self.seg = self.dag.new_segment(routine, call)
        return self.seg

    def val(self, i: int) -> float:
        return self.dag.value[i]

    def load(self, value: float, src: Optional[int] = None, neg: bool = False) -> int:
        d = self.dag
        if src is None:
            i = d.add_node("load", (), -value if neg else value, self.seg)
            d.const[i] = value
        else:
            v = d.value[src]
            i = d.add_node("load", (src,), -v if neg else v, self.seg)
        if neg:
            d.neg.add(i)
        return i

    def store(self, x: int, neg: bool = False) -> int:
        d = self.dag
        v = d.value[x]
        i = d.add_node("store", (x,), -v if neg else v, self.seg)
        if neg:
            d.neg.add(i)
        return i

    def mul(self, a: int, b: int) -> int:
        v = self.dag.value
        return self.dag.add_node("mul", (a, b), v[a] * v[b], self.seg)

    def add(self, a: int, b: int) -> int:
        v = self.dag.value
        return self.dag.add_node("add", (a, b), v[a] + v[b], self.seg)

    def sub(self, a: int, b: int) -> int:
        v = self.dag.value
        return self.dag.add_node("sub", (a, b), v[a] - v[b], self.seg)

    def div(self, a: int, b: int) -> int:
        v = self.dag.value
        return self.dag.add_node("div", (a, b), v[a] / v[b], self.seg)

    def sqrt(self, a: int) -> int:
        return self.dag.add_node("sqrt", (a,), math.sqrt(self.dag.value[a]), self.seg)
