"""Greedy macro-op fusion over an :class:`InstrDag`.

Candidate regions are multiply/accumulate trees: add/sub nodes whose
operands are single-use products (or a single-use add of two products), plus
at most one external accumulator.  Starting from the earliest unfused add,
a region grows along its single consumer while it still fits the RDP; the
largest region that matches a pattern becomes one ``macro`` node at the
position of the region's root.  The macro replays the original scalar ops,
so values are unchanged bit for bit.
"""

from __future__ import annotations

from typing import Iterable, Optional

from mfa_cgra.cgra.config import MacroOpPattern, PeConfig
from mfa_cgra.cgra.dag import InstrDag, Macro

_ADDS = ("add", "sub")


def _match(patterns: list[MacroOpPattern], prods: int, leaves: int) -> Optional[tuple[MacroOpPattern, bool]]:
    """Best pattern for a region; the flag says one product is left outside as the accumulator."""
    best = None
    for pt in patterns:
        if pt.mults == prods and int(pt.accumulate) == leaves:
            cand = (pt, False)
        elif pt.accumulate and leaves == 0 and prods == pt.mults + 1:
            cand = (pt, True)
        else:
            continue
        if best is None or pt.flops > best[0].flops:
            best = cand
    return best


def fuse(dag: InstrDag, patterns: Iterable[MacroOpPattern], cfg: Optional[PeConfig] = None) -> InstrDag:
    """Return a fused copy of ``dag``; flops and values are preserved."""
    pats = [p for p in patterns if cfg is None or p.fits(cfg)]
    out = dag.copy()
    if not pats:
        return out
    max_mults = max(p.mults for p in pats) + 1
    max_adds = max(p.adds for p in pats)
    kind, args = out.kind, out.args
    cons = out.consumers()
    taken = bytearray(len(kind))

    def single(i: int) -> bool:
        return len(cons[i]) == 1 and not taken[i] and kind[i] is not None

    def classify(op: int):
        """-> (nodes, products, adds) if ``op`` can join a region, else None (leaf)."""
        if not single(op):
            return None
        k = kind[op]
        if k == "mul":
            return [op], [op], 0
        if k in _ADDS:
            x, y = args[op]
            if kind[x] == "mul" and kind[y] == "mul" and single(x) and single(y):
                return [op, x, y], [x, y], 1
        return None

    def absorb(node: int, nodes: list, prods: list, adds: int, leaves: int):
        nodes = nodes + [node]
        prods = list(prods)
        adds += 1
        for op in args[node]:
            if op in nodes:
                continue
            part = classify(op)
            if part is None:
                leaves += 1
            else:
                nodes += part[0]
                prods += part[1]
                adds += part[2]
        return nodes, prods, adds, leaves

    for s in range(len(kind)):
        if kind[s] not in _ADDS or taken[s]:
            continue
        nodes, prods, adds, leaves = absorb(s, [], [], 0, 0)
        root = s
        best = None
        while True:
            if len(prods) > max_mults or adds > max_adds or leaves > 1:
                break
            m = _match(pats, len(prods), leaves)
            if m is not None and (best is None or m[0].flops >= best[0].flops):
                best = (m[0], m[1], list(nodes), list(prods), root)
            if len(cons[root]) != 1:
                break
            c = cons[root][0]
            if kind[c] not in _ADDS or taken[c]:
                break
            nodes, prods, adds, leaves = absorb(c, nodes, prods, adds, leaves)
            root = c
        if best is None:
            continue
        pattern, demote, nodes, prods, root = best
        if demote:
            first = min(prods)
            nodes.remove(first)
            prods.remove(first)
        region = sorted(set(nodes))
        inside = set(region)
        body = tuple((i, kind[i], args[i]) for i in region)
        ext: list[int] = []
        for i in region:
            for a in args[i]:
                if a not in inside and a not in ext:
                    ext.append(a)
        for i in region:
            taken[i] = 1
            if i != root:
                kind[i] = None
                args[i] = ()
        n_mul = sum(1 for i in region if dag.kind[i] == "mul")
        kind[root] = "macro"
        args[root] = tuple(ext)
        out.macro[root] = Macro(pattern.name, body, n_mul, len(region) - n_mul, pattern.latency, pattern.issue_cost)
        for a in ext:
            cons[a] = [c for c in cons[a] if c not in inside] + [root]
    return out
