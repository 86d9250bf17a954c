"""Lower kernel invocations to a scalar :class:`InstrDag`.

A :class:`Workload` is a list of :class:`Call` s.  Operands are literal
matrices or :class:`Ref` s to the output of an earlier call (optionally
transposed and/or negated; both are free, they only change addressing and
the sign bit on load).

Each routine invocation is a library call with a memory interface: it loads
its operands once, on first use, and stores its results at the end.  A load
of an earlier result depends on the corresponding store.

An ``mfa`` call lowers to up to three routine segments:

* ``geqrf``: Householder QR of A applied jointly to B, storing R and Q^T B,
* ``getrf``: elimination of C against R (no pivoting), storing X = C R^{-1},
* ``gemm``:  D + X (Q^T B).

When A is a literal identity the first two segments are skipped: X = C and
Q^T B = B.  These are the materialized identity blocks of the Faddeeva
operation menu, folded away by the lowering.

Inner loops interleave ``unroll`` independent output chains, products
first and then the accumulating adds, the way a compiler for an in-order
core would order them.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional, Union

import numpy as np

from mfa_cgra import dense, faddeeva
from mfa_cgra.cgra.dag import InstrDag, Tracer

ROUTINES = ("mfa", "gemm", "geqr2", "getrf", "dot", "ormqr", "larft", "larfb", "trsm")


class LoweringError(ValueError):
    pass


@dataclass(frozen=True)
class Ref:
    name: str
    transpose: bool = False
    negate: bool = False

    @property
    def T(self) -> "Ref":
        return replace(self, transpose=not self.transpose)

    def __neg__(self) -> "Ref":
        return replace(self, negate=not self.negate)


Operand = Union[np.ndarray, Ref]


@dataclass(frozen=True)
class Call:
    routine: str
    args: dict
    out: str


@dataclass
class Workload:
    calls: list = field(default_factory=list)
    name: str = "workload"

    def add(self, routine: str, out: str, **args) -> Ref:
        self.calls.append(Call(routine, args, out))
        return Ref(out)

    def __len__(self) -> int:
        return len(self.calls)


def _resolve(spec: Operand, env: dict) -> np.ndarray:
    if isinstance(spec, Ref):
        try:
            m = env[spec.name]
        except KeyError:
            raise LoweringError(f"reference to unknown result {spec.name!r}") from None
        if spec.transpose:
            m = m.T
        if spec.negate:
            m = -m
        return np.asfortranarray(m)
    return dense.as_matrix(spec)


def reference(workload: Workload) -> dict:
    """Evaluate a workload with the reference kernels."""
    env: dict[str, np.ndarray] = {}
    for call in workload.calls:
        a = {k: _resolve(v, env) for k, v in call.args.items()}
        r = call.routine
        if r == "mfa":
            out = faddeeva.op_schur(a["a"], a["b"], a["c"], a["d"])
        elif r == "gemm":
            c = a.get("c")
            if c is None:
                c = np.zeros((a["a"].shape[0], a["b"].shape[1]))
            out = dense.gemm(1.0, a["a"], a["b"], 1.0, c)
        elif r == "geqr2":
            out = dense.geqr2(a["a"]).packed
        elif r == "getrf":
            out = dense.getrf2(a["a"], pivot=False).packed
        elif r == "dot":
            out = dense.gemm(1.0, a["x"].T, a["y"], 0.0, np.zeros((1, 1)))
        elif r == "ormqr":
            out = dense.ormqr(dense.QrFactors(a["qr"], a["tau"].ravel()), a["c"])
        elif r == "trsm":
            out = dense.trsm_right_upper(a["r"], a["c"])
        elif r == "larft":
            out = dense.larft(dense.QrFactors(a["qr"], a["tau"].ravel()))
        elif r == "larfb":
            out = dense.larfb(a["qr"], a["t"], a["c"])
        else:
            raise LoweringError(f"unsupported routine {r!r}")
        env[call.out] = out
    return env


def _is_identity(spec: Operand) -> bool:
    if isinstance(spec, Ref):
        return False
    m = np.asarray(spec)
    return m.ndim == 2 and m.shape[0] == m.shape[1] and np.array_equal(m, np.eye(m.shape[0]))


def _is_zero(spec: Optional[Operand]) -> bool:
    if spec is None:
        return True
    if isinstance(spec, Ref):
        return False
    return not np.any(np.asarray(spec))


class _Src:
    """Operand view for one routine segment; loads each element on first use."""

    def __init__(self, tr: Tracer, spec: Operand, nodes: dict, shapes: dict):
        self.tr = tr
        self.cache: dict[tuple[int, int], int] = {}
        if isinstance(spec, Ref):
            if spec.name not in nodes:
                raise LoweringError(f"reference to unknown result {spec.name!r}")
            self.stores = nodes[spec.name]
            self.lit = None
            self.transpose = spec.transpose
            self.negate = spec.negate
            r, c = shapes[spec.name]
            self.shape = (c, r) if spec.transpose else (r, c)
        else:
            self.lit = dense.as_matrix(spec)
            self.stores = None
            self.negate = False
            self.transpose = False
            self.shape = self.lit.shape

    def __call__(self, i: int, j: int) -> int:
        key = (i, j)
        node = self.cache.get(key)
        if node is None:
            if self.lit is not None:
                node = self.tr.load(float(self.lit[i, j]))
            else:
                si, sj = (j, i) if self.transpose else (i, j)
                node = self.tr.load(0.0, src=self.stores[si][sj], neg=self.negate)
            self.cache[key] = node
        return node


def _groups(items: list, size: int):
    for s in range(0, len(items), size):
        yield items[s:s + size]


def _chain_step(tr: Tracer, acc: Optional[int], prod: int, sign: int) -> int:
    if acc is None:
        return prod
    return tr.add(acc, prod) if sign > 0 else tr.sub(acc, prod)


class Lowerer:
    def __init__(self, unroll: int = 4):
        if unroll < 1:
            raise LoweringError("unroll must be >= 1")
        self.unroll = unroll
        self.tr = Tracer()
        self.nodes: dict[str, list[list[int]]] = {}
        self.shapes: dict[str, tuple[int, int]] = {}
        self.call = -1

    def src(self, spec: Operand) -> _Src:
        return _Src(self.tr, spec, self.nodes, self.shapes)

    def finish(self, out: str, rows: list[list[int]]) -> None:
        self.nodes[out] = rows
        self.shapes[out] = (len(rows), len(rows[0]))

    def store_all(self, vals: list[list[int]]) -> list[list[int]]:
        return [[self.tr.store(v) for v in row] for row in vals]

    # kernels ------------------------------------------------------------
    def gemm_chains(self, a, b, c, m: int, n: int, p: int) -> list[list[int]]:
        """``c + a @ b`` (c may be None); a(i, j), b(j, q), c(i, q) are element getters."""
        tr = self.tr
        res = [[0] * p for _ in range(m)]
        outs = [(i, q) for q in range(p) for i in range(m)]
        for grp in _groups(outs, self.unroll):
            acc = {o: (c(*o) if c is not None else None) for o in grp}
            for j in range(n):
                prods = [tr.mul(a(i, j), b(j, q)) for (i, q) in grp]
                for o, pr in zip(grp, prods):
                    acc[o] = _chain_step(tr, acc[o], pr, +1)
            for o in grp:
                res[o[0]][o[1]] = acc[o]
        return res

    def householder(self, get, rows: int, ncols: int, extra: int):
        """QR of the ``rows x ncols`` operand, reflectors also applied to ``extra`` columns.

        Returns the final node grid and, per column, whether the stored vector
        must be negated on store.
        """
        tr = self.tr
        total = ncols + extra
        work = [[None] * total for _ in range(rows)]

        def at(i, c):
            if work[i][c] is None:
                work[i][c] = get(i, c)
            return work[i][c]

        flip = [False] * ncols
        diag_neg = [False] * ncols
        for j in range(ncols):
            length = rows - j
            if length < 2:
                at(j, j)
                continue
            alpha = at(j, j)
            xs = [at(i, j) for i in range(j + 1, rows)]
            xn = None
            for x in xs:
                xn = _chain_step(tr, xn, tr.mul(x, x), +1)
            if tr.val(xn) == 0.0:
                continue
            nrm = tr.sqrt(tr.add(xn, tr.mul(alpha, alpha)))
            if tr.val(alpha) >= 0.0:
                s = tr.add(alpha, nrm)
                sign, diag_neg[j] = +1, True
            else:
                s = tr.sub(nrm, alpha)
                sign, flip[j] = -1, True
            tau = tr.div(s, nrm)
            vs = [tr.div(x, s) for x in xs]
            work[j][j] = nrm
            for i, v in zip(range(j + 1, rows), vs):
                work[i][j] = v
            self.reflect(at, work, j, vs, tau, range(j + 1, total), sign)
        for i in range(rows):
            for c in range(total):
                at(i, c)
        return work, diag_neg, flip

    def reflect(self, at, work, j: int, vs: list, tau: int, cols, sign: int) -> None:
        """Apply I - tau v v^T (v = [1, sign * vs]) to rows j.. of the given columns of ``work``."""
        tr = self.tr
        rows = range(j + 1, j + 1 + len(vs))
        for grp in _groups(list(cols), self.unroll):
            w = {c: at(j, c) for c in grp}
            for i, v in zip(rows, vs):
                prods = [tr.mul(v, at(i, c)) for c in grp]
                for c, pr in zip(grp, prods):
                    w[c] = _chain_step(tr, w[c], pr, sign)
            g = {c: tr.mul(tau, w[c]) for c in grp}
            for c in grp:
                work[j][c] = tr.sub(work[j][c], g[c])
            for i, v in zip(rows, vs):
                prods = [tr.mul(g[c], v) for c in grp]
                for c, pr in zip(grp, prods):
                    work[i][c] = _chain_step(tr, work[i][c], pr, -sign)

    def chains(self, outs: list, init, terms, sign: int = +1) -> dict:
        """Generic interleaved reductions: ``init(o) +/- sum(a * b for a, b in terms(o))``.

        ``terms(o)`` lists (a, b) thunks that return node ids; they are called
        when the product is emitted, so operand loads land on first use.
        """
        tr = self.tr
        res = {}
        for grp in _groups(outs, self.unroll):
            acc = {o: init(o) for o in grp}
            lists = {o: terms(o) for o in grp}
            depth = max((len(v) for v in lists.values()), default=0)
            for t in range(depth):
                live = [o for o in grp if t < len(lists[o])]
                prods = [tr.mul(lists[o][t][0](), lists[o][t][1]()) for o in live]
                for o, pr in zip(live, prods):
                    acc[o] = _chain_step(tr, acc[o], pr, sign)
            res.update(acc)
        return res

    def eliminate(self, r, c, k: int, n: int) -> list[list[int]]:
        """X with X R = C by column sweep against the diagonal of upper-triangular R."""
        tr = self.tr
        cw = [[None] * n for _ in range(k)]

        def cat(i, l):
            if cw[i][l] is None:
                cw[i][l] = c(i, l)
            return cw[i][l]

        x = [[0] * n for _ in range(k)]
        rows = list(range(k))
        for j in range(n):
            rjj = r(j, j)
            for i in rows:
                x[i][j] = tr.div(cat(i, j), rjj)
            for l in range(j + 1, n):
                rjl = r(j, l)
                for grp in _groups(rows, self.unroll):
                    prods = [tr.mul(x[i][j], rjl) for i in grp]
                    for i, pr in zip(grp, prods):
                        cw[i][l] = tr.sub(cat(i, l), pr)
        return x

    # routines -----------------------------------------------------------
    def lower_call(self, call: Call) -> None:
        self.call += 1
        r = call.routine
        handler = getattr(self, f"_lower_{r}", None)
        if handler is None:
            raise LoweringError(f"unsupported routine {r!r}")
        handler(call)

    def _begin(self, routine: str) -> None:
        self.tr.begin(routine, self.call)

    def _lower_gemm(self, call: Call) -> None:
        self._begin("gemm")
        a, b = self.src(call.args["a"]), self.src(call.args["b"])
        cspec = call.args.get("c")
        c = self.src(cspec) if cspec is not None else None
        (m, n), (n2, p) = a.shape, b.shape
        if n != n2 or (c is not None and c.shape != (m, p)):
            raise LoweringError(f"gemm {call.out}: incompatible shapes")
        self.finish(call.out, self.store_all(self.gemm_chains(a, b, c, m, n, p)))

    def _lower_dot(self, call: Call) -> None:
        self._begin("gemm")
        x, y = self.src(call.args["x"]), self.src(call.args["y"])
        n = x.shape[0]
        vals = self.gemm_chains(lambda i, j: x(j, 0), y, None, 1, n, 1)
        self.finish(call.out, self.store_all(vals))

    def _lower_geqr2(self, call: Call) -> None:
        self._begin("geqrf")
        a = self.src(call.args["a"])
        rows, cols = a.shape
        if rows < cols:
            raise LoweringError("geqr2 needs rows >= cols")
        work, diag_neg, flip = self.householder(a, rows, cols, 0)
        tr = self.tr
        out = [[0] * cols for _ in range(rows)]
        for i in range(rows):
            for c in range(cols):
                neg = (i == c and diag_neg[c]) or (i > c and flip[c])
                out[i][c] = tr.store(work[i][c], neg=neg)
        self.finish(call.out, out)

    def _lower_ormqr(self, call: Call) -> None:
        self._begin("ormqr")
        v, tau, c = (self.src(call.args[k]) for k in ("qr", "tau", "c"))
        rows, nref = v.shape
        if c.shape[0] != rows or tau.shape not in ((1, nref), (nref, 1)):
            raise LoweringError(f"ormqr {call.out}: incompatible shapes")
        tget = (lambda j: tau(0, j)) if tau.shape[0] == 1 else (lambda j: tau(j, 0))
        ncols = c.shape[1]
        work = [[None] * ncols for _ in range(rows)]

        def at(i, q):
            if work[i][q] is None:
                work[i][q] = c(i, q)
            return work[i][q]

        for j in range(nref):
            if rows - j < 2:
                continue
            vs = [v(i, j) for i in range(j + 1, rows)]
            self.reflect(at, work, j, vs, tget(j), range(ncols), +1)
        self.finish(call.out, self.store_all([[at(i, q) for q in range(ncols)] for i in range(rows)]))

    def _lower_larft(self, call: Call) -> None:
        self._begin("geqrf")
        v, tau = self.src(call.args["qr"]), self.src(call.args["tau"])
        rows, b = v.shape
        if tau.shape != (1, b):
            raise LoweringError(f"larft {call.out}: tau must be 1 x {b}")
        tr = self.tr
        # s[r][i] holds -T[r, i] above the diagonal; the sign goes into the store.
        s = [[None] * b for _ in range(b)]
        diag = [tau(0, i) for i in range(b)]
        for i in range(1, b):
            z = self.chains(
                list(range(i)), lambda r: v(i, r),
                lambda r: [(lambda l=l, r=r: v(l, r), lambda l=l: v(l, i)) for l in range(i + 1, rows)],
            )
            y = self.chains(
                list(range(i)), lambda r: tr.mul(diag[r], z[r]),
                lambda r: [(lambda r=r, c=c: s[r][c], lambda c=c: z[c]) for c in range(r + 1, i)],
                sign=-1,
            )
            for r in range(i):
                s[r][i] = tr.mul(diag[i], y[r])
        zero = tr.load(0.0) if b > 1 else None
        out = [[tr.store(diag[i]) if i == j else tr.store(s[i][j], neg=True) if i < j else tr.store(zero)
                for j in range(b)] for i in range(b)]
        self.finish(call.out, out)

    def _lower_larfb(self, call: Call) -> None:
        self._begin("ormqr")
        v, t, c = (self.src(call.args[k]) for k in ("qr", "t", "c"))
        rows, b = v.shape
        ncols = c.shape[1]
        if c.shape[0] != rows or t.shape != (b, b) or rows < b:
            raise LoweringError(f"larfb {call.out}: incompatible shapes")
        tr = self.tr
        keys = [(r, q) for q in range(ncols) for r in range(b)]
        w = self.chains(keys, lambda o: c(*o),
                        lambda o: [(lambda i=i: v(i, o[0]), lambda i=i: c(i, o[1])) for i in range(o[0] + 1, rows)])
        w2 = self.chains(keys, lambda o: None,
                         lambda o: [(lambda i=i: t(i, o[0]), lambda i=i: w[(i, o[1])]) for i in range(o[0] + 1)])
        okeys = [(i, q) for q in range(ncols) for i in range(rows)]
        out = self.chains(
            okeys,
            lambda o: tr.sub(c(*o), w2[o]) if o[0] < b else c(*o),
            lambda o: [(lambda r=r: v(o[0], r), lambda r=r: w2[(r, o[1])]) for r in range(min(o[0], b))],
            sign=-1,
        )
        self.finish(call.out, self.store_all([[out[(i, q)] for q in range(ncols)] for i in range(rows)]))

    def _lower_trsm(self, call: Call) -> None:
        self._begin("getrf")
        r, c = self.src(call.args["r"]), self.src(call.args["c"])
        n = r.shape[0]
        if r.shape != (n, n) or c.shape[1] != n:
            raise LoweringError(f"trsm {call.out}: incompatible shapes")
        self.finish(call.out, self.store_all(self.eliminate(r, c, c.shape[0], n)))

    def _lower_getrf(self, call: Call) -> None:
        self._begin("getrf")
        a = self.src(call.args["a"])
        n = a.shape[0]
        if a.shape != (n, n):
            raise LoweringError("getrf needs a square matrix")
        tr = self.tr
        w = [[None] * n for _ in range(n)]

        def at(i, j):
            if w[i][j] is None:
                w[i][j] = a(i, j)
            return w[i][j]

        for kk in range(n):
            piv = at(kk, kk)
            below = list(range(kk + 1, n))
            for i in below:
                w[i][kk] = tr.div(at(i, kk), piv)
            for j in range(kk + 1, n):
                ukj = at(kk, j)
                for grp in _groups(below, self.unroll):
                    prods = [tr.mul(w[i][kk], ukj) for i in grp]
                    for i, pr in zip(grp, prods):
                        w[i][j] = tr.sub(at(i, j), pr)
        self.finish(call.out, self.store_all([[at(i, j) for j in range(n)] for i in range(n)]))

    def _lower_mfa(self, call: Call) -> None:
        args = call.args
        for key in ("a", "b", "c", "d"):
            if key not in args:
                raise LoweringError(f"mfa {call.out}: missing operand {key!r}")
        tr = self.tr
        dspec = args["d"]
        zero_d = _is_zero(dspec)
        if _is_identity(args["a"]):
            self._begin("gemm")
            x, b = self.src(args["c"]), self.src(args["b"])
            d = None if zero_d else self.src(dspec)
            (k, n), p = x.shape, b.shape[1]
            if b.shape[0] != n:
                raise LoweringError(f"mfa {call.out}: incompatible shapes")
            self.finish(call.out, self.store_all(self.gemm_chains(x, b, d, k, n, p)))
            return

        self._begin("geqrf")
        a, b = self.src(args["a"]), self.src(args["b"])
        n, p = a.shape[0], b.shape[1]
        if a.shape != (n, n) or b.shape[0] != n:
            raise LoweringError(f"mfa {call.out}: incompatible shapes")
        work, diag_neg, _ = self.householder(
            lambda i, c: a(i, c) if c < n else b(i, c - n), n, n, p
        )
        r_st = {(i, j): tr.store(work[i][j], neg=(i == j and diag_neg[j])) for j in range(n) for i in range(j + 1)}
        bq_st = [[tr.store(work[i][n + q]) for q in range(p)] for i in range(n)]

        self._begin("getrf")
        c = self.src(args["c"])
        k = c.shape[0]
        if c.shape[1] != n:
            raise LoweringError(f"mfa {call.out}: incompatible shapes")
        r_cache: dict = {}

        def rget(i, j):
            node = r_cache.get((i, j))
            if node is None:
                node = r_cache[(i, j)] = tr.load(0.0, src=r_st[(i, j)])
            return node

        x = self.eliminate(rget, c, k, n)
        x_st = [[tr.store(v) for v in row] for row in x]

        self._begin("gemm")
        xs = _Src(tr, Ref("_x"), {"_x": x_st}, {"_x": (k, n)})
        bs = _Src(tr, Ref("_bq"), {"_bq": bq_st}, {"_bq": (n, p)})
        d = None if zero_d else self.src(dspec)
        if d is not None and d.shape != (k, p):
            raise LoweringError(f"mfa {call.out}: incompatible shapes")
        self.finish(call.out, self.store_all(self.gemm_chains(xs, bs, d, k, n, p)))


def lower(workload: Workload, unroll: int = 4) -> InstrDag:
    """Lower every call; ``dag.outputs`` maps result names to store-node grids."""
    lw = Lowerer(unroll)
    for call in workload.calls:
        lw.lower_call(call)
    dag = lw.tr.dag
    dag.outputs = {name: rows for name, rows in lw.nodes.items()}
    return dag


# analytic flop counts ----------------------------------------------------

def gemm_flops(m: int, n: int, p: int, with_c: bool) -> int:
    return m * p * (2 * n - (0 if with_c else 1))


def householder_flops(rows: int, ncols: int, extra: int) -> int:
    """General-position count: every reflector is non-trivial."""
    total = 0
    for j in range(ncols):
        length = rows - j
        if length < 2:
            continue
        trailing = ncols - j - 1 + extra
        total += 3 * length + 1 + trailing * (4 * length - 2)
    return total


def elimination_flops(k: int, n: int) -> int:
    return k * n + k * n * (n - 1)


def larft_flops(rows: int, b: int) -> int:
    return sum(2 * (rows - 1 - i) + 2 * (i - r) for i in range(1, b) for r in range(i))


def larfb_flops(rows: int, b: int, ncols: int) -> int:
    per_col = (sum(2 * (rows - 1 - r) for r in range(b)) + b * b
               + sum(1 + 2 * i for i in range(b)) + (rows - b) * 2 * b)
    return ncols * per_col


def lu_flops(n: int) -> int:
    return sum((n - 1 - k) + 2 * (n - 1 - k) ** 2 for k in range(n))


def _shape(spec: Operand, shapes: dict) -> tuple[int, int]:
    if isinstance(spec, Ref):
        r, c = shapes[spec.name]
        return (c, r) if spec.transpose else (r, c)
    return np.asarray(spec).shape


def analytic_flops(workload: Workload) -> int:
    """Closed-form flop count of the lowered workload (general-position data)."""
    shapes: dict[str, tuple[int, int]] = {}
    total = 0
    for call in workload.calls:
        a = call.args
        r = call.routine
        if r == "gemm":
            (m, n), (_, p) = _shape(a["a"], shapes), _shape(a["b"], shapes)
            total += gemm_flops(m, n, p, a.get("c") is not None)
            out = (m, p)
        elif r == "dot":
            n = _shape(a["x"], shapes)[0]
            total += gemm_flops(1, n, 1, False)
            out = (1, 1)
        elif r == "geqr2":
            rows, cols = _shape(a["a"], shapes)
            total += householder_flops(rows, cols, 0)
            out = (rows, cols)
        elif r == "getrf":
            n = _shape(a["a"], shapes)[0]
            total += lu_flops(n)
            out = (n, n)
        elif r == "ormqr":
            rows, nref = _shape(a["qr"], shapes)
            ncols = _shape(a["c"], shapes)[1]
            total += sum(ncols * (4 * (rows - j) - 2) for j in range(nref) if rows - j >= 2)
            out = (rows, ncols)
        elif r == "larft":
            rows, b = _shape(a["qr"], shapes)
            total += larft_flops(rows, b)
            out = (b, b)
        elif r == "larfb":
            rows, b = _shape(a["qr"], shapes)
            ncols = _shape(a["c"], shapes)[1]
            total += larfb_flops(rows, b, ncols)
            out = (rows, ncols)
        elif r == "trsm":
            k, n = _shape(a["c"], shapes)
            total += elimination_flops(k, n)
            out = (k, n)
        elif r == "mfa":
            n = _shape(a["a"], shapes)[0]
            k, p = _shape(a["c"], shapes)[0], _shape(a["b"], shapes)[1]
            with_d = not _is_zero(a["d"])
            if not _is_identity(a["a"]):
                total += householder_flops(n, n, p) + elimination_flops(k, n)
            total += gemm_flops(k, n, p, with_d)
            out = (k, p)
        else:
            raise LoweringError(f"unsupported routine {r!r}")
        shapes[call.out] = out
    return total
