"""Command-line entry point: ``mfa-cgra {mfa,kf,sim,report}``.

Exit codes: 0 success, 1 numerical failure (singular input, residual or
cross-check over tolerance), 2 I/O, parse or configuration failure.  Every
command writes the same bytes for the same inputs, config and seed.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import sys
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from mfa_cgra import dense, faddeeva, kalman
from mfa_cgra.cgra.config import ConfigError, GridConfig, load_config
from mfa_cgra.cgra.grid import simulate_grid
from mfa_cgra.cgra.lower import LoweringError
from mfa_cgra.cgra.schedule import CycleReport, reports_to_csv
from mfa_cgra.cgra.simulate import MODES, simulate_pe
from mfa_cgra.cgra.workloads import WORKLOADS, make_workload
from mfa_cgra.matrix_io import MatrixFormatError, format_matrix, read_matrix

EXIT_OK, EXIT_NUMERIC, EXIT_IO = 0, 1, 2
DEFAULT_SEED = 0
MFA_CHECK_TOL = 1e-9
KF_CHECK_TOL = 1e-8
GRID_PRESETS = (1, 2, 3)


class CliError(Exception):
    def __init__(self, message: str, code: int = EXIT_IO):
        super().__init__(message)
        self.code = code


def _emit(text: str, out: Optional[str]) -> None:
    if out is None:
        sys.stdout.write(text)
        return
    try:
        Path(out).write_text(text)
    except OSError as exc:
        raise CliError(f"cannot write {out}: {exc}") from exc


def _read(path: str) -> np.ndarray:
    try:
        return read_matrix(path)
    except FileNotFoundError:
        raise CliError(f"no such file: {path}") from None
    except OSError as exc:
        raise CliError(f"cannot read {path}: {exc}") from exc
    except (MatrixFormatError, ValueError) as exc:
        raise CliError(f"{path}: {exc}") from exc


def _oracle_schur(a, b, c, d) -> np.ndarray:
    """D + C A^-1 B through a pivoted LU solve."""
    x = dense.getrs(dense.getrf(a, pivot=True), b)
    return dense.gemm(1.0, c, x, 1.0, d)


def cmd_mfa(args) -> int:
    a, b, c, d = (_read(p) for p in (args.a, args.b, args.c, args.d))
    try:
        res = faddeeva.mfa(faddeeva.build_compound(a, b, c, d))
    except dense.SingularMatrixError as exc:
        raise CliError(str(exc), EXIT_NUMERIC) from exc
    except dense.DimensionError as exc:
        raise CliError(str(exc)) from exc
    _emit(format_matrix(res.value), args.out)
    if args.check:
        want = _oracle_schur(a, b, c, d)
        scale = max(1.0, dense.max_abs(want))
        residual = dense.max_abs(res.value - want) / scale
        print(f"r_diag_min_abs {res.r_diag_min_abs:.17g}", file=sys.stderr)
        print(f"residual {residual:.3e}", file=sys.stderr)
        if residual > MFA_CHECK_TOL:
            raise CliError(f"residual {residual:.3e} exceeds {MFA_CHECK_TOL:g}", EXIT_NUMERIC)
    return EXIT_OK


def _load_scenario(path: str, seed: Optional[int]) -> kalman.Scenario:
    p = Path(path)
    try:
        cfg = json.loads(p.read_text())
    except FileNotFoundError:
        raise CliError(f"no such file: {path}") from None
    except OSError as exc:
        raise CliError(f"cannot read {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise CliError(f"{path}: invalid JSON: {exc}") from exc
    if not isinstance(cfg, dict):
        raise CliError(f"{path}: scenario must be a JSON object")
    if seed is not None and cfg.get("generator") is not None:
        cfg = {**cfg, "seed": seed}
    try:
        return kalman.scenario_from_dict(cfg, p.parent)
    except (kalman.ScenarioError, MatrixFormatError, ValueError, TypeError, OSError) as exc:
        raise CliError(f"{path}: {exc}") from exc


def _run(sc: kalman.Scenario, engine: str) -> list:
    try:
        return kalman.run_scenario(sc, engine)
    except kalman.StepError as exc:
        raise CliError(str(exc), EXIT_NUMERIC) from exc


def _trace_diff(t1: list, t2: list) -> float:
    diff = 0.0
    for r1, r2 in zip(t1, t2):
        diff = max(diff, dense.max_abs(r1.state.x - r2.state.x), dense.max_abs(r1.state.p - r2.state.p))
    return diff


def cmd_kf(args) -> int:
    sc = _load_scenario(args.scenario, args.seed)
    trace = _run(sc, args.engine)
    _emit(kalman.trace_to_csv(trace), args.out)
    if args.check:
        other = "direct" if args.engine == "mfa" else "mfa"
        diff = _trace_diff(trace, _run(sc, other))
        print(f"max_abs_diff_vs_{other} {diff:.3e}", file=sys.stderr)
        if diff > KF_CHECK_TOL:
            raise CliError(f"engines differ by {diff:.3e} > {KF_CHECK_TOL:g}", EXIT_NUMERIC)
    return EXIT_OK


def _sim_config(path: Optional[str]):
    try:
        return load_config(path)
    except ConfigError as exc:
        raise CliError(str(exc)) from exc


def _grid_report(workload, preset: int, mode: str, sim) -> CycleReport:
    grid = GridConfig.preset(preset, hop_latency=sim.hop_latency)
    try:
        return simulate_grid(workload, grid, mode=mode, sim=sim).report
    except LoweringError as exc:
        raise CliError(str(exc)) from exc


def cmd_sim(args) -> int:
    sim = _sim_config(args.config)
    try:
        workload = make_workload(args.workload, args.size, args.seed)
    except ValueError as exc:
        raise CliError(str(exc)) from exc
    if args.sweep == "modes":
        reports = [simulate_pe(workload, mode=m, sim=sim) for m in MODES]
        _emit(reports_to_csv(reports), args.out)
    elif args.sweep == "grids":
        reports = [_grid_report(workload, i, args.mode, sim) for i in GRID_PRESETS]
        _emit(reports_to_csv(reports), args.out)
    else:
        if args.grid is not None:
            reports = [_grid_report(workload, args.grid, args.mode, sim)]
        else:
            reports = [simulate_pe(workload, mode=args.mode, sim=sim)]
        _emit(reports[0].to_json(), args.out)
    errs = [r.functional_error for r in reports if r.functional_error is not None]
    if errs and max(errs) > 1e-9:
        print(f"functional error {max(errs):.3e} exceeds 1e-09", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


REPORT_NUMERIC = ("cycles", "flops", "achieved_gflops", "utilization")


def _read_rows(path: str) -> list[dict]:
    try:
        text = Path(path).read_text()
    except FileNotFoundError:
        raise CliError(f"no such file: {path}") from None
    except OSError as exc:
        raise CliError(f"cannot read {path}: {exc}") from exc
    reader = csv.DictReader(io.StringIO(text))
    missing = [f for f in ("label", "mode", *REPORT_NUMERIC) if f not in (reader.fieldnames or [])]
    if missing:
        raise CliError(f"{path}: malformed sweep CSV, missing columns {missing}")
    rows = []
    for lineno, row in enumerate(reader, start=2):
        try:
            for f in REPORT_NUMERIC:
                row[f] = float(row[f])
        except (TypeError, ValueError):
            raise CliError(f"{path}:{lineno}: non-numeric value") from None
        row["source"] = path
        rows.append(row)
    if not rows:
        raise CliError(f"{path}: no data rows")
    return rows


def _group(label: str) -> str:
    return label.split("@", 1)[0]


def summarize(rows: list[dict]) -> tuple[str, str]:
    """Markdown summary and tidy long-format CSV of sweep rows.

    Rows sharing a workload (label without the ``@grid`` suffix) form a
    group.  Speedups are achieved-Gflops ratios against the group's ``base``
    row, or against its first row when the group has no ``base`` row (grid
    sweeps).  The saturation point is the row with the highest utilization.
    """
    groups: dict = {}
    for row in rows:
        groups.setdefault(_group(row["label"]), []).append(row)
    md = ["| workload | row | mode | cycles | utilization % | Gflops | speedup |",
          "|---|---|---|---:|---:|---:|---:|"]
    tidy = io.StringIO()
    w = csv.writer(tidy, lineterminator="\n")
    w.writerow(["group", "label", "mode", "metric", "value"])
    notes = []
    for name, members in groups.items():
        ref = next((r for r in members if r["mode"] == "base"), members[0])
        for r in members:
            speedup = r["achieved_gflops"] / ref["achieved_gflops"] if ref["achieved_gflops"] else 0.0
            md.append(f"| {name} | {r['label']} | {r['mode']} | {int(r['cycles'])} | "
                      f"{100 * r['utilization']:.1f} | {r['achieved_gflops']:.4f} | {speedup:.3f} |")
            for metric, value in (("cycles", r["cycles"]), ("utilization", r["utilization"]),
                                  ("achieved_gflops", r["achieved_gflops"]), ("speedup", speedup)):
                w.writerow([name, r["label"], r["mode"], metric, format(value, ".10g")])
        top = max(members, key=lambda r: r["utilization"])
        notes.append(f"- {name}: saturation at {top['label']} ({top['mode']}), "
                     f"{100 * top['utilization']:.1f}% of peak; speedups relative to {ref['label']} ({ref['mode']})")
    return "\n".join(md + [""] + notes) + "\n", tidy.getvalue()


def cmd_report(args) -> int:
    rows = [row for path in args.csv for row in _read_rows(path)]
    markdown, tidy = summarize(rows)
    _emit(markdown, args.out)
    if args.tidy:
        _emit(tidy, args.tidy)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="mfa-cgra", description="Faddeeva kernels, Kalman filter and PE timing model")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("mfa", help="Schur complement D + C A^-1 B of four matrix files")
    for name in ("a", "b", "c", "d"):
        p.add_argument(name, help=f"{name.upper()} matrix file")
    p.add_argument("--out", help="result matrix file (default: stdout)")
    p.add_argument("--check", action="store_true", help="compare with a pivoted-LU oracle")
    p.set_defaults(func=cmd_mfa)

    p = sub.add_parser("kf", help="run a Kalman scenario, write the per-step trace CSV")
    p.add_argument("scenario", help="scenario JSON file")
    p.add_argument("--engine", choices=sorted(kalman.ENGINES), default="mfa")
    p.add_argument("--seed", type=int, help="override the seed of a generated scenario")
    p.add_argument("--out", help="trace CSV (default: stdout)")
    p.add_argument("--check", action="store_true", help="cross-check against the other engine")
    p.set_defaults(func=cmd_kf)

    p = sub.add_parser("sim", help="simulate a workload on the PE or tile-grid model")
    p.add_argument("--workload", choices=WORKLOADS, default="kf")
    p.add_argument("--size", type=int, default=16, help="matrix dimension n")
    p.add_argument("--mode", choices=MODES, default="sw")
    p.add_argument("--grid", type=int, choices=GRID_PRESETS, help="grid preset (1: 2x2, 2: 3x3, 3: 4x4)")
    p.add_argument("--sweep", choices=("modes", "grids"), help="emit a CSV sweep instead of one JSON report")
    p.add_argument("--config", help="simulator config JSON (default: packaged)")
    p.add_argument("--seed", type=int, default=DEFAULT_SEED)
    p.add_argument("--out", help="output file (default: stdout)")
    p.set_defaults(func=cmd_sim)

    p = sub.add_parser("report", help="summarize sweep CSVs as markdown")
    p.add_argument("csv", nargs="+", help="sweep CSV files")
    p.add_argument("--out", help="markdown summary (default: stdout)")
    p.add_argument("--tidy", help="also write a long-format CSV here")
    p.set_defaults(func=cmd_report)
    return ap


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except CliError as exc:
        print(f"mfa-cgra {args.command}: {exc}", file=sys.stderr)
        return exc.code


if __name__ == "__main__":
    sys.exit(main())
