import csv
import io
import json

import numpy as np
import pytest

from mfa_cgra.cli import main
from mfa_cgra.matrix_io import read_matrix, write_matrix


@pytest.fixture
def mats(tmp_path, rng):
    paths = {}
    blocks = {
        "a": rng.standard_normal((4, 4)) + 6 * np.eye(4),
        "b": rng.standard_normal((4, 2)),
        "c": rng.standard_normal((3, 4)),
        "d": rng.standard_normal((3, 2)),
        "eye": np.eye(4),
        "sing": np.ones((4, 4)),
    }
    for name, m in blocks.items():
        paths[name] = tmp_path / f"{name}.txt"
        write_matrix(paths[name], m)
    return paths, blocks


def test_mfa_identity_a_gives_d_plus_cb(mats, tmp_path):
    p, m = mats
    out = tmp_path / "out.txt"
    assert main(["mfa", str(p["eye"]), str(p["b"]), str(p["c"]), str(p["d"]), "--out", str(out)]) == 0
    np.testing.assert_allclose(read_matrix(out), m["d"] + m["c"] @ m["b"], atol=1e-14)


def test_mfa_check_reports_residual(mats, capsys):
    p, _ = mats
    assert main(["mfa", *(str(p[k]) for k in "abcd"), "--check"]) == 0
    err = capsys.readouterr().err
    residual = float(next(ln for ln in err.splitlines() if ln.startswith("residual")).split()[1])
    assert residual <= 1e-9
    assert "r_diag_min_abs" in err


def test_mfa_missing_file(mats, capsys):
    p, _ = mats
    assert main(["mfa", "missing.txt", str(p["b"]), str(p["c"]), str(p["d"])]) == 2
    assert "missing.txt" in capsys.readouterr().err


def test_mfa_singular_exit_1(mats):
    p, _ = mats
    assert main(["mfa", str(p["sing"]), str(p["b"]), str(p["c"]), str(p["d"])]) == 1


def test_mfa_dimension_mismatch_exit_2(mats):
    p, _ = mats
    assert main(["mfa", str(p["a"]), str(p["c"]), str(p["c"]), str(p["d"])]) == 2


def _scenario(tmp_path, **kw):
    path = tmp_path / "sc.json"
    path.write_text(json.dumps({"generator": "constant_velocity", "steps": 100, "seed": 5, **kw}))
    return path


def test_kf_engines_agree(tmp_path):
    sc = _scenario(tmp_path)
    traces = {}
    for engine in ("mfa", "direct"):
        out = tmp_path / f"{engine}.csv"
        assert main(["kf", str(sc), "--engine", engine, "--out", str(out)]) == 0
        traces[engine] = np.loadtxt(out, delimiter=",", skiprows=1)
    assert np.max(np.abs(traces["mfa"] - traces["direct"])) <= 1e-8
    assert main(["kf", str(sc), "--check", "--out", str(tmp_path / "x.csv")]) == 0


def test_kf_zero_steps_is_error(tmp_path):
    assert main(["kf", str(_scenario(tmp_path, steps=0))]) == 2


def test_kf_seed_rerun_byte_identical(tmp_path):
    sc = _scenario(tmp_path)
    a, b, c = (tmp_path / n for n in ("a.csv", "b.csv", "c.csv"))
    for out in (a, b):
        assert main(["kf", str(sc), "--seed", "9", "--out", str(out)]) == 0
    assert main(["kf", str(sc), "--seed", "10", "--out", str(c)]) == 0
    assert a.read_bytes() == b.read_bytes() != c.read_bytes()


def test_sim_base_band_and_peak(tmp_path):
    out = tmp_path / "r.json"
    assert main(["sim", "--workload", "kf", "--size", "16", "--mode", "base", "--out", str(out)]) == 0
    rep = json.loads(out.read_text())
    assert 0.25 <= rep["utilization"] <= 0.35
    assert rep["peak_gflops"] == 1.4
    assert main(["sim", "--workload", "kf", "--size", "4", "--mode", "hw", "--out", str(out)]) == 0
    assert json.loads(out.read_text())["peak_gflops"] == 4.9


def test_sim_sweep_modes(tmp_path):
    out = tmp_path / "modes.csv"
    assert main(["sim", "--workload", "kf", "--size", "8", "--sweep", "modes", "--out", str(out)]) == 0
    rows = list(csv.DictReader(io.StringIO(out.read_text())))
    assert [r["mode"] for r in rows] == ["base", "hw", "sw"]
    cycles = [int(r["cycles"]) for r in rows]
    assert cycles[0] >= cycles[1] >= cycles[2]


def test_sim_sweep_grids(tmp_path):
    out = tmp_path / "grids.csv"
    assert main(["sim", "--workload", "gemm", "--size", "16", "--sweep", "grids", "--out", str(out)]) == 0
    rows = list(csv.DictReader(io.StringIO(out.read_text())))
    assert [r["label"] for r in rows] == ["gemm_n16@2x2", "gemm_n16@3x3", "gemm_n16@4x4"]


def test_sim_grid_needs_single_call(capsys):
    assert main(["sim", "--workload", "kf", "--size", "4", "--grid", "3"]) == 2


def test_sim_bad_config(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text('{"rdp": {"multipliers": -1}}')
    assert main(["sim", "--config", str(bad)]) == 2
    assert main(["sim", "--config", str(tmp_path / "none.json")]) == 2


def test_report_three_mode_speedup(tmp_path):
    sweep = tmp_path / "modes.csv"
    assert main(["sim", "--workload", "kf", "--size", "8", "--sweep", "modes", "--out", str(sweep)]) == 0
    md, tidy = tmp_path / "s.md", tmp_path / "t.csv"
    assert main(["report", str(sweep), "--out", str(md), "--tidy", str(tidy)]) == 0
    sw = next(ln for ln in md.read_text().splitlines() if "| sw |" in ln)
    assert float(sw.split("|")[-2]) >= 2.0
    rows = list(csv.DictReader(io.StringIO(tidy.read_text())))
    assert {r["metric"] for r in rows} == {"cycles", "utilization", "achieved_gflops", "speedup"}


def test_report_single_file_identity(tmp_path):
    sweep = tmp_path / "one.csv"
    assert main(["sim", "--workload", "gemm", "--size", "4", "--sweep", "modes", "--out", str(sweep)]) == 0
    out = tmp_path / "a.md"
    assert main(["report", str(sweep), "--out", str(out)]) == 0
    table = [ln for ln in out.read_text().splitlines() if ln.startswith("| gemm")]
    data = list(csv.DictReader(io.StringIO(sweep.read_text())))
    assert [ln.split("|")[3].strip() for ln in table] == [r["mode"] for r in data]
    assert [int(ln.split("|")[4]) for ln in table] == [int(r["cycles"]) for r in data]


def test_report_usage_errors(tmp_path):
    with pytest.raises(SystemExit) as info:
        main(["report"])
    assert info.value.code == 2
    bad = tmp_path / "bad.csv"
    bad.write_text("label,mode\nx,y\n")
    assert main(["report", str(bad)]) == 2
