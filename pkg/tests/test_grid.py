import numpy as np
import pytest

from mfa_cgra.cgra.config import ConfigError, GridConfig
from mfa_cgra.cgra.grid import partition_blocks, simulate_grid
from mfa_cgra.cgra.lower import LoweringError, Workload
from mfa_cgra.cgra.simulate import simulate_pe
from mfa_cgra.cgra.workloads import gemm_workload, kf_workload, mfa_workload


def covered_once(bmap):
    seen = np.zeros((bmap.n, bmap.n), dtype=int)
    for blk in bmap.blocks.values():
        seen[slice(*blk.rows), slice(*blk.cols)] += 1
    return np.all(seen == 1)


def test_partition_n8_on_2x2():
    bmap = partition_blocks(8, GridConfig(2, 2))
    assert bmap.k == 2 and len(bmap.blocks) == 4
    assert all(b.shape == (4, 4) for b in bmap.blocks.values())
    assert covered_once(bmap)


def test_partition_n9_on_2x2_splits_5_4():
    bmap = partition_blocks(9, GridConfig(2, 2))
    assert [hi - lo for lo, hi in bmap.bounds] == [5, 4]
    assert covered_once(bmap)


def test_partition_n16_on_4x4():
    bmap = partition_blocks(16, GridConfig(4, 4))
    assert len(bmap.blocks) == 16 and all(b.shape == (4, 4) for b in bmap.blocks.values())


def test_partition_sub_blocks_and_round_robin():
    grid = GridConfig.preset(2)
    bmap = partition_blocks(64, grid, sub_block=8)
    assert all(hi - lo <= 8 for b in bmap.blocks.values() for lo, hi in b.sub_rows)
    tiles = {b.tile for b in bmap.blocks.values()}
    assert tiles == set(grid.compute_tiles)
    assert partition_blocks(64, grid) == bmap


def test_partition_rejects_small_n():
    with pytest.raises(ValueError):
        partition_blocks(1, GridConfig(2, 2))


def test_grid_presets():
    g1, g2, g3 = (GridConfig.preset(i) for i in (1, 2, 3))
    assert len(g1.compute_tiles) == 2 and g1.memory_tiles == [(0, 1), (1, 1)]
    assert len(g2.compute_tiles) == 6
    assert len(g3.compute_tiles) == 16 and g3.placement == "per_tile_memory"
    with pytest.raises(ConfigError):
        GridConfig.preset(4)
    with pytest.raises(ConfigError):
        GridConfig(1, 1, "last_column_memory")


def test_single_compute_tile_is_pe_plus_transfers():
    w = mfa_workload(12)
    pe = simulate_pe(w, mode="sw")
    local = simulate_grid(w, GridConfig(1, 1))
    assert local.report.cycles == pe.cycles and local.report.noc_transfers == 0
    remote = simulate_grid(w, GridConfig(1, 2, "last_column_memory"))
    words = 4 * 12 * 12 + 12 * 12
    assert remote.report.noc_transfers == words
    assert remote.report.cycles == pe.cycles + 2 * words // 8


@pytest.mark.parametrize("preset", [1, 2, 3])
def test_zero_hop_divisible_gemm_scales_exactly(preset):
    grid = GridConfig.preset(preset, hop_latency=0)
    res = simulate_grid(gemm_workload(48), grid, sub_block=8)
    assert res.speedup == len(grid.compute_tiles)
    assert res.report.functional_error == 0.0


def test_grid_mfa_functional_and_report_fields():
    res = simulate_grid(mfa_workload(24), GridConfig.preset(3))
    rep = res.report
    assert rep.functional_error <= 1e-9
    assert 0 < rep.utilization <= 1
    assert rep.noc_transfers > 0
    assert len(rep.per_tile) == 16
    assert sum(t["compute_cycles"] for t in rep.per_tile) == res.serial_cycles
    assert rep.peak_gflops == pytest.approx(16 * 4.9)


def test_grid_cycles_non_increasing_in_tiles():
    w = mfa_workload(32)
    cycles = [simulate_grid(w, GridConfig.preset(i), check=False).report.cycles for i in (1, 2, 3)]
    assert cycles[0] >= cycles[1] >= cycles[2]


def test_grid_hop_latency_costs_cycles():
    w = mfa_workload(16)
    fast = simulate_grid(w, GridConfig.preset(3, hop_latency=0), check=False).report.cycles
    slow = simulate_grid(w, GridConfig.preset(3, hop_latency=4), check=False).report.cycles
    assert slow > fast


def test_grid_rejects_multi_call_workloads():
    with pytest.raises(LoweringError):
        simulate_grid(kf_workload(4), GridConfig.preset(3))
    with pytest.raises(LoweringError):
        simulate_grid(Workload(), GridConfig.preset(3))
