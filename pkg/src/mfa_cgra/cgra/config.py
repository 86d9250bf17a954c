"""PE, macro-op and tile-grid configuration for the timing model.

All latencies are in PE clock cycles.  The defaults are calibration values
for the in-order PE model; they are not taken from silicon.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields, replace
from importlib import resources
from pathlib import Path
from typing import Optional


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class PeConfig:
    multipliers: int = 1
    adders: int = 1
    clock_hz: float = 700e6
    mul_latency: int = 4
    add_latency: int = 3
    load_latency: int = 2
    store_latency: int = 2
    div_latency: int = 8
    sqrt_latency: int = 8
    issue_width: int = 1
    window: int = 1
    unroll: int = 4
    load_store_units: int = 1
    registers: int = 256
    local_mem_bytes: int = 262144

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if v < 0:
                raise ConfigError(f"{f.name} must be >= 0, got {v}")
        if self.clock_hz <= 0:
            raise ConfigError("clock_hz must be positive")
        for name in ("issue_width", "window", "unroll", "load_store_units"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")

    @classmethod
    def base(cls, **overrides) -> "PeConfig":
        """Scalar FPU: one multiplier, one adder."""
        return replace(cls(multipliers=1, adders=1), **overrides)

    @classmethod
    def rdp(cls, **overrides) -> "PeConfig":
        """Reconfigurable data-path: four multipliers, three adders."""
        return replace(cls(multipliers=4, adders=3), **overrides)

    @property
    def peak_flops_per_cycle(self) -> int:
        return self.multipliers + self.adders


def peak_gflops(cfg: PeConfig) -> float:
    return (cfg.multipliers + cfg.adders) * cfg.clock_hz / 1e9


@dataclass(frozen=True)
class MacroOpPattern:
    """A multiply-accumulate shape executed as one RDP configuration.

    ``mults`` products are reduced by an adder tree; with ``accumulate`` the
    tree also folds in one external operand.  Adds = mults - 1 + accumulate.
    """

    name: str
    mults: int
    accumulate: bool
    latency: int
    issue_cost: int = 1

    @property
    def adds(self) -> int:
        return self.mults - 1 + int(self.accumulate)

    @property
    def flops(self) -> int:
        return self.mults + self.adds

    def fits(self, cfg: PeConfig) -> bool:
        return self.mults <= cfg.multipliers and self.adds <= cfg.adders


def default_patterns() -> tuple[MacroOpPattern, ...]:
    return (
        MacroOpPattern("dot4", mults=4, accumulate=False, latency=10),
        MacroOpPattern("mac3", mults=3, accumulate=True, latency=10),
        MacroOpPattern("mac2", mults=2, accumulate=True, latency=10),
        MacroOpPattern("fms", mults=1, accumulate=True, latency=7),
    )


PLACEMENTS = ("last_column_memory", "per_tile_memory")


@dataclass(frozen=True)
class GridConfig:
    """Tile array.  ``last_column_memory`` reserves the last column for memory tiles;
    ``per_tile_memory`` pairs every compute PE with a memory PE on its router."""

    rows: int
    cols: int
    placement: str = "per_tile_memory"
    hop_latency: int = 2
    private_bytes: int = 131072
    global_bytes: int = 131072

    def __post_init__(self):
        if self.rows < 1 or self.cols < 1:
            raise ConfigError(f"grid must be at least 1x1, got {self.rows}x{self.cols}")
        if self.placement not in PLACEMENTS:
            raise ConfigError(f"placement must be one of {PLACEMENTS}, got {self.placement!r}")
        if self.placement == "last_column_memory" and self.cols < 2:
            raise ConfigError("last_column_memory needs at least two columns")
        if self.hop_latency < 0:
            raise ConfigError("hop_latency must be >= 0")

    @property
    def k(self) -> int:
        return self.rows

    @property
    def compute_tiles(self) -> list[tuple[int, int]]:
        last = self.cols - 1 if self.placement == "last_column_memory" else self.cols
        return [(r, c) for r in range(self.rows) for c in range(last)]

    @property
    def memory_tiles(self) -> list[tuple[int, int]]:
        if self.placement == "last_column_memory":
            return [(r, self.cols - 1) for r in range(self.rows)]
        return [(r, c) for r in range(self.rows) for c in range(self.cols)]

    @classmethod
    def preset(cls, index: int, **overrides) -> "GridConfig":
        """Configurations 1-3: 2x2 and 3x3 with a memory column, 4x4 with per-tile memory PEs."""
        table = {
            1: cls(2, 2, "last_column_memory"),
            2: cls(3, 3, "last_column_memory"),
            3: cls(4, 4, "per_tile_memory"),
        }
        try:
            return replace(table[index], **overrides)
        except KeyError:
            raise ConfigError(f"no grid preset {index}; choose 1, 2 or 3") from None


@dataclass(frozen=True)
class SimConfig:
    base: PeConfig = field(default_factory=PeConfig.base)
    rdp: PeConfig = field(default_factory=PeConfig.rdp)
    patterns: tuple[MacroOpPattern, ...] = field(default_factory=default_patterns)
    hop_latency: int = 2
    max_streams: int = 6
    sw_window: int = 32

    def __post_init__(self):
        if self.max_streams < 1 or self.sw_window < 1:
            raise ConfigError("max_streams and sw_window must be >= 1")

    def pe_for(self, mode: str) -> PeConfig:
        if mode == "base":
            return self.base
        if mode in ("hw", "sw"):
            return self.rdp
        raise ConfigError(f"unknown mode {mode!r}; choose base, hw or sw")

    def to_dict(self) -> dict:
        return {
            "base": asdict(self.base),
            "rdp": asdict(self.rdp),
            "patterns": [asdict(p) for p in self.patterns],
            "hop_latency": self.hop_latency,
            "max_streams": self.max_streams,
            "sw_window": self.sw_window,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SimConfig":
        if not isinstance(d, dict):
            raise ConfigError("simulator config must be a JSON object")
        try:
            kw = {}
            if "base" in d:
                kw["base"] = PeConfig(**d["base"])
            if "rdp" in d:
                kw["rdp"] = PeConfig(**d["rdp"])
            if "patterns" in d:
                kw["patterns"] = tuple(MacroOpPattern(**p) for p in d["patterns"])
            for key in ("hop_latency", "max_streams", "sw_window"):
                if key in d:
                    kw[key] = int(d[key])
            unknown = set(d) - {"base", "rdp", "patterns", "hop_latency", "max_streams", "sw_window"}
            if unknown:
                raise ConfigError(f"unknown simulator config keys: {sorted(unknown)}")
        except (TypeError, ValueError, AttributeError) as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(f"bad simulator config: {exc}") from exc
        return cls(**kw)


DEFAULT_CONFIG_NAME = "default_sim.json"


def load_config(path: Optional[Path] = None) -> SimConfig:
    """Load a simulator config; without a path, the packaged default."""
    if path is None:
        text = resources.files("mfa_cgra.cgra").joinpath(DEFAULT_CONFIG_NAME).read_text()
        source = DEFAULT_CONFIG_NAME
    else:
        path = Path(path)
        try:
            text = path.read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        source = str(path)
    try:
        return SimConfig.from_dict(json.loads(text))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{source}: invalid JSON: {exc}") from exc
