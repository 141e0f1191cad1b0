"""Scenario configuration: one validated document fully determines a run.

Configs are JSON documents mirroring these models. Exactly one terrain
source must be present: an inline block layout or a directory of depth
frames. Validation failures surface pydantic's field paths so the CLI can
point at the offending entry.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Literal, Optional

from pydantic import BaseModel, Field, ValidationError, model_validator

from . import modes, repulse, terrain, windsim

RELIEF_BY_NAME = {
    "ice": terrain.ReliefClass.ICE_SHEET,
    "high": terrain.ReliefClass.HIGH_MOUNTAIN,
    "low": terrain.ReliefClass.LOW_MOUNTAIN,
}
NAME_BY_RELIEF = {v: k for k, v in RELIEF_BY_NAME.items()}

# Default block footprints per class, as fractions of (nx, ny). Kept here so
# protocol layout messages can omit sizes and still match the palette.
DEFAULT_FOOTPRINT_FRAC = {
    "ice": (0.146, 0.204),
    "high": (0.083, 0.111),
    "low": (0.083, 0.111),
}


class GridConfig(BaseModel):
    nx: int = 192
    ny: int = 108
    cell_km: float = 35.0
    lat_south: float = 22.0
    lat_north: float = 56.0

    def build(self) -> windsim.GridSpec:
        return windsim.GridSpec(**self.model_dump())


class PhysicsConfig(BaseModel):
    dt: float = 0.25
    inflow_speed: float = 10.0
    jet_boost: float = 1.0
    f0: float = Field(default_factory=lambda: windsim.coriolis_f0(45.0))
    beta: float = Field(default_factory=lambda: windsim.coriolis_beta(45.0))
    viscosity: float = 0.0
    drag_low: float = 0.8
    projection_iters: int = 40
    coriolis_strength: float = 0.25
    inflow_relax: float = 0.8
    cfl_target: float = 0.8
    projection_solver: Literal["exact", "relax"] = "exact"
    jet_center_frac: float = 0.75
    jet_width_frac: float = 0.10

    def build(self) -> windsim.SimParams:
        return windsim.SimParams(**self.model_dump())


class RepulseConfig(BaseModel):
    base_speed: float = 0.8
    force_gain: float = 0.004
    falloff_radius: float = 10.0
    max_force: float = 2.4

    def build(self) -> repulse.RepulseParams:
        return repulse.RepulseParams(**self.model_dump())


class SeedingConfig(BaseModel):
    n_particles: int = 5000
    west_fraction: float = Field(default=0.7, ge=0.0, le=1.0)
    n_storms: int = 4
    storm_spawn_period: int = 150
    max_age: int = 2500
    stagnation_speed_frac: float = 0.05
    stagnation_window: int = 60

    def build(self, seed: int):
        from .particles import SeedingPolicy

        return SeedingPolicy(seed=seed, **self.model_dump())


class CalibrationConfig(BaseModel):
    near_mm: float = 700.0
    far_mm: float = 1000.0
    table_mm: float = 1000.0
    denoise_radius: int = 1

    def build(self) -> terrain.Calibration:
        return terrain.Calibration(**self.model_dump())


class ThresholdConfig(BaseModel):
    low_mm: float = 20.0
    high_mm: float = 60.0
    ice_mm: float = 120.0

    def build(self) -> terrain.ClassThresholds:
        return terrain.ClassThresholds(**self.model_dump())


class BlockConfig(BaseModel):
    relief: Literal["ice", "high", "low"]
    x: float
    y: float
    w: Optional[float] = None
    h: Optional[float] = None
    rot: float = 0.0

    def build(self, nx: int, ny: int) -> terrain.BlockSpec:
        fw, fh = DEFAULT_FOOTPRINT_FRAC[self.relief]
        return terrain.BlockSpec(
            relief=RELIEF_BY_NAME[self.relief],
            center=(self.x, self.y),
            footprint=(self.w if self.w is not None else fw * nx,
                       self.h if self.h is not None else fh * ny),
            rotation=self.rot,
        )


class ModeSection(BaseModel):
    mode: Literal["free", "ice_age", "moving_mountains"] = "free"
    hit_radius: float = 3.0
    success_coverage: float = 0.7


class PaletteConfig(BaseModel):
    """Block budget offered to players; 10-20 total mirrors the exhibit."""

    ice: int = 8
    high: int = 6
    low: int = 6


class TrailConfig(BaseModel):
    alpha: float = Field(default=0.1, gt=0.0, le=1.0)
    deposit: float = 0.3


class ScenarioConfig(BaseModel):
    grid: GridConfig = GridConfig()
    physics: PhysicsConfig = PhysicsConfig()
    repulse: RepulseConfig = RepulseConfig()
    seeding: SeedingConfig = SeedingConfig()
    mode: ModeSection = ModeSection()
    palette: PaletteConfig = PaletteConfig()
    trail: TrailConfig = TrailConfig()
    calibration: CalibrationConfig = CalibrationConfig()
    thresholds: ThresholdConfig = ThresholdConfig()
    engine: Literal["cfd", "repulse"] = "cfd"
    blocks: Optional[list[BlockConfig]] = None
    depth_frames: Optional[str] = None
    seed: int = 0
    steps: int = 2000
    metrics_every: int = 10
    baseline_compare: bool = False
    snapshot_every: int = 4
    frame_particle_cap: int = 1500

    @model_validator(mode="after")
    def _one_terrain_source(self):
        if (self.blocks is None) == (self.depth_frames is None):
            raise ValueError(
                "exactly one of 'blocks' or 'depth_frames' must be present")
        return self

    def build_blocks(self) -> list[terrain.BlockSpec]:
        if self.blocks is None:
            return []
        return [b.build(self.grid.nx, self.grid.ny) for b in self.blocks]


def load_scenario(path) -> ScenarioConfig:
    """Parse and validate a scenario file; raises ScenarioError with field paths."""
    try:
        raw = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as e:
        raise ScenarioError(f"cannot read scenario {path}: {e}") from e
    return parse_scenario(raw, source=str(path))


def parse_scenario(raw: dict, source: str = "<inline>") -> ScenarioConfig:
    try:
        return ScenarioConfig.model_validate(raw)
    except ValidationError as e:
        lines = []
        for err in e.errors():
            loc = ".".join(str(p) for p in err["loc"]) or "<root>"
            lines.append(f"  {loc}: {err['msg']}")
        raise ScenarioError(f"invalid scenario {source}:\n" + "\n".join(lines)) from e


class ScenarioError(ValueError):
    """Scenario document failed to parse or validate."""


def blocks_to_layout(blocks: list[BlockConfig]) -> dict:
    """The block-layout document (also the protocol layout message body)."""
    return {"blocks": [b.model_dump(exclude_none=True) for b in blocks]}


def layout_to_blocks(doc: dict) -> list[BlockConfig]:
    entries = doc.get("blocks")
    if entries is None:
        raise ScenarioError("layout document missing 'blocks'")
    out = []
    for k, entry in enumerate(entries):
        if "class" in entry and "relief" not in entry:
            entry = {**entry, "relief": entry["class"]}
            entry.pop("class")
        try:
            out.append(BlockConfig.model_validate(entry))
        except ValidationError as e:
            raise ScenarioError(f"blocks[{k}]: {e.errors()[0]['msg']}") from e
    return out
