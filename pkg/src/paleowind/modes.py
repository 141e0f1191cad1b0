"""The two exhibit play modes and their scenario generators and metrics.

Ice Age: recreate the glacial maximum by filling the shaded northern zone
with ice and high-mountain blocks, driving storms south toward the target.
Moving Mountains: a random landmass ("Nonameland") appears and the player
steers storms to a randomly placed X target. All generation is a pure
function of the seed, so a logged session replays exactly.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass
from importlib import resources

import numpy as np

from .terrain import (BlockSpec, ClassThresholds, DEFAULT_CLASS_HEIGHTS_MM, HeightField,
                      ReliefClass, classify_relief)

log = logging.getLogger(__name__)

MODE_ICE_AGE = "ice_age"
MODE_MOVING_MOUNTAINS = "moving_mountains"
MODE_FREE = "free"


def _data_text(name: str) -> str:
    return resources.files("paleowind").joinpath("data").joinpath(name).read_text()


def load_shape_library(path=None) -> list[dict]:
    """Outline silhouettes for Nonameland, vertices normalized to the unit box."""
    raw = json.loads(open(path).read() if path else _data_text("shapes.json"))
    shapes = []
    for s in raw["shapes"]:
        verts = np.asarray(s["vertices"], dtype=np.float64)
        if len(verts) < 8:
            raise ValueError(f"shape {s['name']!r} has fewer than 8 vertices")
        shapes.append({"name": s["name"], "vertices": verts})
    if not shapes:
        raise ValueError("shape library is empty")
    return shapes


def load_map_data(path=None) -> dict:
    """Map annotations: glacial-extent zone polygon and the home (O) marker."""
    return json.loads(open(path).read() if path else _data_text("map.json"))


def scale_polygon_to_grid(poly_norm: np.ndarray, nx: int, ny: int) -> np.ndarray:
    poly = np.asarray(poly_norm, dtype=np.float64).copy()
    poly[:, 0] *= nx
    poly[:, 1] *= ny
    return poly


def points_in_polygon(xs: np.ndarray, ys: np.ndarray, poly: np.ndarray) -> np.ndarray:
    """Even-odd crossing test, vectorized over query points."""
    xs = np.asarray(xs, dtype=np.float64)
    ys = np.asarray(ys, dtype=np.float64)
    x0, y0 = poly[:, 0], poly[:, 1]
    x1, y1 = np.roll(x0, -1), np.roll(y0, -1)
    inside = np.zeros(xs.shape, dtype=bool)
    with np.errstate(divide="ignore", invalid="ignore"):
        for k in range(len(poly)):
            crosses = (y0[k] > ys) != (y1[k] > ys)
            x_int = (x1[k] - x0[k]) * (ys - y0[k]) / (y1[k] - y0[k]) + x0[k]
            inside ^= crosses & (xs < x_int)
    return inside


def rasterize_polygon(poly: np.ndarray, nx: int, ny: int) -> np.ndarray:
    """Boolean mask of cells whose centers lie inside the polygon."""
    cx, cy = np.meshgrid(np.arange(nx) + 0.5, np.arange(ny) + 0.5)
    return points_in_polygon(cx, cy, poly)


@dataclass
class Nonameland:
    """A generated landmass: outline in map coords plus its terrain overlay."""

    outline: np.ndarray  # (m, 2) map coords
    height: HeightField
    shape_index: int
    shape_name: str
    rotation: float
    flip_h: bool
    flip_v: bool
    fallback: bool = False


def generate_nonameland(seed: int, lib: list[dict], nx: int, ny: int) -> Nonameland:
    """Pick, rotate, flip, scale, and place a random landmass outline.

    Deterministic from the seed. The landmass is scaled to 25-40% of the
    domain width and placed fully inside the central 80%; its interior
    becomes low-mountain terrain (porous, not a wall - walls are the
    player's blocks). After 100 failed placements it falls back to a
    centered, unrotated shape.
    """
    rng = np.random.default_rng(np.random.SeedSequence((int(seed), 0x4E4C)))
    index = int(rng.integers(0, len(lib)))
    base = lib[index]["vertices"] - 0.5  # center the unit-box outline

    margin_x, margin_y = 0.1 * nx, 0.1 * ny
    chosen = None
    rotation, flip_h, flip_v = 0.0, False, False
    for _ in range(100):
        rotation = float(rng.uniform(0.0, 2.0 * math.pi))
        flip_h = bool(rng.uniform() < 0.5)
        flip_v = bool(rng.uniform() < 0.5)
        width_frac = float(rng.uniform(0.25, 0.40))
        verts = base.copy()
        if flip_h:
            verts[:, 0] = -verts[:, 0]
        if flip_v:
            verts[:, 1] = -verts[:, 1]
        c, s = math.cos(rotation), math.sin(rotation)
        verts = verts @ np.array([[c, s], [-s, c]])
        w = verts[:, 0].max() - verts[:, 0].min()
        verts *= width_frac * nx / w
        bw = verts[:, 0].max() - verts[:, 0].min()
        bh = verts[:, 1].max() - verts[:, 1].min()
        lo_x, hi_x = margin_x + bw / 2, nx - margin_x - bw / 2
        lo_y, hi_y = margin_y + bh / 2, ny - margin_y - bh / 2
        if lo_x > hi_x or lo_y > hi_y:
            continue
        center = np.array([rng.uniform(lo_x, hi_x), rng.uniform(lo_y, hi_y)])
        chosen = verts - [verts[:, 0].min() + bw / 2, verts[:, 1].min() + bh / 2] + center
        break

    fallback = chosen is None
    if fallback:
        log.warning("nonameland placement failed after 100 attempts; using centered fallback")
        verts = base * 0.3 * nx / (base[:, 0].max() - base[:, 0].min())
        chosen = verts + [nx / 2, ny / 2]
        rotation, flip_h, flip_v = 0.0, False, False

    mask = rasterize_polygon(chosen, nx, ny)
    height = HeightField.zeros(nx, ny)
    height.height_mm[mask] = DEFAULT_CLASS_HEIGHTS_MM[ReliefClass.LOW_MOUNTAIN]
    return Nonameland(outline=chosen, height=height, shape_index=index,
                      shape_name=lib[index]["name"], rotation=rotation,
                      flip_h=flip_h, flip_v=flip_v, fallback=fallback)


def place_target(seed: int, nx: int, ny: int, solid: np.ndarray | None = None):
    """Uniform X-target position in the central half of the map.

    Never lands in a solid cell (re-rolled); deterministic from the seed.
    """
    rng = np.random.default_rng(np.random.SeedSequence((int(seed), 0x7417)))
    x = y = None
    for _ in range(200):
        x = float(rng.uniform(0.25 * nx, 0.75 * nx))
        y = float(rng.uniform(0.25 * ny, 0.75 * ny))
        if solid is None or not solid[min(int(y), ny - 1), min(int(x), nx - 1)]:
            return (x, y)
    log.warning("target re-roll budget exhausted; returning last draw")
    return (x, y)


def lgm_coverage(h: HeightField, zone: np.ndarray, thresholds: ClassThresholds) -> float:
    """Fraction of zone cells whose relief is high mountain or ice sheet."""
    ny, nx = h.shape
    mask = rasterize_polygon(zone, nx, ny)
    n_zone = int(mask.sum())
    if n_zone == 0:
        return 0.0
    classes = classify_relief(h.height_mm, thresholds)
    qualifying = (classes >= ReliefClass.HIGH_MOUNTAIN) & mask
    return float(qualifying.sum()) / n_zone


def southward_diversion(baseline_exit_lats, test_exit_lats) -> float | None:
    """Mean storm exit-latitude drop of a test run against its baseline.

    Positive means the layout pushed storms south. None (undefined, not
    zero) when either run had no exiting storms.
    """
    base = np.asarray(baseline_exit_lats, dtype=np.float64)
    test = np.asarray(test_exit_lats, dtype=np.float64)
    if len(base) == 0 or len(test) == 0:
        return None
    return float(base.mean() - test.mean())


@dataclass
class ModeConfig:
    """Resolved per-session mode state: targets, zone, and generated terrain."""

    mode: str = MODE_FREE
    seed: int = 0
    x_target: tuple[float, float] | None = None
    o_marker: tuple[float, float] | None = None
    hit_radius: float = 3.0
    lgm_zone: np.ndarray | None = None
    nonameland: Nonameland | None = None
    success_coverage: float = 0.7


def build_mode(mode: str, seed: int, nx: int, ny: int,
               solid: np.ndarray | None = None,
               shape_lib: list[dict] | None = None,
               hit_radius: float = 3.0) -> ModeConfig:
    """Construct the full mode state for a session, deterministically."""
    map_data = load_map_data()
    o_marker = (map_data["o_marker"][0] * nx, map_data["o_marker"][1] * ny)
    cfg = ModeConfig(mode=mode, seed=seed, o_marker=o_marker, hit_radius=hit_radius)
    if mode == MODE_ICE_AGE:
        cfg.lgm_zone = scale_polygon_to_grid(np.asarray(map_data["lgm_zone"]), nx, ny)
        cfg.x_target = place_target(seed, nx, ny, solid)
    elif mode == MODE_MOVING_MOUNTAINS:
        lib = shape_lib or load_shape_library()
        cfg.nonameland = generate_nonameland(seed, lib, nx, ny)
        land_solid = None if solid is None else solid
        cfg.x_target = place_target(seed, nx, ny, land_solid)
    elif mode != MODE_FREE:
        raise ValueError(f"unknown mode {mode!r}")
    return cfg


def random_block_layout(seed: int, nx: int, ny: int, count: int = 12) -> list[BlockSpec]:
    """A reproducible scattered block layout for tests and demos.

    Mix of ice/high/low blocks with random centers, sizes, and rotations,
    kept inside the grid.
    """
    rng = np.random.default_rng(np.random.SeedSequence((int(seed), 0xB10C)))
    classes = [ReliefClass.ICE_SHEET, ReliefClass.HIGH_MOUNTAIN, ReliefClass.LOW_MOUNTAIN]
    blocks = []
    for k in range(count):
        relief = classes[int(rng.integers(0, len(classes)))]
        w = float(rng.uniform(0.05, 0.12) * nx)
        h = float(rng.uniform(0.08, 0.18) * ny)
        rot = float(rng.uniform(0.0, math.pi))
        half = 0.5 * math.hypot(w, h)
        cx = float(rng.uniform(half + 1.0, nx - half - 1.0))
        cy = float(rng.uniform(half + 1.0, ny - half - 1.0))
        blocks.append(BlockSpec(relief=relief, center=(cx, cy), footprint=(w, h), rotation=rot))
    return blocks


def lgm_reference_layout(nx: int, ny: int) -> list[BlockSpec]:
    """The bundled glacial-maximum layout: an ice wall spanning the north.

    Ice blocks tile from mid-latitudes to the north edge (the historical
    sheet reached past the top of the map) with high-mountain blocks on the
    western flank.
    """
    blocks = []
    h = 0.41 * ny
    y_c = ny - h / 2
    step = 0.14 * nx
    x = 0.21 * nx
    while x < 0.86 * nx:
        blocks.append(BlockSpec(ReliefClass.ICE_SHEET, (x, y_c), (0.15 * nx, h)))
        x += step
    blocks.append(BlockSpec(ReliefClass.HIGH_MOUNTAIN, (0.16 * nx, 0.52 * ny),
                            (0.06 * nx, 0.30 * ny), rotation=0.2))
    blocks.append(BlockSpec(ReliefClass.HIGH_MOUNTAIN, (0.13 * nx, 0.30 * ny),
                            (0.06 * nx, 0.22 * ny), rotation=0.35))
    return blocks
