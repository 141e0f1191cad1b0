"""Terrain sensing: depth frames and virtual block layouts -> height and obstacle fields.

Grid convention used across the package: 2-D arrays are indexed [y, x] with
shape (ny, nx); row y=0 is the SOUTH edge of the map. Continuous map
coordinates are measured in cell units, so the center of cell (x, y) sits at
(x + 0.5, y + 0.5).
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from enum import IntEnum

import numpy as np
from scipy import ndimage

log = logging.getLogger(__name__)

DEPTH_MAX = 65535


class TerrainError(ValueError):
    """Raised for malformed frames or inconsistent calibration/thresholds."""


class ReliefClass(IntEnum):
    """Relief category of a cell. Order matters: higher index = taller relief."""

    EMPTY = 0
    LOW_MOUNTAIN = 1
    HIGH_MOUNTAIN = 2
    ICE_SHEET = 3


# Canonical block heights (mm) per class.  Separable under +-5 mm sensor noise.
DEFAULT_CLASS_HEIGHTS_MM: dict[ReliefClass, float] = {
    ReliefClass.LOW_MOUNTAIN: 30.0,
    ReliefClass.HIGH_MOUNTAIN: 90.0,
    ReliefClass.ICE_SHEET: 150.0,
}


@dataclass(frozen=True)
class ClassThresholds:
    """Height thresholds (mm) separating relief classes.

    Intervals are half-open with the boundary assigned to the higher class:
    [0, low) empty, [low, high) low mountain, [high, ice) high mountain,
    [ice, inf) ice sheet.
    """

    low_mm: float = 20.0
    high_mm: float = 60.0
    ice_mm: float = 120.0

    def __post_init__(self):
        if not (0 < self.low_mm < self.high_mm < self.ice_mm):
            raise TerrainError(
                f"thresholds must satisfy 0 < low < high < ice, got "
                f"({self.low_mm}, {self.high_mm}, {self.ice_mm})"
            )


@dataclass(frozen=True)
class Calibration:
    """Depth window and denoising settings for frame ingestion.

    Depths outside [near_mm, far_mm] are treated as the empty table so that
    hands or heads above the working volume never register as terrain.
    """

    near_mm: float = 700.0
    far_mm: float = 1000.0
    table_mm: float = 1000.0
    denoise_radius: int = 1

    def __post_init__(self):
        if not (self.near_mm < self.table_mm <= self.far_mm):
            raise TerrainError(
                f"require near_mm < table_mm <= far_mm, got "
                f"({self.near_mm}, {self.table_mm}, {self.far_mm})"
            )
        if self.denoise_radius < 0:
            raise TerrainError(f"denoise_radius must be >= 0, got {self.denoise_radius}")


@dataclass
class DepthFrame:
    """A single 16-bit depth image, millimeters from the camera (smaller = taller)."""

    width: int
    height: int
    values: np.ndarray  # shape (height, width), uint16

    def __post_init__(self):
        self.values = np.asarray(self.values)
        if self.values.shape != (self.height, self.width):
            raise TerrainError(
                f"depth frame header says {self.width}x{self.height} but data has "
                f"shape {self.values.shape[::-1]}"
            )
        if self.values.dtype != np.uint16:
            if np.any(self.values < 0) or np.any(self.values > DEPTH_MAX):
                raise TerrainError("depth values out of range [0, 65535]")
            self.values = self.values.astype(np.uint16)


@dataclass
class HeightField:
    """Per-cell relief height in millimeters above the table (0 = bare table)."""

    height_mm: np.ndarray  # shape (ny, nx), float64, >= 0

    def __post_init__(self):
        self.height_mm = np.asarray(self.height_mm, dtype=np.float64)
        if self.height_mm.ndim != 2:
            raise TerrainError("height field must be 2-D")

    @property
    def shape(self) -> tuple[int, int]:
        return self.height_mm.shape

    @classmethod
    def zeros(cls, nx: int, ny: int) -> "HeightField":
        return cls(np.zeros((ny, nx)))


@dataclass(frozen=True)
class BlockSpec:
    """A virtual relief block: a rotated rectangle stamped at a class height.

    center is in map coordinates (cell units), footprint (width, height) in
    cells, rotation in radians counterclockwise.
    """

    relief: ReliefClass
    center: tuple[float, float]
    footprint: tuple[float, float]
    rotation: float = 0.0

    def __post_init__(self):
        if self.relief == ReliefClass.EMPTY:
            raise TerrainError("a block cannot have the empty relief class")
        if self.footprint[0] <= 0 or self.footprint[1] <= 0:
            raise TerrainError(f"block footprint must be positive, got {self.footprint}")


@dataclass
class ObstacleField:
    """What the solver sees: per-cell blockage fraction and drag coefficient.

    blockage is exactly 0 or 1 (1 = solid wall); drag (1/s) is positive only
    on porous low-mountain cells.
    """

    blockage: np.ndarray  # (ny, nx), float64 in {0, 1}
    drag: np.ndarray  # (ny, nx), float64 >= 0

    def __post_init__(self):
        self.blockage = np.asarray(self.blockage, dtype=np.float64)
        self.drag = np.asarray(self.drag, dtype=np.float64)
        if self.blockage.shape != self.drag.shape:
            raise TerrainError("blockage and drag shapes differ")

    @property
    def shape(self) -> tuple[int, int]:
        return self.blockage.shape

    @property
    def solid(self) -> np.ndarray:
        """Boolean mask of solid cells."""
        return self.blockage >= 0.5

    @classmethod
    def empty(cls, nx: int, ny: int) -> "ObstacleField":
        return cls(np.zeros((ny, nx)), np.zeros((ny, nx)))

    def digest(self) -> str:
        """Short content hash; changes whenever the layout changes."""
        import hashlib

        h = hashlib.sha1()
        h.update(self.blockage.tobytes())
        h.update(self.drag.tobytes())
        return h.hexdigest()[:16]


def _median_denoise(height: np.ndarray, radius: int) -> np.ndarray:
    # Median, not Gaussian: preserves block edges. Edges use reflected padding.
    if radius <= 0:
        return height
    return ndimage.median_filter(height, size=2 * radius + 1, mode="reflect")


def resample_area(values: np.ndarray, nx: int, ny: int) -> np.ndarray:
    """Resample a 2-D field to (ny, nx) by exact area averaging.

    Each target cell takes the mean of the source region it covers, with
    fractional source cells weighted by overlap. Exact for any size ratio.
    """
    src = np.asarray(values, dtype=np.float64)
    sy, sx = src.shape
    if (sy, sx) == (ny, nx):
        return src.copy()

    def axis_weights(n_src: int, n_dst: int) -> np.ndarray:
        # Sparse-ish overlap matrix (n_dst, n_src) of area fractions.
        w = np.zeros((n_dst, n_src))
        scale = n_src / n_dst
        for i in range(n_dst):
            a, b = i * scale, (i + 1) * scale
            j0, j1 = int(math.floor(a)), int(math.ceil(b))
            for j in range(j0, min(j1, n_src)):
                w[i, j] = min(b, j + 1) - max(a, j)
        return w / scale

    wy = axis_weights(sy, ny)
    wx = axis_weights(sx, nx)
    return wy @ src @ wx.T


def ingest_depth_frame(frame: DepthFrame, cal: Calibration, nx: int | None = None,
                       ny: int | None = None) -> HeightField:
    """Convert a raw depth frame into a calibrated, denoised height field.

    Depths outside the [near_mm, far_mm] window (hovering hands, dropped
    pixels) are clamped to the empty-table depth before conversion, so they
    read as height 0. If the frame resolution differs from the requested grid
    the heights are resampled by area averaging.
    """
    depth = frame.values.astype(np.float64)
    outside = (depth < cal.near_mm) | (depth > cal.far_mm)
    depth[outside] = cal.table_mm
    height = np.maximum(cal.table_mm - depth, 0.0)
    height = _median_denoise(height, cal.denoise_radius)
    if nx is not None and ny is not None and (frame.height, frame.width) != (ny, nx):
        height = resample_area(height, nx, ny)
    return HeightField(height)


def classify_relief(height_mm, thresholds: ClassThresholds):
    """Classify height(s) into relief classes. Accepts scalars or arrays.

    Monotone step function; boundaries belong to the higher class.
    """
    h = np.asarray(height_mm)
    idx = (
        (h >= thresholds.low_mm).astype(np.int8)
        + (h >= thresholds.high_mm)
        + (h >= thresholds.ice_mm)
    )
    if h.ndim == 0:
        return ReliefClass(int(idx))
    return idx


def rasterize_blocks(blocks: list[BlockSpec], nx: int, ny: int,
                     class_heights: dict[ReliefClass, float] | None = None) -> HeightField:
    """Stamp rotated rectangular blocks onto an empty table.

    Overlaps combine by max, so the result is independent of block order.
    Blocks reaching outside the grid are clamped (the out-of-grid part is
    dropped) with a warning.
    """
    heights = class_heights or DEFAULT_CLASS_HEIGHTS_MM
    field_mm = np.zeros((ny, nx))
    cx_grid, cy_grid = np.meshgrid(np.arange(nx) + 0.5, np.arange(ny) + 0.5)
    for b in blocks:
        bx, by = b.center
        w, h = b.footprint
        c0, s0 = math.cos(b.rotation), math.sin(b.rotation)
        corners_x = [bx + c0 * sx * w / 2 - s0 * sy * h / 2 for sx in (-1, 1) for sy in (-1, 1)]
        corners_y = [by + s0 * sx * w / 2 + c0 * sy * h / 2 for sx in (-1, 1) for sy in (-1, 1)]
        if (min(corners_x) < 0 or max(corners_x) > nx
                or min(corners_y) < 0 or max(corners_y) > ny):
            log.warning("block %s at (%.1f, %.1f) extends outside the %dx%d grid; clamped",
                        b.relief.name, bx, by, nx, ny)
        half_diag = 0.5 * math.hypot(w, h)
        # Bounding box of the rotated rectangle, clamped to the grid.
        x0 = max(0, int(math.floor(bx - half_diag)))
        x1 = min(nx, int(math.ceil(bx + half_diag)) + 1)
        y0 = max(0, int(math.floor(by - half_diag)))
        y1 = min(ny, int(math.ceil(by + half_diag)) + 1)
        if x0 >= x1 or y0 >= y1:
            continue
        dx = cx_grid[y0:y1, x0:x1] - bx
        dy = cy_grid[y0:y1, x0:x1] - by
        c, s = math.cos(-b.rotation), math.sin(-b.rotation)
        local_x = c * dx - s * dy
        local_y = s * dx + c * dy
        inside = (np.abs(local_x) <= w / 2) & (np.abs(local_y) <= h / 2)
        block_h = heights[b.relief]
        region = field_mm[y0:y1, x0:x1]
        region[inside] = np.maximum(region[inside], block_h)
    return HeightField(field_mm)


def read_depth_pgm(path) -> DepthFrame:
    """Read a binary 16-bit PGM (P5, maxval 65535, big-endian samples)."""
    with open(path, "rb") as f:
        data = f.read()
    # Header: magic, width, height, maxval as whitespace-separated tokens,
    # with '#' comments allowed between them.
    tokens: list[bytes] = []
    pos = 0
    while len(tokens) < 4:
        if pos >= len(data):
            raise TerrainError(f"{path}: truncated PGM header")
        ch = data[pos:pos + 1]
        if ch.isspace():
            pos += 1
        elif ch == b"#":
            pos = data.index(b"\n", pos) + 1
        else:
            end = pos
            while end < len(data) and not data[end:end + 1].isspace():
                end += 1
            tokens.append(data[pos:end])
            pos = end
    if tokens[0] != b"P5":
        raise TerrainError(f"{path}: not a binary PGM (magic {tokens[0]!r})")
    width, height, maxval = int(tokens[1]), int(tokens[2]), int(tokens[3])
    if maxval != DEPTH_MAX:
        raise TerrainError(f"{path}: expected maxval 65535, got {maxval}")
    pos += 1  # single whitespace byte after maxval
    raw = data[pos:pos + width * height * 2]
    if len(raw) != width * height * 2:
        raise TerrainError(f"{path}: expected {width * height * 2} sample bytes, "
                           f"got {len(raw)}")
    values = np.frombuffer(raw, dtype=">u2").reshape(height, width).astype(np.uint16)
    return DepthFrame(width=width, height=height, values=values)


def write_depth_pgm(path, frame: DepthFrame) -> None:
    """Write a DepthFrame as binary 16-bit PGM (big-endian samples)."""
    with open(path, "wb") as f:
        f.write(f"P5\n{frame.width} {frame.height}\n{DEPTH_MAX}\n".encode())
        f.write(frame.values.astype(">u2").tobytes())


def obstacles_from_height(h: HeightField, thresholds: ClassThresholds,
                          drag_low: float = 0.8) -> ObstacleField:
    """Derive the solver's obstacle field from relief heights.

    High mountains and ice sheets become solid walls (blockage 1); low
    mountains stay passable but exert drag; empty cells are free air.
    """
    classes = classify_relief(h.height_mm, thresholds)
    blockage = (classes >= ReliefClass.HIGH_MOUNTAIN).astype(np.float64)
    drag = np.where(classes == ReliefClass.LOW_MOUNTAIN, drag_low, 0.0)
    return ObstacleField(blockage, drag)
