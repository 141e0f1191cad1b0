"""Raster export: trail texture, obstacle outlines, and map markers to PNG.

White trails on black, in the exhibit's projected style; overlays use the
tundra/gold palette. Output pixels are a pure function of the simulation
state, so frame checksums are reproducible.
"""

from __future__ import annotations

import base64
import io
import json
from pathlib import Path

import numpy as np
from PIL import Image
from scipy import ndimage

from . import terrain
from .scenario import layout_to_blocks

GOLD = (212, 175, 55)
ICE_BLUE = (140, 190, 220)
STORM_CYAN = (120, 220, 230)
LAND_TAN = (150, 125, 70)
SOLID_FILL = (70, 60, 60)


def _put(arr: np.ndarray, xs, ys, color) -> None:
    ny, nx = arr.shape[:2]
    xs = np.asarray(xs).astype(np.int64)
    ys = np.asarray(ys).astype(np.int64)
    ok = (xs >= 0) & (xs < nx) & (ys >= 0) & (ys < ny)
    arr[ys[ok], xs[ok]] = color


def _polyline(arr: np.ndarray, pts: np.ndarray, color, closed=True) -> None:
    pts = np.asarray(pts, dtype=np.float64)
    if closed:
        pts = np.vstack([pts, pts[:1]])
    for a, b in zip(pts[:-1], pts[1:]):
        n = max(2, int(np.hypot(*(b - a)) * 2) + 1)
        t = np.linspace(0.0, 1.0, n)
        _put(arr, a[0] + (b[0] - a[0]) * t, a[1] + (b[1] - a[1]) * t, color)


def _marker_x(arr: np.ndarray, x: float, y: float, color, size=4) -> None:
    t = np.linspace(-size, size, 2 * size + 1)
    _put(arr, x + t, y + t, color)
    _put(arr, x + t, y - t, color)


def _marker_o(arr: np.ndarray, x: float, y: float, color, radius=3.0) -> None:
    phi = np.linspace(0.0, 2 * np.pi, 48)
    _put(arr, x + radius * np.cos(phi), y + radius * np.sin(phi), color)


def _marker_storm(arr: np.ndarray, x: float, y: float, color, size=2) -> None:
    t = np.arange(-size, size + 1)
    _put(arr, x + t, np.full_like(t, y, dtype=np.float64), color)
    _put(arr, np.full_like(t, x, dtype=np.float64), y + t, color)


def compose_frame(trail_intensity: np.ndarray, solid: np.ndarray | None = None,
                  targets: dict | None = None, storms=None,
                  overlays: bool = True) -> np.ndarray:
    """Build the (ny, nx, 3) uint8 image in map orientation (row 0 = south)."""
    ny, nx = trail_intensity.shape
    level = (np.clip(trail_intensity, 0.0, 1.0) * 255).astype(np.uint8)
    arr = np.repeat(level[:, :, None], 3, axis=2)
    if solid is not None and solid.any():
        arr[solid] = SOLID_FILL
        outline = solid & ~ndimage.binary_erosion(solid, border_value=1)
        arr[outline] = GOLD
    if overlays and targets:
        if targets.get("lgm_zone"):
            _polyline(arr, np.asarray(targets["lgm_zone"]), ICE_BLUE)
        if targets.get("outline"):
            _polyline(arr, np.asarray(targets["outline"]), LAND_TAN)
        if targets.get("o"):
            _marker_o(arr, targets["o"][0], targets["o"][1], (235, 235, 235))
        if targets.get("x"):
            _marker_x(arr, targets["x"][0], targets["x"][1], GOLD)
    if overlays and storms is not None:
        for s in storms:
            color = GOLD if (len(s) > 2 and s[2]) else STORM_CYAN
            _marker_storm(arr, s[0], s[1], color)
    return arr


def _to_png(arr: np.ndarray, path=None, scale: int = 1) -> bytes:
    img = arr[::-1]  # row 0 is south; images put north on top
    if scale > 1:
        img = np.repeat(np.repeat(img, scale, axis=0), scale, axis=1)
    buf = io.BytesIO()
    Image.fromarray(img, mode="RGB").save(buf, format="PNG")
    data = buf.getvalue()
    if path is not None:
        Path(path).write_bytes(data)
    return data


def export_frame(sim, path=None, overlays: bool = True, scale: int = 1) -> bytes:
    """Render the live session's current frame; writes PNG when a path is given."""
    snap_targets = None
    storms = None
    if overlays:
        targets: dict = {}
        mc = sim.mode_cfg
        if mc.lgm_zone is not None:
            targets["lgm_zone"] = mc.lgm_zone.tolist()
        if mc.nonameland is not None:
            targets["outline"] = mc.nonameland.outline.tolist()
        if mc.o_marker is not None:
            targets["o"] = list(mc.o_marker)
        if mc.x_target is not None:
            targets["x"] = list(mc.x_target)
        snap_targets = targets
        storms = [[float(x), float(y), bool(h)]
                  for (x, y), h, a in zip(sim.storms.pos, sim.storms.hit,
                                          sim.storms.active) if a]
    arr = compose_frame(sim.trail.intensity, sim.obstacles.solid, snap_targets,
                        storms, overlays=overlays)
    return _to_png(arr, path, scale)


def render_snapshot(snapshot: dict | str, path=None, scale: int = 1,
                    thresholds: terrain.ClassThresholds | None = None) -> bytes:
    """Render a saved protocol frame message (dict or JSON file path) to PNG."""
    if not isinstance(snapshot, dict):
        snapshot = json.loads(Path(snapshot).read_text())
    if snapshot.get("t") != "frame":
        raise ValueError("snapshot is not a frame message")
    nx = snapshot["grid"]["nx"]
    ny = snapshot["grid"]["ny"]
    trail = np.frombuffer(base64.b64decode(snapshot["trail_b64"]),
                          dtype=np.uint8).reshape(ny, nx) / 255.0
    targets = snapshot.get("targets", {})
    solid = None
    if targets.get("blocks"):
        blocks = [b.build(nx, ny) for b in layout_to_blocks({"blocks": targets["blocks"]})]
        height = terrain.rasterize_blocks(blocks, nx, ny)
        solid = terrain.obstacles_from_height(
            height, thresholds or terrain.ClassThresholds()).solid
    arr = compose_frame(trail, solid, targets, snapshot.get("storms"))
    return _to_png(arr, path, scale)
