"""The first-prototype wind model: obstacle cells push particles away.

Every raised cell emits a radial force proportional to its height, decaying
smoothly to zero at a falloff radius. Self-propelled particles blend an
eastward drift with the accumulated force, which steers them around and
between relief features. Kept alongside the grid solver for comparison: this
model produces no closed vortices or eddies, which is exactly why it was
replaced.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .terrain import HeightField, ObstacleField
from .particles import ParticleSet, SeedingPolicy, _draw_entry_positions


@dataclass(frozen=True)
class RepulseParams:
    """Tuning for the repulsive-force particle model (units: cells per step)."""

    base_speed: float = 0.8
    force_gain: float = 0.004  # per mm of relief height
    falloff_radius: float = 10.0
    max_force: float = 2.4

    def __post_init__(self):
        if self.base_speed <= 0:
            raise ValueError(f"base_speed must be positive, got {self.base_speed}")
        if self.falloff_radius < 1:
            raise ValueError(f"falloff_radius must be >= 1, got {self.falloff_radius}")


def _kernel(d: np.ndarray, radius: float) -> np.ndarray:
    """Smooth falloff (1 - d/R)^2, zero at and beyond the radius."""
    k = np.clip(1.0 - d / radius, 0.0, None)
    return k * k


def repulsive_force_at(pos: tuple[float, float], h: HeightField,
                       p: RepulseParams) -> tuple[float, float]:
    """Total repulsive force at a continuous map position.

    Sums, over raised cells within the falloff radius, a unit vector from
    the cell center toward the position scaled by gain * height * falloff.
    The magnitude is capped at max_force.
    """
    ny, nx = h.shape
    x, y = pos
    r = p.falloff_radius
    j0, j1 = max(0, int(np.floor(y - r))), min(ny, int(np.ceil(y + r)) + 1)
    i0, i1 = max(0, int(np.floor(x - r))), min(nx, int(np.ceil(x + r)) + 1)
    sub = h.height_mm[j0:j1, i0:i1]
    if not sub.any():
        return 0.0, 0.0
    cx, cy = np.meshgrid(np.arange(i0, i1) + 0.5, np.arange(j0, j1) + 0.5)
    dx = x - cx
    dy = y - cy
    d = np.hypot(dx, dy)
    with np.errstate(invalid="ignore", divide="ignore"):
        w = np.where(d > 0, p.force_gain * sub * _kernel(d, r) / d, 0.0)
    fx = float(np.sum(dx * w))
    fy = float(np.sum(dy * w))
    mag = np.hypot(fx, fy)
    if mag > p.max_force:
        fx *= p.max_force / mag
        fy *= p.max_force / mag
    return fx, fy


class RepulseEngine:
    """Grid-cached force field plus the particle steering rules.

    The per-cell force grid is the height field convolved with the radial
    falloff kernel (one convolution per layout change); particles sample it
    bilinearly, which matches the direct sum to interpolation accuracy.
    """

    def __init__(self, h: HeightField, params: RepulseParams):
        self.params = params
        self.height = h
        ny, nx = h.shape
        self.shape = (ny, nx)
        r = int(np.ceil(params.falloff_radius))
        oy, ox = np.mgrid[-r:r + 1, -r:r + 1]
        d = np.hypot(ox, oy)
        with np.errstate(invalid="ignore", divide="ignore"):
            base = np.where(d > 0, params.force_gain * _kernel(d, params.falloff_radius) / d, 0.0)
        kx = ox * base
        ky = oy * base
        self.fx = ndimage.convolve(h.height_mm, kx, mode="constant", cval=0.0)
        self.fy = ndimage.convolve(h.height_mm, ky, mode="constant", cval=0.0)
        mag = np.hypot(self.fx, self.fy)
        over = mag > params.max_force
        scale = np.where(over, params.max_force / np.where(mag > 0, mag, 1.0), 1.0)
        self.fx *= scale
        self.fy *= scale

    def force_at(self, x, y):
        """Bilinear sample of the cached force grid (cell centers at +0.5)."""
        ny, nx = self.shape
        gx = np.clip(np.asarray(x, dtype=np.float64) - 0.5, 0.0, nx - 1.0)
        gy = np.clip(np.asarray(y, dtype=np.float64) - 0.5, 0.0, ny - 1.0)
        x0 = np.minimum(np.floor(gx).astype(np.int64), nx - 2)
        y0 = np.minimum(np.floor(gy).astype(np.int64), ny - 2)
        fx_ = gx - x0
        fy_ = gy - y0
        out = []
        for f in (self.fx, self.fy):
            out.append(f[y0, x0] * (1 - fx_) * (1 - fy_) + f[y0, x0 + 1] * fx_ * (1 - fy_)
                       + f[y0 + 1, x0] * (1 - fx_) * fy_ + f[y0 + 1, x0 + 1] * fx_ * fy_)
        return out[0], out[1]

    def velocity_at(self, x, y):
        """Steady steering velocity (cells/step): clamped drift plus force.

        This is the blend's fixed point, so it doubles as the engine's probe
        for metrics; it is constant in time for a fixed height field.
        """
        fx, fy = self.force_at(x, y)
        return _clamp_speed(fx + self.params.base_speed, np.asarray(fy, dtype=np.float64),
                            self.params.base_speed)


def _clamp_speed(vx, vy, base: float):
    """Keep particle speed within [0.5, 2] * base_speed."""
    speed = np.hypot(vx, vy)
    lo, hi = 0.5 * base, 2.0 * base
    safe = np.where(speed > 0, speed, 1.0)
    scale = np.where(speed > hi, hi / safe, np.where(speed < lo, lo / safe, 1.0))
    # A dead-stopped particle restarts eastward at the floor speed.
    vx = np.where(speed == 0, lo, vx * scale)
    vy = np.where(speed == 0, 0.0, vy * scale)
    return vx, vy


def step_particle_repulsive(pos: np.ndarray, vel: np.ndarray, engine: RepulseEngine):
    """Advance particles one step under drift + repulsion with inertia.

    velocity <- 0.9 * old + 0.1 * (eastward drift + force), then the speed
    clamp; position advances by the new velocity (dt = one step). pos and
    vel are (n, 2) arrays; returns new (pos, vel).
    """
    p = engine.params
    pos = np.asarray(pos, dtype=np.float64)
    vel = np.asarray(vel, dtype=np.float64)
    fx, fy = engine.force_at(pos[:, 0], pos[:, 1])
    nvx = 0.9 * vel[:, 0] + 0.1 * (p.base_speed + fx)
    nvy = 0.9 * vel[:, 1] + 0.1 * fy
    nvx, nvy = _clamp_speed(nvx, nvy, p.base_speed)
    ny, nx = engine.shape
    new_x = pos[:, 0] + nvx
    new_y = np.clip(pos[:, 1] + nvy, 1e-6, ny - 1e-6)
    return np.column_stack([new_x, new_y]), np.column_stack([nvx, nvy])


def advance_particle_set(pset: ParticleSet, vel: np.ndarray, engine: RepulseEngine,
                         policy: SeedingPolicy, obs: ObstacleField):
    """Harness-side frame update for a whole particle set on this engine.

    Same respawn contract as the grid engine: east exit or age-out redraws
    the particle from the seeding policy.
    """
    ny, nx = engine.shape
    if len(pset) == 0:
        return pset, vel
    new_pos, new_vel = step_particle_repulsive(pset.pos, vel, engine)
    pset.pos = new_pos
    pset.age += 1
    respawn = (new_pos[:, 0] >= nx) | (pset.age > policy.max_age)
    n_re = int(respawn.sum())
    if n_re:
        west = pset.rng.uniform(size=n_re) < policy.west_fraction
        fresh = _draw_entry_positions(pset.rng, int(west.sum()),
                                      n_re - int(west.sum()), obs)
        pset.pos[respawn] = fresh
        pset.age[respawn] = 0
        new_vel[respawn] = 0.0
    return pset, new_vel
