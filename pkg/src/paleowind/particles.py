"""Passive wind tracers, storm icons, and the fading trail raster.

Tracers carry no dynamics of their own: each frame they are advected through
whichever engine's velocity sampler is active, deposit intensity into the
trail field, and respawn when they leave the map, stagnate, or age out.
Everything is driven by one seeded RNG per tracer set, so a (seed, scenario)
pair reproduces every trajectory and hit event exactly.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .terrain import ObstacleField

log = logging.getLogger(__name__)

# West-edge band storms spawn into (fractions of domain height).
STORM_BAND = (0.62, 0.92)
WEST_BAND_WIDTH = 1.0  # cells


class SeedingError(ValueError):
    pass


@dataclass(frozen=True)
class SeedingPolicy:
    """How many tracers exist and where they (re)enter the map."""

    n_particles: int = 5000
    west_fraction: float = 0.7
    n_storms: int = 4
    storm_spawn_period: int = 150
    seed: int = 0
    max_age: int = 2500
    stagnation_speed_frac: float = 0.05  # of the base inflow speed
    stagnation_window: int = 60

    def __post_init__(self):
        if not (0.0 <= self.west_fraction <= 1.0):
            raise SeedingError(f"west_fraction must be in [0,1], got {self.west_fraction}")
        if self.n_particles < 0:
            raise SeedingError(f"n_particles must be >= 0, got {self.n_particles}")
        if self.n_storms < 0:
            raise SeedingError(f"n_storms must be >= 0, got {self.n_storms}")
        if self.storm_spawn_period < 1:
            raise SeedingError("storm_spawn_period must be >= 1")


@dataclass
class ParticleSet:
    """Positions in map coords plus bookkeeping; fixed slot count."""

    pos: np.ndarray  # (n, 2) float64
    age: np.ndarray  # (n,) int64
    ids: np.ndarray  # (n,) int64, stable
    stagnant: np.ndarray  # (n,) int64 consecutive slow steps
    rng: np.random.Generator

    def __len__(self) -> int:
        return len(self.ids)


@dataclass
class StormSet:
    """Storm icons: slot-based, spawned on a cadence, tracked against a target."""

    pos: np.ndarray  # (m, 2)
    active: np.ndarray  # (m,) bool
    hit: np.ndarray  # (m,) bool, monotone while active
    spawn_step: np.ndarray  # (m,) int64
    ids: np.ndarray  # (m,) int64
    rng: np.random.Generator

    def __len__(self) -> int:
        return len(self.ids)


class TrailField:
    """Per-cell trail intensity in [0, 1]; the renderer's white-on-black texture."""

    def __init__(self, nx: int, ny: int):
        self.intensity = np.zeros((ny, nx))

    @property
    def shape(self) -> tuple[int, int]:
        return self.intensity.shape


def _draw_west_positions(rng: np.random.Generator, n: int, fluid_west_rows: np.ndarray,
                         band: tuple[float, float] | None = None,
                         ny: int | None = None) -> np.ndarray:
    rows = fluid_west_rows
    if band is not None and ny is not None:
        lo, hi = band[0] * ny, band[1] * ny
        banded = rows[(rows + 0.5 >= lo) & (rows + 0.5 <= hi)]
        if len(banded):
            rows = banded
    pick = rng.integers(0, len(rows), size=n)
    x = rng.uniform(0.0, WEST_BAND_WIDTH, size=n)
    y = rows[pick] + rng.uniform(0.0, 1.0, size=n)
    return np.column_stack([x, y])


def _draw_fluid_positions(rng: np.random.Generator, n: int, fluid_cells: np.ndarray) -> np.ndarray:
    pick = rng.integers(0, len(fluid_cells), size=n)
    cells = fluid_cells[pick]  # (n, 2) as (j, i)
    offs = rng.uniform(0.0, 1.0, size=(n, 2))
    return np.column_stack([cells[:, 1] + offs[:, 0], cells[:, 0] + offs[:, 1]])


def _draw_entry_positions(rng: np.random.Generator, n_west: int, n_rand: int,
                          obs: ObstacleField) -> np.ndarray:
    """West-band draws plus dispersed draws, skipping solid cells.

    When the whole west column is walled off, the west share falls back to
    dispersion; particles must never start inside relief.
    """
    fluid_cells = np.argwhere(~obs.solid)
    fluid_west = np.flatnonzero(~obs.solid[:, 0])
    if len(fluid_west) == 0:
        return _draw_fluid_positions(rng, n_west + n_rand, fluid_cells)
    pos_west = _draw_west_positions(rng, n_west, fluid_west)
    pos_rand = _draw_fluid_positions(rng, n_rand, fluid_cells)
    return np.vstack([pos_west, pos_rand])


def seed_particles(policy: SeedingPolicy, obs: ObstacleField) -> ParticleSet:
    """Create the particle set: a west-edge share plus an even dispersion.

    round(west_fraction * n) particles start in the west-edge band, the rest
    uniformly over fluid cells. Deterministic for a fixed policy seed.
    """
    rng = np.random.default_rng(np.random.SeedSequence(policy.seed))
    n = policy.n_particles
    if not (~obs.solid).any():
        log.warning("all cells are solid; seeding an empty particle set")
        empty = np.zeros((0,), dtype=np.int64)
        return ParticleSet(np.zeros((0, 2)), empty, empty, empty.copy(), rng)
    n_west = int(round(policy.west_fraction * n))
    pos = _draw_entry_positions(rng, n_west, n - n_west, obs)
    zeros = np.zeros(n, dtype=np.int64)
    return ParticleSet(pos=pos, age=zeros.copy(), ids=np.arange(n, dtype=np.int64),
                       stagnant=zeros.copy(), rng=rng)


def _push_out_of_solid(old: np.ndarray, new: np.ndarray, obs: ObstacleField) -> np.ndarray:
    """Move points that landed in solid cells back along their segment.

    Bisects between the (fluid) start and the offending end point; falls back
    to the start position if the whole segment is unusable.
    """
    ny, nx = obs.shape

    def in_solid(p):
        ci = np.clip(p[:, 0].astype(np.int64), 0, nx - 1)
        cj = np.clip(p[:, 1].astype(np.int64), 0, ny - 1)
        return obs.solid[cj, ci]

    bad = in_solid(new)
    if not bad.any():
        return new
    lo = old[bad].copy()
    hi = new[bad].copy()
    for _ in range(20):
        mid = 0.5 * (lo + hi)
        mid_solid = in_solid(mid)
        hi[mid_solid] = mid[mid_solid]
        lo[~mid_solid] = mid[~mid_solid]
    still = in_solid(lo)
    lo[still] = old[bad][still]
    out = new.copy()
    out[bad] = lo
    return out


def _integrate_rk2(pos: np.ndarray, probe_fn, dt: float, obs: ObstacleField):
    """Midpoint step through the sampled velocity field; returns (new_pos, speed)."""
    ny, nx = obs.shape
    x, y = pos[:, 0], pos[:, 1]
    u1, v1 = probe_fn(x, y)
    mx = x + 0.5 * dt * u1
    my = y + 0.5 * dt * v1
    u2, v2 = probe_fn(mx, my)
    new = np.column_stack([x + dt * u2, y + dt * v2])
    new[:, 1] = np.clip(new[:, 1], 1e-6, ny - 1e-6)
    new[:, 0] = np.clip(new[:, 0], 0.0, nx + 1.0)
    new = _push_out_of_solid(pos, new, obs)
    speed = np.hypot(u2, v2)
    return new, speed


def advect(pset: ParticleSet, probe_fn, dt: float, policy: SeedingPolicy,
           obs: ObstacleField, inflow_speed_internal: float) -> ParticleSet:
    """Advance all particles one frame and respawn the ones that are done.

    Respawn triggers: crossing the east edge, exceeding max_age, or moving
    slower than the stagnation threshold for a full window of steps.
    """
    if len(pset) == 0:
        return pset
    ny, nx = obs.shape
    new_pos, speed = _integrate_rk2(pset.pos, probe_fn, dt, obs)
    pset.pos = new_pos
    pset.age += 1
    slow = speed < policy.stagnation_speed_frac * inflow_speed_internal
    pset.stagnant = np.where(slow, pset.stagnant + 1, 0)

    respawn = (new_pos[:, 0] >= nx) | (pset.age > policy.max_age) \
        | (pset.stagnant >= policy.stagnation_window)
    n_re = int(respawn.sum())
    if n_re:
        west = pset.rng.uniform(size=n_re) < policy.west_fraction
        fresh = _draw_entry_positions(pset.rng, int(west.sum()),
                                      n_re - int(west.sum()), obs)
        pset.pos[respawn] = fresh
        pset.age[respawn] = 0
        pset.stagnant[respawn] = 0
    return pset


def deposit_and_fade(trail: TrailField, pset: ParticleSet, alpha: float = 0.1,
                     deposit: float = 0.3) -> TrailField:
    """Fade the whole trail by alpha, then stamp each particle's cell.

    Matches the exhibit's translucent-black-wash rendering: after k empty
    frames an intensity decays to (1-alpha)^k.
    """
    if not (0.0 < alpha <= 1.0):
        raise ValueError(f"alpha must be in (0, 1], got {alpha}")
    trail.intensity *= (1.0 - alpha)
    if len(pset):
        ny, nx = trail.shape
        ci = np.clip(pset.pos[:, 0].astype(np.int64), 0, nx - 1)
        cj = np.clip(pset.pos[:, 1].astype(np.int64), 0, ny - 1)
        np.add.at(trail.intensity, (cj, ci), deposit)
        np.clip(trail.intensity, 0.0, 1.0, out=trail.intensity)
    return trail


def make_storm_set(policy: SeedingPolicy) -> StormSet:
    m = policy.n_storms
    return StormSet(
        pos=np.zeros((m, 2)),
        active=np.zeros(m, dtype=bool),
        hit=np.zeros(m, dtype=bool),
        spawn_step=np.full(m, -1, dtype=np.int64),
        ids=np.arange(m, dtype=np.int64),
        rng=np.random.default_rng(np.random.SeedSequence((policy.seed, 0x5702))),
    )


def spawn_and_track_storms(storms: StormSet, policy: SeedingPolicy,
                           target: tuple[float, float] | None, hit_radius: float,
                           probe_fn, dt: float, obs: ObstacleField, step_idx: int,
                           grid=None, on_event=None) -> list[dict]:
    """Spawn storms on the period cadence, advect them, and score target hits.

    One storm enters from the west edge's northern band every
    storm_spawn_period steps (filling free slots up to n_storms). A storm
    that reaches the target within hit_radius emits a hit event; hit or
    east-exited storms free their slot for respawn. Exit events carry the
    exit latitude when a grid is supplied.
    """
    events: list[dict] = []
    ny, nx = obs.shape

    if len(storms) and step_idx % policy.storm_spawn_period == 0:
        free = np.flatnonzero(~storms.active)
        if len(free):
            slot = int(free[0])
            fluid_west = np.flatnonzero(~obs.solid[:, 0])
            if len(fluid_west):
                p = _draw_west_positions(storms.rng, 1, fluid_west, band=STORM_BAND, ny=ny)
                storms.pos[slot] = p[0]
                storms.active[slot] = True
                storms.hit[slot] = False
                storms.spawn_step[slot] = step_idx
                events.append({"type": "storm_spawn", "step": step_idx, "id": slot,
                               "x": float(p[0, 0]), "y": float(p[0, 1])})

    act = np.flatnonzero(storms.active)
    if len(act) == 0:
        return events
    new_pos, _ = _integrate_rk2(storms.pos[act], probe_fn, dt, obs)
    storms.pos[act] = new_pos

    if target is not None and hit_radius > 0:
        d = np.hypot(new_pos[:, 0] - target[0], new_pos[:, 1] - target[1])
        hits = act[d <= hit_radius]
        for slot in hits:
            storms.hit[slot] = True
            storms.active[slot] = False
            events.append({"type": "storm_hit", "step": step_idx, "id": int(slot),
                           "x": float(storms.pos[slot, 0]), "y": float(storms.pos[slot, 1])})

    act = np.flatnonzero(storms.active)
    exited = act[storms.pos[act, 0] >= nx]
    for slot in exited:
        storms.active[slot] = False
        ev = {"type": "storm_exit", "step": step_idx, "id": int(slot),
              "y": float(storms.pos[slot, 1])}
        if grid is not None:
            ev["lat"] = float(grid.lat_of_y(storms.pos[slot, 1]))
        events.append(ev)

    if on_event is not None:
        for ev in events:
            on_event(ev)
    return events
