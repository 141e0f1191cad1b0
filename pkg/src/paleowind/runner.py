"""Headless run loop: terrain -> engine step -> tracers -> trail -> metrics.

`Simulation` owns one session (either engine) and is driven frame by frame;
`run_scenario` executes a configured number of frames and writes the
metrics CSV, event log, optional PNG frames, and a JSON summary. Everything
downstream of (config, seed) is deterministic, including file bytes.
"""

from __future__ import annotations

import base64
import csv
import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import modes, particles, repulse, terrain, windsim
from .scenario import ScenarioConfig, blocks_to_layout

log = logging.getLogger(__name__)

METRICS_COLUMNS = ["step", "mean_speed_ms", "max_divergence", "storm_hits",
                   "mean_storm_lat", "lgm_coverage"]


def _fmt(x: float) -> str:
    return format(x, ".9g")


class Simulation:
    """One live session: terrain, engine state, tracers, trail, mode, metrics."""

    def __init__(self, cfg: ScenarioConfig):
        self.cfg = cfg
        self.grid = cfg.grid.build()
        self.params = cfg.physics.build()
        self.rparams = cfg.repulse.build()
        self.policy = cfg.seeding.build(cfg.seed)
        self.thresholds = cfg.thresholds.build()
        self.calibration = cfg.calibration.build()
        self.engine_name = cfg.engine
        self.step_idx = 0
        self.events: list[dict] = []
        self.exit_lats: list[float] = []
        self.hits_total = 0
        self.nan_resets = 0

        self._depth_paths: list[Path] = []
        if cfg.depth_frames is not None:
            self._depth_paths = sorted(Path(cfg.depth_frames).glob("*.pgm"))
            if not self._depth_paths:
                raise FileNotFoundError(
                    f"no .pgm depth frames found in {cfg.depth_frames}")

        self.user_blocks = cfg.build_blocks()
        self.mode_cfg = modes.ModeConfig()
        self._shape_lib = None
        self.set_mode(cfg.mode.mode, cfg.seed, initial=True)

        self.tracers = particles.seed_particles(self.policy, self.obstacles)
        self.tracer_vel = np.zeros_like(self.tracers.pos)
        self.storms = particles.make_storm_set(self.policy)
        self.trail = particles.TrailField(self.grid.nx, self.grid.ny)

    # -- terrain / mode ------------------------------------------------

    def _user_height(self) -> terrain.HeightField:
        if self._depth_paths:
            idx = min(self.step_idx, len(self._depth_paths) - 1)
            frame = terrain.read_depth_pgm(self._depth_paths[idx])
            return terrain.ingest_depth_frame(frame, self.calibration,
                                              self.grid.nx, self.grid.ny)
        return terrain.rasterize_blocks(self.user_blocks, self.grid.nx, self.grid.ny)

    def _rebuild_terrain(self):
        height = self._user_height()
        if self.mode_cfg.nonameland is not None:
            height = terrain.HeightField(
                np.maximum(height.height_mm, self.mode_cfg.nonameland.height.height_mm))
        self.height = height
        self.obstacles = terrain.obstacles_from_height(
            height, self.thresholds, drag_low=self.params.drag_low)
        self.obstacle_digest = self.obstacles.digest()
        if self.engine_name == "cfd":
            self.solver = windsim.PressureSolver(self.obstacles)
        else:
            self.repulse_engine = repulse.RepulseEngine(self.height, self.rparams)
        if self.mode_cfg.lgm_zone is not None:
            self.lgm_cov = modes.lgm_coverage(self.height, self.mode_cfg.lgm_zone,
                                              self.thresholds)
        else:
            self.lgm_cov = float("nan")

    def _evict_tracers_from_solids(self):
        """A freshly placed block may swallow tracers; respawn them."""
        if len(self.tracers):
            solid = self.obstacles.solid
            ci = np.clip(self.tracers.pos[:, 0].astype(np.int64), 0, self.grid.nx - 1)
            cj = np.clip(self.tracers.pos[:, 1].astype(np.int64), 0, self.grid.ny - 1)
            trapped = solid[cj, ci]
            if trapped.any():
                fluid_cells = np.argwhere(~solid)
                if len(fluid_cells):
                    fresh = particles._draw_fluid_positions(
                        self.tracers.rng, int(trapped.sum()), fluid_cells)
                    self.tracers.pos[trapped] = fresh
                    self.tracers.age[trapped] = 0
                    self.tracers.stagnant[trapped] = 0
        if len(self.storms):
            solid = self.obstacles.solid
            act = np.flatnonzero(self.storms.active)
            if len(act):
                ci = np.clip(self.storms.pos[act, 0].astype(np.int64), 0, self.grid.nx - 1)
                cj = np.clip(self.storms.pos[act, 1].astype(np.int64), 0, self.grid.ny - 1)
                trapped = act[solid[cj, ci]]
                self.storms.active[trapped] = False

    def apply_layout(self, blocks: list[terrain.BlockSpec]):
        """Replace the user block layout (last writer wins) between frames."""
        if self._depth_paths:
            raise ValueError("session is driven by depth frames, not block layouts")
        self.user_blocks = list(blocks)
        self._rebuild_terrain()
        self._evict_tracers_from_solids()
        self.events.append({"type": "layout", "step": self.step_idx,
                            "blocks": len(blocks), "digest": self.obstacle_digest})

    def set_mode(self, mode: str, seed: int, initial: bool = False):
        """Switch play mode; regenerates Nonameland and the target from the seed."""
        if mode == modes.MODE_MOVING_MOUNTAINS and self._shape_lib is None:
            self._shape_lib = modes.load_shape_library()
        user_height = self._user_height()
        solid_hint = terrain.obstacles_from_height(
            user_height, self.thresholds, drag_low=self.params.drag_low).solid
        self.mode_cfg = modes.build_mode(mode, seed, self.grid.nx, self.grid.ny,
                                         solid=solid_hint, shape_lib=self._shape_lib,
                                         hit_radius=self.cfg.mode.hit_radius)
        self.mode_cfg.success_coverage = self.cfg.mode.success_coverage
        self._rebuild_terrain()
        if not initial:
            self._evict_tracers_from_solids()
            self.events.append({"type": "mode", "step": self.step_idx, "mode": mode,
                                "seed": seed})

    # -- frame loop ------------------------------------------------------

    def _probe(self, x, y):
        if self.engine_name == "cfd":
            return windsim.probe(self.state, x, y, self.obstacles)
        return self.repulse_engine.velocity_at(x, y)

    @property
    def tracer_dt(self) -> float:
        # Repulse velocities are cells/step; the grid engine's are cells per
        # model-second.
        return self.params.dt if self.engine_name == "cfd" else 1.0

    def _ensure_state(self):
        if self.engine_name == "cfd" and not hasattr(self, "state"):
            self.state = windsim.FlowState.inflow_equilibrium(
                self.grid, self.params, self.obstacles)

    def step_frame(self) -> list[dict]:
        """Advance one frame in the contract order; returns this frame's events."""
        self._ensure_state()
        frame_events: list[dict] = []
        if self._depth_paths:
            prev = self.obstacle_digest
            self._rebuild_terrain()
            if self.obstacle_digest != prev:
                self._evict_tracers_from_solids()

        def collect(ev):
            frame_events.append(ev)
            if ev.get("type") == "nan_reset":
                self.nan_resets += 1

        if self.engine_name == "cfd":
            windsim.step(self.state, self.obstacles, self.grid, self.params,
                         solver=self.solver, on_event=collect)
        else:
            self.tracers, self.tracer_vel = repulse.advance_particle_set(
                self.tracers, self.tracer_vel, self.repulse_engine, self.policy,
                self.obstacles)

        if self.engine_name == "cfd" and len(self.tracers):
            particles.advect(self.tracers, self._probe, self.tracer_dt, self.policy,
                             self.obstacles, self.params.inflow_internal)

        evs = particles.spawn_and_track_storms(
            self.storms, self.policy, self.mode_cfg.x_target, self.mode_cfg.hit_radius,
            self._probe, self.tracer_dt, self.obstacles, self.step_idx, grid=self.grid)
        for ev in evs:
            collect(ev)
            if ev["type"] == "storm_hit":
                self.hits_total += 1
            elif ev["type"] == "storm_exit":
                self.exit_lats.append(ev["lat"])

        particles.deposit_and_fade(self.trail, self.tracers,
                                   alpha=self.cfg.trail.alpha,
                                   deposit=self.cfg.trail.deposit)
        self.step_idx += 1
        self.events.extend(frame_events)
        return frame_events

    # -- observation -----------------------------------------------------

    def metrics_row(self) -> dict:
        if self.engine_name == "cfd":
            self._ensure_state()
            uc, vc = self.state.cell_velocity()
            fluid = ~self.obstacles.solid
            speed = np.hypot(uc, vc)[fluid]
            mean_speed = float(speed.mean()) * self.params.velocity_scale if speed.size else 0.0
            max_div = windsim.max_divergence(self.state, self.obstacles)
        else:
            cx, cy = np.meshgrid(np.arange(self.grid.nx) + 0.5,
                                 np.arange(self.grid.ny) + 0.5)
            vx, vy = self.repulse_engine.velocity_at(cx, cy)
            fluid = ~self.obstacles.solid
            mean_speed = float(np.hypot(vx, vy)[fluid].mean()) \
                * self.params.inflow_speed / self.rparams.base_speed
            max_div = float("nan")
        act = self.storms.active
        mean_storm_lat = float(np.mean(self.grid.lat_of_y(self.storms.pos[act, 1]))) \
            if act.any() else float("nan")
        return {
            "step": self.step_idx,
            "mean_speed_ms": mean_speed,
            "max_divergence": max_div,
            "storm_hits": self.hits_total,
            "mean_storm_lat": mean_storm_lat,
            "lgm_coverage": self.lgm_cov,
        }

    def snapshot(self) -> dict:
        """The protocol frame message for the current state."""
        trail_u8 = (np.clip(self.trail.intensity, 0.0, 1.0) * 255).astype(np.uint8)
        cap = self.cfg.frame_particle_cap
        pos = self.tracers.pos
        if len(pos) > cap > 0:
            stride = max(1, len(pos) // cap)
            pos = pos[::stride][:cap]
        storms_out = [[round(float(x), 3), round(float(y), 3), bool(h)]
                      for (x, y), h, a in zip(self.storms.pos, self.storms.hit,
                                              self.storms.active) if a or h]
        targets: dict = {"mode": self.mode_cfg.mode}
        if self.mode_cfg.x_target is not None:
            targets["x"] = [round(self.mode_cfg.x_target[0], 3),
                            round(self.mode_cfg.x_target[1], 3)]
        if self.mode_cfg.o_marker is not None:
            targets["o"] = [round(self.mode_cfg.o_marker[0], 3),
                            round(self.mode_cfg.o_marker[1], 3)]
        if self.mode_cfg.lgm_zone is not None:
            targets["lgm_zone"] = np.round(self.mode_cfg.lgm_zone, 2).tolist()
        if self.mode_cfg.nonameland is not None:
            targets["outline"] = np.round(self.mode_cfg.nonameland.outline, 2).tolist()
        targets["blocks"] = blocks_to_layout_entries(self.user_blocks)
        m = {k: (None if isinstance(v, float) and not np.isfinite(v) else v)
             for k, v in self.metrics_row().items()}
        m["obstacle_digest"] = self.obstacle_digest
        return {
            "t": "frame",
            "step": self.step_idx,
            "grid": {"nx": self.grid.nx, "ny": self.grid.ny},
            "particles": np.round(pos, 3).tolist(),
            "storms": storms_out,
            "trail_b64": base64.b64encode(trail_u8.tobytes()).decode("ascii"),
            "targets": targets,
            "metrics": m,
        }


def blocks_to_layout_entries(blocks: list[terrain.BlockSpec]) -> list[dict]:
    from .scenario import NAME_BY_RELIEF

    return [{"class": NAME_BY_RELIEF[b.relief], "x": round(b.center[0], 3),
             "y": round(b.center[1], 3), "w": round(b.footprint[0], 3),
             "h": round(b.footprint[1], 3), "rot": round(b.rotation, 5)}
            for b in blocks]


@dataclass
class RunResult:
    summary: dict
    metrics_rows: list[dict] = field(default_factory=list)
    sim: Simulation | None = None


def write_metrics_csv(rows: list[dict], path) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(METRICS_COLUMNS)
        for r in rows:
            w.writerow([r["step"]] + [_fmt(r[c]) for c in METRICS_COLUMNS[1:]])


def run_scenario(cfg: ScenarioConfig, metrics_path=None, frames_dir=None,
                 frames_every: int = 0, events_path=None, summary_path=None,
                 snapshot_path=None) -> RunResult:
    """Execute a configured run and write its artifacts.

    With baseline_compare set, an empty-table twin run (same seed) executes
    first and the summary reports the southward diversion of storm exits
    relative to it.
    """
    baseline_exits = None
    if cfg.baseline_compare:
        base_cfg = cfg.model_copy(update={"baseline_compare": False, "blocks": [],
                                          "depth_frames": None})
        base = run_scenario(base_cfg)
        baseline_exits = base.summary["exit_lats"]

    sim = Simulation(cfg)
    rows: list[dict] = []
    if frames_dir is not None and frames_every > 0:
        Path(frames_dir).mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    for k in range(cfg.steps):
        sim.step_frame()
        if cfg.metrics_every > 0 and sim.step_idx % cfg.metrics_every == 0:
            rows.append(sim.metrics_row())
        if frames_dir is not None and frames_every > 0 and sim.step_idx % frames_every == 0:
            from .render import export_frame

            export_frame(sim, Path(frames_dir) / f"frame_{sim.step_idx:06d}.png")
    wall = time.perf_counter() - t0

    summary = {
        "steps": cfg.steps,
        "engine": cfg.engine,
        "seed": cfg.seed,
        "mode": cfg.mode.mode,
        "storm_hits": sim.hits_total,
        "n_exits": len(sim.exit_lats),
        "exit_lats": [round(v, 6) for v in sim.exit_lats],
        "mean_exit_lat": float(np.mean(sim.exit_lats)) if sim.exit_lats else None,
        "final_lgm_coverage": None if np.isnan(sim.lgm_cov) else sim.lgm_cov,
        "nan_resets": sim.nan_resets,
        "mean_frame_ms": (wall / cfg.steps * 1000.0) if cfg.steps else 0.0,
        "obstacle_digest": sim.obstacle_digest,
    }
    if baseline_exits is not None:
        summary["southward_diversion"] = modes.southward_diversion(
            baseline_exits, sim.exit_lats)
        summary["baseline_mean_exit_lat"] = float(np.mean(baseline_exits)) \
            if baseline_exits else None

    if metrics_path is not None:
        write_metrics_csv(rows, metrics_path)
    if events_path is not None:
        with open(events_path, "w") as f:
            for ev in sim.events:
                f.write(json.dumps(ev, sort_keys=True) + "\n")
    if summary_path is not None:
        with open(summary_path, "w") as f:
            json.dump(summary, f, indent=1, sort_keys=True)
    if snapshot_path is not None:
        with open(snapshot_path, "w") as f:
            json.dump(sim.snapshot(), f)
    return RunResult(summary=summary, metrics_rows=rows, sim=sim)
