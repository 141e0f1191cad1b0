"""Single-owner simulation session behind the service endpoints.

One Simulation, one lock. Commands (layout/mode) are queued and applied
between frames, never mid-step; snapshots are published on the decimation
cadence into a latest-value slot that readers copy without blocking the
loop. The realtime thread paces itself to the frame budget.
"""

from __future__ import annotations

import logging
import queue
import threading
import time

from ..runner import Simulation
from ..scenario import ScenarioConfig, layout_to_blocks

log = logging.getLogger(__name__)


class CommandError(ValueError):
    """A client message that parses as JSON but violates the protocol."""


class SessionManager:
    def __init__(self, cfg: ScenarioConfig):
        self.cfg = cfg
        self.sim = Simulation(cfg)
        self.lock = threading.RLock()
        self.commands: "queue.Queue[dict]" = queue.Queue()
        self.snapshot_every = max(1, cfg.snapshot_every)
        self.version = 0
        self._published: dict = {}
        self._publish()
        self._thread: threading.Thread | None = None
        self._stop = threading.Event()

    # -- commands ----------------------------------------------------------

    def submit(self, msg: dict) -> int:
        """Queue a protocol command; applied before the next frame."""
        kind = msg.get("t")
        if kind == "layout":
            layout_to_blocks(msg)  # validate now so the client hears about it
        elif kind == "mode":
            if msg.get("mode") not in ("free", "ice_age", "moving_mountains"):
                raise CommandError(f"unknown mode {msg.get('mode')!r}")
        else:
            raise CommandError(f"unknown message type {kind!r}")
        self.commands.put(msg)
        return self.commands.qsize()

    def _apply_pending(self) -> None:
        while True:
            try:
                msg = self.commands.get_nowait()
            except queue.Empty:
                return
            try:
                if msg["t"] == "layout":
                    blocks = [b.build(self.sim.grid.nx, self.sim.grid.ny)
                              for b in layout_to_blocks(msg)]
                    self.sim.apply_layout(blocks)
                elif msg["t"] == "mode":
                    self.sim.set_mode(msg["mode"], int(msg.get("seed", 0)))
            except Exception:
                # A bad command must never take the exhibit down.
                log.exception("command failed; simulation continues")

    # -- stepping ------------------------------------------------------------

    def advance(self, frames: int = 1) -> int:
        """Apply queued commands and run this many frames synchronously."""
        with self.lock:
            for _ in range(frames):
                self._apply_pending()
                self.sim.step_frame()
                if self.sim.step_idx % self.snapshot_every == 0:
                    self._publish()
            return self.sim.step_idx

    def _publish(self) -> None:
        self._published = self.sim.snapshot()
        self.version += 1

    def snapshot(self) -> dict:
        with self.lock:
            return self._published

    # -- realtime loop -------------------------------------------------------

    def start(self, fps: float = 30.0) -> None:
        if self._thread is not None:
            return
        budget = 1.0 / max(1e-3, fps)

        def loop():
            while not self._stop.is_set():
                t0 = time.perf_counter()
                try:
                    self.advance(1)
                except Exception:
                    log.exception("frame failed; loop continues")
                elapsed = time.perf_counter() - t0
                self._stop.wait(max(0.0, budget - elapsed))

        self._stop.clear()
        self._thread = threading.Thread(target=loop, name="paleowind-sim", daemon=True)
        self._thread.start()

    @property
    def realtime(self) -> bool:
        return self._thread is not None

    def stop(self) -> None:
        if self._thread is not None:
            self._stop.set()
            self._thread.join(timeout=5.0)
            self._thread = None
