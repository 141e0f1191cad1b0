"""FastAPI wrapper around a simulation session.

REST endpoints mirror the protocol for thin clients (the CLI and tests);
the /ws WebSocket streams frame messages and accepts the same layout/mode
commands, one JSON document per message (newline-joined batches allowed).
"""

from __future__ import annotations

import asyncio
import json
import logging
from contextlib import asynccontextmanager

from fastapi import FastAPI, WebSocket, WebSocketDisconnect
from fastapi.responses import JSONResponse
from fastapi.staticfiles import StaticFiles
from pathlib import Path

from ..runner import blocks_to_layout_entries
from ..scenario import DEFAULT_FOOTPRINT_FRAC, ScenarioConfig, ScenarioError
from .models import (Ack, AdvanceRequest, ErrorMessage, HealthResponse, LayoutMessage,
                     ModeMessage, ScenarioInfo)
from .session import CommandError, SessionManager

log = logging.getLogger(__name__)

WS_POLL_S = 0.02


def create_app(cfg: ScenarioConfig, realtime: bool = False, fps: float = 30.0,
               static_dir: str | None = None) -> FastAPI:
    manager = SessionManager(cfg)

    @asynccontextmanager
    async def lifespan(app: FastAPI):
        if realtime:
            manager.start(fps=fps)
        yield
        manager.stop()

    app = FastAPI(title="paleowind", lifespan=lifespan)
    app.state.manager = manager

    @app.get("/health", response_model=HealthResponse)
    def health():
        return HealthResponse(step=manager.sim.step_idx, engine=manager.sim.engine_name)

    @app.get("/scenario", response_model=ScenarioInfo)
    def scenario_info():
        sim = manager.sim
        g = sim.grid
        return ScenarioInfo(
            nx=g.nx, ny=g.ny, cell_km=g.cell_km,
            lat_south=g.lat_south, lat_north=g.lat_north,
            engine=sim.engine_name, mode=sim.mode_cfg.mode, step=sim.step_idx,
            obstacle_digest=sim.obstacle_digest,
            palette=cfg.palette.model_dump(),
            footprints={k: (v[0] * g.nx, v[1] * g.ny)
                        for k, v in DEFAULT_FOOTPRINT_FRAC.items()},
            blocks=blocks_to_layout_entries(sim.user_blocks),
        )

    @app.get("/snapshot")
    def snapshot():
        return JSONResponse(manager.snapshot())

    @app.post("/layout", response_model=Ack)
    def post_layout(msg: LayoutMessage):
        try:
            queued = manager.submit(msg.model_dump(by_alias=True))
        except (CommandError, ScenarioError) as e:
            return JSONResponse(status_code=422, content={"ok": False, "msg": str(e)})
        return Ack(step=manager.sim.step_idx, queued=queued)

    @app.post("/mode", response_model=Ack)
    def post_mode(msg: ModeMessage):
        try:
            queued = manager.submit(msg.model_dump())
        except CommandError as e:
            return JSONResponse(status_code=422, content={"ok": False, "msg": str(e)})
        return Ack(step=manager.sim.step_idx, queued=queued)

    @app.post("/advance", response_model=Ack)
    def advance(req: AdvanceRequest):
        if manager.realtime:
            return JSONResponse(status_code=409, content={
                "ok": False, "msg": "session runs its own clock in realtime mode"})
        step = manager.advance(req.frames)
        return Ack(step=step)

    @app.websocket("/ws")
    async def ws_endpoint(ws: WebSocket):
        await ws.accept()
        await ws.send_text(json.dumps(manager.snapshot()))
        last_version = manager.version

        async def stream():
            nonlocal last_version
            while True:
                if manager.version != last_version:
                    last_version = manager.version
                    await ws.send_text(json.dumps(manager.snapshot()))
                await asyncio.sleep(WS_POLL_S)

        async def receive():
            while True:
                text = await ws.receive_text()
                for line in text.splitlines():
                    line = line.strip()
                    if not line:
                        continue
                    try:
                        msg = json.loads(line)
                        if not isinstance(msg, dict):
                            raise CommandError("message must be a JSON object")
                        manager.submit(msg)
                    except (json.JSONDecodeError, CommandError, ScenarioError) as e:
                        raise _ProtocolViolation(str(e)) from e

        stream_task = asyncio.create_task(stream())
        try:
            await receive()
        except WebSocketDisconnect:
            pass
        except _ProtocolViolation as e:
            try:
                await ws.send_text(ErrorMessage(msg=str(e)).model_dump_json())
                await ws.close(code=1002)
            except Exception:
                pass
        finally:
            stream_task.cancel()

    if static_dir is not None and Path(static_dir).is_dir():
        app.mount("/", StaticFiles(directory=static_dir, html=True), name="ui")

    return app


class _ProtocolViolation(Exception):
    pass
