"""Pydantic request/response models for the session protocol.

The wire schema matches the exhibit protocol: client messages are tagged
with "t" ("layout" or "mode"), server messages are "frame" or "error".
Layout entries use the "class" key for the relief category.
"""

from __future__ import annotations

from typing import Literal, Optional

from pydantic import BaseModel, ConfigDict, Field


class ProtocolBlock(BaseModel):
    model_config = ConfigDict(populate_by_name=True)

    relief: Literal["ice", "high", "low"] = Field(alias="class")
    x: float
    y: float
    rot: float = 0.0
    w: Optional[float] = None
    h: Optional[float] = None


class LayoutMessage(BaseModel):
    t: Literal["layout"] = "layout"
    blocks: list[ProtocolBlock]


class ModeMessage(BaseModel):
    t: Literal["mode"] = "mode"
    mode: Literal["free", "ice_age", "moving_mountains"]
    seed: int = 0


class AdvanceRequest(BaseModel):
    frames: int = Field(default=1, ge=1, le=10000)


class Ack(BaseModel):
    ok: bool = True
    step: int
    queued: int = 0


class ErrorMessage(BaseModel):
    t: Literal["error"] = "error"
    msg: str


class HealthResponse(BaseModel):
    status: str = "ok"
    step: int
    engine: str


class ScenarioInfo(BaseModel):
    nx: int
    ny: int
    cell_km: float
    lat_south: float
    lat_north: float
    engine: str
    mode: str
    step: int
    obstacle_digest: str
    palette: dict[str, int]
    footprints: dict[str, tuple[float, float]]
    blocks: list[dict]
