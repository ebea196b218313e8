"""Wire protocol: structured-text messages over a bidirectional socket.

Client to server: open / frame / pause / resume / close.
Server to client: opened / raw / command / paused / resumed / error.
All numbers are JSON doubles serialized with shortest round-trip text, so
values survive the wire bit-exactly.
"""
from __future__ import annotations

import math
from typing import Annotated, Literal, Union

from pydantic import BaseModel, Field, TypeAdapter, field_validator


class OpenConfig(BaseModel):
    context_clip_ids: list[str] | None = None
    seed: int | None = None
    clamp_translation: float | None = None
    clamp_rotation: float | None = None
    window: int | None = None


class OpenMsg(BaseModel):
    type: Literal["open"]
    config: OpenConfig = Field(default_factory=OpenConfig)


class FrameMsg(BaseModel):
    type: Literal["frame"]
    t: int
    segments: list[list[float]]

    @field_validator("segments")
    @classmethod
    def _check_segments(cls, v):
        if len(v) != 6:
            raise ValueError(f"expected 6 segments, got {len(v)}")
        for seg in v:
            if len(seg) != 6:
                raise ValueError(f"expected 6 features per segment, "
                                 f"got {len(seg)}")
            for x in seg:
                if not math.isfinite(x):
                    raise ValueError("segment features must be finite")
        return v


class PauseMsg(BaseModel):
    type: Literal["pause"]


class ResumeMsg(BaseModel):
    type: Literal["resume"]


class CloseMsg(BaseModel):
    type: Literal["close"]


ClientMessage = Annotated[Union[OpenMsg, FrameMsg, PauseMsg, ResumeMsg,
                                CloseMsg],
                          Field(discriminator="type")]
client_message_adapter: TypeAdapter = TypeAdapter(ClientMessage)


class OpenedMsg(BaseModel):
    type: Literal["opened"] = "opened"
    session_id: str
    n_context_frames: int
    n_context_clips: int
    context_boundaries: list[list[int]]


class RawMsg(BaseModel):
    type: Literal["raw"] = "raw"
    t: int
    mean: list[float]
    var: list[float]
    attention: list[float]
    latency_ms: float


class PoseMsg(BaseModel):
    position: list[float]
    quaternion: list[float]


class CommandMsg(BaseModel):
    type: Literal["command"] = "command"
    t: int
    velocity: list[float]
    pose: PoseMsg


class PausedMsg(BaseModel):
    type: Literal["paused"] = "paused"


class ResumedMsg(BaseModel):
    type: Literal["resumed"] = "resumed"
    z_resampled: bool = True
    warning: str | None = None


class ErrorMsg(BaseModel):
    type: Literal["error"] = "error"
    code: str
    detail: str
