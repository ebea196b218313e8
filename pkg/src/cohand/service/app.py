"""FastAPI service wrapping the core package.

One streaming session per WebSocket connection, plus small REST endpoints
for health, model info, the context-clip database, and the gesture style
templates the console's sliders map through.
"""
from __future__ import annotations

import json
import uuid
from dataclasses import dataclass, replace
from pathlib import Path

from fastapi import FastAPI, HTTPException, WebSocket, WebSocketDisconnect
from pydantic import ValidationError

from ..domain import Clip, GestureFrame, read_clips, serialize_clip
from ..model.checkpoint import Checkpoint, load_checkpoint
from . import session as sess
from .protocol import (
    CommandMsg,
    ErrorMsg,
    FrameMsg,
    OpenedMsg,
    OpenMsg,
    PausedMsg,
    PoseMsg,
    RawMsg,
    ResumedMsg,
    client_message_adapter,
)


@dataclass
class ServiceState:
    checkpoint: Checkpoint
    context_clips: list[Clip]
    base_config: sess.SessionConfig
    styles: dict | None = None


def load_state(checkpoint_path, context_path, clamp_t: float = 0.10,
               clamp_r: float = 0.30, seed: int = 0,
               styles_path=None) -> ServiceState:
    checkpoint = load_checkpoint(checkpoint_path)
    clips = read_clips(context_path)
    if not clips:
        raise ValueError("context required: context file holds no clips")
    styles = None
    if styles_path is not None and Path(styles_path).exists():
        with open(styles_path, "r", encoding="utf-8") as f:
            styles = json.load(f)
    cfg = sess.SessionConfig(checkpoint=checkpoint_path,
                             context_path=context_path,
                             clamp_translation=clamp_t,
                             clamp_rotation=clamp_r, seed=seed)
    return ServiceState(checkpoint=checkpoint, context_clips=clips,
                        base_config=cfg, styles=styles)


def _session_config(state: ServiceState, msg: OpenMsg) -> sess.SessionConfig:
    cfg = state.base_config
    overrides = {}
    c = msg.config
    if c.seed is not None:
        overrides["seed"] = c.seed
    if c.clamp_translation is not None:
        overrides["clamp_translation"] = c.clamp_translation
    if c.clamp_rotation is not None:
        overrides["clamp_rotation"] = c.clamp_rotation
    if c.window is not None:
        overrides["window"] = c.window
    if c.context_clip_ids is not None:
        overrides["context_clip_ids"] = c.context_clip_ids
    return replace(cfg, **overrides) if overrides else cfg


def create_app(state: ServiceState) -> FastAPI:
    app = FastAPI(title="cohand realtime service")
    app.state.service = state

    @app.get("/health")
    def health():
        return {"status": "ok",
                "variant": state.checkpoint.variant,
                "n_context_clips": len(state.context_clips)}

    @app.get("/info")
    def info():
        return {
            "variant": state.checkpoint.variant,
            "kind": state.checkpoint.kind,
            "train_step": state.checkpoint.step,
            "model_config": state.checkpoint.config.to_dict(),
            "context_clip_ids": [c.clip_id for c in state.context_clips],
            "emit_every": state.base_config.emit_every,
            "clamp_translation": state.base_config.clamp_translation,
            "clamp_rotation": state.base_config.clamp_rotation,
        }

    @app.get("/styles")
    def styles():
        if state.styles is None:
            raise HTTPException(status_code=404, detail="no styles loaded")
        return state.styles

    @app.get("/context-clips")
    def context_clips():
        return {"clips": [
            {"clip_id": c.clip_id, "user_id": c.user_id, "frames": len(c),
             "active_dims": sorted(ax.name for ax in c.active_dims)}
            for c in state.context_clips]}

    @app.get("/context-clips/{clip_id}")
    def context_clip(clip_id: str):
        for c in state.context_clips:
            if c.clip_id == clip_id:
                return json.loads(serialize_clip(c))
        raise HTTPException(status_code=404, detail=f"no clip '{clip_id}'")

    @app.websocket("/ws")
    async def ws_endpoint(socket: WebSocket):
        await socket.accept()
        session: sess.Session | None = None

        async def send(msg) -> None:
            await socket.send_text(msg.model_dump_json())

        try:
            while True:
                raw = await socket.receive_text()
                try:
                    msg = client_message_adapter.validate_json(raw)
                except ValidationError as e:
                    await send(ErrorMsg(code="bad_message",
                                        detail=_short_validation(e)))
                    continue

                if isinstance(msg, OpenMsg):
                    if session is not None:
                        await send(ErrorMsg(code="already_open",
                                            detail="session already open"))
                        continue
                    try:
                        cfg = _session_config(state, msg)
                        session = sess.open_session(
                            cfg, checkpoint=state.checkpoint,
                            context_clips=state.context_clips)
                    except ValueError as e:
                        await send(ErrorMsg(code="open_failed", detail=str(e)))
                        continue
                    await send(OpenedMsg(
                        session_id=uuid.uuid4().hex,
                        n_context_frames=session.n_context_frames,
                        n_context_clips=len(session.context_boundaries),
                        context_boundaries=[list(b) for b in
                                            session.context_boundaries]))
                elif isinstance(msg, FrameMsg):
                    if session is None:
                        await send(ErrorMsg(code="no_session",
                                            detail="open a session first"))
                        continue
                    try:
                        result = sess.push_frame(
                            session, GestureFrame(msg.segments))
                    except sess.SessionPausedError:
                        await send(ErrorMsg(code="paused",
                                            detail="session paused"))
                        continue
                    await send(RawMsg(
                        t=result.t, mean=result.mean.tolist(),
                        var=result.var.tolist(),
                        attention=result.attention.tolist(),
                        latency_ms=result.latency_ms))
                    if result.command is not None:
                        cmd = result.command
                        await send(CommandMsg(
                            t=cmd.t, velocity=cmd.velocity.tolist(),
                            pose=PoseMsg(
                                position=cmd.pose.position.tolist(),
                                quaternion=cmd.pose.orientation.tolist())))
                elif msg.type == "pause":
                    if session is None:
                        await send(ErrorMsg(code="no_session",
                                            detail="open a session first"))
                        continue
                    sess.pause(session)
                    await send(PausedMsg())
                elif msg.type == "resume":
                    if session is None:
                        await send(ErrorMsg(code="no_session",
                                            detail="open a session first"))
                        continue
                    resampled, warning = sess.resume(session)
                    await send(ResumedMsg(z_resampled=resampled,
                                          warning=warning))
                elif msg.type == "close":
                    session = None
                    break
        except WebSocketDisconnect:
            pass

    return app


def _short_validation(e: ValidationError) -> str:
    first = e.errors()[0]
    loc = ".".join(str(p) for p in first.get("loc", ()))
    return f"{loc}: {first.get('msg', 'invalid message')}"
