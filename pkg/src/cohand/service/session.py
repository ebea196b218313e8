"""Live inference session.

Per-frame decoding at the client's pace (nominally 10 Hz) with the safety
post-processing layer: every 5th frame emits the clamped mean of the last
10 raw predictions, and the emitted command drives a virtual workpiece
pose. Pausing freezes emission; resuming redraws z from the context prior
and starts a fresh motion segment.
"""
from __future__ import annotations

import time
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from ..domain import (
    GestureFrame,
    OperationFrame,
    Pose,
    integrate_pose,
    read_clips,
)
from ..model.checkpoint import Checkpoint, load_checkpoint
from ..model.network import ConditionalHandlingModel, ContextEncoding, sample_latent
from ..training import clip_tensors


class SessionPausedError(RuntimeError):
    pass


@dataclass
class SessionConfig:
    checkpoint: str | Path | None = None
    context_path: str | Path | None = None
    context_clip_ids: list[str] | None = None
    input_rate_hz: float = 10.0
    emit_rate_hz: float = 2.0
    window: int = 10
    clamp_translation: float = 0.10
    clamp_rotation: float = 0.30
    seed: int = 0

    def __post_init__(self):
        if self.window < 1:
            raise ValueError("window must be >= 1")
        if self.clamp_translation <= 0 or self.clamp_rotation <= 0:
            raise ValueError("clamp limits must be positive")
        ratio = self.input_rate_hz / self.emit_rate_hz
        if abs(ratio - round(ratio)) > 1e-9 or round(ratio) < 1:
            raise ValueError("emit rate must divide the input rate")

    @property
    def emit_every(self) -> int:
        return int(round(self.input_rate_hz / self.emit_rate_hz))

    @property
    def clamp_limits(self) -> np.ndarray:
        return np.array([self.clamp_translation] * 3
                        + [self.clamp_rotation] * 3)


@dataclass
class Command:
    t: int
    velocity: np.ndarray  # (6,) float64, clamped
    pose: Pose


@dataclass
class PushResult:
    t: int
    mean: np.ndarray       # (6,) raw prediction mean
    var: np.ndarray        # (6,)
    attention: np.ndarray  # (N_C,)
    command: Command | None
    latency_ms: float


@dataclass
class Session:
    cfg: SessionConfig
    model: ConditionalHandlingModel
    enc: ContextEncoding
    z: torch.Tensor
    rng: np.random.Generator
    state: tuple[torch.Tensor, torch.Tensor]
    y_prev: torch.Tensor
    raws: deque = field(default_factory=deque)
    paused: bool = False
    frame_count: int = 0
    pose: Pose = field(default_factory=Pose.identity)
    context_boundaries: list[tuple[int, int]] = field(default_factory=list)

    @property
    def n_context_frames(self) -> int:
        return self.enc.n_frames


def open_session(cfg: SessionConfig, *, checkpoint: Checkpoint | None = None,
                 context_clips=None) -> Session:
    """Resolve the checkpoint and context database, encode the context once,
    and draw the session's initial latent."""
    if checkpoint is None:
        if cfg.checkpoint is None:
            raise ValueError("session needs a checkpoint")
        checkpoint = load_checkpoint(cfg.checkpoint)
    model = checkpoint.model
    if not isinstance(model, ConditionalHandlingModel):
        raise ValueError(
            f"variant '{checkpoint.variant}' has no context pathway and "
            "cannot serve streaming sessions")

    if context_clips is None:
        if cfg.context_path is None:
            raise ValueError("context required: no context clips given")
        context_clips = read_clips(cfg.context_path)
    if cfg.context_clip_ids is not None:
        by_id = {c.clip_id: c for c in context_clips}
        missing = [i for i in cfg.context_clip_ids if i not in by_id]
        if missing:
            raise ValueError(f"unknown context clip ids: {missing}")
        context_clips = [by_id[i] for i in cfg.context_clip_ids]
    if not context_clips:
        raise ValueError("context required: clip list is empty")

    dtype = model.cfg.torch_dtype
    with torch.no_grad():
        enc = model.encode_latent(
            [clip_tensors(c, dtype) for c in context_clips]).detached()
    rng = np.random.default_rng(cfg.seed)
    z = sample_latent(enc.latent, rng)
    return Session(cfg=cfg, model=model, enc=enc, z=z, rng=rng,
                   state=model.dec_cell.zero_state(1, dtype),
                   y_prev=torch.zeros(model.cfg.op_dim, dtype=dtype),
                   raws=deque(maxlen=cfg.window),
                   context_boundaries=list(enc.boundaries))


def push_frame(session: Session, frame: GestureFrame) -> PushResult:
    """Decode one frame; every 5th input emits a safety-processed command.

    The emitted command is the componentwise clamp of the mean over the
    ring buffer of raw prediction means; the virtual pose advances by each
    command over one emission period.
    """
    if session.paused:
        raise SessionPausedError("session paused")
    started = time.perf_counter()
    model = session.model
    x = torch.as_tensor(frame.flat, dtype=model.cfg.torch_dtype)
    with torch.no_grad():
        pred = model.decoder_step(x, session.y_prev, session.state,
                                  session.enc, session.z)
    session.state = pred.state
    session.y_prev = pred.mean
    mean = pred.mean.numpy().astype(np.float64)
    var = pred.var.numpy().astype(np.float64)
    attention = pred.attention.numpy().astype(np.float64)
    session.raws.append(mean)
    session.frame_count += 1

    command = None
    if session.frame_count % session.cfg.emit_every == 0:
        window = np.stack(list(session.raws))
        limits = session.cfg.clamp_limits
        velocity = np.clip(window.mean(axis=0), -limits, limits)
        dt = 1.0 / session.cfg.emit_rate_hz
        session.pose = integrate_pose(session.pose, OperationFrame(velocity),
                                      dt)
        command = Command(t=session.frame_count, velocity=velocity,
                          pose=session.pose)
    latency_ms = (time.perf_counter() - started) * 1e3
    return PushResult(t=session.frame_count, mean=mean, var=var,
                      attention=attention, command=command,
                      latency_ms=latency_ms)


def pause(session: Session) -> None:
    """Freeze emission; the ring buffer and decoder state stay intact."""
    session.paused = True


def resume(session: Session, rng: np.random.Generator | None = None,
           ) -> tuple[bool, str | None]:
    """Unfreeze and start a fresh motion segment.

    Redraws z from the context prior, clears the ring buffer, and resets
    the decoder recurrent state (the user re-positions the hand before
    resuming). Returns (z_resampled, warning).
    """
    if not session.paused:
        return False, "resume on unpaused session ignored"
    if rng is None:
        rng = session.rng
    session.z = sample_latent(session.enc.latent, rng)
    session.raws.clear()
    dtype = session.model.cfg.torch_dtype
    session.state = session.model.dec_cell.zero_state(1, dtype)
    session.y_prev = torch.zeros(session.model.cfg.op_dim, dtype=dtype)
    session.frame_count = 0
    session.paused = False
    return True, None
