"""Core vocabulary of the handling task.

Dynamic gestures (36-feature hand frames), handling operations (6-D
Cartesian velocities), paired demonstration clips with dominant-axis
labels, a rigid-body pose for the virtual workpiece, and a line-delimited
clip file format.
"""
from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass, field

import numpy as np

N_SEGMENTS = 6
SEGMENT_DIM = 6
GESTURE_DIM = N_SEGMENTS * SEGMENT_DIM  # 36
OP_DIM = 6

# Default per-axis magnitude box for operations: translation m/s, rotation rad/s.
DEFAULT_VELOCITY_BOX = (0.6, 1.2)

MAX_CLIP_SECONDS = 5.0


class DominantAxis(enum.Enum):
    """One of the six Cartesian motion axes an operation can be active on."""

    TX = 0
    TY = 1
    TZ = 2
    RX = 3
    RY = 4
    RZ = 5

    @property
    def index(self) -> int:
        return self.value

    @property
    def is_translation(self) -> bool:
        return self.value < 3


AXIS_ORDER = (DominantAxis.TX, DominantAxis.TY, DominantAxis.TZ,
              DominantAxis.RX, DominantAxis.RY, DominantAxis.RZ)


def _as_f32(a, shape: tuple) -> np.ndarray:
    arr = np.asarray(a, dtype=np.float32)
    if arr.shape != shape:
        raise ValueError(f"expected shape {shape}, got {arr.shape}")
    return arr


@dataclass(frozen=True)
class GestureFrame:
    """One hand-command frame: 6 segments (five fingers plus palm), each a
    6-vector of segment translational velocity and principal-direction
    change rate."""

    segments: np.ndarray  # (6, 6) float32

    def __post_init__(self):
        object.__setattr__(self, "segments",
                           _as_f32(self.segments, (N_SEGMENTS, SEGMENT_DIM)))

    @property
    def flat(self) -> np.ndarray:
        return self.segments.reshape(GESTURE_DIM)

    def __eq__(self, other) -> bool:
        return isinstance(other, GestureFrame) and np.array_equal(
            self.segments, other.segments)


@dataclass(frozen=True)
class OperationFrame:
    """One 6-D Cartesian velocity: (vx, vy, vz) m/s then (wx, wy, wz) rad/s."""

    velocity: np.ndarray  # (6,) float32

    def __post_init__(self):
        object.__setattr__(self, "velocity", _as_f32(self.velocity, (OP_DIM,)))

    def __eq__(self, other) -> bool:
        return isinstance(other, OperationFrame) and np.array_equal(
            self.velocity, other.velocity)


@dataclass(frozen=True)
class DynamicGesture:
    """Ordered gesture frames at a nominal sampling rate."""

    frames: np.ndarray  # (N, 6, 6) float32
    rate_hz: float = 10.0

    def __post_init__(self):
        arr = np.asarray(self.frames, dtype=np.float32)
        if arr.ndim != 3 or arr.shape[1:] != (N_SEGMENTS, SEGMENT_DIM):
            raise ValueError(f"gesture frames must be (N, 6, 6), got {arr.shape}")
        object.__setattr__(self, "frames", arr)

    def __len__(self) -> int:
        return self.frames.shape[0]

    def frame(self, t: int) -> GestureFrame:
        return GestureFrame(self.frames[t])

    def __eq__(self, other) -> bool:
        return (isinstance(other, DynamicGesture)
                and self.rate_hz == other.rate_hz
                and np.array_equal(self.frames, other.frames))


@dataclass(frozen=True)
class HandlingOperation:
    """Ordered 6-D velocity frames at a nominal sampling rate."""

    frames: np.ndarray  # (N, 6) float32
    rate_hz: float = 10.0

    def __post_init__(self):
        arr = np.asarray(self.frames, dtype=np.float32)
        if arr.ndim != 2 or arr.shape[1] != OP_DIM:
            raise ValueError(f"operation frames must be (N, 6), got {arr.shape}")
        object.__setattr__(self, "frames", arr)

    def __len__(self) -> int:
        return self.frames.shape[0]

    def frame(self, t: int) -> OperationFrame:
        return OperationFrame(self.frames[t])

    def __eq__(self, other) -> bool:
        return (isinstance(other, HandlingOperation)
                and self.rate_hz == other.rate_hz
                and np.array_equal(self.frames, other.frames))


@dataclass(frozen=True)
class Clip:
    """A paired (gesture, operation) demonstration from one user."""

    user_id: str
    clip_id: str
    gesture: DynamicGesture
    operation: HandlingOperation
    active_dims: frozenset[DominantAxis]

    def __post_init__(self):
        object.__setattr__(self, "active_dims", frozenset(self.active_dims))

    def __len__(self) -> int:
        return len(self.gesture)

    def __eq__(self, other) -> bool:
        return (isinstance(other, Clip)
                and self.user_id == other.user_id
                and self.clip_id == other.clip_id
                and self.active_dims == other.active_dims
                and self.gesture == other.gesture
                and self.operation == other.operation)


@dataclass
class Dataset:
    """Train/test split container with in-sample and held-out user groups."""

    train: list[Clip]
    test_in_sample: list[Clip]
    test_out_sample: list[Clip]
    users_in: list[str] = field(default_factory=list)
    users_out: list[str] = field(default_factory=list)

    def clips_by_id(self) -> dict[str, Clip]:
        out: dict[str, Clip] = {}
        for split in (self.train, self.test_in_sample, self.test_out_sample):
            for c in split:
                out[c.clip_id] = c
        return out


@dataclass(frozen=True)
class Pose:
    """Rigid-body pose: position in meters plus a unit quaternion (w, x, y, z)."""

    position: np.ndarray  # (3,) float64
    orientation: np.ndarray  # (4,) float64, unit norm

    def __post_init__(self):
        p = np.asarray(self.position, dtype=np.float64)
        q = np.asarray(self.orientation, dtype=np.float64)
        if p.shape != (3,) or q.shape != (4,):
            raise ValueError("pose needs position (3,) and quaternion (4,)")
        object.__setattr__(self, "position", p)
        object.__setattr__(self, "orientation", q)

    @staticmethod
    def identity() -> "Pose":
        return Pose(np.zeros(3), np.array([1.0, 0.0, 0.0, 0.0]))


class ClipParseError(ValueError):
    """Raised when a clip record does not match the file schema."""

    def __init__(self, message: str, line: int | None = None,
                 fld: str | None = None):
        loc = []
        if line is not None:
            loc.append(f"line {line}")
        if fld is not None:
            loc.append(f"field '{fld}'")
        suffix = f" ({', '.join(loc)})" if loc else ""
        super().__init__(message + suffix)
        self.line = line
        self.field = fld


def validate_clip(clip: Clip,
                  velocity_box: tuple[float, float] = DEFAULT_VELOCITY_BOX,
                  ) -> list[str]:
    """Check every clip invariant; returns a report of violations.

    Never raises: an empty report means the clip is well formed. Entries
    name the violated invariant and, where applicable, the frame index.
    """
    report: list[str] = []
    g, op = clip.gesture.frames, clip.operation.frames

    if len(clip.gesture) == 0:
        report.append("empty sequence: gesture has no frames")
    if len(clip.operation) == 0:
        report.append("empty sequence: operation has no frames")
    if len(clip.gesture) != len(clip.operation):
        report.append(
            f"length mismatch: gesture has {len(clip.gesture)} frames, "
            f"operation has {len(clip.operation)}")

    rate = clip.gesture.rate_hz
    max_frames = int(round(rate * MAX_CLIP_SECONDS))
    if len(clip.gesture) > max_frames:
        report.append(
            f"length exceeds 5 s: {len(clip.gesture)} frames at {rate:g} Hz")

    if not (1 <= len(clip.active_dims) <= 2):
        report.append(
            f"active_dims size must be 1 or 2, got {len(clip.active_dims)}")

    bad = np.flatnonzero(~np.isfinite(g).all(axis=(1, 2)))
    for t in bad:
        report.append(f"non-finite gesture features at frame {t}")
    bad = np.flatnonzero(~np.isfinite(op).all(axis=1))
    for t in bad:
        report.append(f"non-finite operation velocity at frame {t}")

    if velocity_box is not None and len(op):
        t_box, r_box = velocity_box
        box = np.array([t_box] * 3 + [r_box] * 3, dtype=np.float64)
        with np.errstate(invalid="ignore"):
            over = np.flatnonzero((np.abs(op) > box).any(axis=1))
        for t in over:
            report.append(f"velocity outside bounded box at frame {t}")

    return report


def active_dimensions(op: HandlingOperation,
                      threshold: float | None = None,
                      ) -> frozenset[DominantAxis]:
    """Axes whose mean absolute velocity over the clip exceeds ``threshold``.

    With ``threshold=None``, uses 25% of the largest per-axis mean
    magnitude, so a clip with any motion at all always reports its
    dominant axes.
    """
    if len(op) == 0:
        raise ValueError("empty sequence")
    mean_mag = np.abs(op.frames.astype(np.float64)).mean(axis=0)
    if threshold is None:
        threshold = 0.25 * float(mean_mag.max())
        if threshold == 0.0:
            return frozenset()
    elif threshold <= 0:
        raise ValueError("threshold must be positive")
    return frozenset(ax for ax in AXIS_ORDER if mean_mag[ax.index] > threshold)


def _quat_mul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    w1, x1, y1, z1 = a
    w2, x2, y2, z2 = b
    return np.array([
        w1 * w2 - x1 * x2 - y1 * y2 - z1 * z2,
        w1 * x2 + x1 * w2 + y1 * z2 - z1 * y2,
        w1 * y2 - x1 * z2 + y1 * w2 + z1 * x2,
        w1 * z2 + x1 * y2 - y1 * x2 + z1 * w2,
    ])


def quat_from_rotvec(rv: np.ndarray) -> np.ndarray:
    """Unit quaternion for a rotation vector (axis * angle)."""
    angle = float(np.linalg.norm(rv))
    if angle < 1e-12:
        # Second-order small-angle expansion keeps the update smooth near zero.
        half = 0.5 * angle
        w = 1.0 - half * half / 2.0
        xyz = 0.5 * rv
    else:
        half = 0.5 * angle
        w = math.cos(half)
        xyz = (math.sin(half) / angle) * rv
    q = np.concatenate(([w], xyz))
    return q / np.linalg.norm(q)


def quat_to_matrix(q: np.ndarray) -> np.ndarray:
    w, x, y, z = q
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])


def integrate_pose(pose: Pose, frame: OperationFrame, dt: float) -> Pose:
    """Advance a pose by one velocity command over ``dt`` seconds.

    First-order update: position moves by v*dt, orientation composes with
    the body-frame rotation exp(w*dt); the quaternion is renormalized.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    v = frame.velocity.astype(np.float64)
    if not np.isfinite(v).all():
        raise ValueError("non-finite operation frame")
    position = pose.position + v[:3] * dt
    dq = quat_from_rotvec(v[3:] * dt)
    q = _quat_mul(pose.orientation, dq)
    q = q / np.linalg.norm(q)
    return Pose(position, q)


def _fmt(x: float) -> str:
    # 9 significant digits: round-trips binary32 exactly.
    return format(float(x), ".9g")


class _Raw(str):
    """A number already rendered to its canonical text form."""


def _fmt_nested(a: np.ndarray) -> list:
    if a.ndim == 1:
        return [_Raw(_fmt(v)) for v in a]
    return [_fmt_nested(row) for row in a]


def _render_json(obj) -> str:
    """Compact JSON emitter that inlines :class:`_Raw` numbers verbatim."""
    if isinstance(obj, _Raw):
        return str(obj)
    if isinstance(obj, str):
        return json.dumps(obj)
    if isinstance(obj, list):
        return "[" + ",".join(_render_json(v) for v in obj) + "]"
    if isinstance(obj, dict):
        return "{" + ",".join(f"{json.dumps(k)}:{_render_json(v)}"
                              for k, v in obj.items()) + "}"
    raise TypeError(type(obj))


def serialize_clip(clip: Clip) -> str:
    """Render a clip as one line of the clip file format.

    Reals are written with 9 significant digits, which round-trips the
    float32 frame data exactly.
    """
    rec = {
        "user_id": clip.user_id,
        "clip_id": clip.clip_id,
        "rate_hz": _Raw(_fmt(clip.gesture.rate_hz)),
        "active_dims": sorted(ax.name for ax in clip.active_dims),
        "frames_x": _fmt_nested(clip.gesture.frames),
        "frames_y": _fmt_nested(clip.operation.frames),
    }
    return _render_json(rec)


_REQUIRED_FIELDS = ("user_id", "clip_id", "rate_hz", "active_dims",
                    "frames_x", "frames_y")


def deserialize_clip(record: str, line: int | None = None) -> Clip:
    """Parse one clip record; raises :class:`ClipParseError` on schema
    violations, naming the offending field."""
    try:
        obj = json.loads(record)
    except json.JSONDecodeError as e:
        raise ClipParseError(f"invalid record: {e.msg}", line=line) from e
    if not isinstance(obj, dict):
        raise ClipParseError("record is not an object", line=line)
    for fld in _REQUIRED_FIELDS:
        if fld not in obj:
            raise ClipParseError("missing required field", line=line, fld=fld)

    if not isinstance(obj["user_id"], str):
        raise ClipParseError("user_id must be a string", line=line, fld="user_id")
    if not isinstance(obj["clip_id"], str):
        raise ClipParseError("clip_id must be a string", line=line, fld="clip_id")

    try:
        dims = frozenset(DominantAxis[name] for name in obj["active_dims"])
    except (KeyError, TypeError) as e:
        raise ClipParseError(f"unknown axis name: {e}", line=line,
                             fld="active_dims") from e

    fx = obj["frames_x"]
    fy = obj["frames_y"]
    try:
        gx = np.array(fx, dtype=np.float32)
    except (ValueError, TypeError) as e:
        raise ClipParseError(f"bad gesture frames: {e}", line=line,
                             fld="frames_x") from e
    if gx.ndim != 3 or gx.shape[1] != N_SEGMENTS:
        raise ClipParseError(
            f"expected {N_SEGMENTS} segments per frame, got shape {gx.shape}",
            line=line, fld="frames_x")
    if gx.shape[2] != SEGMENT_DIM:
        raise ClipParseError(
            f"expected {SEGMENT_DIM} features per segment, got shape {gx.shape}",
            line=line, fld="frames_x")
    try:
        gy = np.array(fy, dtype=np.float32)
    except (ValueError, TypeError) as e:
        raise ClipParseError(f"bad operation frames: {e}", line=line,
                             fld="frames_y") from e
    if gy.ndim != 2 or gy.shape[1] != OP_DIM:
        raise ClipParseError(
            f"expected {OP_DIM} velocity components per frame, got shape {gy.shape}",
            line=line, fld="frames_y")

    rate = float(obj["rate_hz"])
    return Clip(user_id=obj["user_id"], clip_id=obj["clip_id"],
                gesture=DynamicGesture(gx, rate_hz=rate),
                operation=HandlingOperation(gy, rate_hz=rate),
                active_dims=dims)


def write_clips(path, clips: list[Clip]) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for clip in clips:
            f.write(serialize_clip(clip))
            f.write("\n")


def read_clips(path) -> list[Clip]:
    clips = []
    with open(path, "r", encoding="utf-8") as f:
        for i, raw in enumerate(f):
            raw = raw.strip()
            if raw:
                clips.append(deserialize_clip(raw, line=i + 1))
    return clips
