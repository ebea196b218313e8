"""Procedural demonstration generator with known ground-truth user styles.

Reproduces the collection protocol's structure: per-user clips containing
dominant motions over one or two of six Cartesian axes, gestures rendered
through user-specific affine style templates, and the exact train/test
split counts of the in-sample/out-sample user groups.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from .domain import (
    AXIS_ORDER,
    GESTURE_DIM,
    N_SEGMENTS,
    SEGMENT_DIM,
    Clip,
    Dataset,
    DominantAxis,
    DynamicGesture,
    HandlingOperation,
)

# Per-axis target mean |velocity|: translation m/s, rotation rad/s. The 2x
# spread between the two, with +-10% per-axis jitter and a peak/mean ratio
# capped at 3.5, keeps every active axis above the default 25%-of-max
# activity threshold for any seed.
BASE_MEAN_SPEED = (0.10, 0.10, 0.10, 0.20, 0.20, 0.20)
PEAK_TO_MEAN_CAP = 3.5

CLIPS_PER_USER = 72
SINGLES_PER_AXIS = 4          # 24 single-dim clips
TRAIN_PAIRS = 8               # 24 double-dim train clips, 3 per pair
SHARED_TEST_PAIRS = 4         # 12 test clips on pairs seen in train
NEW_TEST_CLIPS = 12           # 12 test clips on pairs unseen in train
CLIPS_PER_PAIR = 3


@dataclass(frozen=True)
class AxisTemplate:
    """Affine map from one axis' scalar velocity to gesture-feature space."""

    weights: np.ndarray       # (36,) float64, sparse segment support
    segments: tuple[int, ...]  # indices of the moving segments
    amplitude: float          # scale in [0.5, 2.0]
    lag: int                  # phase offset in frames, >= 0

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64)
        if w.shape != (GESTURE_DIM,):
            raise ValueError("template weights must be 36-vectors")
        object.__setattr__(self, "weights", w)
        if self.amplitude <= 0:
            raise ValueError("amplitude must be positive")


@dataclass(frozen=True)
class UserStyle:
    """One user's gesture vocabulary: a template per axis plus posture bias."""

    user_id: str
    templates: dict[DominantAxis, AxisTemplate]
    motion_scale: float
    resting_bias: np.ndarray  # (36,) float64
    style_noise: float        # sigma of additive gesture noise

    def __post_init__(self):
        b = np.asarray(self.resting_bias, dtype=np.float64)
        if b.shape != (GESTURE_DIM,):
            raise ValueError("resting bias must be a 36-vector")
        object.__setattr__(self, "resting_bias", b)
        missing = [ax.name for ax in AXIS_ORDER if ax not in self.templates]
        if missing:
            raise ValueError(f"style missing templates for axes {missing}")


@dataclass
class GenConfig:
    """Knobs for the synthetic corpus; defaults reproduce the collection
    protocol's user counts and per-user clip budget."""

    n_in_sample_users: int = 10
    n_out_sample_users: int = 5
    clips_per_user: int = CLIPS_PER_USER
    rate_hz: float = 10.0
    min_seconds: float = 2.0
    max_seconds: float = 5.0
    mean_speed: tuple[float, ...] = BASE_MEAN_SPEED
    label_noise: float = 0.002
    style_noise: float = 0.01
    seed: int = 0

    def __post_init__(self):
        if self.n_in_sample_users <= 0 or self.n_out_sample_users <= 0:
            raise ValueError("user counts must be positive")
        if self.clips_per_user != CLIPS_PER_USER:
            raise ValueError(
                f"the collection protocol defines {CLIPS_PER_USER} clips per user")
        if not (0 < self.min_seconds <= self.max_seconds):
            raise ValueError("need 0 < min_seconds <= max_seconds")

    @property
    def min_frames(self) -> int:
        return int(round(self.min_seconds * self.rate_hz))

    @property
    def max_frames(self) -> int:
        return int(round(self.max_seconds * self.rate_hz))


def _smooth_profile(rng: np.random.Generator, n: int, rate_hz: float,
                    target_mean: float) -> np.ndarray:
    """Band-limited (<= 1 Hz) velocity trace with the requested mean |v|."""
    t = np.arange(n) / rate_hz
    for _ in range(50):
        k = rng.integers(1, 4)
        freqs = rng.uniform(0.1, 1.0, k)
        phases = rng.uniform(0.0, 2.0 * np.pi, k)
        amps = rng.uniform(0.3, 1.0, k)
        raw = (amps[:, None] * np.sin(2 * np.pi * freqs[:, None] * t[None, :]
                                      + phases[:, None])).sum(axis=0)
        mean_mag = np.abs(raw).mean()
        if mean_mag > 1e-6 and np.abs(raw).max() / mean_mag <= PEAK_TO_MEAN_CAP:
            return raw * (target_mean / mean_mag)
    # Degenerate draws exhausted the retry budget; force the cap.
    raw = np.clip(raw, -PEAK_TO_MEAN_CAP * mean_mag, PEAK_TO_MEAN_CAP * mean_mag)
    return raw * (target_mean / np.abs(raw).mean())


def sample_dominant_operation(
    rng: np.random.Generator,
    config: GenConfig,
    n_active: int,
    axes: tuple[DominantAxis, ...] | None = None,
) -> tuple[HandlingOperation, frozenset[DominantAxis]]:
    """Draw a dominant motion with exactly ``n_active`` active axes.

    Returns the operation together with its active-dimension label.
    Inactive axes carry only small labeling noise. ``axes`` overrides the
    random axis choice (used to balance the per-user protocol).
    """
    if n_active not in (1, 2):
        raise ValueError("n_active must be 1 or 2")
    if axes is None:
        idx = rng.choice(6, size=n_active, replace=False)
        axes = tuple(AXIS_ORDER[i] for i in sorted(idx))
    elif len(axes) != n_active:
        raise ValueError("axes length must match n_active")

    n = int(rng.integers(config.min_frames, config.max_frames + 1))
    frames = rng.normal(0.0, config.label_noise, size=(n, 6))
    clip_level = rng.uniform(0.6, 1.0)
    for ax in axes:
        target = (config.mean_speed[ax.index] * clip_level
                  * rng.uniform(0.9, 1.1))
        frames[:, ax.index] = _smooth_profile(rng, n, config.rate_hz, target)
    op = HandlingOperation(frames.astype(np.float32), rate_hz=config.rate_hz)
    return op, frozenset(axes)


N_PATTERNS = 8
# exact pattern sharing: a gesture reveals which shared pattern is active,
# never which user performs it or which axis that user means by it
PATTERN_JITTER = 0.0


def sample_pattern_dictionary(rng: np.random.Generator,
                              n_patterns: int = N_PATTERNS,
                              ) -> list[tuple[tuple[int, ...], np.ndarray]]:
    """Shared vocabulary of hand-motion patterns: (segments, unit weights).

    Users assign axes to patterns individually; a pattern observed in a
    gesture does not identify the commanded axis without knowing the user.
    """
    patterns = []
    for _ in range(n_patterns):
        n_seg = int(rng.integers(2, 5))
        segments = tuple(int(s) for s in
                         sorted(rng.choice(N_SEGMENTS, n_seg, replace=False)))
        w = np.zeros(GESTURE_DIM)
        for s in segments:
            w[s * SEGMENT_DIM:(s + 1) * SEGMENT_DIM] = rng.normal(
                0, 1, SEGMENT_DIM)
        w /= np.linalg.norm(w)
        patterns.append((segments, w))
    return patterns


def sample_user_style(rng: np.random.Generator, user_id: str,
                      config: GenConfig,
                      patterns: list[tuple[tuple[int, ...], np.ndarray]]
                      | None = None,
                      resting_bias: np.ndarray | None = None) -> UserStyle:
    """Draw a user's gesture templates: which shared pattern each axis maps
    to, how strongly, and with what lag and resting posture.

    Each user holds an injective assignment of axes to the shared pattern
    dictionary plus a small personal direction jitter, so the same hand
    motion commands different axes for different users. Template weights
    are normalized by the axis's nominal mean speed, so a typical velocity
    renders unit-scale gesture features ("unitless after normalization")
    regardless of the axis's physical units.
    """
    if patterns is None:
        patterns = sample_pattern_dictionary(rng)
    if resting_bias is None:
        # standalone use draws its own; corpora share one reference posture
        resting_bias = rng.uniform(-0.05, 0.05, GESTURE_DIM)
    assignment = rng.permutation(len(patterns))[:len(AXIS_ORDER)]
    templates: dict[DominantAxis, AxisTemplate] = {}
    for ax, pat_idx in zip(AXIS_ORDER, assignment):
        segments, base = patterns[int(pat_idx)]
        w = base.copy()
        if PATTERN_JITTER > 0:
            w = w + rng.normal(0, PATTERN_JITTER, GESTURE_DIM) * (base != 0)
            w /= np.linalg.norm(w)
        amplitude = float(rng.uniform(0.5, 2.0))
        lag = int(rng.integers(0, 3))
        scale = amplitude / config.mean_speed[ax.index]
        templates[ax] = AxisTemplate(w * scale, segments, amplitude, lag)
    return UserStyle(
        user_id=user_id,
        templates=templates,
        motion_scale=float(rng.uniform(0.8, 1.25)),
        resting_bias=np.asarray(resting_bias, dtype=np.float64),
        style_noise=config.style_noise,
    )


def render_gesture(style: UserStyle, op: HandlingOperation,
                   active_dims: frozenset[DominantAxis],
                   rng: np.random.Generator) -> DynamicGesture:
    """Render the dynamic gesture a user would perform for an operation.

    Sums, over the active axes, that axis' template applied to its velocity
    trace (with the template's lag), then adds the resting posture bias and
    Gaussian style noise. Deterministic given (style, op, rng state).
    """
    n = len(op)
    if n == 0:
        raise ValueError("empty operation")
    vel = op.frames.astype(np.float64)
    g = np.tile(style.resting_bias, (n, 1))
    for ax in active_dims:
        tpl = style.templates.get(ax)
        if tpl is None:
            raise ValueError(f"style has no template for axis {ax.name}")
        v = vel[:, ax.index]
        if tpl.lag > 0:
            v = np.concatenate([np.zeros(tpl.lag), v[:n - tpl.lag]])
        g += style.motion_scale * np.outer(v, tpl.weights)
    if style.style_noise > 0:
        g += rng.normal(0.0, style.style_noise, size=g.shape)
    return DynamicGesture(g.reshape(n, N_SEGMENTS, SEGMENT_DIM).astype(np.float32),
                          rate_hz=op.rate_hz)


def recover_operation(style: UserStyle, gesture: DynamicGesture,
                      active_dims: frozenset[DominantAxis]) -> np.ndarray:
    """Least-squares inverse of :func:`render_gesture`.

    Independent ground-truth oracle: given the style and a rendered gesture,
    recovers the active velocity traces. Returns an (N, 6) array with zeros
    on inactive axes.
    """
    n = len(gesture)
    axes = sorted(active_dims, key=lambda a: a.index)
    g = gesture.frames.reshape(n, GESTURE_DIM).astype(np.float64)
    g = g - style.resting_bias[None, :]
    a_mat = np.zeros((n * GESTURE_DIM, len(axes) * n))
    for j, ax in enumerate(axes):
        tpl = style.templates[ax]
        col_w = style.motion_scale * tpl.weights
        for t in range(n):
            s = t - tpl.lag
            if s >= 0:
                a_mat[t * GESTURE_DIM:(t + 1) * GESTURE_DIM, j * n + s] = col_w
    sol, *_ = np.linalg.lstsq(a_mat, g.reshape(-1), rcond=None)
    out = np.zeros((n, 6))
    for j, ax in enumerate(axes):
        out[:, ax.index] = sol[j * n:(j + 1) * n]
    return out


@dataclass
class UserClips:
    """One user's 72 clips, grouped the way the split protocol needs them."""

    singles: dict[DominantAxis, list[Clip]]
    train_pair_clips: dict[tuple, list[Clip]]   # 8 pairs x 3 clips
    shared_test_clips: list[Clip]               # 12, pairs drawn from train pairs
    new_test_clips: list[Clip]                  # 12, pairs unseen in train

    def all_clips(self) -> list[Clip]:
        out: list[Clip] = []
        for ax in AXIS_ORDER:
            out.extend(self.singles[ax])
        for clips in self.train_pair_clips.values():
            out.extend(clips)
        out.extend(self.shared_test_clips)
        out.extend(self.new_test_clips)
        return out


def _make_clip(uid: str, seq: int, style: UserStyle, rng, config, axes):
    op, dims = sample_dominant_operation(rng, config, len(axes), axes=axes)
    gesture = render_gesture(style, op, dims, rng)
    return Clip(user_id=uid, clip_id=f"{uid}-{seq:03d}", gesture=gesture,
                operation=op, active_dims=dims)


def generate_user_clips(uid: str, style: UserStyle, rng: np.random.Generator,
                        config: GenConfig) -> UserClips:
    """Generate one user's protocol-shaped 72 clips."""
    seq = itertools.count()
    singles = {
        ax: [_make_clip(uid, next(seq), style, rng, config, (ax,))
             for _ in range(SINGLES_PER_AXIS)]
        for ax in AXIS_ORDER
    }

    all_pairs = list(itertools.combinations(AXIS_ORDER, 2))  # 15 pairs
    pair_idx = rng.choice(len(all_pairs), TRAIN_PAIRS, replace=False)
    train_pairs = [all_pairs[i] for i in sorted(pair_idx)]
    other_pairs = [p for p in all_pairs if p not in train_pairs]

    train_pair_clips = {
        pair: [_make_clip(uid, next(seq), style, rng, config, pair)
               for _ in range(CLIPS_PER_PAIR)]
        for pair in train_pairs
    }

    shared_idx = rng.choice(TRAIN_PAIRS, SHARED_TEST_PAIRS, replace=False)
    shared_test: list[Clip] = []
    for i in sorted(shared_idx):
        pair = train_pairs[i]
        shared_test.extend(_make_clip(uid, next(seq), style, rng, config, pair)
                           for _ in range(CLIPS_PER_PAIR))

    # 12 clips over the 7 unseen pairs: one each, then 5 get a second clip.
    counts = np.ones(len(other_pairs), dtype=int)
    extra = rng.choice(len(other_pairs),
                       NEW_TEST_CLIPS - len(other_pairs), replace=False)
    counts[extra] += 1
    new_test: list[Clip] = []
    for pair, c in zip(other_pairs, counts):
        new_test.extend(_make_clip(uid, next(seq), style, rng, config, pair)
                        for _ in range(c))

    return UserClips(singles, train_pair_clips, shared_test, new_test)


def split_in_sample(user_clips: UserClips,
                    rng: np.random.Generator) -> tuple[list[Clip], list[Clip]]:
    """Split one in-sample user's clips: 36 train / 36 test.

    Per axis, 2 of 4 single-dim clips go to train. All 24 train-pair clips
    go to train; the shared and new test groups (12 + 12) go to test.
    """
    train: list[Clip] = []
    test: list[Clip] = []
    for ax in AXIS_ORDER:
        clips = list(user_clips.singles[ax])
        pick = rng.choice(len(clips), 2, replace=False)
        for i, c in enumerate(clips):
            (train if i in pick else test).append(c)
    for clips in user_clips.train_pair_clips.values():
        train.extend(clips)
    test.extend(user_clips.shared_test_clips)
    test.extend(user_clips.new_test_clips)
    return train, test


@dataclass
class Corpus:
    """A generated dataset plus the ground-truth styles that produced it."""

    dataset: Dataset
    styles: dict[str, UserStyle]
    config: GenConfig = field(repr=False, default=None)


def build_dataset(config: GenConfig,
                  rng: np.random.Generator | None = None) -> Dataset:
    """Generate the full corpus and split it per the collection protocol."""
    return build_corpus(config, rng).dataset


def build_corpus(config: GenConfig,
                 rng: np.random.Generator | None = None) -> Corpus:
    if rng is None:
        rng = np.random.default_rng(config.seed)
    n_users = config.n_in_sample_users + config.n_out_sample_users
    patterns = sample_pattern_dictionary(rng)
    shared_bias = rng.uniform(-0.05, 0.05, GESTURE_DIM)
    # Independent per-user streams so generation could run in parallel.
    child_seeds = rng.integers(0, 2**63 - 1, size=n_users)

    users_in = [f"user{i:02d}" for i in range(config.n_in_sample_users)]
    users_out = [f"user{i:02d}" for i in range(config.n_in_sample_users,
                                               n_users)]
    styles: dict[str, UserStyle] = {}
    train: list[Clip] = []
    test_in: list[Clip] = []
    test_out: list[Clip] = []

    for i, uid in enumerate(users_in + users_out):
        user_rng = np.random.default_rng(child_seeds[i])
        style = sample_user_style(user_rng, uid, config, patterns,
                                   resting_bias=shared_bias)
        styles[uid] = style
        clips = generate_user_clips(uid, style, user_rng, config)
        if uid in users_in:
            tr, te = split_in_sample(clips, user_rng)
            train.extend(tr)
            test_in.extend(te)
        else:
            test_out.extend(clips.all_clips())

    keys = {s.templates[AXIS_ORDER[0]].weights.tobytes() for s in styles.values()}
    if len(keys) != n_users:
        raise RuntimeError("degenerate draw: two users share a template")

    dataset = Dataset(train=train, test_in_sample=test_in,
                      test_out_sample=test_out,
                      users_in=users_in, users_out=users_out)
    return Corpus(dataset=dataset, styles=styles, config=config)


def style_to_dict(style: UserStyle) -> dict:
    """JSON-ready form of a style (consumed by the steering console)."""
    return {
        "user_id": style.user_id,
        "motion_scale": style.motion_scale,
        "style_noise": style.style_noise,
        "resting_bias": style.resting_bias.tolist(),
        "templates": {
            ax.name: {
                "weights": tpl.weights.tolist(),
                "segments": list(tpl.segments),
                "amplitude": tpl.amplitude,
                "lag": tpl.lag,
            }
            for ax, tpl in style.templates.items()
        },
    }


def style_from_dict(obj: dict) -> UserStyle:
    templates = {
        DominantAxis[name]: AxisTemplate(
            weights=np.array(t["weights"], dtype=np.float64),
            segments=tuple(t["segments"]),
            amplitude=float(t["amplitude"]),
            lag=int(t["lag"]),
        )
        for name, t in obj["templates"].items()
    }
    return UserStyle(
        user_id=obj["user_id"],
        templates=templates,
        motion_scale=float(obj["motion_scale"]),
        resting_bias=np.array(obj["resting_bias"], dtype=np.float64),
        style_noise=float(obj["style_noise"]),
    )
