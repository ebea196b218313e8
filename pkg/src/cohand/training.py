"""Stochastic variational training.

Loss is the negative evidence bound: per-step Gaussian negative
log-likelihood of the target operations summed over time, plus the KL
between the posterior latent (context + target) and the approximate prior
(context only). Teacher forcing follows a decaying curriculum; context
clips are drawn by a same-user/same-dims policy with target slicing.
"""
from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import torch

from .domain import Clip, Dataset, DynamicGesture
from .model.checkpoint import Checkpoint, save_checkpoint
from .model.config import ModelConfig
from .model.network import (
    VAR_FLOOR,
    ConditionalHandlingModel,
    DummyLstmModel,
    GaussianLatent,
)

LOG2PI = math.log(2.0 * math.pi)


class TrainingDiverged(RuntimeError):
    def __init__(self, step: int):
        super().__init__(f"non-finite loss at optimizer step {step}")
        self.step = step


@dataclass
class TrainConfig:
    learning_rate: float = 5e-4
    batch_size: int = 32
    epochs: int = 738
    input_noise_var: float = 1e-6
    tf_initial: float = 0.9
    tf_constant_steps: int = 600
    # linear decay endpoint in optimizer steps; None resolves to 50% of the
    # total step budget at train start
    tf_end_step: int | None = None
    p_same_dims: float = 0.5   # chance the policy context clip shares dims
    p_same_user: float = 0.5   # chance the policy context clip shares user
    slice_min_frames: int = 5          # T_min
    slice_max_fraction: float = 0.5    # p_cxt
    n_context: int = 3                 # 1 policy-chosen + 2 random
    seed: int = 0
    single_threaded: bool = True
    checkpoint_every: int = 0  # epochs; 0 = final checkpoint only
    grad_clip: float | None = 10.0  # global gradient-norm bound; None = off

    def __post_init__(self):
        for name in ("p_same_dims", "p_same_user"):
            v = getattr(self, name)
            if not (0.0 <= v <= 1.0):
                raise ValueError(f"{name} must be in [0, 1]")
        if self.slice_min_frames < 1:
            raise ValueError("slice_min_frames must be >= 1")
        if not (0.0 < self.slice_max_fraction <= 1.0):
            raise ValueError("slice_max_fraction must be in (0, 1]")
        if self.tf_end_step is not None and \
                self.tf_end_step <= self.tf_constant_steps:
            raise ValueError("tf_end_step must exceed tf_constant_steps")


@dataclass
class ScheduleState:
    step: int = 0
    p_tf: float = 0.9


KNOWN_VARIANTS = (
    "main",
    "fixed-tf-0.1", "fixed-tf-0.5", "fixed-tf-0.9",
    "ctx-1.0-1.0", "ctx-0.75-0.75", "ctx-0.1-0.1",
    "dummy-lstm",
    "no-temporal",
)


@dataclass(frozen=True)
class BaselineSpec:
    """One cell of the model grid: the main model or an ablation."""

    tag: str
    fixed_tf: float | None = None
    ctx_probs: tuple[float, float] | None = None

    @property
    def is_dummy(self) -> bool:
        return self.tag == "dummy-lstm"

    @property
    def zero_prev_op(self) -> bool:
        return self.tag == "no-temporal"

    @classmethod
    def parse(cls, tag: str) -> "BaselineSpec":
        if tag == "main" or tag == "dummy-lstm" or tag == "no-temporal":
            return cls(tag=tag)
        if tag.startswith("fixed-tf-"):
            p = float(tag.removeprefix("fixed-tf-"))
            if not (0.0 <= p <= 1.0):
                raise ValueError(f"teacher forcing rate out of range: {p}")
            return cls(tag=tag, fixed_tf=p)
        if tag.startswith("ctx-"):
            parts = tag.removeprefix("ctx-").split("-")
            if len(parts) != 2:
                raise ValueError(f"bad ctx variant '{tag}'")
            return cls(tag=tag, ctx_probs=(float(parts[0]), float(parts[1])))
        raise ValueError(
            f"unknown variant '{tag}'; supported: {', '.join(KNOWN_VARIANTS)}")


# ---------------------------------------------------------------------------
# losses

def _latent_pair(q: GaussianLatent | tuple) -> tuple[torch.Tensor, torch.Tensor]:
    if isinstance(q, GaussianLatent):
        return q.mean, q.var
    return q


def gaussian_kl(q: GaussianLatent, p: GaussianLatent) -> torch.Tensor:
    """Closed-form KL between diagonal Gaussians, summed over dimensions."""
    qm, qv = _latent_pair(q)
    pm, pv = _latent_pair(p)
    if qm.shape != pm.shape or qv.shape != pv.shape:
        raise ValueError("latent dimension mismatch")
    if (qv <= 0).any() or (pv <= 0).any():
        raise ValueError("variances must be positive")
    return 0.5 * (torch.log(pv / qv) + (qv + (qm - pm) ** 2) / pv - 1.0).sum()


def gaussian_nll(y, mean, var) -> torch.Tensor:
    """Negative log density of a diagonal Gaussian, summed over components."""
    y = torch.as_tensor(np.asarray(y, dtype=np.float64)) \
        if not torch.is_tensor(y) else y
    if not torch.is_tensor(mean):
        mean = torch.as_tensor(np.asarray(mean, dtype=np.float64))
    if not torch.is_tensor(var):
        var = torch.as_tensor(np.asarray(var, dtype=np.float64))
    if (var <= 0).any():
        raise ValueError("variances must be positive")
    return 0.5 * (torch.log(2.0 * math.pi * var) + (y - mean) ** 2 / var).sum()


def _nll_rows(y: torch.Tensor, mean: torch.Tensor,
              var: torch.Tensor) -> torch.Tensor:
    """Per-row Gaussian NLL for (B, D) tensors."""
    return 0.5 * (torch.log(var) + LOG2PI + (y - mean) ** 2 / var).sum(dim=-1)


# ---------------------------------------------------------------------------
# curriculum and input augmentation

def tf_schedule(step: int, cfg: TrainConfig) -> float:
    """Ground-truth feed probability at an optimizer step: constant, then
    linear to zero at the configured endpoint."""
    if step < 0:
        raise ValueError("step must be >= 0")
    if cfg.tf_end_step is None:
        raise ValueError("tf_end_step not resolved; set it or call train()")
    if step <= cfg.tf_constant_steps:
        return cfg.tf_initial
    if step >= cfg.tf_end_step:
        return 0.0
    frac = (cfg.tf_end_step - step) / (cfg.tf_end_step - cfg.tf_constant_steps)
    return cfg.tf_initial * frac


def teacher_mask(p_tf: float, length: int,
                 rng: np.random.Generator) -> np.ndarray:
    """Independent per-step draws: True feeds ground truth."""
    if not (0.0 <= p_tf <= 1.0):
        raise ValueError("p_tf must be in [0, 1]")
    return rng.random(length) < p_tf


def perturb_input(gesture: DynamicGesture, variance: float,
                  rng: np.random.Generator) -> DynamicGesture:
    """Add i.i.d. zero-mean Gaussian noise to every gesture feature."""
    if variance < 0:
        raise ValueError("variance must be >= 0")
    if variance == 0:
        return gesture
    noise = rng.normal(0.0, math.sqrt(variance), size=gesture.frames.shape)
    return DynamicGesture((gesture.frames.astype(np.float64) + noise)
                          .astype(np.float32), gesture.rate_hz)


# ---------------------------------------------------------------------------
# context sampling

def _slice_clip(clip: Clip, cfg: TrainConfig, rng: np.random.Generator) -> Clip:
    n = len(clip)
    m = int(math.floor(cfg.slice_max_fraction * n))
    k_min = min(cfg.slice_min_frames, m)
    k = int(rng.integers(k_min, m + 1))
    t0 = int(rng.integers(0, m - k + 1))
    return Clip(
        user_id=clip.user_id, clip_id=f"{clip.clip_id}:slice{t0}+{k}",
        gesture=DynamicGesture(clip.gesture.frames[t0:t0 + k],
                               clip.gesture.rate_hz),
        operation=type(clip.operation)(clip.operation.frames[t0:t0 + k],
                                       clip.operation.rate_hz),
        active_dims=clip.active_dims)


def sample_context(dataset: Dataset, target: Clip, cfg: TrainConfig,
                   rng: np.random.Generator) -> list[Clip]:
    """Draw the training context: one policy-chosen clip plus two random.

    The policy clip matches the target's user with probability p_same_user
    and its active dimensions with probability p_same_dims. If the draw
    lands on the target clip itself, a strict slice of the target stands in;
    the target never appears unsliced in its own context.
    """
    pool = dataset.train
    if len(pool) < 4:
        raise ValueError("dataset too small: need at least 4 train clips")
    same_user = rng.random() < cfg.p_same_user
    same_dims = rng.random() < cfg.p_same_dims

    def match(c: Clip) -> bool:
        if (c.user_id == target.user_id) != same_user:
            return False
        return (c.active_dims == target.active_dims) == same_dims

    candidates = [c for c in pool if match(c)]
    if not candidates:
        candidates = [c for c in pool
                      if (c.user_id == target.user_id) == same_user]
    if not candidates:
        candidates = pool
    chosen = candidates[int(rng.integers(len(candidates)))]
    if chosen.clip_id == target.clip_id:
        chosen = _slice_clip(target, cfg, rng)

    others = [c for c in pool if c.clip_id != target.clip_id]
    n_rand = cfg.n_context - 1
    if len(others) >= n_rand:
        idx = rng.choice(len(others), size=n_rand, replace=False)
    else:
        idx = rng.choice(len(others), size=n_rand, replace=True)
    return [chosen] + [others[int(i)] for i in idx]


# ---------------------------------------------------------------------------
# reference ELBO (single target group, unbatched)

def clip_tensors(clip: Clip, dtype: torch.dtype,
                 ) -> tuple[torch.Tensor, torch.Tensor]:
    x = torch.as_tensor(clip.gesture.frames.reshape(len(clip), -1), dtype=dtype)
    y = torch.as_tensor(clip.operation.frames, dtype=dtype)
    return x, y


def elbo_loss(model: ConditionalHandlingModel, targets: list[Clip],
              contexts: list[Clip], rng: np.random.Generator,
              state: ScheduleState,
              draws: tuple[list[np.ndarray], np.ndarray] | None = None,
              ) -> tuple[torch.Tensor, dict]:
    """Negative evidence bound for one target group and its context set.

    The posterior encodes context plus targets, the approximate prior
    context only; z is one reparameterized posterior draw. Per-sample
    randomness is (teacher masks in target order, then the latent draw);
    ``draws`` injects both for cross-implementation checks.
    """
    if not targets or not contexts:
        raise ValueError("need nonempty target and context sets")
    dtype = model.dtype
    ctx_pairs = [clip_tensors(c, dtype) for c in contexts]
    tgt_pairs = [clip_tensors(c, dtype) for c in targets]

    ctx_encs = [model.encode_clip(x, y) for x, y in ctx_pairs]
    tgt_encs = [model.encode_clip(x, y) for x, y in tgt_pairs]
    prior = model.latent_from(ctx_encs)
    posterior = model.latent_from(ctx_encs + tgt_encs)
    enc = model.context_from(ctx_encs)

    if draws is None:
        masks = [teacher_mask(state.p_tf, len(t), rng) for t in targets]
        eps = rng.standard_normal(model.cfg.latent_dim)
    else:
        masks, eps = draws
    z = posterior.mean + torch.sqrt(posterior.var) * \
        torch.as_tensor(eps, dtype=dtype)

    nll = torch.zeros((), dtype=dtype)
    se = 0.0
    n_frames = 0
    for (x, y), mask in zip(tgt_pairs, masks):
        out = model.rollout(x, enc, z, teacher=(y, mask))
        nll = nll + _nll_rows(y, out.means, out.variances).sum()
        se += float(((out.means.detach() - y) ** 2).sum())
        n_frames += len(x)
    kl = gaussian_kl(posterior, prior)
    loss = nll + kl
    metrics = {
        "nll": float(nll.detach()),
        "kl": float(kl.detach()),
        "mse": se / (n_frames * model.cfg.op_dim),
        "p_tf": state.p_tf,
    }
    return loss, metrics


# ---------------------------------------------------------------------------
# packed batch path (training speed; semantics defined by elbo_loss)

@dataclass
class ElboSample:
    """One batch element: a target clip, its context clips, and its draws."""

    target: tuple[torch.Tensor, torch.Tensor]
    contexts: list[tuple[torch.Tensor, torch.Tensor]]
    mask: np.ndarray
    eps: np.ndarray


def _pad_time_np(seqs: list[np.ndarray], np_dtype) -> np.ndarray:
    """Stack (N_i, D) arrays into (T_max, B, D), zero padded."""
    t_max = max(s.shape[0] for s in seqs)
    out = np.zeros((t_max, len(seqs), seqs[0].shape[1]), dtype=np_dtype)
    for i, s in enumerate(seqs):
        out[:s.shape[0], i] = s
    return out


def _encode_all(model: ConditionalHandlingModel,
                pairs: list[tuple[torch.Tensor, torch.Tensor]],
                ) -> tuple[torch.Tensor, torch.Tensor, list[int]]:
    """Padded batched encoder pass over clips.

    Returns hidden states (T, B, H), per-clip aggregation sums (B, H), and
    clip lengths. Padded steps run on zero inputs and are excluded from the
    sums by exact zero masking. Input pads are assembled in numpy so the
    autograd graph sees whole tensors, not per-clip slice writes.
    """
    dtype = model.dtype
    np_dtype = np.float64 if dtype == torch.float64 else np.float32
    lengths = [x.shape[0] for x, _ in pairs]
    t_max = max(lengths)
    b = len(pairs)
    xs_np = _pad_time_np([x.numpy() for x, _ in pairs], np_dtype)
    ys_np = _pad_time_np([y.numpy() for _, y in pairs], np_dtype)
    y_lag_np = np.zeros_like(ys_np)
    y_lag_np[1:] = ys_np[:-1]
    valid_np = np.zeros((t_max, b), dtype=np_dtype)
    for i, n in enumerate(lengths):
        valid_np[:n, i] = 1.0
    xs = torch.from_numpy(xs_np)
    ys = torch.from_numpy(ys_np)
    y_lag = torch.from_numpy(y_lag_np)
    valid = torch.from_numpy(valid_np)

    state = model.enc_cell.zero_state(b, dtype)
    hs = []
    xs_t = xs.unbind(0)
    y_lag_t = y_lag.unbind(0)
    for t in range(t_max):
        state = model.enc_cell.step(xs_t[t], model._cell_y(y_lag_t[t]), state)
        hs.append(state[0])
    h_stack = torch.stack(hs)  # (T, B, H)
    feats = model.agg(torch.cat([h_stack, ys], dim=-1))
    sums = (feats * valid.unsqueeze(-1)).sum(dim=0)  # (B, H)
    return h_stack, sums, lengths


def _canonical_mean(sums: list[torch.Tensor], counts: list[int]) -> torch.Tensor:
    order = sorted(range(len(sums)),
                   key=lambda i: sums[i].detach().numpy().tobytes())
    acc = sums[order[0]]
    for i in order[1:]:
        acc = acc + sums[i]
    return acc / sum(counts)


@dataclass
class BatchOutputs:
    """Per-sample results of one vectorized pass."""

    nll: torch.Tensor      # (S,)
    kl: torch.Tensor       # (S,)
    se: torch.Tensor       # (S,) detached squared-error sums
    lengths: list[int]


def run_batch(model: ConditionalHandlingModel, samples: list[ElboSample],
              z_from_posterior: bool, teacher: bool) -> BatchOutputs:
    """One vectorized encoder + decoder pass over independent samples.

    Matches the unbatched reference semantics per sample: padded positions
    are excluded from every sum by exact zero or -inf masking. Training
    uses the posterior latent and teacher masks; evaluation uses the prior
    latent with a fully autoregressive rollout.
    """
    dtype = model.dtype
    np_dtype = np.float64 if dtype == torch.float64 else np.float32
    s_count = len(samples)

    clip_pairs: list[tuple[torch.Tensor, torch.Tensor]] = []
    ctx_slots: list[list[int]] = []
    tgt_slot: list[int] = []
    for s in samples:
        slots = []
        for pair in s.contexts:
            slots.append(len(clip_pairs))
            clip_pairs.append(pair)
        ctx_slots.append(slots)
        tgt_slot.append(len(clip_pairs))
        clip_pairs.append(s.target)

    h_stack, sums, lengths = _encode_all(model, clip_pairs)
    t_enc, n_clips = h_stack.shape[0], h_stack.shape[1]

    # aggregation as one selection matmul: row i holds 1/total_i at the
    # columns of sample i's clips
    sel_prior = np.zeros((s_count, n_clips), dtype=np_dtype)
    sel_post = np.zeros((s_count, n_clips), dtype=np_dtype)
    for i, slots in enumerate(ctx_slots):
        n_prior = sum(lengths[j] for j in slots)
        for j in slots:
            sel_prior[i, j] = 1.0 / n_prior
        n_post = n_prior + lengths[tgt_slot[i]]
        for j in slots + [tgt_slot[i]]:
            sel_post[i, j] = 1.0 / n_post
    s_prior = torch.from_numpy(sel_prior) @ sums
    s_post = torch.from_numpy(sel_post) @ sums
    prior_mean, prior_var = model.latent_head(s_prior)
    post_mean, post_var = model.latent_head(s_post)
    eps = torch.as_tensor(np.stack([s.eps for s in samples]), dtype=dtype)
    if z_from_posterior:
        z = post_mean + torch.sqrt(post_var) * eps
    else:
        z = prior_mean + torch.sqrt(prior_var) * eps

    kl_rows = 0.5 * (torch.log(prior_var / post_var)
                     + (post_var + (post_mean - prior_mean) ** 2) / prior_var
                     - 1.0).sum(dim=-1)

    # per-sample context keys/values via one padded gather: row indices into
    # the flattened (T*B) hidden states, with a trailing zero row as pad
    n_ctx_frames = [sum(lengths[j] for j in slots) for slots in ctx_slots]
    n_max = max(n_ctx_frames)
    pad_row = t_enc * n_clips
    gather_idx = np.full((s_count, n_max), pad_row, dtype=np.int64)
    key_ok_np = np.zeros((s_count, n_max), dtype=bool)
    values_np = np.zeros((s_count, n_max, model.cfg.op_dim), dtype=np_dtype)
    for i, slots in enumerate(ctx_slots):
        at = 0
        for j in slots:
            n = lengths[j]
            # h_stack flattens time-major: row t*n_clips + j
            gather_idx[i, at:at + n] = np.arange(n) * n_clips + j
            key_ok_np[i, at:at + n] = True
            values_np[i, at:at + n] = clip_pairs[j][1].numpy()
            at += n
    h_flat = torch.cat([h_stack.reshape(t_enc * n_clips, -1),
                        torch.zeros(1, model.cfg.hidden, dtype=dtype)], dim=0)
    keys_h = h_flat[torch.from_numpy(gather_idx.reshape(-1))] \
        .reshape(s_count, n_max, -1)
    key_emb = model.embed(keys_h)
    key_ok = torch.from_numpy(key_ok_np)
    values = torch.from_numpy(values_np)

    tgt_len = [s.target[0].shape[0] for s in samples]
    t_max = max(tgt_len)
    tgt_x = torch.from_numpy(
        _pad_time_np([s.target[0].numpy() for s in samples], np_dtype))
    tgt_y = torch.from_numpy(
        _pad_time_np([s.target[1].numpy() for s in samples], np_dtype))
    valid_np = np.zeros((t_max, s_count), dtype=np_dtype)
    feed_np = np.zeros((t_max, s_count), dtype=bool)
    for i, s in enumerate(samples):
        valid_np[:tgt_len[i], i] = 1.0
        if teacher:
            feed_np[:tgt_len[i], i] = s.mask
    valid = torch.from_numpy(valid_np)
    feed = torch.from_numpy(feed_np)

    state = model.dec_cell.zero_state(s_count, dtype)
    y_prev = torch.zeros(s_count, model.cfg.op_dim, dtype=dtype)
    nll_acc = torch.zeros(s_count, dtype=dtype)
    means_hist = []
    tgt_x_t = tgt_x.unbind(0)
    tgt_y_t = tgt_y.unbind(0)
    valid_t = valid.unbind(0)
    feed_t = [f.unsqueeze(1) for f in feed.unbind(0)]
    neg_inf_mask = ~key_ok
    for t in range(t_max):
        state = model.dec_cell.step(tgt_x_t[t], model._cell_y(y_prev), state)
        h = state[0]
        q = model.embed(h)
        logits = torch.bmm(key_emb, q.unsqueeze(2)).squeeze(2)  # (S, N)
        logits = logits.masked_fill(neg_inf_mask, float("-inf"))
        w = torch.softmax(logits, dim=1)
        r = torch.bmm(w.unsqueeze(1), values).squeeze(1)  # (S, 6)
        out = model.out_heads(torch.cat([r, h, z], dim=1))
        mean = out[..., 0]
        if model.cfg.attention_residual:
            mean = mean + r
        var = torch.nn.functional.softplus(out[..., 1]) + VAR_FLOOR
        nll_acc = nll_acc + _nll_rows(tgt_y_t[t], mean, var) * valid_t[t]
        means_hist.append(mean)
        if teacher:
            y_prev = torch.where(feed_t[t], tgt_y_t[t], mean)
        else:
            y_prev = mean

    with torch.no_grad():
        all_means = torch.stack(means_hist)  # (T, S, 6)
        se = (((all_means - tgt_y) ** 2).sum(dim=2) * valid).sum(dim=0)

    return BatchOutputs(nll=nll_acc, kl=kl_rows, se=se, lengths=tgt_len)


def elbo_loss_batch(model: ConditionalHandlingModel,
                    samples: list[ElboSample],
                    ) -> tuple[torch.Tensor, dict]:
    """Vectorized negative evidence bound over independent batch samples;
    exactly the elbo_loss objective per sample."""
    out = run_batch(model, samples, z_from_posterior=True, teacher=True)
    nll = out.nll.sum()
    kl = out.kl.sum()
    loss = nll + kl
    frames = sum(out.lengths)
    metrics = {
        "nll": float(nll.detach()),
        "kl": float(kl.detach()),
        "mse": float(out.se.sum()) / (frames * model.cfg.op_dim),
    }
    return loss, metrics


def run_batch_dummy(model: DummyLstmModel, samples: list[ElboSample],
                    teacher: bool) -> BatchOutputs:
    """Vectorized pass for the context-free baseline (likelihood only)."""
    dtype = model.dtype
    np_dtype = np.float64 if dtype == torch.float64 else np.float32
    s_count = len(samples)
    tgt_len = [s.target[0].shape[0] for s in samples]
    t_max = max(tgt_len)
    tgt_x = torch.from_numpy(
        _pad_time_np([s.target[0].numpy() for s in samples], np_dtype))
    tgt_y = torch.from_numpy(
        _pad_time_np([s.target[1].numpy() for s in samples], np_dtype))
    valid_np = np.zeros((t_max, s_count), dtype=np_dtype)
    feed_np = np.zeros((t_max, s_count), dtype=bool)
    for i, s in enumerate(samples):
        valid_np[:tgt_len[i], i] = 1.0
        if teacher:
            feed_np[:tgt_len[i], i] = s.mask
    valid = torch.from_numpy(valid_np)
    feed = torch.from_numpy(feed_np)

    s1 = model.cell.zero_state(s_count, dtype)
    s2 = model.cell.zero_state(s_count, dtype)
    y_prev = torch.zeros(s_count, model.cfg.op_dim, dtype=dtype)
    nll_acc = torch.zeros(s_count, dtype=dtype)
    means_hist = []
    for t in range(t_max):
        s1 = model.cell.step(tgt_x[t], y_prev, s1)
        s2 = model.lstm2(s1[0], s2)
        out = model.out_heads(s2[0])
        mean = out[..., 0]
        var = torch.nn.functional.softplus(out[..., 1]) + VAR_FLOOR
        nll_acc = nll_acc + _nll_rows(tgt_y[t], mean, var) * valid[t]
        means_hist.append(mean)
        if teacher:
            y_prev = torch.where(feed[t].unsqueeze(1), tgt_y[t], mean)
        else:
            y_prev = mean

    with torch.no_grad():
        all_means = torch.stack(means_hist)
        se = (((all_means - tgt_y) ** 2).sum(dim=2) * valid).sum(dim=0)
    return BatchOutputs(nll=nll_acc, kl=torch.zeros(s_count, dtype=dtype),
                        se=se, lengths=tgt_len)


def nll_loss_batch_dummy(model: DummyLstmModel, samples: list[ElboSample],
                         ) -> tuple[torch.Tensor, dict]:
    """Likelihood-only training objective for the context-free baseline."""
    out = run_batch_dummy(model, samples, teacher=True)
    nll = out.nll.sum()
    frames = sum(out.lengths)
    metrics = {
        "nll": float(nll.detach()),
        "kl": 0.0,
        "mse": float(out.se.sum()) / (frames * model.cfg.op_dim),
    }
    return nll, metrics


# ---------------------------------------------------------------------------
# optimizer loop

def resolve_tf_end(cfg: TrainConfig, total_steps: int) -> TrainConfig:
    if cfg.tf_end_step is not None:
        return cfg
    end = max(cfg.tf_constant_steps + 1, total_steps // 2)
    return replace(cfg, tf_end_step=end)


def train(cfg: TrainConfig, spec: BaselineSpec, dataset: Dataset,
          out_dir, model_cfg: ModelConfig | None = None) -> Path:
    """Run the full optimization for one grid cell and write checkpoints.

    Reproducible bit-for-bit given (cfg.seed, single_threaded=True): all
    randomness flows from one generator and the batch order is fixed.
    """
    if not dataset.train:
        raise ValueError("dataset has no train split")
    if cfg.single_threaded:
        torch.set_num_threads(1)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    if spec.ctx_probs is not None:
        cfg = replace(cfg, p_same_dims=spec.ctx_probs[0],
                      p_same_user=spec.ctx_probs[1])
    if model_cfg is None:
        model_cfg = ModelConfig()
    if spec.zero_prev_op:
        model_cfg = ModelConfig.from_dict(
            {**model_cfg.to_dict(), "zero_prev_op": True})

    steps_per_epoch = len(dataset.train) // cfg.batch_size
    if steps_per_epoch == 0:
        raise ValueError("batch size exceeds the train split")
    total_steps = steps_per_epoch * cfg.epochs
    cfg = resolve_tf_end(cfg, total_steps)

    rng = np.random.default_rng(cfg.seed)
    kind = "dummy_lstm" if spec.is_dummy else "cchp"
    if spec.is_dummy:
        model = DummyLstmModel(model_cfg, seed=cfg.seed)
    else:
        model = ConditionalHandlingModel(model_cfg, seed=cfg.seed)
    optimizer = torch.optim.Adam(model.parameters(), lr=cfg.learning_rate)

    tensor_cache: dict[str, tuple[torch.Tensor, torch.Tensor]] = {}

    def tensors(clip: Clip):
        hit = tensor_cache.get(clip.clip_id)
        if hit is None:
            hit = clip_tensors(clip, model_cfg.torch_dtype)
            tensor_cache[clip.clip_id] = hit
        return hit

    state = ScheduleState(step=0, p_tf=cfg.tf_initial)
    metrics_path = out_dir / "metrics.jsonl"
    log = open(metrics_path, "a", encoding="utf-8")
    started = time.monotonic()
    try:
        for epoch in range(cfg.epochs):
            perm = rng.permutation(len(dataset.train))
            for b in range(steps_per_epoch):
                t0 = time.monotonic()
                if spec.fixed_tf is not None:
                    p_tf = spec.fixed_tf
                else:
                    p_tf = tf_schedule(state.step, cfg)
                state.p_tf = p_tf

                batch = [dataset.train[i]
                         for i in perm[b * cfg.batch_size:
                                       (b + 1) * cfg.batch_size]]
                samples = []
                for clip in batch:
                    if spec.is_dummy:
                        ctx_pairs = []
                    else:
                        ctx = sample_context(dataset, clip, cfg, rng)
                        ctx_pairs = [tensors(c) if ":slice" not in c.clip_id
                                     else clip_tensors(c, model_cfg.torch_dtype)
                                     for c in ctx]
                    gesture = perturb_input(clip.gesture, cfg.input_noise_var,
                                            rng)
                    x = torch.as_tensor(
                        gesture.frames.reshape(len(clip), -1),
                        dtype=model_cfg.torch_dtype)
                    _, y = tensors(clip)
                    mask = teacher_mask(p_tf, len(clip), rng)
                    eps = rng.standard_normal(model_cfg.latent_dim)
                    samples.append(ElboSample(target=(x, y),
                                              contexts=ctx_pairs,
                                              mask=mask, eps=eps))

                if spec.is_dummy:
                    loss, m = nll_loss_batch_dummy(model, samples)
                else:
                    loss, m = elbo_loss_batch(model, samples)
                if not torch.isfinite(loss):
                    raise TrainingDiverged(state.step)
                optimizer.zero_grad()
                (loss / cfg.batch_size).backward()
                if cfg.grad_clip is not None:
                    torch.nn.utils.clip_grad_norm_(model.parameters(),
                                                   cfg.grad_clip)
                optimizer.step()

                loss_sum = m["nll"] + m["kl"]
                log.write(json.dumps({
                    "step": state.step, "epoch": epoch,
                    "loss": loss_sum, "nll": m["nll"], "kl": m["kl"],
                    "mse": m["mse"], "p_tf": p_tf,
                    "wall_ms": (time.monotonic() - t0) * 1e3,
                }) + "\n")
                state.step += 1

            if cfg.checkpoint_every and (epoch + 1) % cfg.checkpoint_every == 0 \
                    and epoch + 1 < cfg.epochs:
                _save(model, model_cfg, spec, kind, state, cfg, rng,
                      out_dir / f"checkpoint-{epoch + 1:05d}")
        log.write(json.dumps({
            "done": True, "steps": state.step,
            "wall_s": time.monotonic() - started}) + "\n")
    finally:
        log.close()

    return _save(model, model_cfg, spec, kind, state, cfg, rng,
                 out_dir / "checkpoint")


def _save(model, model_cfg, spec, kind, state, cfg, rng, path) -> Path:
    ck = Checkpoint(
        model=model, config=model_cfg, variant=spec.tag, kind=kind,
        step=state.step,
        schedule={"p_tf": state.p_tf, "step": state.step,
                  "tf_constant_steps": cfg.tf_constant_steps,
                  "tf_end_step": cfg.tf_end_step},
        rng_state=_jsonable_rng_state(rng),
        extra={"seed": cfg.seed, "epochs": cfg.epochs,
               "batch_size": cfg.batch_size,
               "learning_rate": cfg.learning_rate})
    return save_checkpoint(ck, path)


def _jsonable_rng_state(rng: np.random.Generator) -> dict:
    def conv(v):
        if isinstance(v, dict):
            return {k: conv(x) for k, x in v.items()}
        if isinstance(v, np.ndarray):
            return v.tolist()
        if isinstance(v, (np.integer,)):
            return int(v)
        return v
    return conv(rng.bit_generator.state)
