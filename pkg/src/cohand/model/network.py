"""The handling-process network.

A recurrent encoder maps (gesture, operation) sequences to a diagonal
Gaussian over a latent z; a recurrent decoder with dot-product attention
over encoded context frames emits a per-step Gaussian over the 6-D
operation. Parameters are owned by standard modules so every weight has a
stable name for checkpoints.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from .config import ModelConfig

# Predicted standard deviations are bounded below at 0.1. An unbounded
# (or near-zero-floor) variance head lets the likelihood collapse variances
# on easy dimensions, and the resulting 1/var gradient weights stall the
# mean pathway for thousands of steps.
VAR_FLOOR = 1e-2


# ---------------------------------------------------------------------------
# initialization: fan-in-scaled uniform feed-forward, orthogonal recurrent

def _uniform_(rng: np.random.Generator, t: torch.Tensor, fan_in: int) -> None:
    bound = 1.0 / np.sqrt(fan_in) if fan_in > 0 else 0.0
    with torch.no_grad():
        t.copy_(torch.from_numpy(
            rng.uniform(-bound, bound, size=tuple(t.shape))).to(t.dtype))


def _orthogonal(rng: np.random.Generator, n: int) -> np.ndarray:
    a = rng.standard_normal((n, n))
    q, r = np.linalg.qr(a)
    return q * np.sign(np.diag(r))


def _init_lstm(rng: np.random.Generator, cell: nn.LSTMCell) -> None:
    _uniform_(rng, cell.weight_ih, cell.input_size)
    blocks = [_orthogonal(rng, cell.hidden_size) for _ in range(4)]
    with torch.no_grad():
        cell.weight_hh.copy_(torch.from_numpy(np.concatenate(blocks, axis=0))
                             .to(cell.weight_hh.dtype))
        cell.bias_ih.zero_()
        cell.bias_hh.zero_()


class MLP(nn.Module):
    """Linear stack with ReLU between layers.

    ``relu_out`` appends a ReLU after the final linear as well, for trunks
    whose listed layers are all hidden.
    """

    def __init__(self, sizes: list[int], rng: np.random.Generator,
                 relu_out: bool = False):
        super().__init__()
        self.layers = nn.ModuleList(
            nn.Linear(sizes[i], sizes[i + 1]) for i in range(len(sizes) - 1))
        self.relu_out = relu_out
        for lin in self.layers:
            _uniform_(rng, lin.weight, lin.in_features)
            _uniform_(rng, lin.bias, lin.in_features)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        last = len(self.layers) - 1
        for i, lin in enumerate(self.layers):
            x = lin(x)
            if i < last or self.relu_out:
                x = torch.relu(x)
        return x


class RecurrentCell(nn.Module):
    """One step of the gesture interpreter.

    Each hand segment passes through a shared per-segment MLP; the segment
    features plus the previous hidden state form the hand feature, which is
    concatenated with the previous operation and fed to an LSTM cell.
    """

    def __init__(self, cfg: ModelConfig, rng: np.random.Generator):
        super().__init__()
        self.cfg = cfg
        self.finger = MLP(cfg.finger_layers, rng)
        self.hand = MLP(cfg.hand_layers, rng)
        self.lstm = nn.LSTMCell(cfg.cell_input, cfg.hidden)
        _init_lstm(rng, self.lstm)

    def step(self, x: torch.Tensor, y_prev: torch.Tensor,
             state: tuple[torch.Tensor, torch.Tensor],
             ) -> tuple[torch.Tensor, torch.Tensor]:
        """(B, 36) gesture + (B, 6) previous operation + (h, c) -> (h, c)."""
        h_prev, c_prev = state
        b = x.shape[0]
        segs = x.reshape(b, self.cfg.n_segments, self.cfg.segment_dim)
        seg_feat = self.finger(segs).reshape(b, -1)
        hand_feat = self.hand(torch.cat([seg_feat, h_prev], dim=-1))
        return self.lstm(torch.cat([hand_feat, y_prev], dim=-1),
                         (h_prev, c_prev))

    def zero_state(self, batch: int, dtype: torch.dtype,
                   ) -> tuple[torch.Tensor, torch.Tensor]:
        z = torch.zeros(batch, self.cfg.hidden, dtype=dtype)
        return z, z.clone()


class OutputHeads(nn.Module):
    """Six independent (mean, variance) heads, one per motion dimension,
    evaluated with stacked weights."""

    def __init__(self, sizes: list[int], n_heads: int,
                 rng: np.random.Generator):
        super().__init__()
        self.n_heads = n_heads
        self.weights = nn.ParameterList()
        self.biases = nn.ParameterList()
        for i in range(len(sizes) - 1):
            w = nn.Parameter(torch.empty(n_heads, sizes[i + 1], sizes[i]))
            b = nn.Parameter(torch.empty(n_heads, sizes[i + 1]))
            _uniform_(rng, w, sizes[i])
            _uniform_(rng, b, sizes[i])
            self.weights.append(w)
            self.biases.append(b)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        """(B, in) -> (B, n_heads, 2)."""
        # first layer shares the input row across heads: one flat matmul,
        # then head-major bmm for the per-head stacks
        w0, b0 = self.weights[0], self.biases[0]
        out0 = w0.shape[1]
        h = torch.addmm(b0.reshape(-1), x, w0.reshape(-1, w0.shape[2]).t())
        h = torch.relu(h).reshape(-1, self.n_heads, out0).transpose(0, 1)
        last = len(self.weights) - 1
        for i in range(1, len(self.weights)):
            w, b = self.weights[i], self.biases[i]
            h = torch.baddbmm(b.unsqueeze(1), h, w.transpose(1, 2))
            if i < last:
                h = torch.relu(h)
        return h.transpose(0, 1)


class LatentHead(nn.Module):
    """Trunk plus (mean, variance) heads producing the latent Gaussian."""

    def __init__(self, cfg: ModelConfig, rng: np.random.Generator):
        super().__init__()
        self.trunk = MLP(cfg.latent_trunk_layers, rng, relu_out=True)
        self.mean_head = nn.Linear(cfg.hidden, cfg.latent_dim)
        self.var_head = nn.Linear(cfg.hidden, cfg.latent_dim)
        for lin in (self.mean_head, self.var_head):
            _uniform_(rng, lin.weight, lin.in_features)
            _uniform_(rng, lin.bias, lin.in_features)

    def forward(self, s: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        t = self.trunk(s)
        mean = self.mean_head(t)
        var = nn.functional.softplus(self.var_head(t)) + VAR_FLOOR
        return mean, var


@dataclass
class GaussianLatent:
    """Diagonal Gaussian over the latent: strictly positive variance."""

    mean: torch.Tensor  # (D,)
    var: torch.Tensor   # (D,)

    @property
    def dim(self) -> int:
        return self.mean.shape[-1]

    def detached(self) -> "GaussianLatent":
        return GaussianLatent(self.mean.detach(), self.var.detach())


@dataclass
class ClipEncoding:
    """Per-clip encoder outputs shared between prior and posterior."""

    h_seq: torch.Tensor    # (N, H)
    y_seq: torch.Tensor    # (N, 6)
    agg_sum: torch.Tensor  # (H,) sum of per-frame aggregation features
    n_frames: int


@dataclass
class ContextEncoding:
    """Everything the decoder needs about a context set."""

    h_c: torch.Tensor        # (N_C, H) hidden states, clips concatenated
    y_c: torch.Tensor        # (N_C, 6) context operations
    key_emb: torch.Tensor    # (N_C, E) attention key embeddings
    latent: GaussianLatent   # approximate prior from context only
    s_c: torch.Tensor        # (H,) aggregated summary
    boundaries: list[tuple[int, int]]  # [start, end) per context clip
    n_frames: int

    def detached(self) -> "ContextEncoding":
        return ContextEncoding(self.h_c.detach(), self.y_c.detach(),
                               self.key_emb.detach(), self.latent.detached(),
                               self.s_c.detach(), list(self.boundaries),
                               self.n_frames)


@dataclass
class StepPrediction:
    """One decoder step: operation Gaussian plus attention introspection."""

    mean: torch.Tensor       # (6,)
    var: torch.Tensor        # (6,)
    state: tuple[torch.Tensor, torch.Tensor]
    r: torch.Tensor          # (6,) attention readout
    attention: torch.Tensor  # (N_C,)


@dataclass
class RolloutResult:
    means: torch.Tensor      # (N, 6)
    variances: torch.Tensor  # (N, 6)
    attention: torch.Tensor  # (N, N_C)
    final_state: tuple[torch.Tensor, torch.Tensor]


def attention_from_embeddings(key_emb: torch.Tensor, query_emb: torch.Tensor,
                              values: torch.Tensor,
                              ) -> tuple[torch.Tensor, torch.Tensor]:
    """Softmax dot-product attention over a context set.

    key_emb (N, E), query_emb (E,), values (N, D) -> weights (N,) summing
    to 1 and the weighted value sum (D,).
    """
    logits = key_emb @ query_emb
    weights = torch.softmax(logits, dim=0)
    return weights, weights @ values


def sample_latent(latent: GaussianLatent, rng: np.random.Generator,
                  ) -> torch.Tensor:
    """Reparameterized draw z = mean + sqrt(var) * eps; gradients flow to
    the Gaussian's parameters."""
    eps = torch.from_numpy(rng.standard_normal(latent.dim)).to(latent.mean.dtype)
    return latent.mean + torch.sqrt(latent.var) * eps


class ConditionalHandlingModel(nn.Module):
    """Latent-conditioned gesture-to-operation sequence model."""

    def __init__(self, cfg: ModelConfig, seed: int = 0):
        super().__init__()
        self.cfg = cfg
        rng = np.random.default_rng(seed)
        self.enc_cell = RecurrentCell(cfg, rng)
        self.agg = MLP(cfg.agg_layers, rng)
        self.latent_head = LatentHead(cfg, rng)
        if cfg.share_decoder_cell:
            self.dec_cell = self.enc_cell
        else:
            self.dec_cell = RecurrentCell(cfg, rng)
        self.kq = nn.Linear(cfg.kq_layers[0], cfg.kq_layers[1])
        _uniform_(rng, self.kq.weight, self.kq.in_features)
        _uniform_(rng, self.kq.bias, self.kq.in_features)
        # learnable embedding scale (a reparameterization of the key/query
        # map: scaling its output sharpens the softmax)
        self.kq_log_gain = nn.Parameter(torch.zeros(1))
        self.out_heads = OutputHeads(cfg.head_layers, cfg.op_dim, rng)
        self.to(cfg.torch_dtype)

    # -- tensor plumbing ---------------------------------------------------

    @property
    def dtype(self) -> torch.dtype:
        return self.cfg.torch_dtype

    def tensor(self, a) -> torch.Tensor:
        return torch.as_tensor(np.asarray(a), dtype=self.dtype)

    def _cell_y(self, y: torch.Tensor) -> torch.Tensor:
        # The no-temporal-dependency ablation severs the previous-operation
        # input everywhere.
        return torch.zeros_like(y) if self.cfg.zero_prev_op else y

    def embed(self, h: torch.Tensor) -> torch.Tensor:
        """Key/query embedding: the linear map with its learnable scale."""
        return self.kq(h) * torch.exp(0.5 * self.kq_log_gain)

    # -- encoder -----------------------------------------------------------

    def encode_clip(self, x: torch.Tensor, y: torch.Tensor) -> ClipEncoding:
        """Run the encoder over one clip; state starts at zero and the
        step-t input includes the clip's own operation at t-1."""
        n = x.shape[0]
        if n == 0:
            raise ValueError("cannot encode an empty clip")
        state = self.enc_cell.zero_state(1, self.dtype)
        y_prev = torch.zeros(1, self.cfg.op_dim, dtype=self.dtype)
        hs = []
        for t in range(n):
            state = self.enc_cell.step(x[t:t + 1], self._cell_y(y_prev), state)
            hs.append(state[0])
            y_prev = y[t:t + 1]
        h_seq = torch.cat(hs, dim=0)
        feats = self.agg(torch.cat([h_seq, y], dim=-1))
        return ClipEncoding(h_seq=h_seq, y_seq=y, agg_sum=feats.sum(dim=0),
                            n_frames=n)

    @staticmethod
    def _aggregate(encodings: list[ClipEncoding]) -> torch.Tensor:
        """Mean of per-frame aggregation features over all frames of all
        clips.

        Clip sums are accumulated in a canonical byte order, so the result
        is bitwise invariant to clip permutation (and to duplication, since
        doubling a sum and its frame count is exact).
        """
        if not encodings:
            raise ValueError("need at least one clip to encode a latent")
        order = sorted(range(len(encodings)),
                       key=lambda i: encodings[i].agg_sum.detach()
                       .numpy().tobytes())
        acc = encodings[order[0]].agg_sum
        for i in order[1:]:
            acc = acc + encodings[i].agg_sum
        return acc / sum(e.n_frames for e in encodings)

    def latent_from(self, encodings: list[ClipEncoding]) -> GaussianLatent:
        """Aggregate clip encodings and map to the latent Gaussian."""
        s = self._aggregate(encodings)
        mean, var = self.latent_head(s.unsqueeze(0))
        return GaussianLatent(mean[0], var[0])

    def context_from(self, encodings: list[ClipEncoding]) -> ContextEncoding:
        """Assemble the decoder-facing context view from clip encodings."""
        s_c = self._aggregate(encodings)
        mean, var = self.latent_head(s_c.unsqueeze(0))
        latent = GaussianLatent(mean[0], var[0])
        h_c = torch.cat([e.h_seq for e in encodings], dim=0)
        y_c = torch.cat([e.y_seq for e in encodings], dim=0)
        boundaries = []
        at = 0
        for e in encodings:
            boundaries.append((at, at + e.n_frames))
            at += e.n_frames
        return ContextEncoding(h_c=h_c, y_c=y_c, key_emb=self.embed(h_c),
                               latent=latent, s_c=s_c, boundaries=boundaries,
                               n_frames=at)

    def encode_latent(self, pairs: list[tuple[torch.Tensor, torch.Tensor]],
                      ) -> ContextEncoding:
        """Encode context clips: per-clip hidden states, attention keys,
        and the approximate latent prior."""
        return self.context_from([self.encode_clip(x, y) for x, y in pairs])

    # -- decoder -----------------------------------------------------------

    def decoder_step(self, x: torch.Tensor, y_prev: torch.Tensor,
                     state: tuple[torch.Tensor, torch.Tensor],
                     enc: ContextEncoding, z: torch.Tensor) -> StepPrediction:
        """One decode step: advance the decoder cell, attend over context,
        and emit the per-dimension operation Gaussian."""
        state = self.dec_cell.step(x.unsqueeze(0),
                                   self._cell_y(y_prev).unsqueeze(0), state)
        h_t = state[0][0]
        query = self.embed(h_t)
        weights, r = attention_from_embeddings(enc.key_emb, query, enc.y_c)
        head_in = torch.cat([r, h_t, z]).unsqueeze(0)
        out = self.out_heads(head_in)[0]
        mean = out[:, 0]
        if self.cfg.attention_residual:
            mean = mean + r
        var = nn.functional.softplus(out[:, 1]) + VAR_FLOOR
        return StepPrediction(mean=mean, var=var, state=state, r=r,
                              attention=weights)

    def rollout(self, x_seq: torch.Tensor, enc: ContextEncoding,
                z: torch.Tensor,
                teacher: tuple[torch.Tensor, np.ndarray] | None = None,
                ) -> RolloutResult:
        """Decode a gesture sequence.

        ``teacher`` is (ground-truth operations, boolean feed mask); where
        mask[t-1] is true, step t sees the ground-truth previous operation,
        otherwise the model's own previous mean. The first step always sees
        zero motion.
        """
        n = x_seq.shape[0]
        if teacher is not None:
            y_true, mask = teacher
            if y_true.shape[0] != n or len(mask) != n:
                raise ValueError("teacher sequence length mismatch")
        state = self.dec_cell.zero_state(1, self.dtype)
        y_prev = torch.zeros(self.cfg.op_dim, dtype=self.dtype)
        means, variances, attn = [], [], []
        for t in range(n):
            pred = self.decoder_step(x_seq[t], y_prev, state, enc, z)
            means.append(pred.mean)
            variances.append(pred.var)
            attn.append(pred.attention)
            state = pred.state
            if teacher is not None and mask[t]:
                y_prev = y_true[t]
            else:
                y_prev = pred.mean
        return RolloutResult(means=torch.stack(means),
                             variances=torch.stack(variances),
                             attention=torch.stack(attn),
                             final_state=state)


class DummyLstmModel(nn.Module):
    """Context-free baseline: hand feature extractor into a two-layer
    recurrent stack with per-dimension Gaussian heads. Trained on the
    likelihood alone; no latent, no attention."""

    def __init__(self, cfg: ModelConfig, seed: int = 0):
        super().__init__()
        self.cfg = cfg
        rng = np.random.default_rng(seed)
        self.cell = RecurrentCell(cfg, rng)
        self.lstm2 = nn.LSTMCell(cfg.hidden, cfg.hidden)
        _init_lstm(rng, self.lstm2)
        self.out_heads = OutputHeads(
            [cfg.hidden, cfg.hidden, cfg.hidden // 2, 2], cfg.op_dim, rng)
        self.to(cfg.torch_dtype)

    @property
    def dtype(self) -> torch.dtype:
        return self.cfg.torch_dtype

    def tensor(self, a) -> torch.Tensor:
        return torch.as_tensor(np.asarray(a), dtype=self.dtype)

    def rollout(self, x_seq: torch.Tensor,
                teacher: tuple[torch.Tensor, np.ndarray] | None = None,
                ) -> RolloutResult:
        n = x_seq.shape[0]
        if teacher is not None:
            y_true, mask = teacher
            if y_true.shape[0] != n or len(mask) != n:
                raise ValueError("teacher sequence length mismatch")
        s1 = self.cell.zero_state(1, self.dtype)
        s2 = self.cell.zero_state(1, self.dtype)
        y_prev = torch.zeros(1, self.cfg.op_dim, dtype=self.dtype)
        means, variances = [], []
        for t in range(n):
            s1 = self.cell.step(x_seq[t:t + 1], y_prev, s1)
            s2 = self.lstm2(s1[0], s2)
            out = self.out_heads(s2[0])[0]
            mean = out[:, 0]
            var = nn.functional.softplus(out[:, 1]) + VAR_FLOOR
            means.append(mean)
            variances.append(var)
            if teacher is not None and mask[t]:
                y_prev = y_true[t].unsqueeze(0)
            else:
                y_prev = mean.unsqueeze(0)
        means = torch.stack(means)
        variances = torch.stack(variances)
        return RolloutResult(means=means, variances=variances,
                             attention=torch.zeros(n, 0, dtype=self.dtype),
                             final_state=s2)


def build_model(cfg: ModelConfig, seed: int = 0, kind: str = "cchp"):
    if kind == "cchp":
        return ConditionalHandlingModel(cfg, seed)
    if kind == "dummy_lstm":
        return DummyLstmModel(cfg, seed)
    raise ValueError(f"unknown model kind '{kind}'")
