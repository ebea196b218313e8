"""Finite-difference verification of the training loss gradients.

Runs the variational loss on a reduced 64-bit configuration (hidden 8,
latent 4, 5 target frames, 7 context frames over three clips) and compares
autodiff gradients against central differences on a random parameter
sample. The rollout is fully autoregressive so gradients reach every
submodule.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from .domain import Clip, DominantAxis, DynamicGesture, HandlingOperation
from .model.config import ModelConfig
from .model.network import ConditionalHandlingModel
from .training import ScheduleState, elbo_loss

# Central-difference step scale. Large enough that the f(x+h)-f(x-h)
# cancellation stays well above float64 roundoff at this loss scale.
FD_STEP = 3e-4
REL_TOL = 1e-4


@dataclass
class GradCheckReport:
    n_checked: int
    n_ok: int
    worst: tuple[str, float] | None  # (param name, relative error)

    @property
    def fraction_ok(self) -> float:
        return self.n_ok / self.n_checked


def _clip(cid: str, n: int, seed: int, scale: float = 0.8) -> Clip:
    rng = np.random.default_rng(seed)
    g = DynamicGesture(rng.normal(0, scale, (n, 6, 6)).astype(np.float32))
    op = HandlingOperation(rng.normal(0, scale / 2, (n, 6)).astype(np.float32))
    return Clip("u", cid, g, op, frozenset({DominantAxis.TX}))


def check_elbo_gradients(n_params: int = 200, seed: int = 2,
                         n_target: int = 5,
                         context_lengths: tuple[int, ...] = (3, 2, 2),
                         ) -> GradCheckReport:
    """Compare analytic loss gradients to central finite differences on a
    random ``n_params`` sample; returns the pass fraction at 1e-4 relative
    error."""
    torch.set_num_threads(1)
    cfg = ModelConfig.reduced(hidden=8, feat=8, latent_dim=4, dtype="float64")
    model = ConditionalHandlingModel(cfg, seed=seed)
    targets = [_clip("t", n_target, 0)]
    contexts = [_clip(f"c{j}", m, j + 1)
                for j, m in enumerate(context_lengths)]
    mask = np.zeros(n_target, dtype=bool)
    eps = np.random.default_rng(seed + 3).standard_normal(cfg.latent_dim)
    draws = ([mask], eps)
    state = ScheduleState(p_tf=0.0)

    def loss_value() -> torch.Tensor:
        loss, _ = elbo_loss(model, targets, contexts, None, state, draws=draws)
        return loss

    loss_value().backward()
    named = list(model.named_parameters())
    flat = [(i, j) for i, (_, p) in enumerate(named)
            for j in range(p.numel())]
    rng = np.random.default_rng(seed + 11)
    picks = [flat[k] for k in rng.choice(len(flat), n_params, replace=False)]

    n_ok = 0
    worst: tuple[str, float] | None = None
    for i, j in picks:
        name, p = named[i]
        analytic = p.grad.reshape(-1)[j].item()
        with torch.no_grad():
            orig = p.reshape(-1)[j].item()
            h = FD_STEP * max(1.0, abs(orig))
            p.reshape(-1)[j] = orig + h
            up = loss_value().item()
            p.reshape(-1)[j] = orig - h
            dn = loss_value().item()
            p.reshape(-1)[j] = orig
        fd = (up - dn) / (2 * h)
        rel = abs(analytic - fd) / max(abs(analytic), abs(fd), 1e-12)
        if rel < REL_TOL:
            n_ok += 1
        if worst is None or rel > worst[1]:
            worst = (f"{name}[{j}]", rel)
    return GradCheckReport(n_checked=n_params, n_ok=n_ok, worst=worst)
