"""Evaluation protocol: six test settings, noise sweep, spectra, attention.

Targets come from the in-sample test split (or the held-out user split for
the unseen setting); context is always drawn from the train split. The
evidence-bound loss is evaluated with z drawn from the context-only prior
and a fully autoregressive rollout, mirroring deployment.
"""
from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .domain import AXIS_ORDER, Clip, Dataset, DominantAxis
from .model.checkpoint import Checkpoint
from .model.network import (
    VAR_FLOOR,
    ConditionalHandlingModel,
    DummyLstmModel,
)
from .training import ElboSample, clip_tensors, run_batch, run_batch_dummy

# Fixed-noise test setting: std dev on translation / rotation gesture
# features; context stays clean.
NOISY_SIGMA_T = 0.050
NOISY_SIGMA_R = 0.025


class TestSetting(enum.Enum):
    DP_UP = "D+U+"
    DP_UM = "D+U-"
    DM_UP = "D-U+"
    DM_UM = "D-U-"
    UNSEEN = "unseen"
    NOISY = "noisy"


CONTEXT_SETTINGS = (TestSetting.DP_UP, TestSetting.DP_UM, TestSetting.DM_UP,
                    TestSetting.DM_UM)


@dataclass(frozen=True)
class NoiseLevel:
    """k-th of 11 equal increments from clean to (sigma_R, sigma_T) =
    (0.1, 0.05)."""

    index: int

    def __post_init__(self):
        if not (0 <= self.index <= 10):
            raise ValueError("noise level index must be 0..10")

    @property
    def sigma_r(self) -> float:
        return 0.01 * self.index

    @property
    def sigma_t(self) -> float:
        return 0.005 * self.index


DEFAULT_LEVELS = tuple(NoiseLevel(k) for k in range(11))


@dataclass
class EvalResult:
    elbo: float
    mse: float
    n_targets: int


class SettingMismatch(ValueError):
    pass


def _targets_for(dataset: Dataset, setting: TestSetting) -> list[Clip]:
    if setting is TestSetting.UNSEEN:
        if not dataset.test_out_sample:
            raise SettingMismatch("unseen setting needs an out-sample split")
        return dataset.test_out_sample
    if not dataset.test_in_sample:
        raise SettingMismatch(f"{setting.value} needs an in-sample test split")
    return dataset.test_in_sample


def select_context_eval(dataset: Dataset, target: Clip, setting: TestSetting,
                        rng: np.random.Generator, n_ctx: int = 3,
                        ) -> list[Clip]:
    """Pick context clips from the train split per the setting's rule.

    D+ guarantees every target axis appears in some context clip; D- keeps
    every context clip's axes disjoint from the target's. U+/U- fix the
    source user. The unseen setting draws uniformly (its users are disjoint
    from training by construction).
    """
    train = dataset.train

    def draw(pool: list[Clip], k: int) -> list[Clip]:
        if not pool:
            raise SettingMismatch(
                f"no eligible context clips for {setting.value}")
        if len(pool) >= k:
            idx = rng.choice(len(pool), size=k, replace=False)
        else:
            idx = rng.choice(len(pool), size=k, replace=True)
        return [pool[int(i)] for i in idx]

    if setting is TestSetting.UNSEEN:
        return draw(train, n_ctx)

    same_user = setting in (TestSetting.DP_UP, TestSetting.DM_UP,
                            TestSetting.NOISY)
    pool = [c for c in train
            if (c.user_id == target.user_id) == same_user]
    if setting in (TestSetting.DP_UP, TestSetting.DP_UM, TestSetting.NOISY):
        chosen: list[Clip] = []
        for axis in sorted(target.active_dims, key=lambda a: a.index):
            cands = [c for c in pool if axis in c.active_dims]
            chosen.extend(draw(cands, 1))
        fill = [c for c in pool if c.active_dims & target.active_dims]
        while len(chosen) < n_ctx:
            chosen.extend(draw(fill, 1))
        return chosen[:n_ctx]

    disjoint = [c for c in pool if not (c.active_dims & target.active_dims)]
    return draw(disjoint, n_ctx)


def _perturb_gesture(frames: np.ndarray, sigma_t: float, sigma_r: float,
                     rng: np.random.Generator) -> np.ndarray:
    """Noise on gesture features: translation components are each segment's
    first three features, rotation the last three."""
    out = frames.astype(np.float64).copy()
    if sigma_t > 0:
        out[:, :, :3] += rng.normal(0, sigma_t, out[:, :, :3].shape)
    if sigma_r > 0:
        out[:, :, 3:] += rng.normal(0, sigma_r, out[:, :, 3:].shape)
    return out.astype(np.float32)


@torch.no_grad()
def _eval_batch(model: ConditionalHandlingModel, samples: list[ElboSample],
                ) -> tuple[np.ndarray, np.ndarray]:
    """Per-sample (elbo, mse) with z from the context prior and a fully
    autoregressive rollout. Shares the batched engine with training."""
    out = run_batch(model, samples, z_from_posterior=False, teacher=False)
    elbo = (out.nll + out.kl).numpy()
    lens = np.array(out.lengths, dtype=np.float64)
    mse = out.se.numpy() / (lens * model.cfg.op_dim)
    return elbo, mse


@torch.no_grad()
def _eval_batch_dummy(model: DummyLstmModel, samples: list[ElboSample],
                      ) -> tuple[np.ndarray, np.ndarray]:
    """Context-free baseline: the 'elbo' column is the bare NLL."""
    out = run_batch_dummy(model, samples, teacher=False)
    lens = np.array(out.lengths, dtype=np.float64)
    return out.nll.numpy(), out.se.numpy() / (lens * model.cfg.op_dim)


def _resolve_model(model_or_ckpt):
    if isinstance(model_or_ckpt, Checkpoint):
        return model_or_ckpt.model
    return model_or_ckpt


def _eval_stub(model, tgt: Clip, frames: np.ndarray,
               contexts: list[Clip]) -> tuple[float, float]:
    """Simple-predictor path: anything exposing
    ``predict(target, contexts, frames) -> (means, vars)``. Used by
    reference baselines; the loss column is the bare NLL."""
    means, variances = model.predict(tgt, contexts, frames)
    y = tgt.operation.frames.astype(np.float64)
    means = np.asarray(means, dtype=np.float64)
    variances = np.asarray(variances, dtype=np.float64)
    nll = 0.5 * (np.log(2 * np.pi * variances)
                 + (y - means) ** 2 / variances).sum()
    mse = float(np.mean((means - y) ** 2))
    return float(nll), mse


def evaluate(model_or_ckpt, dataset: Dataset, setting: TestSetting,
             seed: int = 0, n_ctx: int = 3, batch: int = 32,
             noise: tuple[float, float] | None = None,
             max_targets: int | None = None) -> EvalResult:
    """Mean evidence-bound loss and mean-prediction MSE over the setting's
    target split.

    ``noise`` overrides the per-setting gesture perturbation as
    (sigma_t, sigma_r); the noisy setting defaults to (0.050, 0.025).
    Separate child streams drive context choice, latent draws, and noise,
    so a zero-noise sweep point reproduces the clean result exactly.
    """
    model = _resolve_model(model_or_ckpt)
    targets = _targets_for(dataset, setting)
    if max_targets is not None:
        targets = targets[:max_targets]
    if noise is None and setting is TestSetting.NOISY:
        noise = (NOISY_SIGMA_T, NOISY_SIGMA_R)

    ss = np.random.SeedSequence(seed)
    rng_ctx, rng_z, rng_noise = (np.random.default_rng(c)
                                 for c in ss.spawn(3))
    if hasattr(model, "predict"):
        elbos, mses = [], []
        for tgt in targets:
            ctx = select_context_eval(dataset, tgt, setting, rng_ctx, n_ctx) \
                if setting is not TestSetting.UNSEEN or dataset.train else []
            frames = tgt.gesture.frames
            if noise is not None:
                frames = _perturb_gesture(frames, noise[0], noise[1],
                                          rng_noise)
            e, m = _eval_stub(model, tgt, frames, ctx)
            elbos.append(e)
            mses.append(m)
        return EvalResult(elbo=float(np.mean(elbos)),
                          mse=float(np.mean(mses)), n_targets=len(targets))

    dummy = isinstance(model, DummyLstmModel)
    dtype = model.cfg.torch_dtype

    elbos, mses = [], []
    for at in range(0, len(targets), batch):
        chunk = targets[at:at + batch]
        samples = []
        for tgt in chunk:
            if dummy:
                ctx_pairs = []
            else:
                ctx = select_context_eval(dataset, tgt, setting, rng_ctx,
                                          n_ctx)
                ctx_pairs = [clip_tensors(c, dtype) for c in ctx]
            frames = tgt.gesture.frames
            if noise is not None:
                frames = _perturb_gesture(frames, noise[0], noise[1],
                                          rng_noise)
            x = torch.as_tensor(frames.reshape(len(tgt), -1), dtype=dtype)
            _, y = clip_tensors(tgt, dtype)
            eps = rng_z.standard_normal(model.cfg.latent_dim)
            samples.append(ElboSample(target=(x, y), contexts=ctx_pairs,
                                      mask=np.zeros(len(tgt), dtype=bool),
                                      eps=eps))
        if dummy:
            e, m = _eval_batch_dummy(model, samples)
        else:
            e, m = _eval_batch(model, samples)
        elbos.append(e)
        mses.append(m)
    elbo = float(np.mean(np.concatenate(elbos)))
    mse = float(np.mean(np.concatenate(mses)))
    return EvalResult(elbo=elbo, mse=mse, n_targets=len(targets))


def predict_zero_mse(dataset: Dataset, setting: TestSetting,
                     max_targets: int | None = None) -> float:
    """MSE of the always-zero baseline on the setting's target split."""
    targets = _targets_for(dataset, setting)
    if max_targets is not None:
        targets = targets[:max_targets]
    return float(np.mean([
        np.mean(c.operation.frames.astype(np.float64) ** 2) for c in targets]))


# ---------------------------------------------------------------------------
# noise sweep

@dataclass
class SweepPoint:
    level: int
    sigma_r: float
    sigma_t: float
    elbo_mean: float
    elbo_std: float
    mse_mean: float
    mse_std: float
    elbo: list[float] = field(default_factory=list)
    mse: list[float] = field(default_factory=list)


def noise_sweep(model_or_ckpt, dataset: Dataset,
                levels: tuple[NoiseLevel, ...] = DEFAULT_LEVELS,
                repeats: int = 5, base_seed: int = 0,
                max_targets: int | None = None) -> list[SweepPoint]:
    """Evaluate the same-user same-dims setting under increasing gesture
    noise; mean and std over ``repeats`` seeds per level. Repeat j reuses
    one seed across levels, so level 0 equals the clean evaluation."""
    if not levels:
        raise ValueError("levels must be nonempty")
    points = []
    for lv in levels:
        elbos, mses = [], []
        for j in range(repeats):
            res = evaluate(model_or_ckpt, dataset, TestSetting.DP_UP,
                           seed=base_seed + j,
                           noise=(lv.sigma_t, lv.sigma_r),
                           max_targets=max_targets)
            elbos.append(res.elbo)
            mses.append(res.mse)
        points.append(SweepPoint(
            level=lv.index, sigma_r=lv.sigma_r, sigma_t=lv.sigma_t,
            elbo_mean=float(np.mean(elbos)), elbo_std=float(np.std(elbos)),
            mse_mean=float(np.mean(mses)), mse_std=float(np.std(mses)),
            elbo=elbos, mse=mses))
    return points


# ---------------------------------------------------------------------------
# frequency analysis

@dataclass
class SpectrumResult:
    freqs: np.ndarray
    power: np.ndarray
    hf_ratio: float


def spectrum(trace, rate_hz: float) -> SpectrumResult:
    """Power spectrum of one operation-dimension trace and the fraction of
    power above a quarter of the sampling rate."""
    x = np.asarray(trace, dtype=np.float64)
    if x.ndim != 1:
        raise ValueError("trace must be one-dimensional")
    if x.shape[0] < 8:
        raise ValueError("trace too short for spectral analysis (need >= 8)")
    coeffs = np.fft.rfft(x)
    power = np.abs(coeffs) ** 2
    freqs = np.fft.rfftfreq(x.shape[0], d=1.0 / rate_hz)
    total = float(power.sum())
    if total == 0.0:
        return SpectrumResult(freqs=freqs, power=power, hf_ratio=0.0)
    hf = float(power[freqs > rate_hz / 4.0].sum())
    return SpectrumResult(freqs=freqs, power=power, hf_ratio=hf / total)


@torch.no_grad()
def predicted_traces(model_or_ckpt, dataset: Dataset, setting: TestSetting,
                     seed: int = 0, noise: tuple[float, float] | None = None,
                     max_targets: int | None = None,
                     ) -> list[np.ndarray]:
    """Autoregressive mean-prediction traces, one (N, 6) array per target;
    input for the frequency analysis."""
    model = _resolve_model(model_or_ckpt)
    targets = _targets_for(dataset, setting)
    if max_targets is not None:
        targets = targets[:max_targets]
    ss = np.random.SeedSequence(seed)
    rng_ctx, rng_z, rng_noise = (np.random.default_rng(c) for c in ss.spawn(3))
    dummy = isinstance(model, DummyLstmModel)
    dtype = model.cfg.torch_dtype
    out = []
    for tgt in targets:
        frames = tgt.gesture.frames
        if noise is not None:
            frames = _perturb_gesture(frames, noise[0], noise[1], rng_noise)
        x = torch.as_tensor(frames.reshape(len(tgt), -1), dtype=dtype)
        if dummy:
            res = model.rollout(x)
        else:
            ctx = select_context_eval(dataset, tgt, setting, rng_ctx)
            enc = model.encode_latent([clip_tensors(c, dtype) for c in ctx])
            eps = rng_z.standard_normal(model.cfg.latent_dim)
            z = enc.latent.mean + torch.sqrt(enc.latent.var) * \
                torch.as_tensor(eps, dtype=dtype)
            res = model.rollout(x, enc, z)
        out.append(res.means.numpy().astype(np.float64))
    return out


def high_frequency_ratio(model_or_ckpt, dataset: Dataset,
                         noise: tuple[float, float], seed: int = 0,
                         max_targets: int | None = None) -> float:
    """Mean high-frequency power ratio of predicted traces on the target's
    active dimensions under the same-user same-dims setting."""
    targets = _targets_for(dataset, TestSetting.DP_UP)
    if max_targets is not None:
        targets = targets[:max_targets]
    traces = predicted_traces(model_or_ckpt, dataset, TestSetting.DP_UP,
                              seed=seed, noise=noise, max_targets=max_targets)
    ratios = []
    for tgt, tr in zip(targets, traces):
        if len(tgt) < 8:
            continue
        rate = tgt.operation.rate_hz
        for axis in tgt.active_dims:
            ratios.append(spectrum(tr[:, axis.index], rate).hf_ratio)
    return float(np.mean(ratios))


# ---------------------------------------------------------------------------
# attention export

def export_attention(model_or_ckpt, target: Clip, contexts: list[Clip],
                     seed: int = 0, path=None) -> dict:
    """Full target-by-context attention map plus clip boundaries, written
    as a structured artifact for the console and static plots."""
    model = _resolve_model(model_or_ckpt)
    dtype = model.cfg.torch_dtype
    with torch.no_grad():
        enc = model.encode_latent([clip_tensors(c, dtype) for c in contexts])
        rng = np.random.default_rng(seed)
        z = enc.latent.mean + torch.sqrt(enc.latent.var) * \
            torch.as_tensor(rng.standard_normal(model.cfg.latent_dim),
                            dtype=dtype)
        x, _ = clip_tensors(target, dtype)
        res = model.rollout(x, enc, z)
    artifact = {
        "target_clip_id": target.clip_id,
        "context_clip_ids": [c.clip_id for c in contexts],
        "boundaries": [list(b) for b in enc.boundaries],
        "n_target_steps": len(target),
        "n_context_frames": enc.n_frames,
        "weights": res.attention.numpy().astype(np.float64).tolist(),
        "predicted_means": res.means.numpy().astype(np.float64).tolist(),
        "seed": seed,
    }
    if path is not None:
        with open(path, "w", encoding="utf-8") as f:
            json.dump(artifact, f)
    return artifact


# ---------------------------------------------------------------------------
# report table

SETTING_ORDER = [s.value for s in (TestSetting.DP_UP, TestSetting.DP_UM,
                                   TestSetting.DM_UP, TestSetting.DM_UM,
                                   TestSetting.UNSEEN, TestSetting.NOISY)]

# Which cells the context-free baseline occupies, mirroring the published
# layout: MSE-only in (D+,U+) and noisy, (NLL, MSE) on unseen, absent in
# the remaining context-dependent columns.
DUMMY_CELLS = {
    TestSetting.DP_UP.value: ("mse",),
    TestSetting.UNSEEN.value: ("elbo", "mse"),
    TestSetting.NOISY.value: ("mse",),
}


@dataclass
class EvalCell:
    elbo: float | None
    mse: float | None


@dataclass
class EvalReport:
    variants: list[str]
    settings: list[str]
    cells: dict[tuple[str, str], EvalCell | None]
    seeds: int = 1

    def to_jsonable(self) -> dict:
        return {
            "variants": self.variants,
            "settings": self.settings,
            "seeds": self.seeds,
            "cells": {
                f"{v}|{s}": (None if c is None
                             else {"elbo": c.elbo, "mse": c.mse})
                for (v, s), c in self.cells.items()},
        }

    def render_text(self) -> str:
        col_min_elbo: dict[str, float] = {}
        col_min_mse: dict[str, float] = {}
        for s in self.settings:
            elbos = [c.elbo for (v, s2), c in self.cells.items()
                     if s2 == s and c is not None and c.elbo is not None]
            mses = [c.mse for (v, s2), c in self.cells.items()
                    if s2 == s and c is not None and c.mse is not None]
            if elbos:
                col_min_elbo[s] = min(elbos)
            if mses:
                col_min_mse[s] = min(mses)

        def fmt(value: float | None, best: float | None) -> str:
            if value is None:
                return "NA"
            text = f"{value:.3f}"
            if best is not None and value == best:
                text = f"**{text}**"
            return text

        header = ["model"] + list(self.settings)
        rows = [header]
        for v in self.variants:
            row = [v]
            for s in self.settings:
                cell = self.cells.get((v, s))
                if cell is None:
                    row.append("NA")
                else:
                    row.append(f"({fmt(cell.elbo, col_min_elbo.get(s))}, "
                               f"{fmt(cell.mse, col_min_mse.get(s))})")
            rows.append(row)
        widths = [max(len(r[i]) for r in rows) for i in range(len(header))]
        lines = []
        for i, r in enumerate(rows):
            lines.append("  ".join(c.ljust(w) for c, w in zip(r, widths)))
            if i == 0:
                lines.append("  ".join("-" * w for w in widths))
        lines.append(f"(ELBO loss, MSE loss), means over {self.seeds} "
                     "seed(s); lower is better; column minima in bold.")
        return "\n".join(lines)


def make_table(results: dict[tuple[str, str], EvalCell | None],
               variants: list[str] | None = None,
               settings: list[str] | None = None, seeds: int = 1,
               ) -> EvalReport:
    """Assemble the model-by-setting grid; missing cells render as NA."""
    if variants is None:
        variants = sorted({v for v, _ in results})
    if settings is None:
        settings = [s for s in SETTING_ORDER
                    if any(s2 == s for _, s2 in results)]
    cells = {(v, s): results.get((v, s)) for v in variants for s in settings}
    return EvalReport(variants=variants, settings=settings, cells=cells,
                      seeds=seeds)


def dummy_cell(setting: TestSetting, result: EvalResult | None,
               ) -> EvalCell | None:
    """Project a context-free baseline result onto the published NA
    layout."""
    fields = DUMMY_CELLS.get(setting.value)
    if fields is None or result is None:
        return None
    return EvalCell(elbo=result.elbo if "elbo" in fields else None,
                    mse=result.mse if "mse" in fields else None)


def write_report(report: EvalReport, json_path, text_path) -> None:
    with open(json_path, "w", encoding="utf-8") as f:
        json.dump(report.to_jsonable(), f, indent=2)
    with open(text_path, "w", encoding="utf-8") as f:
        f.write(report.render_text() + "\n")


def plot_sweep(points: list[SweepPoint], path, label: str = "model") -> None:
    """Loss-versus-noise curves as a static image."""
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, axes = plt.subplots(1, 2, figsize=(9, 3.2))
    xs = [p.level for p in points]
    for ax, attr, name in ((axes[0], "elbo", "ELBO loss"),
                           (axes[1], "mse", "MSE loss")):
        mean = np.array([getattr(p, f"{attr}_mean") for p in points])
        std = np.array([getattr(p, f"{attr}_std") for p in points])
        ax.plot(xs, mean, marker="o", label=label)
        ax.fill_between(xs, mean - std, mean + std, alpha=0.25)
        ax.set_xlabel("noise level")
        ax.set_ylabel(name)
    axes[0].legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
