"""Checkpoint container: a JSON manifest plus named parameter tensors.

Layout (a directory):
    manifest.json  -- model config, variant, training step, schedule state,
                      optimizer RNG state
    params.npz     -- one named float array per parameter

The npz holds plain row-major arrays keyed by the module path of each
parameter, so any language with a zip reader can load a checkpoint.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .config import ModelConfig
from .network import build_model

MANIFEST_NAME = "manifest.json"
PARAMS_NAME = "params.npz"


@dataclass
class Checkpoint:
    model: torch.nn.Module
    config: ModelConfig
    variant: str = "main"
    kind: str = "cchp"  # "cchp" | "dummy_lstm"
    step: int = 0
    schedule: dict = field(default_factory=dict)
    rng_state: dict | None = None
    extra: dict = field(default_factory=dict)


def save_checkpoint(ckpt: Checkpoint, path) -> Path:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    manifest = {
        "format": "cohand-checkpoint-v1",
        "kind": ckpt.kind,
        "variant": ckpt.variant,
        "model_config": ckpt.config.to_dict(),
        "step": ckpt.step,
        "schedule": ckpt.schedule,
        "rng_state": ckpt.rng_state,
        "extra": ckpt.extra,
    }
    with open(path / MANIFEST_NAME, "w", encoding="utf-8") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
    arrays = {name: p.detach().cpu().numpy()
              for name, p in ckpt.model.state_dict().items()}
    np.savez(path / PARAMS_NAME, **arrays)
    return path


def load_checkpoint(path) -> Checkpoint:
    path = Path(path)
    manifest_path = path / MANIFEST_NAME
    if not manifest_path.exists():
        raise FileNotFoundError(f"no checkpoint manifest at {manifest_path}")
    with open(manifest_path, "r", encoding="utf-8") as f:
        manifest = json.load(f)
    cfg = ModelConfig.from_dict(manifest["model_config"])
    model = build_model(cfg, kind=manifest["kind"])
    with np.load(path / PARAMS_NAME) as data:
        state = {name: torch.from_numpy(np.array(data[name])).to(cfg.torch_dtype)
                 for name in data.files}
    model.load_state_dict(state)
    return Checkpoint(model=model, config=cfg,
                      variant=manifest["variant"], kind=manifest["kind"],
                      step=manifest["step"], schedule=manifest["schedule"],
                      rng_state=manifest.get("rng_state"),
                      extra=manifest.get("extra", {}))
