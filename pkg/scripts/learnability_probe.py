"""Development probe: do the acceptance orderings emerge at H=64?

Trains the pivotal variants on the default synthetic dataset and reports
the evaluation-module numbers the acceptance criteria compare.
"""
import json
import sys
import time

import numpy as np
import torch

torch.set_num_threads(1)

from cohand.synthetic import GenConfig, build_dataset
from cohand.training import TrainConfig, BaselineSpec, train
from cohand.model.config import ModelConfig
from cohand.model import load_checkpoint
from cohand.evaluation import (
    TestSetting, evaluate, predict_zero_mse, high_frequency_ratio,
    NoiseLevel, noise_sweep,
)

EPOCHS = int(sys.argv[1]) if len(sys.argv) > 1 else 200
OUT = sys.argv[2] if len(sys.argv) > 2 else "/tmp/probe3"
VARIANTS = sys.argv[3].split(",") if len(sys.argv) > 3 else \
    ["main", "fixed-tf-0.9", "no-temporal", "dummy-lstm"]

ds = build_dataset(GenConfig(seed=0))
mc = ModelConfig(hidden=64, feat=16, latent_dim=16, dtype="float32")
cfg = TrainConfig(epochs=EPOCHS, seed=0, tf_constant_steps=300,
                  tf_end_step=1200, learning_rate=2e-3)

MAXT = 120  # eval targets per setting for the probe

for tag in VARIANTS:
    t0 = time.monotonic()
    path = train(cfg, BaselineSpec.parse(tag), ds, f"{OUT}/{tag}",
                 model_cfg=mc)
    wall = time.monotonic() - t0
    ck = load_checkpoint(path)
    out = {"tag": tag, "train_s": round(wall, 1)}
    if tag == "dummy-lstm":
        out["dpup_mse"] = evaluate(ck, ds, TestSetting.DP_UP, seed=0,
                                   max_targets=MAXT).mse
        out["noisy_mse"] = evaluate(ck, ds, TestSetting.NOISY, seed=0,
                                    max_targets=MAXT).mse
    else:
        for name, setting in (("dpup", TestSetting.DP_UP),
                              ("dmum", TestSetting.DM_UM),
                              ("unseen", TestSetting.UNSEEN),
                              ("noisy", TestSetting.NOISY)):
            r = evaluate(ck, ds, setting, seed=0, max_targets=MAXT)
            out[f"{name}_mse"] = round(r.mse, 5)
            out[f"{name}_elbo"] = round(r.elbo, 1)
        out["hf_ratio_L10"] = round(high_frequency_ratio(
            ck, ds, noise=(NoiseLevel(10).sigma_t, NoiseLevel(10).sigma_r),
            seed=0, max_targets=60), 4)
    out["zero_mse"] = round(predict_zero_mse(ds, TestSetting.DP_UP,
                                             max_targets=MAXT), 5)
    print(json.dumps(out), flush=True)
