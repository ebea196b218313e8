"""Development probe: training recipe search for the acceptance budget."""
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
from cohand.evaluation import TestSetting, evaluate, predict_zero_mse

name = sys.argv[1]
batch = int(sys.argv[2])
feat = int(sys.argv[3])
lr = float(sys.argv[4])
tf_end = int(sys.argv[5])
epochs = int(sys.argv[6])
if len(sys.argv) > 7:
    import cohand.synthetic as syn
    syn.PATTERN_JITTER = float(sys.argv[7])

ds = build_dataset(GenConfig(seed=0))
mc = ModelConfig(hidden=64, feat=feat, latent_dim=16, dtype="float32")
cfg = TrainConfig(epochs=epochs, seed=0, batch_size=batch,
                  tf_constant_steps=tf_end // 4, tf_end_step=tf_end,
                  learning_rate=lr)
t0 = time.monotonic()
path = train(cfg, BaselineSpec.parse("main"), ds, f"/tmp/battery/{name}",
             model_cfg=mc)
wall = time.monotonic() - t0
ck = load_checkpoint(path)
out = {"name": name, "batch": batch, "feat": feat, "lr": lr,
       "tf_end": tf_end, "epochs": epochs,
       "steps": (len(ds.train) // batch) * epochs,
       "train_s": round(wall, 1)}
for nm, setting in (("dpup", TestSetting.DP_UP), ("dmum", TestSetting.DM_UM)):
    out[f"{nm}_mse"] = round(evaluate(ck, ds, setting, seed=0,
                                      max_targets=120).mse, 5)
out["zero"] = round(predict_zero_mse(ds, TestSetting.DP_UP,
                                     max_targets=120), 5)
out["ratio"] = round(out["zero"] / out["dpup_mse"], 2)
print(json.dumps(out), flush=True)
