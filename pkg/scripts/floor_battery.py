"""Development probe: variance floor vs plateau length on an overfit task."""
import sys

import numpy as np
import torch

torch.set_num_threads(1)

from cohand.synthetic import GenConfig, build_corpus
from cohand.training import ElboSample, elbo_loss_batch, clip_tensors
from cohand.model.config import ModelConfig
from cohand.model.network import ConditionalHandlingModel
import cohand.model.network as net
import cohand.training as tr

corpus = build_corpus(GenConfig(seed=0))
ds = corpus.dataset
clips = [c for c in ds.train if c.user_id == ds.users_in[0]][:7]
mc = ModelConfig(hidden=64, feat=16, latent_dim=16, dtype="float32")

for floor, lr, steps in ((1e-4, 1e-3, 1600), (1e-3, 1e-3, 1600),
                         (1e-4, 5e-4, 1600)):
    net.VAR_FLOOR = floor
    tr.VAR_FLOOR = floor
    model = ConditionalHandlingModel(mc, seed=0)
    rng = np.random.default_rng(0)
    ctx_pairs = [clip_tensors(c, mc.torch_dtype) for c in clips[4:7]]
    samples = [ElboSample(target=clip_tensors(t, mc.torch_dtype),
                          contexts=list(ctx_pairs),
                          mask=np.ones(len(t), dtype=bool), eps=np.zeros(16))
               for t in clips[:4]]
    opt = torch.optim.Adam(model.parameters(), lr=lr)
    hist = []
    for step in range(steps + 1):
        opt.zero_grad()
        loss, m = elbo_loss_batch(model, samples)
        (loss / 4).backward()
        torch.nn.utils.clip_grad_norm_(model.parameters(), 10.0)
        opt.step()
        if step % 200 == 0:
            hist.append((step, round(m["mse"], 6)))
    print(f"floor={floor} lr={lr}: {hist}", flush=True)
