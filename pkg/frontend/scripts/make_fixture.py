"""Build the console test fixture: a small checkpoint, a context clip
file, a replay clip, and the commands a direct (in-process) session
produces for it. The protocol round-trip test replays the same clip
through a live server and requires bit-exact agreement.
"""
import json
import sys
from pathlib import Path

import numpy as np
import torch

torch.set_num_threads(1)

from cohand.domain import GestureFrame, write_clips
from cohand.model import ConditionalHandlingModel, ModelConfig, save_checkpoint
from cohand.model.checkpoint import Checkpoint
from cohand.service.session import SessionConfig, open_session, push_frame
from cohand.synthetic import GenConfig, build_corpus

SEED = 123


def main(out_dir: str) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    cfg = ModelConfig.reduced(hidden=16, feat=8, latent_dim=8,
                              dtype="float32")
    model = ConditionalHandlingModel(cfg, seed=SEED)
    ckpt_path = out / "checkpoint"
    save_checkpoint(Checkpoint(model=model, config=cfg, variant="main",
                               kind="cchp"), ckpt_path)

    corpus = build_corpus(GenConfig(seed=SEED, n_in_sample_users=2,
                                    n_out_sample_users=1))
    context_clips = corpus.dataset.train[:5]
    context_path = out / "context.jsonl"
    write_clips(context_path, context_clips)

    replay = corpus.dataset.test_in_sample[0]

    session = open_session(
        SessionConfig(checkpoint=ckpt_path, context_path=context_path,
                      seed=SEED))
    commands = []
    raws = []
    for t in range(len(replay)):
        res = push_frame(session, GestureFrame(replay.gesture.frames[t]))
        raws.append({"t": res.t, "mean": res.mean.tolist(),
                     "attention_sum": float(res.attention.sum())})
        if res.command is not None:
            commands.append({
                "t": res.command.t,
                "velocity": res.command.velocity.tolist(),
                "position": res.command.pose.position.tolist(),
                "quaternion": res.command.pose.orientation.tolist(),
            })

    fixture = {
        "seed": SEED,
        "checkpoint": str(ckpt_path),
        "context": str(context_path),
        "replay_frames": replay.gesture.frames.tolist(),
        "expected_commands": commands,
        "n_raws": len(raws),
        "n_context_frames": session.n_context_frames,
    }
    with open(out / "fixture.json", "w", encoding="utf-8") as f:
        json.dump(fixture, f)
    print(f"fixture written to {out}")


if __name__ == "__main__":
    main(sys.argv[1] if len(sys.argv) > 1 else "test/fixture")
