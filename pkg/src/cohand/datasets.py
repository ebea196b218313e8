"""Dataset directory layout and run manifests.

A dataset directory holds one clip file per split plus the generator
manifest and the ground-truth style templates; a run manifest records the
exact configuration, seed, input hashes, and artifacts of every command.
"""
from __future__ import annotations

import datetime as _dt
import hashlib
import json
import os
from dataclasses import asdict
from pathlib import Path

from .domain import Clip, Dataset, read_clips, write_clips
from .synthetic import Corpus, GenConfig, style_from_dict, style_to_dict

ARTIFACT_ROOT_ENV = "COHAND_ARTIFACT_ROOT"

SPLIT_FILES = {
    "train": "train.jsonl",
    "test_in_sample": "test_in_sample.jsonl",
    "test_out_sample": "test_out_sample.jsonl",
}


def resolve_out_dir(path) -> Path:
    """Relative output paths land under the artifact root, when set."""
    path = Path(path)
    root = os.environ.get(ARTIFACT_ROOT_ENV)
    if root and not path.is_absolute():
        return Path(root) / path
    return path


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def write_manifest(out_dir, command: str, config: dict,
                   inputs: dict[str, str] | None = None,
                   artifacts: list[str] | None = None,
                   seed: int | None = None) -> Path:
    out_dir = Path(out_dir)
    manifest = {
        "command": command,
        "config": config,
        "seed": seed,
        "inputs": inputs or {},
        "artifacts": artifacts or [],
        "created": _dt.datetime.now(_dt.timezone.utc).isoformat(),
    }
    path = out_dir / "run_manifest.json"
    with open(path, "w", encoding="utf-8") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
    return path


def save_corpus(corpus: Corpus, out_dir) -> Path:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    ds = corpus.dataset
    for split, fname in SPLIT_FILES.items():
        write_clips(out_dir / fname, getattr(ds, split))
    with open(out_dir / "styles.json", "w", encoding="utf-8") as f:
        json.dump({uid: style_to_dict(s) for uid, s in corpus.styles.items()},
                  f, indent=2, sort_keys=True)
    with open(out_dir / "gen_config.json", "w", encoding="utf-8") as f:
        cfg = asdict(corpus.config) if corpus.config else {}
        json.dump(cfg, f, indent=2, sort_keys=True)
    return out_dir


def load_dataset(path) -> Dataset:
    path = Path(path)
    splits: dict[str, list[Clip]] = {}
    for split, fname in SPLIT_FILES.items():
        fpath = path / fname
        splits[split] = read_clips(fpath) if fpath.exists() else []
    users_in = sorted({c.user_id for c in splits["train"]})
    users_out = sorted({c.user_id for c in splits["test_out_sample"]})
    return Dataset(train=splits["train"],
                   test_in_sample=splits["test_in_sample"],
                   test_out_sample=splits["test_out_sample"],
                   users_in=users_in, users_out=users_out)


def load_styles(path) -> dict:
    with open(Path(path), "r", encoding="utf-8") as f:
        raw = json.load(f)
    return {uid: style_from_dict(obj) for uid, obj in raw.items()}


def load_gen_config(path) -> GenConfig:
    with open(Path(path) / "gen_config.json", "r", encoding="utf-8") as f:
        return GenConfig(**json.load(f))
