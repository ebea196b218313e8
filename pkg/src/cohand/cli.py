"""Command-line entry points tying the pipeline together.

Every command takes an optional YAML config file plus override flags,
writes its artifacts under one output directory, and records a run
manifest (config snapshot, seed, input hashes) for exact reproduction.
"""
from __future__ import annotations

import dataclasses
import json
import sys
from pathlib import Path

import click
import numpy as np
import yaml
from pydantic import TypeAdapter, ValidationError

from . import datasets
from .domain import read_clips
from .model.checkpoint import load_checkpoint
from .model.config import ModelConfig
from .synthetic import GenConfig, build_corpus
from .training import KNOWN_VARIANTS, BaselineSpec, TrainConfig, train as run_train


def _load_config(cls, config_path, overrides: dict):
    """Parse a YAML config into the dataclass, then apply CLI overrides.

    Schema violations are reported with their field paths.
    """
    data = {}
    if config_path:
        with open(config_path, "r", encoding="utf-8") as f:
            data = yaml.safe_load(f) or {}
        if not isinstance(data, dict):
            raise click.ClickException(
                f"config {config_path} must be a mapping")
    data.update({k: v for k, v in overrides.items() if v is not None})
    try:
        return TypeAdapter(cls).validate_python(data)
    except ValidationError as e:
        lines = []
        for err in e.errors():
            loc = ".".join(str(p) for p in err["loc"]) or "<root>"
            lines.append(f"  {loc}: {err['msg']}")
        raise click.ClickException(
            "config schema violations:\n" + "\n".join(lines))


@click.group()
def main():
    """Gesture-conditioned collaborative handling pipeline."""


@main.command("gen-data")
@click.option("--config", "config_path", type=click.Path(exists=True),
              default=None, help="YAML generator config.")
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.option("--seed", type=int, default=None)
def gen_data(config_path, out_dir, seed):
    """Generate the synthetic demonstration corpus and write the dataset
    directory (clip files per split, style templates, manifest)."""
    cfg = _load_config(GenConfig, config_path, {"seed": seed})
    out = datasets.resolve_out_dir(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except PermissionError as e:
        raise click.ClickException(f"cannot create output directory: {e}")
    corpus = build_corpus(cfg)
    try:
        datasets.save_corpus(corpus, out)
    except PermissionError as e:
        raise click.ClickException(f"output directory not writable: {e}")
    ds = corpus.dataset
    datasets.write_manifest(
        out, "gen-data", dataclasses.asdict(cfg), seed=cfg.seed,
        artifacts=sorted(f.name for f in out.iterdir()
                         if f.name != "run_manifest.json"))
    click.echo(f"wrote {len(ds.train)} train / {len(ds.test_in_sample)} "
               f"in-sample test / {len(ds.test_out_sample)} out-sample test "
               f"clips to {out}")


@main.command("train")
@click.option("--data", "data_dir", required=True, type=click.Path(exists=True))
@click.option("--variant", default="main",
              help=f"one of: {', '.join(KNOWN_VARIANTS)}")
@click.option("--config", "config_path", type=click.Path(exists=True),
              default=None, help="YAML training config.")
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.option("--seed", type=int, default=None)
@click.option("--epochs", type=int, default=None)
@click.option("--batch-size", type=int, default=None)
@click.option("--learning-rate", type=float, default=None)
@click.option("--hidden", type=int, default=None, help="model width H")
@click.option("--feat", type=int, default=None, help="segment feature width")
@click.option("--latent-dim", type=int, default=None)
@click.option("--tf-constant-steps", type=int, default=None)
@click.option("--tf-end-step", type=int, default=None)
def train_cmd(data_dir, variant, config_path, out_dir, seed, epochs,
              batch_size, learning_rate, hidden, feat, latent_dim,
              tf_constant_steps, tf_end_step):
    """Train one grid cell (the main model or an ablation)."""
    try:
        spec = BaselineSpec.parse(variant)
    except ValueError as e:
        raise click.ClickException(str(e))
    cfg = _load_config(TrainConfig, config_path, {
        "seed": seed, "epochs": epochs, "batch_size": batch_size,
        "learning_rate": learning_rate,
        "tf_constant_steps": tf_constant_steps, "tf_end_step": tf_end_step,
    })
    model_kw = {}
    if hidden is not None:
        model_kw["hidden"] = hidden
    if feat is not None:
        model_kw["feat"] = feat
    if latent_dim is not None:
        model_kw["latent_dim"] = latent_dim
    model_cfg = ModelConfig(**model_kw)

    data_dir = Path(data_dir)
    ds = datasets.load_dataset(data_dir)
    out = datasets.resolve_out_dir(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    ckpt = run_train(cfg, spec, ds, out, model_cfg=model_cfg)
    datasets.write_manifest(
        out, "train",
        {"train": dataclasses.asdict(cfg), "model": model_cfg.to_dict(),
         "variant": variant},
        inputs={str(data_dir / f): datasets.sha256_file(data_dir / f)
                for f in datasets.SPLIT_FILES.values()
                if (data_dir / f).exists()},
        artifacts=[str(ckpt)], seed=cfg.seed)
    click.echo(f"checkpoint written to {ckpt}")


@main.command("eval")
@click.option("--checkpoint", "checkpoint_dir", required=True,
              type=click.Path(exists=True))
@click.option("--data", "data_dir", required=True, type=click.Path(exists=True))
@click.option("--settings", default="all",
              help="comma list of D+U+,D+U-,D-U+,D-U-,unseen,noisy or 'all'")
@click.option("--seeds", type=int, default=1, help="number of eval seeds")
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.option("--max-targets", type=int, default=None)
def eval_cmd(checkpoint_dir, data_dir, settings, seeds, out_dir, max_targets):
    """Evaluate a checkpoint across the test settings and write the report
    grid (JSON + text table)."""
    from . import evaluation as ev

    ckpt = load_checkpoint(checkpoint_dir)
    ds = datasets.load_dataset(data_dir)
    if settings == "all":
        wanted = list(ev.TestSetting)
    else:
        by_value = {s.value: s for s in ev.TestSetting}
        try:
            wanted = [by_value[s.strip()] for s in settings.split(",")]
        except KeyError as e:
            raise click.ClickException(
                f"unknown setting {e}; choose from "
                f"{', '.join(by_value)} or 'all'")
    out = datasets.resolve_out_dir(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    is_dummy = ckpt.kind == "dummy_lstm"
    results = {}
    for setting in wanted:
        if is_dummy and setting.value not in ev.DUMMY_CELLS:
            results[(ckpt.variant, setting.value)] = None
            continue
        elbos, mses = [], []
        for s in range(seeds):
            r = ev.evaluate(ckpt, ds, setting, seed=s,
                            max_targets=max_targets)
            elbos.append(r.elbo)
            mses.append(r.mse)
        mean = ev.EvalResult(elbo=float(np.mean(elbos)),
                             mse=float(np.mean(mses)), n_targets=0)
        if is_dummy:
            results[(ckpt.variant, setting.value)] = ev.dummy_cell(setting,
                                                                   mean)
        else:
            results[(ckpt.variant, setting.value)] = ev.EvalCell(
                elbo=mean.elbo, mse=mean.mse)
    report = ev.make_table(results, variants=[ckpt.variant],
                           settings=[s.value for s in wanted], seeds=seeds)
    ev.write_report(report, out / "report.json", out / "report.txt")
    datasets.write_manifest(
        out, "eval",
        {"settings": [s.value for s in wanted], "seeds": seeds,
         "checkpoint": str(checkpoint_dir)},
        inputs={str(checkpoint_dir): ""},
        artifacts=["report.json", "report.txt"])
    click.echo(report.render_text())


@main.command("sweep-noise")
@click.option("--checkpoint", "checkpoint_dir", required=True,
              type=click.Path(exists=True))
@click.option("--data", "data_dir", required=True, type=click.Path(exists=True))
@click.option("--repeats", type=int, default=5)
@click.option("--seed", type=int, default=0)
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.option("--max-targets", type=int, default=None)
@click.option("--plot/--no-plot", default=True)
def sweep_noise_cmd(checkpoint_dir, data_dir, repeats, seed, out_dir,
                    max_targets, plot):
    """Run the 11-level input-noise sweep with repeated evaluations."""
    from . import evaluation as ev

    ckpt = load_checkpoint(checkpoint_dir)
    ds = datasets.load_dataset(data_dir)
    out = datasets.resolve_out_dir(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    points = ev.noise_sweep(ckpt, ds, repeats=repeats, base_seed=seed,
                            max_targets=max_targets)
    with open(out / "sweep.json", "w", encoding="utf-8") as f:
        json.dump([dataclasses.asdict(p) for p in points], f, indent=2)
    artifacts = ["sweep.json"]
    if plot:
        ev.plot_sweep(points, out / "sweep.png", label=ckpt.variant)
        artifacts.append("sweep.png")
    datasets.write_manifest(
        out, "sweep-noise",
        {"repeats": repeats, "seed": seed, "checkpoint": str(checkpoint_dir)},
        artifacts=artifacts, seed=seed)
    click.echo(f"{len(points)} levels x {repeats} repeats written to {out}")


@main.command("export-attention")
@click.option("--checkpoint", "checkpoint_dir", required=True,
              type=click.Path(exists=True))
@click.option("--data", "data_dir", required=True, type=click.Path(exists=True))
@click.option("--target-clip", required=True)
@click.option("--context-clips", default=None,
              help="comma list of clip ids; default picks same-user clips "
                   "covering the target's axes")
@click.option("--seed", type=int, default=0)
@click.option("--out", "out_path", required=True, type=click.Path())
def export_attention_cmd(checkpoint_dir, data_dir, target_clip,
                         context_clips, seed, out_path):
    """Write the target-by-context attention map artifact for one clip."""
    from . import evaluation as ev

    ckpt = load_checkpoint(checkpoint_dir)
    ds = datasets.load_dataset(data_dir)
    by_id = ds.clips_by_id()
    if target_clip not in by_id:
        raise click.ClickException(f"no clip '{target_clip}' in {data_dir}")
    target = by_id[target_clip]
    if context_clips:
        try:
            ctx = [by_id[c.strip()] for c in context_clips.split(",")]
        except KeyError as e:
            raise click.ClickException(f"unknown context clip {e}")
    else:
        rng = np.random.default_rng(seed)
        ctx = ev.select_context_eval(ds, target, ev.TestSetting.DP_UP, rng)
    out = datasets.resolve_out_dir(out_path)
    out.parent.mkdir(parents=True, exist_ok=True)
    ev.export_attention(ckpt, target, ctx, seed=seed, path=out)
    click.echo(f"attention map ({len(target)} x "
               f"{sum(len(c) for c in ctx)}) written to {out}")


@main.command("serve")
@click.option("--checkpoint", "checkpoint_dir", required=True,
              type=click.Path(exists=True))
@click.option("--context", "context_path", required=True,
              type=click.Path(exists=True))
@click.option("--bind", default="127.0.0.1:8763", help="host:port")
@click.option("--clamp-t", type=float, default=0.10,
              help="translation clamp, m/s")
@click.option("--clamp-r", type=float, default=0.30,
              help="rotation clamp, rad/s")
@click.option("--seed", type=int, default=0)
@click.option("--styles", "styles_path", type=click.Path(), default=None)
def serve_cmd(checkpoint_dir, context_path, bind, clamp_t, clamp_r, seed,
              styles_path):
    """Serve streaming sessions over the wire protocol (WebSocket)."""
    import uvicorn

    from .service.app import create_app, load_state

    try:
        host, port = bind.rsplit(":", 1)
        port = int(port)
    except ValueError:
        raise click.ClickException(f"bad bind address '{bind}', want host:port")
    state = load_state(checkpoint_dir, context_path, clamp_t=clamp_t,
                       clamp_r=clamp_r, seed=seed, styles_path=styles_path)
    app = create_app(state)
    click.echo(f"serving on ws://{bind}/ws "
               f"({len(state.context_clips)} context clips)")
    uvicorn.run(app, host=host, port=port, log_level="warning")


if __name__ == "__main__":
    sys.exit(main())
