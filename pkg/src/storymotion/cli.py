"""Batch command-line entry points.

Every subcommand logs the hash of its fully resolved configuration, writes
only inside its declared output location, and reports failures as a single
JSON object on stderr with distinct exit codes:

    2  usage error (unknown flag / bad invocation)
    3  invalid configuration
    4  missing input file or checkpoint
    5  contract violation / runtime failure
"""

from __future__ import annotations

import functools
import json
import logging
import os
import sys

import click
import numpy as np
import torch

from . import metrics as metrics_mod
from . import training
from .config import ConfigError, config_hash, load_config, resolved_section
from .guidance import BlendConfig, GuidanceConfig
from .models import GeneratorState, ModelConfig, load_checkpoint, save_checkpoint
from .motion import ContractViolation, MotionClip, export_bvh, read_clip, write_clip
from .sampling import generate
from .synthdata import build_dataset, dataset_digest, read_manifest

log = logging.getLogger("storymotion")

EXIT_CONFIG = 3
EXIT_MISSING = 4
EXIT_RUNTIME = 5


def _fail(code: int, kind: str, message: str):
    sys.stderr.write(json.dumps({"error": kind, "message": message}) + "\n")
    sys.exit(code)


def guarded(fn):
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except ConfigError as exc:
            _fail(EXIT_CONFIG, "config", str(exc))
        except FileNotFoundError as exc:
            _fail(EXIT_MISSING, "missing_file", str(exc))
        except ContractViolation as exc:
            _fail(EXIT_RUNTIME, "contract_violation", str(exc))

    return wrapper


def _log_config(name: str, resolved: dict):
    logging.basicConfig(level=logging.INFO, format="%(message)s")
    log.info("%s config_hash=%s", name, config_hash(resolved))


def _load_state(ckpt: str) -> GeneratorState:
    if not os.path.exists(ckpt):
        raise FileNotFoundError(f"checkpoint not found: {ckpt}")
    state = GeneratorState()
    cfg = load_checkpoint(ckpt, state)
    if cfg.get("model"):
        state.cfg = ModelConfig(**cfg["model"])
    state.eval()
    return state


def _save_state(path: str, state: GeneratorState):
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    save_checkpoint(path, state, {"model": vars(state.cfg)})


def _train_config(config, overrides) -> training.TrainConfig:
    sec = resolved_section(config, "train", overrides)
    return training.TrainConfig(
        lr=float(sec["lr"]), batch_size=int(sec["batch_size"]), steps=int(sec["steps"]),
        seed=int(sec["seed"]), lambda_tr=float(sec["lambda_tr"]),
        lambda_key=float(sec["lambda_key"]), lambda_r=float(sec["lambda_r"]),
        lambda_c=float(sec["lambda_c"]), tau1=float(sec["tau1"]),
        kl_weight=float(sec["kl_weight"]), out_dir=sec.get("out_dir"),
    )


@click.group()
@click.option("--config", "config_path", type=str, default=None, help="INI configuration file.")
@click.pass_context
def main(ctx, config_path):
    """Storyboard-to-motion toolkit."""
    ctx.ensure_object(dict)
    try:
        ctx.obj["config"] = load_config(config_path)
    except ConfigError as exc:
        _fail(EXIT_CONFIG, "config", str(exc))


@main.command("build-data")
@click.option("--out", required=True, type=str)
@click.option("--seed", type=int, default=None)
@click.option("--clips-per-action", type=int, default=None)
@click.pass_context
@guarded
def cmd_build_data(ctx, out, seed, clips_per_action):
    """Generate the synthetic clip + condition dataset."""
    sec = resolved_section(ctx.obj["config"], "data",
                           {"seed": seed, "clips_per_action": clips_per_action})
    _log_config("build-data", sec)
    build_dataset(out, seed=int(sec["seed"]), clips_per_action=int(sec["clips_per_action"]),
                  test_fraction=float(sec["test_fraction"]))
    click.echo(json.dumps({"root": out, "digest": dataset_digest(out)}))


def _training_common(ctx, data, ckpt_in):
    manifest = read_manifest(data)
    feats, b3s, b2s, actions = training.load_training_set(data, manifest)
    state = _load_state(ckpt_in) if ckpt_in else GeneratorState()
    return state, feats, b3s, b2s, actions


@main.command("train-codec")
@click.option("--data", required=True, type=str)
@click.option("--out", required=True, type=str)
@click.option("--ckpt", "ckpt_in", type=str, default=None)
@click.option("--steps", type=int, default=None)
@click.option("--lr", type=float, default=None)
@click.option("--seed", type=int, default=None)
@click.pass_context
@guarded
def cmd_train_codec(ctx, data, out, ckpt_in, steps, lr, seed):
    """Train the motion autoencoder."""
    tcfg = _train_config(ctx.obj["config"], {"steps": steps, "lr": lr, "seed": seed})
    _log_config("train-codec", vars(tcfg))
    state, feats, *_ = _training_common(ctx, data, ckpt_in)
    training.train_codec(feats, state, tcfg)
    _save_state(out, state)
    click.echo(json.dumps({"checkpoint": out}))


@main.command("train-generator")
@click.option("--data", required=True, type=str)
@click.option("--ckpt", "ckpt_in", required=True, type=str)
@click.option("--out", required=True, type=str)
@click.option("--base-steps", type=int, default=None)
@click.option("--steps", type=int, default=None)
@click.option("--lr", type=float, default=None)
@click.option("--seed", type=int, default=None)
@click.pass_context
@guarded
def cmd_train_generator(ctx, data, ckpt_in, out, base_steps, steps, lr, seed):
    """Pretrain the base denoiser (if needed) then the conditioning stack."""
    tcfg = _train_config(ctx.obj["config"], {"steps": steps, "lr": lr, "seed": seed})
    _log_config("train-generator", vars(tcfg))
    state, feats, b3s, _, actions = _training_common(ctx, data, ckpt_in)
    if state.base_trained.item() == 0:
        import dataclasses

        bcfg = dataclasses.replace(tcfg, steps=base_steps or tcfg.steps)
        training.train_base(feats, actions, state, bcfg)
    training.train_generator(feats, b3s, actions, state, tcfg)
    _save_state(out, state)
    click.echo(json.dumps({"checkpoint": out}))


@main.command("train-mapper")
@click.option("--data", required=True, type=str)
@click.option("--ckpt", "ckpt_in", required=True, type=str)
@click.option("--out", required=True, type=str)
@click.option("--steps", type=int, default=None)
@click.option("--lr", type=float, default=None)
@click.option("--seed", type=int, default=None)
@click.pass_context
@guarded
def cmd_train_mapper(ctx, data, ckpt_in, out, steps, lr, seed):
    """Align the 2D condition encoders with the frozen 3D ones."""
    tcfg = _train_config(ctx.obj["config"], {"steps": steps, "lr": lr, "seed": seed})
    _log_config("train-mapper", vars(tcfg))
    state, feats, b3s, b2s, actions = _training_common(ctx, data, ckpt_in)
    training.train_mapper(feats, b3s, b2s, actions, state, tcfg)
    _save_state(out, state)
    click.echo(json.dumps({"checkpoint": out}))


def _guidance_config(config, overrides=None) -> GuidanceConfig:
    sec = resolved_section(config, "guidance", overrides)
    return GuidanceConfig(w_c=float(sec["w_c"]), tau2=float(sec["tau2"]),
                          k_iters=int(sec["k_iters"]), lbfgs_history=int(sec["lbfgs_history"]))


@main.command("generate")
@click.option("--ckpt", required=True, type=str)
@click.option("--action", required=True, type=str)
@click.option("--out", required=True, type=str)
@click.option("--seed", type=int, default=0)
@click.option("--bundle", "bundle_path", type=str, default=None,
              help="JSON file holding a serialized condition bundle.")
@click.option("--steps", type=int, default=50)
@click.option("--no-guidance", is_flag=True, default=False)
@click.pass_context
@guarded
def cmd_generate(ctx, ckpt, action, out, seed, bundle_path, steps, no_guidance):
    """Sample one clip, optionally conditioned by a bundle file."""
    gcfg = _guidance_config(ctx.obj["config"])
    if no_guidance:
        gcfg.k_iters = 0
    _log_config("generate", {"action": action, "seed": seed, "steps": steps, **vars(gcfg)})
    state = _load_state(ckpt)
    bundle = None
    if bundle_path:
        if not os.path.exists(bundle_path):
            raise FileNotFoundError(f"bundle file not found: {bundle_path}")
        from .conditions import ConditionBundle

        with open(bundle_path) as fh:
            bundle = ConditionBundle.from_dict(json.load(fh))
        bundle.action_word = action
        bundle.validate()
    clip = generate(state, action, bundle=bundle, seed=seed, steps=steps, guidance=gcfg)[0]
    write_clip(out, clip)
    click.echo(json.dumps({"clip": out, "frames": clip.n_frames}))


@main.command("blend")
@click.option("--ckpt", required=True, type=str)
@click.option("--out", required=True, type=str)
@click.option("--clips", "clip_paths", required=True, multiple=True, type=str)
@click.option("--actions", required=True, type=str, help="Comma-separated action words.")
@click.option("--ladder", type=int, default=None)
@click.pass_context
@guarded
def cmd_blend(ctx, ckpt, out, clip_paths, actions, ladder):
    """Blend an ordered list of clips into one long clip."""
    from .guidance import compose_storyboard

    sec = resolved_section(ctx.obj["config"], "blend", {"ladder": ladder})
    _log_config("blend", sec)
    state = _load_state(ckpt)
    clips = []
    for p in clip_paths:
        if not os.path.exists(p):
            raise FileNotFoundError(f"clip not found: {p}")
        clips.append(read_clip(p))
    action_list = [a.strip() for a in actions.split(",")]
    bcfg = BlendConfig(l=int(sec["l"]), tau3=float(sec["tau3"]), ladder=int(sec["ladder"]))
    result = compose_storyboard(clips, action_list, bcfg, state)
    write_clip(out, result)
    click.echo(json.dumps({"clip": out, "frames": result.n_frames}))


@main.command("evaluate")
@click.option("--ckpt", required=True, type=str)
@click.option("--data", required=True, type=str)
@click.option("--protocol", type=click.Choice(["average", "cross"]), default=None)
@click.option("--samples", type=int, default=None)
@click.option("--seed", type=int, default=None)
@click.option("--steps", type=int, default=50)
@click.option("--out", type=str, default=None, help="Write the JSON report here.")
@click.pass_context
@guarded
def cmd_evaluate(ctx, ckpt, data, protocol, samples, seed, steps, out):
    """Score the test split under the Average or Cross protocol."""
    sec = resolved_section(ctx.obj["config"], "eval",
                           {"protocol": protocol, "samples": samples, "seed": seed})
    _log_config("evaluate", sec)
    state = _load_state(ckpt)
    manifest = read_manifest(data)
    feats, _, _, actions = training.load_training_set(data, manifest)
    extractor = metrics_mod.train_extractor(feats, actions, seed=int(sec["seed"]))
    report = metrics_mod.run_protocol(
        state, data, manifest, protocol=str(sec["protocol"]).capitalize(),
        seed=int(sec["seed"]), max_samples=int(sec["samples"]), extractor=extractor,
        steps=steps,
    )
    click.echo(report.render_table())
    if out:
        with open(out, "w") as fh:
            fh.write(report.to_json())


@main.command("export-bvh")
@click.option("--clip", "clip_path", required=True, type=str)
@click.option("--out", required=True, type=str)
@guarded
def cmd_export_bvh(clip_path, out):
    """Convert a clip file to a positional BVH."""
    if not os.path.exists(clip_path):
        raise FileNotFoundError(f"clip not found: {clip_path}")
    _log_config("export-bvh", {"clip": clip_path})
    export_bvh(out, read_clip(clip_path))
    click.echo(json.dumps({"bvh": out}))


@main.command("serve")
@click.option("--ckpt", required=True, type=str)
@click.option("--store", type=str, default=None)
@click.option("--port", type=int, default=None)
@click.option("--steps", type=int, default=None)
@click.pass_context
@guarded
def cmd_serve(ctx, ckpt, store, port, steps):
    """Run the HTTP service."""
    import uvicorn

    from .service import create_app

    sec = resolved_section(ctx.obj["config"], "service",
                           {"store": store, "port": port, "steps": steps})
    _log_config("serve", sec)
    state = _load_state(ckpt)
    app = create_app(state, str(sec["store"]), sample_steps=int(sec["steps"]))
    uvicorn.run(app, host="127.0.0.1", port=int(sec["port"]))


if __name__ == "__main__":
    main()
