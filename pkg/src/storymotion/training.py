"""Training loops for the four stages: motion codec, base denoiser,
conditioning stack (frozen base), and the 2D mapper (everything else frozen).

Each loop is seed-deterministic, logs line-delimited JSON metrics, keeps a
last-good parameter snapshot, and aborts by restoring it when the loss goes
non-finite.
"""

from __future__ import annotations

import copy
import json
import os
from dataclasses import dataclass, asdict

import numpy as np
import torch


from . import losses
from .models import GeneratorState, bundle_tensors, save_checkpoint
from .motion import ContractViolation
from .schedule import add_noise, one_step_clean
from .synthdata import load_entry


def _f(x):
    return float(x.detach()) if torch.is_tensor(x) else float(x)


class TrainingAborted(ContractViolation):
    """Loss went non-finite; the module was restored to the last-good state."""


@dataclass
class TrainConfig:
    lr: float = 1e-5
    batch_size: int = 32
    steps: int = 1000
    seed: int = 0
    lambda_tr: float = 1.0
    lambda_key: float = 1.0
    lambda_r: float = 1.0
    lambda_c: float = 1.0
    tau1: float = 0.1
    kl_weight: float = 1e-4
    position_weight: float = 1.0
    log_every: int = 50
    checkpoint_every: int = 500
    out_dir: str | None = None


class _MetricsLog:
    def __init__(self, out_dir, stage):
        self.path = None
        if out_dir:
            os.makedirs(out_dir, exist_ok=True)
            self.path = os.path.join(out_dir, f"{stage}_metrics.jsonl")
            open(self.path, "w").close()

    def __call__(self, record: dict):
        if self.path:
            with open(self.path, "a") as fh:
                fh.write(json.dumps(record, sort_keys=True) + "\n")


def _guard(loss: torch.Tensor, module: torch.nn.Module, snapshot, stage: str):
    if not torch.isfinite(loss):
        module.load_state_dict(snapshot)
        raise TrainingAborted(f"{stage}: non-finite loss; restored last-good parameters")


def _maybe_checkpoint(step, cfg: TrainConfig, state, stage):
    if cfg.out_dir and (step % cfg.checkpoint_every == 0 or step == cfg.steps):
        save_checkpoint(os.path.join(cfg.out_dir, f"{stage}.ckpt"), state, asdict(cfg))


def load_training_set(root: str, manifest, split: str = "train"):
    """Manifest -> (feats tensor (M, N, D), bundles3d, bundles2d, actions)."""
    feats, b3s, b2s, actions = [], [], [], []
    for entry in manifest.entries:
        if entry["split"] != split:
            continue
        clip, b3, b2 = load_entry(root, entry)
        feats.append(torch.as_tensor(clip.features))
        b3s.append(b3)
        b2s.append(b2)
        actions.append(entry["action_word"])
    if not feats:
        raise ContractViolation(f"no {split!r} entries in dataset at {root}")
    return torch.stack(feats), b3s, b2s, actions


def train_codec(feats: torch.Tensor, state: GeneratorState, cfg: TrainConfig) -> GeneratorState:
    """Variational autoencoder stage: feature + position reconstruction + KL."""
    torch.manual_seed(cfg.seed)
    codec = state.codec
    codec.set_feature_stats(feats.reshape(-1, feats.shape[-1]).mean(0),
                            feats.reshape(-1, feats.shape[-1]).std(0))
    opt = torch.optim.AdamW(codec.parameters(), lr=cfg.lr)
    gen = torch.Generator().manual_seed(cfg.seed)
    log = _MetricsLog(cfg.out_dir, "codec")
    snapshot = copy.deepcopy(codec.state_dict())
    m = feats.shape[0]

    for step in range(1, cfg.steps + 1):
        idx = torch.randint(0, m, (min(cfg.batch_size, m),), generator=gen)
        batch = feats[idx]
        mu, logvar = codec.posterior(batch)
        z = mu + torch.exp(0.5 * logvar) * torch.randn(mu.shape, generator=gen)
        dec = codec.decode(z, require_trained=False)
        feat_loss = torch.mean((codec.normalize(dec) - codec.normalize(batch)) ** 2)
        pos_loss = losses.loss_tr(
            dec, batch, torch.ones(batch.shape[0], batch.shape[1], state.cfg.joint_count)
        )
        kl = -0.5 * torch.mean(1 + logvar - mu**2 - logvar.exp())
        loss = feat_loss + cfg.position_weight * pos_loss + cfg.kl_weight * kl
        _guard(loss, codec, snapshot, "codec")
        opt.zero_grad()
        loss.backward()
        opt.step()
        if step % cfg.log_every == 0 or step == 1:
            log({"stage": "codec", "step": step, "loss": _f(loss),
                 "feat": _f(feat_loss), "pos": _f(pos_loss), "kl": _f(kl)})
        if step % cfg.checkpoint_every == 0:
            snapshot = copy.deepcopy(codec.state_dict())
        _maybe_checkpoint(step, cfg, state, "codec")

    with torch.no_grad():
        mu, _ = codec.posterior(feats)
        codec.latent_mean.copy_(mu.mean(0))
        codec.latent_std.copy_(mu.std(0).clamp_min(1e-3))
    codec.trained.fill_(1.0)
    _maybe_checkpoint(cfg.steps, cfg, state, "codec")
    return state


def _latents(state, feats):
    with torch.no_grad():
        return state.codec.encode(feats)


def train_base(feats: torch.Tensor, actions, state: GeneratorState, cfg: TrainConfig) -> GeneratorState:
    """Unconditional diffusion pretraining of the denoiser + action table."""
    torch.manual_seed(cfg.seed)
    z0_all = _latents(state, feats)
    params = list(state.denoiser.parameters()) + list(state.action_vocab.parameters())
    opt = torch.optim.AdamW(params, lr=cfg.lr)
    gen = torch.Generator().manual_seed(cfg.seed)
    log = _MetricsLog(cfg.out_dir, "base")
    snapshot = copy.deepcopy(state.state_dict())
    m = z0_all.shape[0]

    for step in range(1, cfg.steps + 1):
        idx = torch.randint(0, m, (min(cfg.batch_size, m),), generator=gen)
        t = int(torch.randint(1, state.schedule.steps + 1, (1,), generator=gen))
        z0 = z0_all[idx]
        eps = torch.randn(z0.shape, generator=gen)
        z_t = add_noise(z0, t, eps, state.schedule)
        a = state.action_vocab.embed_batch([actions[i] for i in idx.tolist()])
        tt = torch.full((z0.shape[0],), t, dtype=torch.long)
        loss = losses.loss_recon(state.denoiser(z_t, tt, a), eps)
        _guard(loss, state, snapshot, "base")
        opt.zero_grad()
        loss.backward()
        opt.step()
        if step % cfg.log_every == 0 or step == 1:
            log({"stage": "base", "step": step, "loss": _f(loss), "t": t})
        if step % cfg.checkpoint_every == 0:
            snapshot = copy.deepcopy(state.state_dict())
        _maybe_checkpoint(step, cfg, state, "base")
    state.base_trained.fill_(1.0)
    _maybe_checkpoint(cfg.steps, cfg, state, "base")
    return state


def train_generator(feats: torch.Tensor, bundles3d, actions,
                    state: GeneratorState, cfg: TrainConfig) -> GeneratorState:
    """Conditioning stage: trains the control branch, adapter, 3D encoders
    and injection gates against noise + trajectory + keypose losses while the
    base denoiser, action table and codec stay frozen."""
    if state.codec.trained.item() == 0 or state.base_trained.item() == 0:
        raise ContractViolation("codec and base diffusion must be trained first")
    torch.manual_seed(cfg.seed)
    for p in state.parameters():
        p.requires_grad_(False)
    cond_params = list(state.conditioning_parameters())
    for p in cond_params:
        p.requires_grad_(True)

    z0_all = _latents(state, feats)
    opt = torch.optim.AdamW(cond_params, lr=cfg.lr)
    gen = torch.Generator().manual_seed(cfg.seed)
    log = _MetricsLog(cfg.out_dir, "generator")
    snapshot = copy.deepcopy(state.state_dict())
    m = z0_all.shape[0]

    for step in range(1, cfg.steps + 1):
        idx = torch.randint(0, m, (min(cfg.batch_size, m),), generator=gen).tolist()
        t = int(torch.randint(1, state.schedule.steps + 1, (1,), generator=gen))
        z0 = z0_all[idx]
        eps = torch.randn(z0.shape, generator=gen)
        z_t = add_noise(z0, t, eps, state.schedule)
        a = state.action_vocab.embed_batch([actions[i] for i in idx])
        tt = torch.full((z0.shape[0],), t, dtype=torch.long)
        batch_bundles = [bundles3d[i] for i in idx]
        eps_hat, _, _ = state.condition_path(z_t, tt, a, batch_bundles)
        loss = losses.loss_recon(eps_hat, eps)
        if cfg.lambda_tr > 0 or cfg.lambda_key > 0:
            dec = state.codec.decode(one_step_clean(z_t, t, eps_hat, state.schedule))
            gt = feats[idx]
            t_mask = torch.stack([torch.as_tensor(b.trajectory_mask) for b in batch_bundles])
            k_mask = torch.stack([torch.as_tensor(b.keypose_mask) for b in batch_bundles])
            loss = loss + cfg.lambda_tr * losses.loss_tr(dec, gt, t_mask)
            loss = loss + cfg.lambda_key * losses.loss_key(dec, gt, k_mask)
        _guard(loss, state, snapshot, "generator")
        opt.zero_grad()
        loss.backward()
        opt.step()
        if step % cfg.log_every == 0 or step == 1:
            log({"stage": "generator", "step": step, "loss": _f(loss), "t": t})
        if step % cfg.checkpoint_every == 0:
            snapshot = copy.deepcopy(state.state_dict())
        _maybe_checkpoint(step, cfg, state, "generator")
    state.control_trained.fill_(1.0)
    for p in state.parameters():
        p.requires_grad_(True)
    _maybe_checkpoint(cfg.steps, cfg, state, "generator")
    return state


def train_mapper(feats: torch.Tensor, bundles3d, bundles2d, actions,
                 state: GeneratorState, cfg: TrainConfig) -> GeneratorState:
    """Alignment stage: only the 2D encoders learn, pulled onto the frozen 3D
    encoders' embeddings with matching + contrastive + denoising losses."""
    if state.control_trained.item() == 0:
        raise ContractViolation("conditioning stack must be trained first")
    torch.manual_seed(cfg.seed)
    for p in state.parameters():
        p.requires_grad_(False)
    mapper_params = list(state.mapper_parameters())
    for p in mapper_params:
        p.requires_grad_(True)

    z0_all = _latents(state, feats)
    opt = torch.optim.AdamW(mapper_params, lr=cfg.lr)
    gen = torch.Generator().manual_seed(cfg.seed)
    log = _MetricsLog(cfg.out_dir, "mapper")
    snapshot = copy.deepcopy(state.state_dict())
    m = z0_all.shape[0]

    traj3_all, key3_all = bundle_tensors(bundles3d)
    traj2_all, key2_all = bundle_tensors(bundles2d)
    with torch.no_grad():
        s3_traj = state.e_tr3d(traj3_all)
        s3_key = state.e_k3d(key3_all)

    for step in range(1, cfg.steps + 1):
        idx = torch.randint(0, m, (min(cfg.batch_size, m),), generator=gen).tolist()
        s2_traj = state.e_tr2d(traj2_all[idx])
        s2_key = state.e_k2d(key2_all[idx])
        match = losses.loss_match(s2_traj, s3_traj[idx]) + losses.loss_match(s2_key, s3_key[idx])
        contrast = losses.loss_contrast(
            s2_traj.flatten(1), s3_traj[idx].flatten(1), cfg.tau1
        ) + losses.loss_contrast(s2_key, s3_key[idx], cfg.tau1)
        loss = match + cfg.lambda_c * contrast
        if cfg.lambda_r > 0:
            t = int(torch.randint(1, state.schedule.steps + 1, (1,), generator=gen))
            z0 = z0_all[idx]
            eps = torch.randn(z0.shape, generator=gen)
            z_t = add_noise(z0, t, eps, state.schedule)
            a = state.action_vocab.embed_batch([actions[i] for i in idx])
            tt = torch.full((z0.shape[0],), t, dtype=torch.long)
            eps_hat, _, _ = state.condition_path(z_t, tt, a, [bundles2d[i] for i in idx])
            loss = loss + cfg.lambda_r * losses.loss_recon(eps_hat, eps)
        _guard(loss, state, snapshot, "mapper")
        opt.zero_grad()
        loss.backward()
        opt.step()
        if step % cfg.log_every == 0 or step == 1:
            log({"stage": "mapper", "step": step, "loss": _f(loss),
                 "match": _f(match), "contrast": _f(contrast)})
        if step % cfg.checkpoint_every == 0:
            snapshot = copy.deepcopy(state.state_dict())
        _maybe_checkpoint(step, cfg, state, "mapper")
    state.mapper_trained.fill_(1.0)
    for p in state.parameters():
        p.requires_grad_(True)
    _maybe_checkpoint(cfg.steps, cfg, state, "mapper")
    return state
