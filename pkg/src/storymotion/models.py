"""Neural components: motion autoencoder, latent denoiser, condition
encoders, trajectory control branch, keypose adapter, zero-init injection.

Everything is deliberately small (64-dim tokens, 4 latent tokens) so the
full pipeline trains in minutes on a CPU. Shapes:

    motion features  (B, N=40, 263)
    latent           (B, L=4, H=64)
    action embedding (B, H)
"""

from __future__ import annotations

import io
import json
import math
from dataclasses import dataclass, field, asdict

import numpy as np
import torch
import torch.nn as nn

from .conditions import ConditionBundle
from .motion import FEATURE_DIM, ContractViolation, MotionClip
from .schedule import NoiseSchedule
from .synthdata import VOCABULARY

LATENT_TOKENS = 4
LATENT_DIM = 64
ACTION_TEMPLATE = ("a", "person")


@dataclass
class ModelConfig:
    n_frames: int = 40
    feature_dim: int = FEATURE_DIM
    latent_tokens: int = LATENT_TOKENS
    latent_dim: int = LATENT_DIM
    n_heads: int = 4
    ff_dim: int = 128
    codec_blocks: int = 3
    denoiser_blocks: int = 4      # control branch and adapter copy this depth
    encoder_blocks: int = 1       # single block for the condition encoders
    joint_count: int = 22
    injection: str = "per-layer"  # or "final"
    diffusion_steps: int = 1000
    ddim_steps: int = 50
    variant: str = "full"         # full | single-controlnet | double-controlnet | global-keypose


def _encoder_blocks(n: int, cfg: ModelConfig) -> nn.ModuleList:
    return nn.ModuleList(
        nn.TransformerEncoderLayer(
            d_model=cfg.latent_dim,
            nhead=cfg.n_heads,
            dim_feedforward=cfg.ff_dim,
            dropout=0.0,
            batch_first=True,
            norm_first=True,
        )
        for _ in range(n)
    )


def timestep_embedding(t: torch.Tensor, dim: int) -> torch.Tensor:
    """Sinusoidal embedding of integer timesteps, (B,) -> (B, dim)."""
    half = dim // 2
    freqs = torch.exp(-math.log(10000.0) * torch.arange(half, dtype=torch.float32) / half)
    args = t.float()[:, None] * freqs[None, :]
    return torch.cat([torch.cos(args), torch.sin(args)], dim=-1)


class ActionVocabulary(nn.Module):
    """Learned embedding table over the fixed action vocabulary.

    A word is first expanded with the template sentence ("a person <word>");
    the sentence embedding is the mean of its token embeddings.
    """

    def __init__(self, dim: int = LATENT_DIM, words=VOCABULARY):
        super().__init__()
        self.words = tuple(words)
        tokens = list(ACTION_TEMPLATE) + list(self.words)
        self.token_index = {w: i for i, w in enumerate(tokens)}
        self.table = nn.Embedding(len(tokens), dim)

    def embed(self, word: str) -> torch.Tensor:
        return self.embed_batch([word])[0]

    def embed_batch(self, words) -> torch.Tensor:
        idx = []
        for w in words:
            if w not in self.words:
                raise ContractViolation(
                    f"unknown action {w!r}; vocabulary: {', '.join(self.words)}"
                )
            idx.append([self.token_index[t] for t in (*ACTION_TEMPLATE, w)])
        ids = torch.as_tensor(idx, dtype=torch.long, device=self.table.weight.device)
        return self.table(ids).mean(dim=1)


class MotionCodec(nn.Module):
    """Variational transformer autoencoder MotionClip <-> latent tokens."""

    def __init__(self, cfg: ModelConfig | None = None):
        super().__init__()
        self.cfg = cfg or ModelConfig()
        c = self.cfg
        d = c.latent_dim
        self.in_proj = nn.Linear(c.feature_dim, d)
        self.frame_pos = nn.Parameter(torch.randn(c.n_frames, d) * 0.02)
        self.enc_queries = nn.Parameter(torch.randn(2 * c.latent_tokens, d) * 0.02)
        self.enc_blocks = _encoder_blocks(c.codec_blocks, c)
        self.dec_queries = nn.Parameter(torch.randn(c.n_frames, d) * 0.02)
        self.dec_blocks = _encoder_blocks(c.codec_blocks, c)
        self.out_proj = nn.Linear(d, c.feature_dim)
        # dataset feature statistics, set before training
        self.register_buffer("feat_mean", torch.zeros(c.feature_dim))
        self.register_buffer("feat_std", torch.ones(c.feature_dim))
        # latent statistics, set after training so diffusion sees ~unit scale
        self.register_buffer("latent_mean", torch.zeros(c.latent_tokens, d))
        self.register_buffer("latent_std", torch.ones(c.latent_tokens, d))
        self.register_buffer("trained", torch.zeros(1))

    def set_feature_stats(self, mean: torch.Tensor, std: torch.Tensor) -> None:
        self.feat_mean.copy_(mean)
        self.feat_std.copy_(std.clamp_min(1e-4))

    def normalize(self, feats: torch.Tensor) -> torch.Tensor:
        return (feats - self.feat_mean) / self.feat_std

    def denormalize(self, feats: torch.Tensor) -> torch.Tensor:
        return feats * self.feat_std + self.feat_mean

    def posterior(self, feats: torch.Tensor):
        """(B, N, D) raw features -> (mu, logvar), each (B, L, H)."""
        c = self.cfg
        x = self.in_proj(self.normalize(feats)) + self.frame_pos
        b = x.shape[0]
        q = self.enc_queries.expand(b, -1, -1)
        h = torch.cat([q, x], dim=1)
        for blk in self.enc_blocks:
            h = blk(h)
        heads = h[:, : 2 * c.latent_tokens]
        mu, logvar = heads[:, : c.latent_tokens], heads[:, c.latent_tokens :]
        return mu, logvar.clamp(-12, 6)

    def encode(self, feats: torch.Tensor, require_trained: bool = True) -> torch.Tensor:
        """Deterministic (posterior-mean) encoding, normalized latent."""
        if require_trained and self.trained.item() == 0:
            raise ContractViolation("codec is untrained; run codec training first")
        mu, _ = self.posterior(feats)
        return (mu - self.latent_mean) / self.latent_std

    def decode(self, z: torch.Tensor, require_trained: bool = True) -> torch.Tensor:
        """Normalized latent (B, L, H) -> raw features (B, N, D)."""
        if require_trained and self.trained.item() == 0:
            raise ContractViolation("codec is untrained; run codec training first")
        c = self.cfg
        if z.shape[-2:] != (c.latent_tokens, c.latent_dim):
            raise ContractViolation(
                f"latent shape {tuple(z.shape[-2:])} != ({c.latent_tokens}, {c.latent_dim})"
            )
        raw = z * self.latent_std + self.latent_mean
        b = raw.shape[0]
        q = self.dec_queries.expand(b, -1, -1) + self.frame_pos
        h = torch.cat([raw, q], dim=1)
        for blk in self.dec_blocks:
            h = blk(h)
        return self.denormalize(self.out_proj(h[:, c.latent_tokens :]))

    def encode_clip(self, clip: MotionClip) -> torch.Tensor:
        feats = torch.as_tensor(clip.features, dtype=torch.float32)[None]
        with torch.no_grad():
            return self.encode(feats)[0]

    def decode_latent(self, z: torch.Tensor, fps: float = 20.0) -> MotionClip:
        with torch.no_grad():
            feats = self.decode(z[None] if z.ndim == 2 else z)
        return MotionClip(feats[0].cpu().numpy(), fps=fps)


class Denoiser(nn.Module):
    """Base latent denoiser eps_theta(z_t, t, a) with optional residual
    injection through zero-initialized linear layers."""

    def __init__(self, cfg: ModelConfig | None = None):
        super().__init__()
        self.cfg = cfg or ModelConfig()
        c = self.cfg
        d = c.latent_dim
        self.time_proj = nn.Linear(d, d)
        self.token_pos = nn.Parameter(torch.randn(1 + c.latent_tokens, d) * 0.02)
        self.blocks = _encoder_blocks(c.denoiser_blocks, c)
        self.out_proj = nn.Linear(d, d)

    def cond_token(self, t: torch.Tensor, a: torch.Tensor) -> torch.Tensor:
        return self.time_proj(timestep_embedding(t, self.cfg.latent_dim)) + a

    def forward(self, z_t, t, a, residuals=None, zero_layers=None) -> torch.Tensor:
        """residuals: list of per-block (B, L, H) corrections, mapped through
        the matching zero-init layer and added after each block (or only after
        the final block when cfg.injection == "final")."""
        c = self.cfg
        cond = self.cond_token(t, a)[:, None, :]
        h = torch.cat([cond, z_t], dim=1) + self.token_pos
        n_blocks = len(self.blocks)
        for i, blk in enumerate(self.blocks):
            h = blk(h)
            if residuals is not None and c.injection == "per-layer":
                inj = zero_layers[i](residuals[i])
                h = torch.cat([h[:, :1], h[:, 1:] + inj], dim=1)
        out = h[:, 1:]
        if residuals is not None and c.injection == "final":
            out = out + zero_layers[-1](residuals[-1])
        return self.out_proj(out)


class BranchNet(nn.Module):
    """Trainable copy of the denoiser's block stack producing per-block
    residual features over the latent tokens. Used for both the trajectory
    control branch and the keypose adapter."""

    def __init__(self, cfg: ModelConfig | None = None):
        super().__init__()
        self.cfg = cfg or ModelConfig()
        c = self.cfg
        d = c.latent_dim
        self.time_proj = nn.Linear(d, d)
        self.token_pos = nn.Parameter(torch.randn(1 + c.latent_tokens, d) * 0.02)
        self.blocks = _encoder_blocks(c.denoiser_blocks, c)

    def forward(self, z, t, a, incoming=None) -> list:
        """incoming: optional per-block features added before each block
        (adapter consuming the control branch's residuals)."""
        cond = self.time_proj(timestep_embedding(t, self.cfg.latent_dim)) + a
        h = torch.cat([cond[:, None, :], z], dim=1) + self.token_pos
        outs = []
        for i, blk in enumerate(self.blocks):
            if incoming is not None:
                h = torch.cat([h[:, :1], h[:, 1:] + incoming[i]], dim=1)
            h = blk(h)
            outs.append(h[:, 1:])
        return outs


class ConditionEncoder(nn.Module):
    """Single-block transformer over per-frame (values || mask) channels.

    mode="trajectory": outputs latent-shaped tokens (B, L, H) added to z_t.
    mode="keypose":    outputs a single embedding (B, H) added to the action.
    """

    def __init__(self, channels: int, mode: str, cfg: ModelConfig | None = None):
        super().__init__()
        self.cfg = cfg or ModelConfig()
        self.mode = mode
        c = self.cfg
        d = c.latent_dim
        self.in_proj = nn.Linear(channels, d)
        self.frame_pos = nn.Parameter(torch.randn(c.n_frames, d) * 0.02)
        self.blocks = _encoder_blocks(c.encoder_blocks, c)
        self.out_proj = nn.Linear(d, d)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        c = self.cfg
        h = self.in_proj(x) + self.frame_pos
        for blk in self.blocks:
            h = blk(h)
        if self.mode == "trajectory":
            chunks = h.reshape(h.shape[0], c.latent_tokens, c.n_frames // c.latent_tokens, -1)
            return self.out_proj(chunks.mean(dim=2))
        return self.out_proj(h.mean(dim=1))


def make_condition_encoder(dims: str, mode: str, cfg: ModelConfig | None = None) -> ConditionEncoder:
    cfg = cfg or ModelConfig()
    c = 2 if dims == "2D" else 3
    channels = cfg.joint_count * (c + 1)
    return ConditionEncoder(channels, mode, cfg)


def bundle_tensors(bundles) -> tuple:
    """Stack bundles into encoder inputs: (traj_in, key_in), each
    (B, N, J*(C+1)) with the mask appended per joint."""
    trajs, keys = [], []
    for b in bundles:
        tr = np.concatenate([b.trajectory.reshape(b.n_frames, -1), b.trajectory_mask], axis=1)
        kp_mask = np.repeat(b.keypose_mask[:, None], b.n_joints, axis=1)
        kp = np.concatenate([b.keypose.reshape(b.n_frames, -1), kp_mask], axis=1)
        trajs.append(tr)
        keys.append(kp)
    return (
        torch.as_tensor(np.stack(trajs), dtype=torch.float32),
        torch.as_tensor(np.stack(keys), dtype=torch.float32),
    )


class ZeroLinears(nn.Module):
    """Per-block zero-initialized linear layers (the injection gate)."""

    def __init__(self, cfg: ModelConfig | None = None):
        super().__init__()
        cfg = cfg or ModelConfig()
        self.layers = nn.ModuleList(
            nn.Linear(cfg.latent_dim, cfg.latent_dim) for _ in range(cfg.denoiser_blocks)
        )
        for layer in self.layers:
            nn.init.zeros_(layer.weight)
            nn.init.zeros_(layer.bias)

    def __getitem__(self, i):
        return self.layers[i]

    def __len__(self):
        return len(self.layers)


class GeneratorState(nn.Module):
    """Bundle of every trained component plus the shared noise schedule."""

    def __init__(self, cfg: ModelConfig | None = None):
        super().__init__()
        self.cfg = cfg or ModelConfig()
        c = self.cfg
        self.codec = MotionCodec(c)
        self.denoiser = Denoiser(c)
        self.action_vocab = ActionVocabulary(c.latent_dim)
        self.f_tr = BranchNet(c)
        self.f_k = BranchNet(c)
        self.zero = ZeroLinears(c)
        self.e_tr3d = make_condition_encoder("3D", "trajectory", c)
        self.e_k3d = make_condition_encoder("3D", "keypose", c)
        self.e_tr2d = make_condition_encoder("2D", "trajectory", c)
        self.e_k2d = make_condition_encoder("2D", "keypose", c)
        self.schedule = NoiseSchedule(steps=c.diffusion_steps)
        self.register_buffer("base_trained", torch.zeros(1))
        self.register_buffer("control_trained", torch.zeros(1))
        self.register_buffer("mapper_trained", torch.zeros(1))

    # -- conditioning ------------------------------------------------------

    def embed_action(self, word: str) -> torch.Tensor:
        return self.action_vocab.embed(word)

    def encoders_for(self, dims: str):
        if dims == "3D":
            return self.e_tr3d, self.e_k3d
        if dims == "2D":
            return self.e_tr2d, self.e_k2d
        raise ContractViolation(f"unknown dims tag {dims!r}")

    def condition_path(self, z_t, t, a, bundles, encoders=None):
        """Full conditional noise prediction.

        Returns (eps_hat, r, r_prime). Order of operations:
        z' = z + E_tr(T); r = F_tr(z', t, a); a' = a + E_k(K);
        r' = F_k(z, t, r, a'); eps = eps_theta(z, t, a) with Z(r') injected.
        """
        dims = bundles[0].dims
        e_tr, e_k = encoders if encoders is not None else self.encoders_for(dims)
        traj_in, key_in = bundle_tensors(bundles)
        traj_in = traj_in.to(z_t.device)
        key_in = key_in.to(z_t.device)
        variant = self.cfg.variant

        if variant == "single-controlnet":
            # keypose and trajectory share one encoder and one branch
            z_prime = z_t + e_tr(traj_in) + e_tr(key_in)
            r = self.f_tr(z_prime, t, a)
            return self.denoiser(z_t, t, a, residuals=r, zero_layers=self.zero), r, r

        z_prime = z_t + e_tr(traj_in)
        r = self.f_tr(z_prime, t, a)

        if variant == "double-controlnet":
            a_key = a + e_k(key_in)
            r_k = self.f_k(z_t, t, a_key)
            r_sum = [ri + rk for ri, rk in zip(r, r_k)]
            return self.denoiser(z_t, t, a, residuals=r_sum, zero_layers=self.zero), r, r_sum
        if variant == "global-keypose":
            z_key = z_t + e_k(key_in)[:, None, :]
            r_prime = self.f_k(z_key, t, a, incoming=r)
            return self.denoiser(z_t, t, a, residuals=r_prime, zero_layers=self.zero), r, r_prime

        a_prime = a + e_k(key_in)
        r_prime = self.f_k(z_t, t, a_prime, incoming=r)
        eps_hat = self.denoiser(z_t, t, a, residuals=r_prime, zero_layers=self.zero)
        return eps_hat, r, r_prime

    def conditioning_parameters(self):
        mods = [self.f_tr, self.f_k, self.zero, self.e_tr3d, self.e_k3d]
        for m in mods:
            yield from m.parameters()

    def mapper_parameters(self):
        for m in (self.e_tr2d, self.e_k2d):
            yield from m.parameters()


# ---------------------------------------------------------------------------
# checkpoint format: JSON header line + flat little-endian float32 payload
# ---------------------------------------------------------------------------

def save_checkpoint(path, module: nn.Module, config: dict | None = None) -> None:
    state = module.state_dict()
    names, shapes, chunks = [], [], []
    for k, v in state.items():
        arr = v.detach().cpu().numpy().astype("<f4")
        names.append(k)
        shapes.append(list(arr.shape))
        chunks.append(arr.tobytes())
    header = {
        "format": "storymotion-ckpt-v1",
        "names": names,
        "shapes": shapes,
        "config": config or {},
    }
    blob = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(blob)
        fh.write(b"\n")
        for c in chunks:
            fh.write(c)


def load_checkpoint(path, module: nn.Module) -> dict:
    with open(path, "rb") as fh:
        header = json.loads(fh.readline().decode())
        payload = fh.read()
    if header.get("format") != "storymotion-ckpt-v1":
        raise ContractViolation(f"not a checkpoint file: {path}")
    expected = sum(int(np.prod(s)) if s else 1 for s in header["shapes"]) * 4
    if len(payload) != expected:
        raise ContractViolation(
            f"checkpoint payload length mismatch: {len(payload)} != {expected}"
        )
    state = {}
    offset = 0
    for name, shape in zip(header["names"], header["shapes"]):
        count = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(payload, dtype="<f4", count=count, offset=offset).reshape(shape)
        offset += count * 4
        state[name] = torch.as_tensor(arr.copy())
    module.load_state_dict(state)
    return header["config"]
