"""Generation entry points: seeded sampling with classifier-free guidance,
optional second-order trajectory guidance, and the 2D condition path."""

from __future__ import annotations

import numpy as np
import torch

from .guidance import GuidanceConfig, cfg_combine, guidance_objective, refine_noise
from .motion import ContractViolation, MotionClip, from_decoded
from .schedule import ddim_step, one_step_clean


def seeded_noise(state, batch: int, seed: int) -> torch.Tensor:
    gen = torch.Generator().manual_seed(int(seed))
    c = state.cfg
    return torch.randn(batch, c.latent_tokens, c.latent_dim, generator=gen)


def make_eps_fn(state, actions, bundles=None, w_c=None):
    """Noise-prediction closure. Unconditional branch is the base denoiser
    without residual injection; w_c blends the two branches."""
    a = state.action_vocab.embed_batch(list(actions))

    def eps_fn(z, t):
        tt = torch.full((z.shape[0],), int(t), dtype=torch.long, device=z.device)
        eps_u = state.denoiser(z, tt, a)
        if bundles is None:
            return eps_u
        eps_c, _, _ = state.condition_path(z, tt, a, bundles)
        if w_c is None:
            return eps_c
        return cfg_combine(eps_u, eps_c, w_c)

    return eps_fn


def _check_trained(state, bundles):
    if state.base_trained.item() == 0:
        raise ContractViolation("generator is untrained; run generator training first")
    if bundles:
        if state.control_trained.item() == 0:
            raise ContractViolation("condition branches are untrained")
        if bundles[0].dims == "2D" and state.mapper_trained.item() == 0:
            raise ContractViolation("2D mapper is untrained")


def generate(state, action: str, bundle=None, seed: int = 0, steps: int = 50,
             guidance: GuidanceConfig | None = None, batch: int = 1) -> list:
    """Sample motion clips for one action (optionally conditioned).

    Deterministic per (state, seed). Returns a list of MotionClips of length
    `batch`; trajectory guidance runs when a config is given and the bundle
    carries trajectory points.
    """
    bundles = [bundle] * batch if bundle is not None else None
    _check_trained(state, bundles)
    gcfg = guidance or GuidanceConfig()
    eps_fn = make_eps_fn(state, [action] * batch, bundles, w_c=gcfg.w_c if bundle is not None else None)

    z = seeded_noise(state, batch, seed)
    ladder = state.schedule.ladder(steps)

    guide = (
        guidance is not None
        and guidance.k_iters > 0
        and bundle is not None
        and bundle.trajectory_mask.sum() > 0
    )
    if guide:
        cam = bundle.camera if bundle.dims == "2D" else None
        traj = [bundle.trajectory] * batch
        mask = [bundle.trajectory_mask] * batch

    for i, t in enumerate(ladder):
        t_prev = ladder[i + 1] if i + 1 < len(ladder) else 0
        with torch.no_grad():
            eps_hat = eps_fn(z, t)
        if guide:
            frozen = eps_hat.detach()
            obj = lambda u: guidance_objective(
                u, t, cam, traj, mask, state, lambda uu, tt: frozen
            )
            eps_hat = refine_noise(eps_hat, z, t, obj, gcfg, state.schedule)
        with torch.no_grad():
            if t_prev == 0:
                z = one_step_clean(z, t, eps_hat, state.schedule)
            else:
                z = ddim_step(z, eps_hat, t, t_prev, state.schedule)

    with torch.no_grad():
        feats = state.codec.decode(z)
    return [from_decoded(f.cpu().numpy()) for f in feats]


def generate_from_2d(bundle2d, action: str, state, seed: int = 0,
                     guidance: GuidanceConfig | None = None, steps: int = 50) -> MotionClip:
    """Sketch-conditioned generation: the 2D bundle rides the trained mapper
    encoders through the unchanged conditioning path."""
    if bundle2d.dims != "2D":
        raise ContractViolation("generate_from_2d expects a 2D bundle")
    bundle2d.validate()
    return generate(state, action, bundle=bundle2d, seed=seed, steps=steps,
                    guidance=guidance or GuidanceConfig())[0]


def embed2d(bundle2d, state):
    """(keypose_embedding, trajectory_embedding) from the 2D encoders,
    shape-identical to the 3D encoders' outputs."""
    from .models import bundle_tensors

    if bundle2d.dims != "2D":
        raise ContractViolation("embed2d expects a 2D bundle")
    if state.mapper_trained.item() == 0:
        raise ContractViolation("2D mapper is untrained")
    traj_in, key_in = bundle_tensors([bundle2d])
    with torch.no_grad():
        return state.e_k2d(key_in)[0], state.e_tr2d(traj_in)[0]
