"""Classifier-free guidance, second-order trajectory guidance, and
inversion-based clip blending.

Trajectory guidance descends a differentiable projection-matching objective
with limited-memory BFGS preconditioning (two-loop recursion, fixed step,
no line search) and folds the resulting latent correction back into the
predicted noise. Keypose guidance is deliberately absent.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import torch

from .motion import ContractViolation, MotionClip, from_decoded, project, recover_joint_positions
from .schedule import ddim_invert, ddim_sample, one_step_clean

log = logging.getLogger(__name__)


@dataclass
class GuidanceConfig:
    w_c: float = 7.5          # classifier-free guidance scale
    tau2: float = 0.05        # guidance step strength
    k_iters: int = 4          # inner optimizer iterations per denoising step
    lbfgs_history: int = 10

    def __post_init__(self):
        if self.k_iters < 0:
            raise ContractViolation("k_iters must be >= 0")


@dataclass
class BlendConfig:
    l: int = 20               # transition length in frames
    tau3: float = 0.05        # blending guidance strength
    ladder: int = 50          # DDIM steps for inversion and re-denoising
    k_iters: int = 4
    lbfgs_history: int = 10
    w_seam: float = 100.0     # weight of the seam smoothness term


def cfg_combine(eps_uncond: torch.Tensor, eps_cond: torch.Tensor, w_c: float) -> torch.Tensor:
    """eps = eps_uncond + w_c * (eps_cond - eps_uncond)."""
    return eps_uncond + w_c * (eps_cond - eps_uncond)


def guidance_objective(z_t, t, cam, trajectory, trajectory_mask, state, eps_fn):
    """Masked mean squared distance between the (projected) recovered joint
    trajectory of the one-step clean prediction and the target points.

    cam=None compares in 3D world coordinates; otherwise targets are 2D
    screen points under `cam`. trajectory: (B, N, J, C), mask: (B, N, J).
    """
    mask = torch.as_tensor(np.stack([np.asarray(m) for m in trajectory_mask]), dtype=z_t.dtype)
    if mask.sum().item() == 0:
        raise ContractViolation("guidance objective needs a nonempty trajectory mask")
    target = torch.as_tensor(
        np.stack([np.asarray(tr) for tr in trajectory]), dtype=z_t.dtype
    )
    eps_hat = eps_fn(z_t, t)
    z0 = one_step_clean(z_t, t, eps_hat, state.schedule)
    feats = state.codec.decode(z0)
    pos = torch.stack([recover_joint_positions(f) for f in feats])
    pred = project(pos, cam) if cam is not None else pos
    sq = ((pred - target) ** 2).sum(dim=-1) * mask
    return sq.sum() / (mask.sum() * pred.shape[-1])


def _lbfgs_direction(grad: torch.Tensor, s_hist, y_hist) -> torch.Tensor:
    """Two-loop recursion; returns the preconditioned descent direction H^-1 g."""
    q = grad.clone()
    stack = []
    for s, y in zip(reversed(s_hist), reversed(y_hist)):
        sy = (s * y).sum()
        if sy.abs() < 1e-12:
            continue
        rho = 1.0 / sy
        alpha = rho * (s * q).sum()
        q = q - alpha * y
        stack.append((alpha, rho, s, y))
    if y_hist:
        y_last, s_last = y_hist[-1], s_hist[-1]
        yy = (y_last * y_last).sum()
        if yy > 1e-12:
            q = q * ((s_last * y_last).sum() / yy).clamp(1e-4, 1e4)
    for alpha, rho, s, y in reversed(stack):
        beta = rho * (y * q).sum()
        q = q + (alpha - beta) * s
    return q


def refine_noise(eps_t, z_t, t, objective, cfg: GuidanceConfig, schedule) -> torch.Tensor:
    """Correct eps_t by k_iters preconditioned descent steps on the latent.

    The accumulated latent move du is expressed as a noise correction
    deps = -du / sqrt(1 - alpha_t) so the downstream DDIM step sees the same
    shifted clean prediction. k_iters=0 or tau2=0 is the identity.
    """
    if cfg.k_iters == 0 or cfg.tau2 == 0.0:
        return eps_t
    u = z_t.detach().clone()
    s_hist: list = []
    y_hist: list = []
    prev_grad = None
    for _ in range(cfg.k_iters):
        uu = u.clone().requires_grad_(True)
        val = objective(uu)
        (grad,) = torch.autograd.grad(val, uu)
        if not torch.isfinite(grad).all():
            log.warning("non-finite guidance gradient at t=%s; skipping refinement", t)
            return eps_t
        direction = _lbfgs_direction(grad, s_hist, y_hist)
        step = -cfg.tau2 * direction
        if prev_grad is not None:
            s_hist.append(u - prev_u)
            y_hist.append(grad - prev_grad)
            if len(s_hist) > cfg.lbfgs_history:
                s_hist.pop(0)
                y_hist.pop(0)
        prev_u, prev_grad = u, grad
        u = u + step
    du = u - z_t
    a = schedule.alpha_at(t)
    return eps_t - du / float(np.sqrt(1.0 - a))


# ---------------------------------------------------------------------------
# blending
# ---------------------------------------------------------------------------

def linear_blend(clip_p: MotionClip, clip_q: MotionClip, l: int) -> MotionClip:
    """Feature-space crossfade over l frames between the tail of p and the
    head of q. Frame 0 of the result equals p's source frame exactly, frame
    l-1 equals q's; the midpoint of an odd-length fade is the arithmetic mean."""
    n = clip_p.n_frames
    if not 0 < l < 2 * n:
        raise ContractViolation(f"transition length {l} outside (0, {2 * n})")
    half = l // 2
    fp, fq = clip_p.features, clip_q.features
    out = np.empty((l, fp.shape[1]), dtype=np.float32)
    for t in range(l):
        a = fp[min(n - half + t, n - 1)]
        b = fq[max(t - half, 0)]
        w = t / (l - 1) if l > 1 else 1.0
        out[t] = (1.0 - w) * a + w * b
    return MotionClip(out, fps=clip_p.fps)


def _segment_positions(features: torch.Tensor) -> torch.Tensor:
    """Recover world positions of a feature slice, re-integrated from the
    origin so segments compare independently of global placement."""
    return recover_joint_positions(features)


def _gm_objective(z_pair, t, state, eps_fn, ref_p, ref_q, n, half):
    """Motion-similarity objective for blending: squared position error of
    the decoded composite against the source segments outside the fade."""
    eps_hat = eps_fn(z_pair, t)
    z0 = one_step_clean(z_pair, t, eps_hat, state.schedule)
    feats = state.codec.decode(z0)
    comp = torch.cat([feats[0], feats[1]], dim=0)  # (2N, D)
    pred_p = _segment_positions(comp[: n - half])
    pred_q = _segment_positions(comp[n + half :])
    return ((pred_p - ref_p) ** 2).mean() + ((pred_q - ref_q) ** 2).mean()


def _relax_seam(feats: torch.Tensor, n: int, half: int, w_seam: float,
                iters: int = 2000, lr: float = 5e-3) -> torch.Tensor:
    """Local post-pass on the decoded composite: nudge only the transition
    window so jerk across the window junction does not exceed the clip's own
    interior level. Frames outside the window are returned untouched."""
    if w_seam <= 0.0 or iters <= 0:
        return feats
    lo, hi = n - half - 3, n + half + 3
    head, window, tail = feats[:lo], feats[lo:hi], feats[hi:]
    free = window.clone().requires_grad_(True)
    base = window.detach()
    opt = torch.optim.Adam([free], lr=lr)
    for _ in range(iters):
        comp = torch.cat([head, free, tail], dim=0)
        pred = _segment_positions(comp)
        jerk = pred[3:] - 3.0 * pred[2:-1] + 3.0 * pred[1:-2] - pred[:-3]
        mag = jerk.norm(dim=-1)  # (2N-3, J); per joint keeps gradients dense
        frame_mag = mag.max(dim=1).values
        interior = torch.cat([frame_mag[: n - half - 3], frame_mag[n + half :]])
        excess = torch.relu(mag[n - half - 3 : n + half] - interior.median().detach())
        if excess.max().item() <= 0.0:
            break
        loss = w_seam * (excess ** 2).sum() + ((free - base) ** 2).mean()
        opt.zero_grad()
        loss.backward()
        opt.step()
    return torch.cat([head, free.detach(), tail], dim=0)


def blend(clip_p: MotionClip, clip_q: MotionClip, actions, cfg: BlendConfig, state) -> MotionClip:
    """Join two equal-length clips into one 2N-frame clip.

    Builds [p-head | linear fade | q-tail], encodes it as two windows,
    deterministically inverts both to noise under the summed action
    embedding, then re-denoises with motion-similarity guidance pulling the
    result back onto the source segments outside the fade.
    """
    n = clip_p.n_frames
    if clip_q.n_frames != n:
        raise ContractViolation("blend expects equal-length clips")
    l, half = cfg.l, cfg.l // 2
    fade = linear_blend(clip_p, clip_q, l).features
    comp = np.concatenate([clip_p.features[: n - half], fade, clip_q.features[half:]])
    w1 = torch.as_tensor(comp[:n], dtype=torch.float32)
    w2 = torch.as_tensor(comp[n:], dtype=torch.float32)
    with torch.no_grad():
        z0 = state.codec.encode(torch.stack([w1, w2]))

    a = state.action_vocab.embed_batch(list(actions)).sum(dim=0, keepdim=True)
    a_pair = a.expand(2, -1)

    def eps_fn(z, t):
        tt = torch.full((z.shape[0],), t, dtype=torch.long, device=z.device)
        return state.denoiser(z, tt, a_pair)

    ladder_down = state.schedule.ladder(cfg.ladder)
    ladder_up = list(reversed(ladder_down))
    with torch.no_grad():
        z_inv = ddim_invert(z0, eps_fn, ladder_up, state.schedule)

    ref_p = _segment_positions(torch.as_tensor(clip_p.features[: n - half]))
    ref_q = _segment_positions(torch.as_tensor(clip_q.features[half:]))
    gcfg = GuidanceConfig(tau2=cfg.tau3, k_iters=cfg.k_iters, lbfgs_history=cfg.lbfgs_history)

    z = z_inv
    ts = ladder_down
    for i, t in enumerate(ts):
        with torch.no_grad():
            eps_hat = eps_fn(z, t)
        frozen = eps_hat.detach()
        obj = lambda u: _gm_objective(u, t, state, lambda uu, tt: frozen, ref_p, ref_q, n, half)
        eps_hat = refine_noise(eps_hat, z, t, obj, gcfg, state.schedule)
        t_prev = ts[i + 1] if i + 1 < len(ts) else 0
        with torch.no_grad():
            if t_prev == 0:
                z = one_step_clean(z, t, eps_hat, state.schedule)
            else:
                from .schedule import ddim_step
                z = ddim_step(z, eps_hat, t, t_prev, state.schedule)

    with torch.no_grad():
        feats = state.codec.decode(z)
    out = torch.cat([feats[0], feats[1]], dim=0)
    out = _relax_seam(out, n, half, cfg.w_seam)
    return from_decoded(out.cpu().numpy(), fps=clip_p.fps)


def compose_storyboard(clips, actions, cfg: BlendConfig, state) -> MotionClip:
    """Left fold of blend over an ordered clip list; f clips of N frames
    become one f*N-frame clip."""
    if len(clips) == 0:
        raise ContractViolation("storyboard needs at least one clip")
    if len(actions) != len(clips):
        raise ContractViolation("one action word per clip required")
    result = clips[0]
    n = clips[0].n_frames
    for clip, action_prev, action in zip(clips[1:], actions, actions[1:]):
        tail = MotionClip(result.features[-n:].copy(), fps=result.fps)
        joined = blend(tail, clip, (action_prev, action), cfg, state)
        feats = np.concatenate([result.features[:-n], joined.features])
        result = MotionClip(feats, fps=result.fps)
    return result
