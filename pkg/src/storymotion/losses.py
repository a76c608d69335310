"""Training objectives.

Masked losses average over masked entries only and return exactly zero
(with gradient flow intact) when a mask is empty across the whole batch.
Position-space losses accept either raw feature batches (B, N, 263), which
are run through the kinematic recovery, or precomputed positions
(B, N, J, 3).
"""

from __future__ import annotations

import torch
import torch.nn.functional as F

from .motion import FEATURE_DIM, ContractViolation, recover_joint_positions, to_root_relative


def _positions(x: torch.Tensor) -> torch.Tensor:
    """(B, N, 263) features or (B, N, J, 3) positions -> (B, N, J, 3)."""
    if x.ndim == 3 and x.shape[-1] == FEATURE_DIM:
        return torch.stack([recover_joint_positions(f) for f in x])
    if x.ndim == 4 and x.shape[-1] == 3:
        return x
    raise ContractViolation(f"expected (B, N, {FEATURE_DIM}) or (B, N, J, 3), got {tuple(x.shape)}")


def _masked_position_mse(pred: torch.Tensor, target: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
    """Mean squared joint distance over entries where mask == 1; 0 if empty."""
    if pred.shape != target.shape:
        raise ContractViolation(f"shape mismatch {tuple(pred.shape)} vs {tuple(target.shape)}")
    weight = mask.sum()
    if weight.item() == 0:
        return (pred * 0.0).sum()
    sq = ((pred - target) ** 2).sum(dim=-1) * mask
    return sq.sum() / weight


def loss_recon(eps_hat: torch.Tensor, eps: torch.Tensor) -> torch.Tensor:
    """Plain noise-prediction MSE."""
    return F.mse_loss(eps_hat, eps)


def loss_tr(clip_hat: torch.Tensor, clip_gt: torch.Tensor, t_mask: torch.Tensor) -> torch.Tensor:
    """Trajectory loss: masked mean squared world-position distance.

    t_mask: (B, N, J) binary joint/frame selector.
    """
    pred = _positions(clip_hat)
    target = _positions(clip_gt)
    mask = t_mask.to(pred.dtype)
    return _masked_position_mse(pred, target, mask)


def loss_key(clip_hat: torch.Tensor, clip_gt: torch.Tensor, k_mask: torch.Tensor) -> torch.Tensor:
    """Keypose loss: masked mean squared root-relative distance at the
    marked frames. k_mask: (B, N) binary frame selector."""
    pred = to_root_relative(_positions(clip_hat))
    target = to_root_relative(_positions(clip_gt))
    mask = k_mask.to(pred.dtype)[:, :, None].expand(pred.shape[:-1])
    return _masked_position_mse(pred, target, mask)


def loss_match(emb_2d: torch.Tensor, emb_3d: torch.Tensor) -> torch.Tensor:
    """MSE pulling paired 2D embeddings onto their (frozen) 3D anchors."""
    return F.mse_loss(emb_2d, emb_3d)


def loss_contrast(emb_2d: torch.Tensor, emb_3d: torch.Tensor, tau: float = 0.1) -> torch.Tensor:
    """Symmetric InfoNCE over cosine similarities of paired embeddings."""
    a = F.normalize(emb_2d, dim=-1)
    b = F.normalize(emb_3d, dim=-1)
    logits = (a @ b.t()) / tau
    labels = torch.arange(a.shape[0], device=a.device)
    return 0.5 * (F.cross_entropy(logits, labels) + F.cross_entropy(logits.t(), labels))


def loss_align(emb_2d, emb_3d, eps_hat_2d=None, eps=None,
               lambda_recon: float = 1.0, lambda_contrast: float = 1.0,
               tau: float = 0.1) -> torch.Tensor:
    """Mapper objective: match + optional denoising-through-2D + contrastive."""
    total = loss_match(emb_2d, emb_3d)
    if eps_hat_2d is not None:
        total = total + lambda_recon * loss_recon(eps_hat_2d, eps)
    total = total + lambda_contrast * loss_contrast(emb_2d, emb_3d, tau)
    return total
