"""Diffusion noise schedule and the deterministic DDIM maps.

`alpha[t]` is the cumulative signal scale at step t (1-indexed over the
training ladder, with alpha ~ 1 near t=0). Forward noising, one-step clean
prediction, DDIM stepping and DDIM inversion all read the same table.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch

from .motion import ContractViolation


@dataclass
class NoiseSchedule:
    """Scaled-linear beta schedule; `alpha` = cumulative product of (1-beta)."""

    steps: int = 1000
    beta_start: float = 0.00085
    beta_end: float = 0.012
    alpha: np.ndarray = field(init=False)

    def __post_init__(self):
        betas = np.linspace(self.beta_start**0.5, self.beta_end**0.5, self.steps) ** 2
        self.alpha = np.cumprod(1.0 - betas).astype(np.float64)
        if not (np.diff(self.alpha) <= 0).all():
            raise ContractViolation("alpha must be nonincreasing")

    def alpha_at(self, t: int) -> float:
        """Cumulative noise scale for step t in [1, steps]; t=0 means clean."""
        if t == 0:
            return 1.0
        if not 1 <= t <= self.steps:
            raise ContractViolation(f"timestep {t} outside [1, {self.steps}]")
        return float(self.alpha[t - 1])

    def ladder(self, n_steps: int) -> list:
        """Decreasing inference ladder of n_steps timesteps ending near 1."""
        if not 1 <= n_steps <= self.steps:
            raise ContractViolation(f"ladder length {n_steps} outside [1, {self.steps}]")
        ts = np.linspace(self.steps, 1, n_steps).round().astype(int)
        return sorted(set(ts.tolist()), reverse=True)


def add_noise(z0: torch.Tensor, t: int, eps: torch.Tensor, schedule: NoiseSchedule) -> torch.Tensor:
    """Forward noising: z_t = sqrt(a_t) z0 + sqrt(1 - a_t) eps."""
    if eps.shape != z0.shape:
        raise ContractViolation(f"eps shape {tuple(eps.shape)} != z0 shape {tuple(z0.shape)}")
    a = schedule.alpha_at(t)
    return np.sqrt(a) * z0 + np.sqrt(1.0 - a) * eps


def one_step_clean(z_t: torch.Tensor, t: int, eps_hat: torch.Tensor, schedule: NoiseSchedule) -> torch.Tensor:
    """Predicted clean latent: (z_t - sqrt(1 - a_t) eps_hat) / sqrt(a_t)."""
    a = schedule.alpha_at(t)
    if a == 0.0:
        raise ContractViolation("alpha_t = 0: clean prediction is degenerate")
    return (z_t - np.sqrt(1.0 - a) * eps_hat) / np.sqrt(a)


def ddim_step(z_t: torch.Tensor, eps_hat: torch.Tensor, t: int, t_prev: int,
              schedule: NoiseSchedule) -> torch.Tensor:
    """Deterministic DDIM update from step t to t_prev < t."""
    if t_prev >= t:
        raise ContractViolation(f"ddim_step needs t_prev < t, got {t_prev} >= {t}")
    z0_hat = one_step_clean(z_t, t, eps_hat, schedule)
    a_prev = schedule.alpha_at(t_prev)
    return np.sqrt(a_prev) * z0_hat + np.sqrt(1.0 - a_prev) * eps_hat


def ddim_invert_step(z_t: torch.Tensor, eps_hat: torch.Tensor, t: int, t_next: int,
                     schedule: NoiseSchedule) -> torch.Tensor:
    """Deterministic inversion update from step t to t_next > t (same map as
    ddim_step, run up the ladder)."""
    if t_next <= t:
        raise ContractViolation(f"ddim_invert_step needs t_next > t, got {t_next} <= {t}")
    z0_hat = one_step_clean(z_t, t, eps_hat, schedule) if t > 0 else z_t
    a_next = schedule.alpha_at(t_next)
    return np.sqrt(a_next) * z0_hat + np.sqrt(1.0 - a_next) * eps_hat


def ddim_sample(z_T: torch.Tensor, eps_fn, ladder, schedule: NoiseSchedule) -> torch.Tensor:
    """Run the full deterministic sampler. `eps_fn(z_t, t) -> eps_hat`."""
    ts = list(ladder)
    if any(b >= a for a, b in zip(ts, ts[1:])):
        raise ContractViolation("sampling ladder must be strictly decreasing")
    z = z_T
    for i, t in enumerate(ts):
        t_prev = ts[i + 1] if i + 1 < len(ts) else 0
        eps_hat = eps_fn(z, t)
        if t_prev == 0:
            z = one_step_clean(z, t, eps_hat, schedule)
        else:
            z = ddim_step(z, eps_hat, t, t_prev, schedule)
    return z


def ddim_invert(z0: torch.Tensor, eps_fn, ladder, schedule: NoiseSchedule) -> torch.Tensor:
    """Map a clean latent up the (increasing) ladder to z_T^Inv."""
    ts = list(ladder)
    if any(b <= a for a, b in zip(ts, ts[1:])):
        raise ContractViolation("inversion ladder must be strictly increasing")
    z = z0
    t_cur = 0
    for t_next in ts:
        # evaluate eps at the target timestep (usual inversion approximation)
        eps_hat = eps_fn(z, t_next)
        z = ddim_invert_step(z, eps_hat, t_cur, t_next, schedule)
        t_cur = t_next
    return z
