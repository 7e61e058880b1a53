"""Latent diffusion machinery: noise schedules, forward corruption, DDIM."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch


@dataclass
class NoiseSchedule:
    betas: np.ndarray
    alphas: np.ndarray
    alpha_bars: np.ndarray

    @property
    def T(self):
        return len(self.betas)

    def alpha_bar(self, t):
        """Cumulative product at 1-based timestep t; t=0 means ᾱ=1."""
        if t == 0:
            return 1.0
        return float(self.alpha_bars[t - 1])


def make_schedule(T, kind="linear", beta_start=1e-4, beta_end=0.02):
    if T < 2:
        raise ValueError("T must be at least 2")
    if kind == "linear":
        betas = np.linspace(beta_start, beta_end, T)
    elif kind == "cosine":
        s = 0.008
        steps = np.arange(T + 1) / T
        f = np.cos((steps + s) / (1 + s) * np.pi / 2) ** 2
        alpha_bars = f / f[0]
        betas = np.clip(1 - alpha_bars[1:] / alpha_bars[:-1], 1e-8, 0.999)
    else:
        raise ValueError(f"unknown schedule kind {kind!r}")
    alphas = 1.0 - betas
    return NoiseSchedule(betas=betas, alphas=alphas,
                         alpha_bars=np.cumprod(alphas))


def forward_sample(z0, t, eps, schedule):
    """Z_t = sqrt(abar_t) Z_0 + sqrt(1 - abar_t) eps (reparameterized)."""
    if not 1 <= t <= schedule.T:
        raise ValueError(f"t={t} outside [1, {schedule.T}]")
    ab = schedule.alpha_bar(t)
    return np.sqrt(ab) * z0 + np.sqrt(1.0 - ab) * eps


def forward_sample_torch(z0, t_idx, eps, schedule):
    """Batched torch version; ``t_idx`` holds 1-based timesteps."""
    ab = torch.as_tensor(schedule.alpha_bars, dtype=z0.dtype,
                         device=z0.device)[t_idx - 1]
    ab = ab.view(-1, *([1] * (z0.ndim - 1)))
    return torch.sqrt(ab) * z0 + torch.sqrt(1.0 - ab) * eps


def ddim_timesteps(T, steps):
    if steps < 1:
        raise ValueError("steps must be >= 1")
    if steps > T:
        raise ValueError("steps must not exceed T")
    return list(np.linspace(1, T, steps).round().astype(int))


def ddim_sample(model, style, content, schedule, steps, eta=0.0,
                noise=None, rng=None, shape=None):
    """DDIM reverse process; eta=0 is deterministic given the initial noise.

    ``noise`` supplies Z_T explicitly; otherwise it is drawn from ``rng``.
    Differentiable w.r.t. the conditioning, so the watermark trainer can
    backpropagate through the sampler.
    """
    if noise is None:
        noise = torch.randn(shape, generator=rng)
    device = next(model.parameters()).device
    z = noise.to(device)
    ts = ddim_timesteps(schedule.T, steps)
    for i in range(len(ts) - 1, -1, -1):
        t = ts[i]
        t_prev = ts[i - 1] if i > 0 else 0
        ab_t = schedule.alpha_bar(t)
        ab_prev = schedule.alpha_bar(t_prev)
        tt = torch.full((z.shape[0],), t, device=device, dtype=torch.long)
        eps_pred = model(z, tt, style, content)
        z0_pred = (z - np.sqrt(1 - ab_t) * eps_pred) / np.sqrt(ab_t)
        sigma = eta * np.sqrt((1 - ab_prev) / (1 - ab_t)
                              * (1 - ab_t / ab_prev)) if t_prev > 0 else 0.0
        dir_coeff = np.sqrt(max(1 - ab_prev - sigma ** 2, 0.0))
        z = np.sqrt(ab_prev) * z0_pred + dir_coeff * eps_pred
        if sigma > 0:
            extra = torch.randn(z.shape, generator=rng).to(device) \
                if rng is not None else torch.randn_like(z)
            z = z + sigma * extra
    return z
