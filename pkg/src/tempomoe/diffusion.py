"""Variance-preserving noise schedules, clean-sample loss, guidance and samplers."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch

from .exceptions import ValidationError

SOLVERS = ("ancestral", "dpmpp_2m")


@dataclass
class NoiseSchedule:
    """Discrete VP schedule with ``alpha[t]**2 + sigma[t]**2 == 1`` for ``t = 0..T``.

    Continuous timesteps in ``[1, T]`` interpolate the log-SNR
    ``lambda = log(alpha / sigma)`` linearly between integers; ``t = 0`` is
    the clean endpoint.
    """

    alpha: np.ndarray
    sigma: np.ndarray
    kind: str = "cosine"

    @property
    def T(self) -> int:
        return len(self.alpha) - 1

    @property
    def log_snr(self) -> np.ndarray:
        with np.errstate(divide="ignore"):
            return np.log(self.alpha) - np.log(self.sigma)

    def _check(self, t):
        t = np.asarray(t, dtype=np.float64)
        if np.any(t < 0) or np.any(t > self.T) or not np.all(np.isfinite(t)):
            raise ValidationError(f"timestep outside [0, {self.T}]: {t}")
        return t

    def marginal(self, t):
        """``(alpha_t, sigma_t)`` for integer or continuous ``t``."""
        t = self._check(t)
        if np.all(t == np.round(t)):
            idx = t.astype(int)
            return self.alpha[idx], self.sigma[idx]
        if np.any((t > 0) & (t < 1)):
            raise ValidationError("continuous timesteps must lie in [1, T]")
        lam = self.lambda_at(np.maximum(t, 1.0))
        a = np.sqrt(1.0 / (1.0 + np.exp(-2.0 * lam)))
        s = np.sqrt(1.0 / (1.0 + np.exp(2.0 * lam)))
        return np.where(t == 0, 1.0, a), np.where(t == 0, 0.0, s)

    def lambda_at(self, t):
        t = self._check(t)
        grid = np.arange(1, self.T + 1, dtype=np.float64)
        return np.interp(t, grid, self.log_snr[1:])

    def t_of_lambda(self, lam):
        lam_grid = self.log_snr[1:][::-1]  # increasing
        t_grid = np.arange(self.T, 0, -1, dtype=np.float64)
        return np.interp(lam, lam_grid, t_grid)


def make_schedule(kind: str = "cosine", T: int = 1000) -> NoiseSchedule:
    """Cosine (offset 0.008, betas clipped at 0.999) or linear (1e-4..0.02) schedule."""
    if T < 1:
        raise ValidationError("T must be positive")
    if kind == "cosine":
        s = 0.008
        steps = np.arange(T + 1, dtype=np.float64)
        f = np.cos((steps / T + s) / (1 + s) * math.pi / 2) ** 2
        abar_raw = f / f[0]
        betas = np.clip(1 - abar_raw[1:] / abar_raw[:-1], 0.0, 0.999)
    elif kind == "linear":
        betas = np.linspace(1e-4, 0.02, T, dtype=np.float64) * (1000.0 / T)
        betas = np.clip(betas, 0.0, 0.999)
    else:
        raise ValidationError(f"unknown schedule kind {kind!r}")
    abar = np.concatenate([[1.0], np.cumprod(1.0 - betas)])
    return NoiseSchedule(alpha=np.sqrt(abar), sigma=np.sqrt(1.0 - abar), kind=kind)


def _per_batch(values, like: torch.Tensor) -> torch.Tensor:
    v = torch.as_tensor(np.asarray(values, dtype=np.float64), dtype=like.dtype)
    return v.reshape(-1, *([1] * (like.ndim - 1))) if v.ndim else v


def forward_noise(x0: torch.Tensor, t, eps: torch.Tensor, sched: NoiseSchedule) -> torch.Tensor:
    """``alpha_t * x0 + sigma_t * eps``; ``t`` may be a scalar or one value per batch row."""
    if isinstance(t, torch.Tensor):
        t = t.detach().cpu().numpy()
    a, s = sched.marginal(t)
    return _per_batch(a, x0) * x0 + _per_batch(s, x0) * eps


def loss_simple(x0: torch.Tensor, x0_hat: torch.Tensor) -> torch.Tensor:
    if x0.shape != x0_hat.shape:
        raise ValidationError(f"shape mismatch: {tuple(x0.shape)} vs {tuple(x0_hat.shape)}")
    return ((x0 - x0_hat) ** 2).mean()


def cfg_predict(model, x_t, t, c, w: float):
    """Guided clean-sample prediction ``w * cond + (1 - w) * uncond``.

    Written in this form so ``w = 1`` and ``w = 0`` reproduce the
    conditional and unconditional passes bit for bit.
    """
    cond = model(x_t, t, c)
    uncond = model(x_t, t, None)
    return w * cond + (1.0 - w) * uncond


@dataclass
class SamplerConfig:
    solver: str = "dpmpp_2m"
    steps: int = 10
    guidance_scale: float = 2.5
    seed: int = 0
    eta: float = 1.0  # ancestral only: 1 = full posterior noise, 0 = deterministic

    def __post_init__(self):
        if self.solver not in SOLVERS:
            raise ValidationError(f"solver must be one of {SOLVERS}, got {self.solver!r}")
        if self.steps < 1:
            raise ValidationError("steps must be >= 1")
        if self.guidance_scale < 0:
            raise ValidationError("guidance scale must be >= 0")
        if not 0.0 <= self.eta <= 1.0:
            raise ValidationError("eta must lie in [0, 1]")


def ancestral_timesteps(sched: NoiseSchedule, steps: int) -> list:
    if steps > sched.T:
        raise ValidationError(f"steps {steps} exceeds T={sched.T}")
    ts = np.round(np.linspace(sched.T, 0, steps + 1)).astype(int)
    return [int(t) for t in ts]


def dpm_timesteps(sched: NoiseSchedule, steps: int) -> list:
    """``steps`` points uniform in log-SNR from ``t=T`` to ``t=1``, then ``t=0``."""
    if steps > sched.T:
        raise ValidationError(f"steps {steps} exceeds T={sched.T}")
    lam = np.linspace(sched.lambda_at(sched.T), sched.lambda_at(1), steps)
    ts = sched.t_of_lambda(lam)
    ts[0], ts[-1] = sched.T, 1.0 if steps > 1 else sched.T
    return [float(t) for t in ts] + [0.0]


def sample(model, c, L: int, sched: NoiseSchedule, scfg: SamplerConfig, motion_dim: int,
           batch: int = 1, x_T: torch.Tensor | None = None, dtype=torch.float32) -> torch.Tensor:
    """Draw ``(batch, L, motion_dim)`` samples.

    ``model(x_t, t, c)`` returns clean-sample predictions; ``c=None`` requests
    the unconditional pass. Guidance is skipped when ``c`` is None.
    """
    gen = torch.Generator().manual_seed(scfg.seed)
    x = torch.randn(batch, L, motion_dim, generator=gen, dtype=torch.float64).to(dtype) if x_T is None else x_T

    def denoise(x_t, t):
        with torch.no_grad():
            if c is None:
                return model(x_t, t, None)
            if scfg.guidance_scale == 1.0:
                return model(x_t, t, c)
            return cfg_predict(model, x_t, t, c, scfg.guidance_scale)

    if scfg.solver == "ancestral":
        return _ancestral(denoise, x, sched, ancestral_timesteps(sched, scfg.steps), scfg.eta, gen)
    return _dpmpp_2m(denoise, x, sched, dpm_timesteps(sched, scfg.steps))


def _ancestral(denoise, x, sched, ts, eta, gen):
    for t, s in zip(ts[:-1], ts[1:]):
        x0 = denoise(x, float(t))
        a_t, s_t = (float(v) for v in sched.marginal(t))
        a_s, s_s = (float(v) for v in sched.marginal(s))
        eps = (x - a_t * x0) / s_t
        noise_std = eta * (s_s / s_t) * math.sqrt(max(0.0, 1.0 - (a_t / a_s) ** 2)) if s > 0 else 0.0
        x = a_s * x0 + math.sqrt(max(0.0, s_s ** 2 - noise_std ** 2)) * eps
        if noise_std > 0:
            x = x + noise_std * torch.randn(x.shape, generator=gen, dtype=torch.float64).to(x.dtype)
    return x


def _dpmpp_2m(denoise, x, sched, ts):
    """Second-order multistep solver in log-SNR with data prediction.

    The last step lands on ``t = 0`` with a first-order update, which
    returns the final clean-sample prediction.
    """
    prev_x0 = None
    prev_h = None
    for i, (t, s) in enumerate(zip(ts[:-1], ts[1:])):
        x0 = denoise(x, t)
        a_s, s_s = (float(v) for v in sched.marginal(s))
        if s == 0.0:
            x = a_s * x0
            break
        a_t, s_t = (float(v) for v in sched.marginal(t))
        lam_t = math.log(a_t) - math.log(s_t)
        lam_s = math.log(a_s) - math.log(s_s)
        h = lam_s - lam_t
        if prev_x0 is None:
            d = x0
        else:
            r = prev_h / h
            d = (1 + 1 / (2 * r)) * x0 - (1 / (2 * r)) * prev_x0
        x = (s_s / s_t) * x - a_s * math.expm1(-h) * d
        prev_x0, prev_h = x0, h
    return x
