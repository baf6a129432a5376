"""Numerical building blocks shared by every trainable module.

Analytic gradients come from torch autograd; :func:`gradient_check`
verifies them against central finite differences in float64.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import torch
import torch.nn.functional as F

from .exceptions import NonDeterministicError, ValidationError


@dataclass(frozen=True)
class GradReport:
    max_abs_err: float
    max_rel_err: float
    checked_params: int


def depthwise_conv1d(x: torch.Tensor, kernels: torch.Tensor, bias: torch.Tensor | None = None) -> torch.Tensor:
    """Per-channel temporal convolution with symmetric zero padding.

    ``x`` is ``(..., L, D)``; ``kernels`` is ``(D, k)`` with odd ``k``. Output
    frame ``t`` of channel ``c`` is ``sum_j kernels[c, j] * x[t + j - (k-1)/2, c]``
    (cross-correlation, the usual deep-learning convention).
    """
    if kernels.ndim != 2:
        raise ValidationError(f"kernels must be (D, k), got shape {tuple(kernels.shape)}")
    D, k = kernels.shape
    if k % 2 == 0:
        raise ValidationError(f"kernel size must be odd, got {k}")
    if x.shape[-1] != D:
        raise ValidationError(f"kernel channel count {D} != input channels {x.shape[-1]}")
    lead = x.shape[:-2]
    L = x.shape[-2]
    xc = x.reshape(-1, L, D).transpose(1, 2)  # (N, D, L)
    out = F.conv1d(xc, kernels.unsqueeze(1), bias=bias, padding=(k - 1) // 2, groups=D)
    return out.transpose(1, 2).reshape(*lead, L, D)


def softmax_stable(x: torch.Tensor, axis: int = -1) -> torch.Tensor:
    shifted = x - x.amax(dim=axis, keepdim=True).detach()
    e = torch.exp(shifted)
    return e / e.sum(dim=axis, keepdim=True)


def attention(q: torch.Tensor, k: torch.Tensor, v: torch.Tensor, heads: int) -> torch.Tensor:
    """Multi-head scaled dot-product attention without projections.

    Shapes are ``(..., L_q, D)`` for ``q`` and ``(..., L_k, D)`` for ``k``/``v``.
    Each head uses ``D // heads`` channels and scale ``1/sqrt(D // heads)``.
    """
    D = q.shape[-1]
    if heads < 1 or D % heads:
        raise ValidationError(f"latent dim {D} is not divisible by {heads} heads")
    if k.shape[-1] != D or v.shape[-1] != D or k.shape[-2] != v.shape[-2]:
        raise ValidationError("q/k/v shapes are inconsistent")
    dh = D // heads

    def split(t):
        return t.reshape(*t.shape[:-1], heads, dh).transpose(-3, -2)  # (..., H, L, dh)

    qh, kh, vh = split(q), split(k), split(v)
    scores = qh @ kh.transpose(-1, -2) / math.sqrt(dh)
    out = softmax_stable(scores, axis=-1) @ vh
    out = out.transpose(-3, -2)
    return out.reshape(*out.shape[:-2], D)


def gelu(x: torch.Tensor) -> torch.Tensor:
    return F.gelu(x)  # exact erf form, smooth for finite differences


def gradient_check(
    loss_fn: Callable[[], torch.Tensor],
    params: Sequence[torch.Tensor],
    epsilon: float = 1e-4,
    max_checks: int = 64,
    seed: int = 0,
    rel_floor: float = 1e-5,
) -> GradReport:
    """Compare autograd gradients with central finite differences.

    ``loss_fn`` takes no arguments and reads ``params`` (float64 leaf tensors
    with ``requires_grad``). Up to ``max_checks`` entries are sampled across
    all parameters. Relative error uses ``max(|analytic|, |numeric|, rel_floor)``
    as denominator so entries with vanishing gradient do not blow up.
    """
    params = list(params)
    for p in params:
        if p.dtype != torch.float64:
            raise ValidationError("gradient_check requires float64 parameters")
    with torch.no_grad():
        a, b = loss_fn(), loss_fn()
    if a.numel() != 1:
        raise ValidationError("loss_fn must return a scalar")
    if not torch.equal(a, b):
        raise NonDeterministicError(f"loss_fn returned {a.item()!r} then {b.item()!r} for equal inputs")

    grads = torch.autograd.grad(loss_fn(), params, allow_unused=True)
    grads = [torch.zeros_like(p) if g is None else g for p, g in zip(params, grads)]

    sizes = [p.numel() for p in params]
    total = sum(sizes)
    gen = torch.Generator().manual_seed(seed)
    n = min(max_checks, total)
    flat_idx = torch.randperm(total, generator=gen)[:n].sort().values.tolist()

    offsets = [0]
    for s in sizes:
        offsets.append(offsets[-1] + s)

    max_abs = max_rel = 0.0
    with torch.no_grad():
        for fi in flat_idx:
            pi = next(i for i in range(len(params)) if offsets[i] <= fi < offsets[i + 1])
            j = fi - offsets[pi]
            flat = params[pi].view(-1)
            orig = flat[j].item()
            flat[j] = orig + epsilon
            fp = loss_fn().item()
            flat[j] = orig - epsilon
            fm = loss_fn().item()
            flat[j] = orig
            numeric = (fp - fm) / (2 * epsilon)
            analytic = grads[pi].reshape(-1)[j].item()
            err = abs(analytic - numeric)
            max_abs = max(max_abs, err)
            max_rel = max(max_rel, err / max(abs(analytic), abs(numeric), rel_floor))
    return GradReport(max_abs_err=max_abs, max_rel_err=max_rel, checked_params=n)
