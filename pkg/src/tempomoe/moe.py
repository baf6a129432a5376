"""Tempo-structured expert groups with hierarchical rhythm-adaptive routing.

Each tempo group is anchored at a BPM and owns three beat-scale experts
whose depthwise kernels span a quarter, half and whole beat at that tempo.
A tempo gate picks groups once per sequence from the pooled music
embedding; a beat gate mixes the three experts inside each selected group.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Callable

import torch
from torch import nn

from .exceptions import ValidationError
from .substrate import depthwise_conv1d, gelu, softmax_stable

DEFAULT_ANCHORS = (60.0, 80.0, 100.0, 120.0, 140.0, 160.0, 180.0, 200.0)
BEAT_SCALES = (0.25, 0.5, 1.0)
SCALE_NAMES = ("quarter", "half", "whole")
HOMOGENEITY_MODES = ("hetero", "homo-multi", "homo-same")
ROUTING_MODES = ("top1", "top2", "soft", "average")
INTER_WEIGHTINGS = ("sum", "renorm_softmax")
GRANULARITIES = ("sequence", "frame")
REFERENCE_BPM = 120.0
MIN_KERNEL = 3


def frames_per_beat(fps: float, bpm: float) -> float:
    if fps <= 0 or bpm <= 0:
        raise ValidationError(f"fps and bpm must be positive, got fps={fps}, bpm={bpm}")
    return 60.0 * fps / bpm


def ceil_to_odd(x: float) -> int:
    k = math.ceil(x - 1e-9)  # absorb float noise such as 0.5 * 30.000000001
    return k if k % 2 else k + 1


def kernel_size(fps: float, bpm: float, r: float, min_size: int = MIN_KERNEL) -> int:
    """Odd kernel covering ``r`` beats at ``bpm``, floored at ``min_size``.

    Frames per beat are first rounded to a whole frame count (ties to even),
    then ``r`` times that count is rounded up to the next odd integer. At
    30 fps this yields (9, 15, 31) at 60 bpm and (5, 9, 15) at 120 bpm.
    """
    if r not in BEAT_SCALES:
        raise ValidationError(f"beat scale must be one of {BEAT_SCALES}, got {r}")
    whole_frames = round(frames_per_beat(fps, bpm))
    return max(min_size, ceil_to_odd(r * whole_frames))


@dataclass(frozen=True)
class KernelSpec:
    fps: float
    bpm_anchor: float
    beat_scale: float
    kernel_size: int
    frames_per_beat: float

    @classmethod
    def build(cls, fps, bpm, r):
        return cls(fps, bpm, r, kernel_size(fps, bpm, r), frames_per_beat(fps, bpm))


def uniform_anchors(groups: int, lo: float = 60.0, hi: float = 200.0) -> tuple:
    if groups < 1:
        raise ValidationError("need at least one group")
    if groups == 1:
        return ((lo + hi) / 2,)
    step = (hi - lo) / (groups - 1)
    return tuple(lo + i * step for i in range(groups))


@dataclass
class RoutingConfig:
    inter_mode: str = "top2"
    intra_mode: str = "soft"
    inter_weighting: str = "renorm_softmax"
    granularity: str = "frame"

    def __post_init__(self):
        for name, value, allowed in (
            ("inter_mode", self.inter_mode, ROUTING_MODES),
            ("intra_mode", self.intra_mode, ROUTING_MODES),
            ("inter_weighting", self.inter_weighting, INTER_WEIGHTINGS),
            ("granularity", self.granularity, GRANULARITIES),
        ):
            if value not in allowed:
                raise ValidationError(f"{name} must be one of {allowed}, got {value!r}")

    @property
    def top_k(self) -> int | None:
        return {"top1": 1, "top2": 2}.get(self.inter_mode)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class RoutingDecision:
    """Routing for one TempoMoE call, batched along dim 0.

    ``selected`` and ``group_weights`` are ``(B, K)``; ``beat_weights`` is
    ``(B, P, 3)`` with ``P = L`` for frame granularity and 1 otherwise.
    """

    group_scores: torch.Tensor
    selected: torch.Tensor
    group_weights: torch.Tensor
    beat_weights: torch.Tensor
    layer: int | None = None


def select_groups(s: torch.Tensor, cfg: RoutingConfig) -> tuple[torch.Tensor, torch.Tensor]:
    """Pick tempo groups from scores ``(G,)`` or ``(B, G)``.

    Returns ``(selected indices, weights)``. Hard modes keep the K best scores
    with ties going to the lower index; soft and average keep every group.
    """
    G = s.shape[-1]
    K = cfg.top_k
    if K is not None:
        if G < K:
            raise ValidationError(f"cannot select top-{K} of {G} groups")
        order = torch.sort(s.detach(), dim=-1, descending=True, stable=True).indices
        selected = order[..., :K]
        picked = torch.gather(s, -1, selected)
        if cfg.inter_weighting == "sum":
            weights = torch.ones_like(picked)
        else:
            weights = softmax_stable(picked, axis=-1)
        return selected, weights
    selected = torch.arange(G).expand(s.shape)
    if cfg.inter_mode == "soft":
        return selected, softmax_stable(s, axis=-1)
    return selected, torch.full_like(s, 1.0 / G)


def apply_intra_mode(gamma: torch.Tensor, mode: str) -> torch.Tensor:
    """Turn softmax beat weights into the routing actually applied."""
    if mode == "soft":
        return gamma
    if mode == "average":
        return torch.full_like(gamma, 1.0 / gamma.shape[-1])
    if mode not in ("top1", "top2"):
        raise ValidationError(f"unknown intra mode {mode!r}")
    k = 1 if mode == "top1" else 2
    order = torch.sort(gamma.detach(), dim=-1, descending=True, stable=True).indices[..., :k]
    mask = torch.zeros_like(gamma).scatter(-1, order, 1.0)
    if k == 1:
        return mask
    kept = gamma * mask
    return kept / kept.sum(-1, keepdim=True)


class BeatScaleExpert(nn.Module):
    """Pointwise expand -> depthwise temporal conv -> GELU -> pointwise project."""

    def __init__(self, dim: int, kernel: int, expansion: int = 2):
        super().__init__()
        if kernel % 2 == 0:
            raise ValidationError(f"kernel size must be odd, got {kernel}")
        hidden = expansion * dim
        self.kernel = kernel
        self.expand = nn.Linear(dim, hidden)
        self.dw_weight = nn.Parameter(torch.empty(hidden, kernel).uniform_(-1, 1) / math.sqrt(kernel))
        self.dw_bias = nn.Parameter(torch.zeros(hidden))
        self.project = nn.Linear(hidden, dim)
        self.calls = 0

    def forward(self, h):
        self.calls += 1
        z = depthwise_conv1d(self.expand(h), self.dw_weight, self.dw_bias)
        return self.project(gelu(z))


class ExpertGroupBank(nn.Module):
    def __init__(self, kernel_sizes, anchors, dim: int, expansion: int = 2, mode: str = "hetero",
                 beat_scales=BEAT_SCALES):
        super().__init__()
        self.anchors = tuple(float(a) for a in anchors)
        self.kernel_sizes = [tuple(ks) for ks in kernel_sizes]
        self.mode = mode
        self.beat_scales = tuple(beat_scales)
        self.groups = nn.ModuleList(
            nn.ModuleList(BeatScaleExpert(dim, k, expansion) for k in ks) for ks in self.kernel_sizes
        )

    def __len__(self):
        return len(self.groups)

    def reset_counters(self):
        for group in self.groups:
            for e in group:
                e.calls = 0

    def call_counts(self) -> list:
        return [[e.calls for e in group] for group in self.groups]


def bank_kernel_sizes(fps: float, anchors, mode: str = "hetero", beat_scales=BEAT_SCALES) -> list:
    if not anchors:
        raise ValidationError("anchors must be non-empty")
    if mode not in HOMOGENEITY_MODES:
        raise ValidationError(f"homogeneity mode must be one of {HOMOGENEITY_MODES}, got {mode!r}")
    if mode == "hetero":
        return [tuple(kernel_size(fps, a, r) for r in beat_scales) for a in anchors]
    if mode == "homo-multi":
        ref = tuple(kernel_size(fps, REFERENCE_BPM, r) for r in beat_scales)
        return [ref] * len(anchors)
    half = kernel_size(fps, REFERENCE_BPM, 0.5)
    return [(half,) * len(beat_scales)] * len(anchors)


def build_expert_groups(fps: float = 30.0, anchors=DEFAULT_ANCHORS, dim: int = 512,
                        homogeneity_mode: str = "hetero", beat_scales=BEAT_SCALES,
                        expansion: int = 2) -> ExpertGroupBank:
    if dim < 4:
        raise ValidationError(f"latent dim must be >= 4, got {dim}")
    anchors = tuple(anchors)
    sizes = bank_kernel_sizes(fps, anchors, homogeneity_mode, beat_scales)
    if homogeneity_mode != "homo-same" and len(set(beat_scales)) == len(beat_scales):
        for a, ks in zip(anchors, sizes):
            if any(x >= y for x, y in zip(ks, ks[1:])):
                raise ValidationError(f"kernels for anchor {a} are not strictly increasing: {ks}")
    return ExpertGroupBank(sizes, anchors, dim, expansion, homogeneity_mode, beat_scales)


class _GateMLP(nn.Module):
    def __init__(self, dim: int, out: int):
        super().__init__()
        self.fc1 = nn.Linear(dim, max(1, dim // 2))
        self.fc2 = nn.Linear(max(1, dim // 2), out)

    def forward(self, x):
        return self.fc2(gelu(self.fc1(x)))


class TempoGate(_GateMLP):
    """Sequence-level group scores from the mean-pooled music embedding."""

    def forward(self, c_embed):
        if c_embed.shape[-2] == 0:
            raise ValidationError("music embedding has no frames")
        return super().forward(c_embed.mean(dim=-2))


class BeatGate(_GateMLP):
    """Beat-scale weights on the 3-simplex, per frame or per sequence."""

    def __init__(self, dim: int, granularity: str = "frame"):
        super().__init__(dim, 3)
        if granularity not in GRANULARITIES:
            raise ValidationError(f"granularity must be one of {GRANULARITIES}")
        self.granularity = granularity

    def forward(self, c_embed):
        if self.granularity == "sequence":
            c_embed = c_embed.mean(dim=-2, keepdim=True)
        return softmax_stable(super().forward(c_embed), axis=-1)


def tempo_gate(gate: TempoGate, c_embed):
    return gate(c_embed)


def beat_gate(gate: BeatGate, c_embed):
    return gate(c_embed)


class TempoMoE(nn.Module):
    """Drop-in FFN replacement routed by music.

    ``routing_hook``, when set, receives a detached :class:`RoutingDecision`
    after every forward call.
    """

    def __init__(self, dim: int, fps: float = 30.0, anchors=DEFAULT_ANCHORS,
                 routing: RoutingConfig | None = None, homogeneity_mode: str = "hetero",
                 beat_scales=BEAT_SCALES, expansion: int = 2):
        super().__init__()
        self.routing = routing or RoutingConfig()
        self.bank = build_expert_groups(fps, anchors, dim, homogeneity_mode, beat_scales, expansion)
        self.tempo_gate = TempoGate(dim, len(self.bank))
        self.beat_gate = BeatGate(dim, self.routing.granularity)
        self.routing_hook: Callable[[RoutingDecision], None] | None = None
        self.layer_index: int | None = None
        self.last_decision: RoutingDecision | None = None

    def route(self, c_embed) -> RoutingDecision:
        s = self.tempo_gate(c_embed)
        selected, weights = select_groups(s, self.routing)
        gamma = apply_intra_mode(self.beat_gate(c_embed), self.routing.intra_mode)
        return RoutingDecision(s, selected, weights, gamma, self.layer_index)

    def forward(self, h, c_embed):
        if h.shape[:-1] != c_embed.shape[:-1] or h.shape[-1] != c_embed.shape[-1]:
            raise ValidationError(f"h {tuple(h.shape)} and music embedding {tuple(c_embed.shape)} disagree")
        squeeze = h.ndim == 2
        if squeeze:
            h, c_embed = h.unsqueeze(0), c_embed.unsqueeze(0)
        decision = self.route(c_embed)
        self.last_decision = decision
        out = self._dispatch(h, decision)
        if self.routing_hook is not None:
            self.routing_hook(RoutingDecision(
                decision.group_scores.detach(), decision.selected.detach(),
                decision.group_weights.detach(), decision.beat_weights.detach(), self.layer_index))
        return out.squeeze(0) if squeeze else out

    def _dispatch(self, h, decision: RoutingDecision):
        B = h.shape[0]
        G = len(self.bank)
        sel, gw, gamma = decision.selected, decision.group_weights, decision.beat_weights
        # dense (B, G) weight table; zero where a group is not selected
        table = torch.zeros(B, G, dtype=gw.dtype, device=gw.device).scatter(1, sel, gw)
        active = torch.zeros(B, G, dtype=torch.bool).scatter(1, sel, True)
        out = torch.zeros_like(h)
        for g in torch.nonzero(active.any(0)).flatten().tolist():
            rows = torch.nonzero(active[:, g]).flatten()
            hg = h.index_select(0, rows)
            gam = gamma.index_select(0, rows)
            y = None
            for k, expert in enumerate(self.bank.groups[g]):
                gk = gam[..., k:k + 1]
                if self.routing.intra_mode in ("top1", "top2") and not bool((gk != 0).any()):
                    continue
                term = gk * expert(hg)
                y = term if y is None else y + term
            if y is None:
                continue
            out = out.index_add(0, rows, table[rows, g].view(-1, 1, 1) * y)
        return out


def load_balance_loss(decision: RoutingDecision) -> torch.Tensor:
    """Switch-style balance term ``G * sum_g f_g * P_g``; equals 1 under uniform routing.

    ``f_g`` is the fraction of sequences that selected group ``g`` and
    ``P_g`` the mean softmax probability of ``g``. Not used unless a
    training config gives it a positive weight.
    """
    s = decision.group_scores
    G = s.shape[-1]
    probs = softmax_stable(s, axis=-1).reshape(-1, G).mean(0)
    picked = torch.zeros(s.reshape(-1, G).shape[0], G, dtype=s.dtype)
    picked.scatter_(1, decision.selected.reshape(picked.shape[0], -1), 1.0)
    frac = picked.mean(0) / decision.selected.shape[-1]
    return G * (frac.detach() * probs).sum()


class FeedForward(nn.Module):
    """Plain FFN used by the baseline ablation; accepts and ignores the music embedding."""

    def __init__(self, dim: int, expansion: int = 4):
        super().__init__()
        self.fc1 = nn.Linear(dim, expansion * dim)
        self.fc2 = nn.Linear(expansion * dim, dim)

    def forward(self, h, c_embed=None):
        return self.fc2(gelu(self.fc1(h)))
