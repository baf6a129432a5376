"""Diffusion-transformer denoiser with TempoMoE in place of the feed-forward layer."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch
from torch import nn

from .exceptions import FormatError, ValidationError
from .moe import BEAT_SCALES, DEFAULT_ANCHORS, FeedForward, RoutingConfig, TempoMoE
from .music import MUSIC_DIM
from .substrate import attention


@dataclass
class DenoiserConfig:
    blocks: int = 8
    latent_dim: int = 512
    heads: int = 8
    motion_dim: int = 151
    music_dim: int = MUSIC_DIM
    fps: float = 30.0
    anchors: tuple = DEFAULT_ANCHORS
    routing: RoutingConfig = field(default_factory=RoutingConfig)
    homogeneity: str = "hetero"
    beat_scales: tuple = BEAT_SCALES
    expansion: int = 2
    ffn_baseline: bool = False
    ffn_expansion: int = 4

    def __post_init__(self):
        if isinstance(self.routing, dict):
            self.routing = RoutingConfig(**self.routing)
        self.anchors = tuple(float(a) for a in self.anchors)
        self.beat_scales = tuple(float(r) for r in self.beat_scales)
        if self.heads < 1 or self.latent_dim % self.heads:
            raise ValidationError(f"latent_dim {self.latent_dim} not divisible by heads {self.heads}")
        if self.blocks < 1:
            raise ValidationError("need at least one block")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["anchors"] = list(self.anchors)
        d["beat_scales"] = list(self.beat_scales)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "DenoiserConfig":
        return cls(**d)


def sinusoidal_embedding(positions: torch.Tensor, dim: int) -> torch.Tensor:
    """``(..., ) -> (..., dim)`` sin/cos features at geometric frequencies."""
    half = dim // 2
    freqs = torch.exp(-math.log(10000.0) * torch.arange(half, dtype=torch.float64) / max(half, 1))
    args = positions.to(torch.float64).unsqueeze(-1) * freqs
    emb = torch.cat([torch.sin(args), torch.cos(args)], dim=-1)
    if dim % 2:
        emb = torch.cat([emb, torch.zeros_like(emb[..., :1])], dim=-1)
    return emb


def modulate(x, shift, scale):
    return x * (1 + scale.unsqueeze(-2)) + shift.unsqueeze(-2)


class MultiHeadAttention(nn.Module):
    def __init__(self, dim: int, heads: int):
        super().__init__()
        self.heads = heads
        self.q = nn.Linear(dim, dim)
        self.k = nn.Linear(dim, dim)
        self.v = nn.Linear(dim, dim)
        self.o = nn.Linear(dim, dim)

    def forward(self, x, context=None):
        context = x if context is None else context
        return self.o(attention(self.q(x), self.k(context), self.v(context), self.heads))


class DenoiserBlock(nn.Module):
    """Self-attention, music cross-attention and TempoMoE, each behind an AdaLN-Zero gate."""

    def __init__(self, cfg: DenoiserConfig):
        super().__init__()
        D = cfg.latent_dim
        self.norms = nn.ModuleList(nn.LayerNorm(D, elementwise_affine=False, eps=1e-6) for _ in range(3))
        self.self_attn = MultiHeadAttention(D, cfg.heads)
        self.cross_attn = MultiHeadAttention(D, cfg.heads)
        if cfg.ffn_baseline:
            self.ffn = FeedForward(D, cfg.ffn_expansion)
        else:
            self.ffn = TempoMoE(D, cfg.fps, cfg.anchors, cfg.routing, cfg.homogeneity,
                                cfg.beat_scales, cfg.expansion)
        self.adaln = nn.Sequential(nn.SiLU(), nn.Linear(D, 9 * D))
        nn.init.zeros_(self.adaln[1].weight)
        nn.init.zeros_(self.adaln[1].bias)

    def adaln_zero(self, temb):
        """Nine ``(B, D)`` tensors: (shift, scale, gate) for each of the three sublayers."""
        return self.adaln(temb).chunk(9, dim=-1)

    def forward(self, h, temb, music_embed):
        s1, c1, g1, s2, c2, g2, s3, c3, g3 = self.adaln_zero(temb)
        h = h + g1.unsqueeze(-2) * self.self_attn(modulate(self.norms[0](h), s1, c1))
        h = h + g2.unsqueeze(-2) * self.cross_attn(modulate(self.norms[1](h), s2, c2), music_embed)
        h = h + g3.unsqueeze(-2) * self.ffn(modulate(self.norms[2](h), s3, c3), music_embed)
        return h


class Denoiser(nn.Module):
    """Predicts the clean motion ``x0`` from ``(x_t, t, music)``.

    ``music=None`` runs the unconditional pass with the learned null token;
    ``null_mask`` (bool per batch row) swaps selected rows to the null token,
    which is how classifier-free-guidance dropout is applied in training.
    """

    def __init__(self, cfg: DenoiserConfig):
        super().__init__()
        self.cfg = cfg
        D = cfg.latent_dim
        self.in_proj = nn.Linear(cfg.motion_dim, D)
        self.music_proj = nn.Linear(cfg.music_dim, D)
        self.null_token = nn.Parameter(torch.randn(D) * 0.02)
        self.time_mlp = nn.Sequential(nn.Linear(D, D), nn.SiLU(), nn.Linear(D, D))
        self.blocks = nn.ModuleList(DenoiserBlock(cfg) for _ in range(cfg.blocks))
        self.final_norm = nn.LayerNorm(D, elementwise_affine=False, eps=1e-6)
        self.out_proj = nn.Linear(D, cfg.motion_dim)
        nn.init.zeros_(self.out_proj.weight)
        nn.init.zeros_(self.out_proj.bias)
        for i, block in enumerate(self.blocks):
            if isinstance(block.ffn, TempoMoE):
                block.ffn.layer_index = i

    @property
    def moe_layers(self) -> list:
        return [b.ffn for b in self.blocks if isinstance(b.ffn, TempoMoE)]

    def set_routing_hook(self, hook) -> None:
        for layer in self.moe_layers:
            layer.routing_hook = hook

    def embed_music(self, music, batch: int, length: int, null_mask=None):
        dtype = self.in_proj.weight.dtype
        null = self.null_token.view(1, 1, -1).expand(batch, length, -1)
        if music is None:
            return null
        if music.ndim == 2:
            music = music.unsqueeze(0)
        if music.shape[-2] != length:
            raise ValidationError(f"music has {music.shape[-2]} frames but motion has {length}")
        if music.shape[-1] != self.cfg.music_dim:
            raise ValidationError(f"music dim {music.shape[-1]} != {self.cfg.music_dim}")
        pos = sinusoidal_embedding(torch.arange(length), self.cfg.latent_dim).to(dtype)
        emb = self.music_proj(music.to(dtype)) + pos
        emb = emb.expand(batch, -1, -1)
        if null_mask is not None:
            emb = torch.where(null_mask.view(-1, 1, 1), null, emb)
        return emb

    def forward(self, x_t, t, music=None, null_mask=None):
        squeeze = x_t.ndim == 2
        if squeeze:
            x_t = x_t.unsqueeze(0)
        B, L, d = x_t.shape
        if d != self.cfg.motion_dim:
            raise ValidationError(f"motion dim {d} != {self.cfg.motion_dim}")
        dtype = self.in_proj.weight.dtype
        t = torch.as_tensor(t, dtype=torch.float64).reshape(-1).expand(B)
        temb = self.time_mlp(sinusoidal_embedding(t, self.cfg.latent_dim).to(dtype))
        pos = sinusoidal_embedding(torch.arange(L), self.cfg.latent_dim).to(dtype)
        h = self.in_proj(x_t.to(dtype)) + pos
        c = self.embed_music(music, B, L, null_mask)
        for block in self.blocks:
            h = block(h, temb, c)
        out = self.out_proj(self.final_norm(h))
        return out.squeeze(0) if squeeze else out


def count_parameters(module: nn.Module) -> int:
    return sum(p.numel() for p in module.parameters())


def parameter_report(cfg: DenoiserConfig) -> dict:
    model = Denoiser(cfg)
    report = {"total": count_parameters(model)}
    if model.moe_layers:
        report["tempomoe_per_layer"] = count_parameters(model.moe_layers[0])
    return report


CHECKPOINT_MANIFEST = "checkpoint.json"
CHECKPOINT_BLOB = "weights.bin"


def save_checkpoint(path, model: Denoiser, extra: dict | None = None) -> Path:
    """Write ``<path>/checkpoint.json`` (config, names, shapes, offsets) and a float32 blob."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    entries, offset = [], 0
    with open(path / CHECKPOINT_BLOB, "wb") as fh:
        for name, tensor in model.state_dict().items():
            arr = np.ascontiguousarray(tensor.detach().cpu().numpy(), dtype="<f4")
            fh.write(arr.tobytes())
            entries.append({"name": name, "shape": list(arr.shape), "offset": offset, "nbytes": arr.nbytes})
            offset += arr.nbytes
    manifest = {"format": "tempomoe-checkpoint", "version": 1, "config": model.cfg.to_dict(),
                "parameters": entries, "extra": extra or {}}
    (path / CHECKPOINT_MANIFEST).write_text(json.dumps(manifest, indent=1))
    return path


def load_checkpoint(path) -> tuple[Denoiser, dict]:
    path = Path(path)
    try:
        manifest = json.loads((path / CHECKPOINT_MANIFEST).read_text())
        blob = (path / CHECKPOINT_BLOB).read_bytes()
    except (OSError, json.JSONDecodeError) as exc:
        raise FormatError(f"cannot read checkpoint at {path}: {exc}") from exc
    if manifest.get("format") != "tempomoe-checkpoint":
        raise FormatError(f"{path}: not a tempomoe checkpoint")
    model = Denoiser(DenoiserConfig.from_dict(manifest["config"]))
    state = model.state_dict()
    loaded = {}
    for e in manifest["parameters"]:
        if e["name"] not in state:
            raise FormatError(f"{path}: unknown parameter {e['name']}")
        arr = np.frombuffer(blob, dtype="<f4", count=e["nbytes"] // 4, offset=e["offset"]).reshape(e["shape"])
        loaded[e["name"]] = torch.from_numpy(arr.astype(np.float32))
    missing = set(state) - set(loaded)
    if missing:
        raise FormatError(f"{path}: missing parameters {sorted(missing)[:3]}")
    model.load_state_dict(loaded)
    return model, manifest.get("extra", {})
