"""Training loop, generation helpers and the configuration that drives them."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch

from .dataset import NormStats, WindowDataset, build_windows, denormalize, load_manifest, load_pairs, normalize
from .denoiser import Denoiser, DenoiserConfig, load_checkpoint, save_checkpoint
from .diffusion import NoiseSchedule, SamplerConfig, forward_noise, loss_simple, make_schedule, sample
from .exceptions import TrainingDiverged, ValidationError
from .kinematics import (CONTACT, LOSS_DIFF_FPS, LossWeights, MotionSequence, Skeleton, kinematic_terms,
                         smpl_skeleton, toy_skeleton, weighted_kinematic)
from .moe import load_balance_loss

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    epochs: int = 500
    max_steps: int | None = None
    lr: float = 1e-4
    warmup_steps: int = 100
    batch_size: int = 128
    cfg_dropout: float = 0.10
    loss_weights: LossWeights = field(default_factory=LossWeights)
    denoiser: DenoiserConfig = field(default_factory=DenoiserConfig)
    schedule: str = "cosine"
    T: int = 1000
    seed: int = 0
    window: int = 256
    stride: int = 128
    checkpoint_every: int = 0
    log_every: int = 50
    betas: tuple = (0.9, 0.999)
    adam_eps: float = 1e-8
    balance_weight: float = 0.0  # optional load-balancing term, off by default

    def __post_init__(self):
        if isinstance(self.loss_weights, dict):
            self.loss_weights = LossWeights(**self.loss_weights)
        if isinstance(self.denoiser, dict):
            self.denoiser = DenoiserConfig.from_dict(self.denoiser)
        self.betas = tuple(self.betas)
        if not self.lr >= 0:
            raise ValidationError(f"lr must be >= 0, got {self.lr}")
        if not 0.0 <= self.cfg_dropout < 1.0:
            raise ValidationError(f"cfg_dropout must lie in [0, 1), got {self.cfg_dropout}")
        if self.balance_weight < 0:
            raise ValidationError("balance_weight must be >= 0")
        if self.batch_size < 1 or self.epochs < 1:
            raise ValidationError("batch_size and epochs must be positive")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["denoiser"] = self.denoiser.to_dict()
        d["betas"] = list(self.betas)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(d) - known
        if unknown:
            raise ValidationError(f"unknown train config keys: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def load(cls, path) -> "TrainConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))


def lr_at(step: int, lr: float, warmup_steps: int) -> float:
    """Learning rate for 1-based update ``step`` under linear warmup."""
    if warmup_steps <= 0:
        return lr
    return lr * min(1.0, step / warmup_steps)


def draw_null_mask(gen: torch.Generator, batch: int, p: float) -> torch.Tensor:
    return torch.rand(batch, generator=gen) < p


@dataclass
class TrainResult:
    model: Denoiser
    stats: NormStats
    skeleton: Skeleton
    config: TrainConfig
    history: list
    steps: int


def default_skeleton(motion_dim: int) -> Skeleton:
    for skel in (toy_skeleton(), smpl_skeleton()):
        if skel.motion_dim == motion_dim:
            return skel
    raise ValidationError(f"no built-in skeleton for motion dim {motion_dim}; provide one")


def training_loss(model, x0, music, t, eps, null_mask, stats, skel, sched, weights, balance_weight: float = 0.0):
    """``(total, parts)`` for one batch of normalized clean motion ``x0``."""
    x_t = forward_noise(x0, t.numpy(), eps, sched)
    x0_hat = model(x_t, t.to(torch.float64), music, null_mask)
    simple = loss_simple(x0, x0_hat)
    terms = kinematic_terms(denormalize(x0, stats), denormalize(x0_hat, stats), skel, LOSS_DIFF_FPS, check=False)
    kin = weighted_kinematic(terms, weights)
    parts = {"simple": simple, **terms, "kin_total": kin}
    total = simple + kin
    if balance_weight > 0 and model.moe_layers:
        balance = sum(load_balance_loss(layer.last_decision) for layer in model.moe_layers) / len(model.moe_layers)
        parts["balance"] = balance
        total = total + balance_weight * balance
    return total, parts


def fit(config: TrainConfig, windows: WindowDataset, skel: Skeleton, stats: NormStats | None = None,
        callback=None, model: Denoiser | None = None) -> TrainResult:
    """Train a denoiser on aligned windows. Deterministic for a fixed seed.

    ``callback(step, model, parts)`` runs after every update.
    """
    dcfg = config.denoiser
    if windows.motion.shape[-1] != dcfg.motion_dim:
        raise ValidationError(f"windows have d={windows.motion.shape[-1]}, model expects {dcfg.motion_dim}")
    if skel.motion_dim != dcfg.motion_dim:
        raise ValidationError("skeleton does not match the model's motion dim")
    torch.manual_seed(config.seed)
    gen = torch.Generator().manual_seed(config.seed + 1)
    model = model or Denoiser(dcfg)
    model.train()
    stats = stats or NormStats.compute(list(windows.motion))
    sched = make_schedule(config.schedule, config.T)
    motion = torch.from_numpy(np.ascontiguousarray(normalize(windows.motion, stats), dtype=np.float32))
    music_all = torch.from_numpy(np.ascontiguousarray(windows.music, dtype=np.float32))
    opt = torch.optim.Adam(model.parameters(), lr=config.lr, betas=config.betas, eps=config.adam_eps)
    history, step = [], 0
    for epoch in range(config.epochs):
        for idx, _, _ in windows.batches(epoch, config.batch_size):
            step += 1
            for g in opt.param_groups:
                g["lr"] = lr_at(step, config.lr, config.warmup_steps)
            idx_t = torch.from_numpy(idx)
            x0, music = motion[idx_t], music_all[idx_t]
            B = x0.shape[0]
            t = torch.randint(1, sched.T + 1, (B,), generator=gen)
            eps = torch.randn(x0.shape, generator=gen)
            null_mask = draw_null_mask(gen, B, config.cfg_dropout)
            total, parts = training_loss(model, x0, music, t, eps, null_mask, stats, skel, sched,
                                         config.loss_weights, config.balance_weight)
            value = total.item()
            if not math.isfinite(value):
                raise TrainingDiverged(step, value)
            opt.zero_grad(set_to_none=True)
            total.backward()
            opt.step()
            record = {k: float(v.detach()) for k, v in parts.items()}
            record.update(step=step, total=value, null_frac=float(null_mask.float().mean()))
            history.append(record)
            if config.log_every and step % config.log_every == 0:
                log.info("step %d total %.5f simple %.5f kin %.5f", step, value, record["simple"], record["kin_total"])
            if callback is not None:
                callback(step, model, parts)
            if config.max_steps is not None and step >= config.max_steps:
                return TrainResult(model, stats, skel, config, history, step)
    return TrainResult(model, stats, skel, config, history, step)


def evaluate_simple_loss(model: Denoiser, windows: WindowDataset, stats: NormStats, sched: NoiseSchedule,
                         seed: int = 1234, repeats: int = 4) -> float:
    """L_simple on fixed (t, eps) draws so values are comparable across training."""
    gen = torch.Generator().manual_seed(seed)
    x0 = torch.from_numpy(np.ascontiguousarray(normalize(windows.motion, stats), dtype=np.float32))
    music = torch.from_numpy(np.ascontiguousarray(windows.music, dtype=np.float32))
    was_training = model.training
    model.eval()
    total = 0.0
    with torch.no_grad():
        for _ in range(repeats):
            t = torch.randint(1, sched.T + 1, (x0.shape[0],), generator=gen)
            eps = torch.randn(x0.shape, generator=gen)
            x_t = forward_noise(x0, t.numpy(), eps, sched)
            total += float(loss_simple(x0, model(x_t, t.to(torch.float64), music)))
    model.train(was_training)
    return total / repeats


def generate(model: Denoiser, music: np.ndarray, stats: NormStats, sched: NoiseSchedule,
             scfg: SamplerConfig = SamplerConfig(), batch: int = 1) -> list:
    """Sample dance for one ``L x 35`` music matrix; returns denormalized :class:`MotionSequence` list."""
    music = np.asarray(music, dtype=np.float32)
    if music.ndim != 2:
        raise ValidationError("music must be a single L x 35 matrix")
    model.eval()
    cond = torch.from_numpy(music).unsqueeze(0).expand(batch, -1, -1)
    x = sample(model, cond, music.shape[0], sched, scfg, model.cfg.motion_dim, batch=batch)
    frames = denormalize(x.detach().numpy().astype(np.float64), stats)
    frames[..., CONTACT] = np.clip(frames[..., CONTACT], 0.0, 1.0)
    return [MotionSequence(f.astype(np.float32), fps=model.cfg.fps) for f in frames]


def checkpoint_extra(result: TrainResult) -> dict:
    return {"norm_stats": result.stats.to_dict(), "skeleton": result.skeleton.to_dict(),
            "train_config": result.config.to_dict(), "steps": result.steps}


def load_trained(path) -> tuple[Denoiser, NormStats, Skeleton, NoiseSchedule]:
    model, extra = load_checkpoint(path)
    try:
        stats = NormStats.from_dict(extra["norm_stats"])
        skel = Skeleton.from_dict(extra["skeleton"])
        tc = extra.get("train_config", {})
    except KeyError as exc:
        raise ValidationError(f"checkpoint at {path} lacks {exc}") from exc
    sched = make_schedule(tc.get("schedule", "cosine"), tc.get("T", 1000))
    model.eval()
    return model, stats, skel, sched


def train(config: TrainConfig, manifest_path, out_dir) -> Path:
    """Train from a manifest's train split and write a checkpoint to ``out_dir``."""
    manifest = load_manifest(manifest_path)
    if manifest.motion_dim != config.denoiser.motion_dim:
        raise ValidationError(f"manifest d={manifest.motion_dim} but config motion_dim={config.denoiser.motion_dim}")
    if manifest.fps != config.denoiser.fps:
        raise ValidationError(f"manifest fps={manifest.fps} but config fps={config.denoiser.fps}")
    skel = manifest.skeleton or default_skeleton(manifest.motion_dim)
    windows = build_windows(load_pairs(manifest, "train"), config.window, config.stride, config.seed)
    out = Path(out_dir)
    stats = NormStats.compute(list(windows.motion))

    def periodic(step, model, parts):
        if config.checkpoint_every and step % config.checkpoint_every == 0:
            save_checkpoint(out / f"step{step:06d}", model, {"norm_stats": stats.to_dict(),
                            "skeleton": skel.to_dict(), "train_config": config.to_dict(), "steps": step})

    result = fit(config, windows, skel, stats, callback=periodic)
    save_checkpoint(out, result.model, checkpoint_extra(result))
    (out / "history.json").write_text(json.dumps(result.history))
    return out
