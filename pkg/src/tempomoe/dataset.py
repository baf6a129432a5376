"""Synthetic tempo-conditioned pairs, normalization, manifests and training windows."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .exceptions import FormatError, ValidationError
from .kinematics import (CONTACT, MotionSequence, Skeleton, joints_from_dim, load_motion, matrix_to_rot6d,
                         save_motion, toy_skeleton)
from .music import MusicFeatures, load_features, save_features, synth_click_features

log = logging.getLogger(__name__)

SYNTH_BPM_RANGE = (60.0, 200.0)
ROOT_HEIGHT = 0.9


def motion_amplitudes(bpm: float, joints: int, seed: int) -> np.ndarray:
    """Per-joint swing amplitude in radians; inversely proportional to tempo."""
    base = np.random.default_rng([seed, 7]).uniform(0.3, 0.8, size=joints)
    return base * (60.0 / bpm)


def _rot_x(a):
    c, s = np.cos(a), np.sin(a)
    z, o = np.zeros_like(a), np.ones_like(a)
    return np.stack([np.stack([o, z, z], -1), np.stack([z, c, -s], -1), np.stack([z, s, c], -1)], -2)


def _rot_z(a):
    c, s = np.cos(a), np.sin(a)
    z, o = np.zeros_like(a), np.ones_like(a)
    return np.stack([np.stack([c, -s, z], -1), np.stack([s, c, z], -1), np.stack([z, z, o], -1)], -2)


def beat_phase(L: int, period: float) -> np.ndarray:
    """Monotone phase whose rate ``1 - cos(2 pi t / period)`` vanishes exactly on beats."""
    phi = 2 * np.pi * np.arange(L) / period
    return phi - np.sin(phi)


def synth_pair(bpm: float, L: int, fps: float = 30.0, skel: Skeleton | None = None,
               seed: int = 0) -> tuple[MusicFeatures, MotionSequence]:
    """Music click track and a dance whose speed minima fall on its beats.

    Every motion channel is a smooth function of :func:`beat_phase`, so all
    joint velocities share the factor ``1 - cos(2 pi t / F_b)`` and stop on
    each beat. Joints sweep small circles of tempo-scaled amplitude; the root
    drifts on a four-beat cycle; contacts alternate feet every beat.
    """
    if not SYNTH_BPM_RANGE[0] <= bpm <= SYNTH_BPM_RANGE[1]:
        raise ValidationError(f"synthetic pairs need bpm in {SYNTH_BPM_RANGE}, got {bpm}")
    skel = skel or toy_skeleton()
    J = skel.joint_count
    music = synth_click_features(bpm, L, fps, seed)
    period = 60.0 * fps / bpm
    psi = beat_phase(L, period)

    rng = np.random.default_rng([seed, 11])
    amp = motion_amplitudes(bpm, J, seed)
    offs = rng.uniform(0, 2 * np.pi, size=J)
    ang = psi[:, None] + offs[None, :]
    R = _rot_x(amp * np.cos(ang)) @ _rot_z(amp * np.sin(ang))  # (L, J, 3, 3)
    rot6d = matrix_to_rot6d(torch.from_numpy(R)).numpy().reshape(L, J * 6)

    drift = rng.uniform(0.1, 0.3, size=2)
    root = np.stack([
        drift[0] * np.sin(psi / 4),
        ROOT_HEIGHT + 0.03 * (1 - np.cos(psi)),
        drift[1] * np.sin(psi / 8),
    ], axis=-1)

    beat_index = np.floor(np.arange(L) / period).astype(int)
    left = (beat_index % 2 == 0).astype(np.float64)
    contact = np.stack([left, 1 - left, left, 1 - left], axis=-1)  # heels then toes, left/right

    frames = np.concatenate([contact, root, rot6d], axis=-1)
    motion = MotionSequence(frames.astype(np.float32), fps=fps, meta={"bpm": float(bpm)})
    return music, motion


@dataclass
class NormStats:
    """Per-channel mean/std; contact channels pass through unchanged."""

    mean: np.ndarray
    std: np.ndarray

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=np.float32)
        self.std = np.maximum(np.asarray(self.std, dtype=np.float32), np.float32(1e-6))

    @classmethod
    def compute(cls, motions) -> "NormStats":
        stacked = np.concatenate([np.asarray(m.frames if isinstance(m, MotionSequence) else m, dtype=np.float64)
                                  for m in motions], axis=0)
        mean, std = stacked.mean(axis=0), stacked.std(axis=0)
        mean[CONTACT], std[CONTACT] = 0.0, 1.0
        return cls(mean, std)

    def to_dict(self) -> dict:
        return {"mean": self.mean.tolist(), "std": self.std.tolist()}

    @classmethod
    def from_dict(cls, d) -> "NormStats":
        return cls(d["mean"], d["std"])

    def _check(self, d):
        if d != self.mean.size:
            raise ValidationError(f"stats cover {self.mean.size} channels, motion has {d}")


def normalize(motion, stats: NormStats):
    return _apply(motion, stats, lambda x, m, s: (x - m) / s)


def denormalize(motion, stats: NormStats):
    return _apply(motion, stats, lambda x, m, s: x * s + m)


def _apply(motion, stats, fn):
    if isinstance(motion, MotionSequence):
        stats._check(motion.frames.shape[-1])
        out = fn(motion.frames.astype(np.float64), stats.mean.astype(np.float64), stats.std.astype(np.float64))
        return MotionSequence(out.astype(np.float32), fps=motion.fps, meta=dict(motion.meta))
    stats._check(motion.shape[-1])
    if isinstance(motion, torch.Tensor):
        m = torch.as_tensor(stats.mean, dtype=motion.dtype)
        s = torch.as_tensor(stats.std, dtype=motion.dtype)
        return fn(motion, m, s)
    return fn(np.asarray(motion), stats.mean, stats.std)


@dataclass
class ManifestEntry:
    music_path: Path
    motion_path: Path
    bpm: float | None = None
    split: str = "train"


@dataclass
class DatasetManifest:
    entries: list
    fps: float
    motion_dim: int
    skeleton: Skeleton | None = None
    root: Path = field(default_factory=Path)

    def split(self, name: str) -> list:
        return [e for e in self.entries if e.split == name]


def write_manifest(path, entries, fps, motion_dim, skeleton_path=None) -> Path:
    path = Path(path)
    base = path.parent
    doc = {"fps": fps, "motion_dim": motion_dim, "entries": [
        {"music_path": str(Path(e.music_path).relative_to(base) if Path(e.music_path).is_absolute() else e.music_path),
         "motion_path": str(Path(e.motion_path).relative_to(base) if Path(e.motion_path).is_absolute() else e.motion_path),
         "bpm": e.bpm, "split": e.split} for e in entries]}
    if skeleton_path is not None:
        doc["skeleton"] = str(skeleton_path)
    path.write_text(json.dumps(doc, indent=1))
    return path


def load_manifest(path) -> DatasetManifest:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise FormatError(f"cannot read manifest {path}: {exc}") from exc
    base = path.parent
    try:
        fps, d = float(doc["fps"]), int(doc["motion_dim"])
        entries = [ManifestEntry(base / e["music_path"], base / e["motion_path"], e.get("bpm"), e.get("split", "train"))
                   for e in doc["entries"]]
    except (KeyError, TypeError) as exc:
        raise FormatError(f"{path}: malformed manifest ({exc})") from exc
    for e in entries:
        if e.split not in ("train", "val"):
            raise FormatError(f"{path}: split must be train or val, got {e.split!r}")
        for p in (e.music_path, e.motion_path):
            if not p.exists():
                raise FormatError(f"{path}: missing file {p}")
    skel = Skeleton.load(base / doc["skeleton"]) if doc.get("skeleton") else None
    if skel is not None and skel.motion_dim != d:
        raise FormatError(f"{path}: skeleton implies d={skel.motion_dim}, manifest says {d}")
    return DatasetManifest(entries, fps, d, skel, base)


def window_starts(L: int, window: int, stride: int) -> list:
    if L < window:
        return []
    return list(range(0, L - window + 1, stride))


@dataclass
class WindowDataset:
    """Index-aligned fixed-length (music, motion) windows with seeded epoch shuffles."""

    music: np.ndarray   # (N, W, 35)
    motion: np.ndarray  # (N, W, d)
    bpm: np.ndarray     # (N,) nan when unknown
    source: list        # (entry index, start frame) per window
    seed: int = 0

    def __len__(self):
        return self.music.shape[0]

    def epoch_order(self, epoch: int) -> np.ndarray:
        return np.random.default_rng([self.seed, epoch]).permutation(len(self))

    def batches(self, epoch: int, batch_size: int):
        order = self.epoch_order(epoch)
        for i in range(0, len(order), batch_size):
            idx = order[i:i + batch_size]
            yield idx, self.music[idx], self.motion[idx]


def build_windows(pairs, window: int, stride: int, seed: int = 0) -> WindowDataset:
    """Cut aligned windows from ``[(MusicFeatures, MotionSequence), ...]``; never crosses pairs."""
    mus, mot, bpm, src = [], [], [], []
    for i, (music, motion) in enumerate(pairs):
        if len(music) != len(motion):
            raise ValidationError(f"pair {i}: music has {len(music)} frames, motion has {len(motion)}")
        starts = window_starts(len(motion), window, stride)
        if not starts:
            log.warning("pair %d shorter than window (%d < %d); skipped", i, len(motion), window)
        for s in starts:
            mus.append(music.frames[s:s + window])
            mot.append(motion.frames[s:s + window])
            bpm.append(motion.meta.get("bpm", music.bpm) or np.nan)
            src.append((i, s))
    if not mus:
        raise ValidationError("no training windows could be cut")
    return WindowDataset(np.stack(mus), np.stack(mot), np.asarray(bpm, dtype=np.float64), src, seed)


def load_pairs(manifest: DatasetManifest, split: str | None = "train") -> list:
    pairs = []
    entries = manifest.entries if split is None else manifest.split(split)
    for e in entries:
        music, motion = load_features(e.music_path), load_motion(e.motion_path)
        if len(music) != len(motion):
            raise ValidationError(f"length mismatch for pair {e.music_path.name} / {e.motion_path.name}: "
                                  f"{len(music)} vs {len(motion)}")
        if music.fps != manifest.fps or motion.fps != manifest.fps:
            raise ValidationError(f"fps mismatch in pair {e.music_path.name}")
        if motion.frames.shape[1] != manifest.motion_dim:
            raise ValidationError(f"{e.motion_path.name}: d={motion.frames.shape[1]}, manifest says {manifest.motion_dim}")
        if e.bpm is not None:
            motion.meta.setdefault("bpm", e.bpm)
        pairs.append((music, motion))
    return pairs


def load_dataset(manifest_path, window: int = 256, stride: int = 128, split: str = "train",
                 seed: int = 0) -> WindowDataset:
    manifest = load_manifest(manifest_path)
    return build_windows(load_pairs(manifest, split), window, stride, seed)


def make_data(out_dir, bpms=(60, 80, 100, 120, 140, 160, 180, 200), per_bpm: int = 8, frames: int = 512,
              fps: float = 30.0, skel: Skeleton | None = None, seed: int = 0, val_per_bpm: int = 1) -> Path:
    """Write a synthetic corpus plus ``manifest.json`` and ``skeleton.json`` into ``out_dir``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    skel = skel or toy_skeleton()
    skel.save(out / "skeleton.json")
    entries = []
    for bpm in bpms:
        for k in range(per_bpm):
            pair_seed = seed * 100003 + int(round(float(bpm) * 100)) * 101 + k
            music, motion = synth_pair(float(bpm), frames, fps, skel, pair_seed)
            stem = f"bpm{float(bpm):g}_{k:02d}"
            save_features(out / f"{stem}.music.tmoe", music)
            save_motion(out / f"{stem}.motion.tmoe", motion)
            split = "val" if per_bpm > val_per_bpm and k >= per_bpm - val_per_bpm else "train"
            entries.append(ManifestEntry(Path(f"{stem}.music.tmoe"), Path(f"{stem}.motion.tmoe"), float(bpm), split))
    joints_from_dim(skel.motion_dim)
    return write_manifest(out / "manifest.json", entries, fps, skel.motion_dim, "skeleton.json")
