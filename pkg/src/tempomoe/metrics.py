"""Beat alignment, Frechet distance and diversity on desk-scale motion features.

These extractors support relative comparisons and property tests. They do
not reproduce published benchmark numbers, which depend on different
feature definitions and full-size datasets.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations

import numpy as np
from scipy.ndimage import uniform_filter1d

from .exceptions import ValidationError
from .kinematics import MotionSequence, Skeleton, forward_kinematics

UP_AXIS = 1
GEOMETRIC_DIM = 32


@dataclass
class BeatSet:
    frames: np.ndarray
    fps: float = 30.0

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=np.int64)
        if self.frames.ndim != 1 or np.any(np.diff(self.frames) <= 0):
            raise ValidationError("beat frames must be a strictly increasing 1-D sequence")
        if self.frames.size and self.frames[0] < 0:
            raise ValidationError("beat frames must be nonnegative")

    def __len__(self):
        return self.frames.size


@dataclass
class FeatureSet:
    vectors: np.ndarray
    kind: str

    def __post_init__(self):
        self.vectors = np.atleast_2d(np.asarray(self.vectors, dtype=np.float64))
        if self.kind not in ("kinetic", "geometric"):
            raise ValidationError(f"unknown feature kind {self.kind!r}")
        if not np.isfinite(self.vectors).all():
            raise ValidationError("feature vectors must be finite")


def _positions(motion, skel) -> np.ndarray:
    frames = motion.frames if isinstance(motion, MotionSequence) else motion
    if np.asarray(frames).shape[0] < 5:
        raise ValidationError("need at least 5 frames")
    return forward_kinematics(np.asarray(frames, dtype=np.float64), skel).numpy()


def mean_joint_speed(motion, skel: Skeleton, fps: float | None = None) -> np.ndarray:
    fps = fps or getattr(motion, "fps", 30.0)
    pos = _positions(motion, skel)
    return np.linalg.norm(np.diff(pos, axis=0), axis=-1).mean(axis=-1) * fps


def strict_local_minima(x: np.ndarray) -> np.ndarray:
    """Indices strictly below both neighbours; edges compare against a mirrored neighbour."""
    if x.size < 3:
        return np.zeros(0, dtype=np.int64)
    padded = np.concatenate([[x[1]], x, [x[-2]]])
    mid = padded[1:-1]
    return np.flatnonzero((mid < padded[:-2]) & (mid < padded[2:]))


def detect_dance_beats(motion, skel: Skeleton, fps: float | None = None) -> BeatSet:
    """Kinematic beats: local minima of the 5-frame-smoothed mean joint speed."""
    fps = fps or getattr(motion, "fps", 30.0)
    speed = mean_joint_speed(motion, skel, fps)
    smooth = uniform_filter1d(speed, size=5, mode="mirror")
    return BeatSet(strict_local_minima(smooth), fps)


def beat_alignment_score(music_beats, dance_beats, sigma_frames: float = 3.0) -> float:
    """Mean over music beats of ``exp(-d^2 / (2 sigma^2))`` to the nearest dance beat."""
    m = np.asarray(getattr(music_beats, "frames", music_beats), dtype=np.float64)
    d = np.asarray(getattr(dance_beats, "frames", dance_beats), dtype=np.float64)
    if m.size == 0:
        raise ValidationError("music beat set is empty")
    if d.size == 0:
        return 0.0
    nearest = np.min(np.abs(m[:, None] - d[None, :]), axis=1)
    return float(np.mean(np.exp(-nearest ** 2 / (2.0 * sigma_frames ** 2))))


def geometric_relations(skel: Skeleton) -> list:
    """The fixed descriptor list for a skeleton.

    Sixteen ``("near", a, b, rest_distance)`` entries flag joint pairs closer
    than at rest; sixteen ``("above", a, b, 0.0)`` entries flag joint ``a``
    higher than joint ``b`` along the up axis. Pairs are taken at evenly
    spaced positions of the lexicographic pair list.
    """
    J = skel.joint_count
    pairs = list(combinations(range(J), 2)) or [(0, 0)]
    rest = forward_kinematics(np.concatenate([np.zeros(7), np.tile([1, 0, 0, 0, 1, 0], J)])[None], skel).numpy()[0]
    half = GEOMETRIC_DIM // 2
    picks = [pairs[int(i * len(pairs) / half) % len(pairs)] for i in range(half)]
    rel = [("near", a, b, float(np.linalg.norm(rest[a] - rest[b]))) for a, b in picks]
    rel += [("above", b, a, 0.0) for a, b in picks]
    return rel


def extract_features(motion, skel: Skeleton, kind: str, fps: float | None = None) -> np.ndarray:
    fps = fps or getattr(motion, "fps", 30.0)
    pos = _positions(motion, skel)
    if kind == "kinetic":
        vel = np.diff(pos, axis=0) * fps
        return (vel ** 2).sum(axis=-1).mean(axis=0)
    if kind == "geometric":
        cols = []
        for name, a, b, thr in geometric_relations(skel):
            if name == "near":
                cols.append(np.linalg.norm(pos[:, a] - pos[:, b], axis=-1) < thr - 1e-9)
            else:
                cols.append(pos[:, a, UP_AXIS] > pos[:, b, UP_AXIS] + 1e-9)
        return np.stack(cols, axis=-1).mean(axis=0)
    raise ValidationError(f"unknown feature kind {kind!r}")


def _cov(x: np.ndarray, ridge: float) -> np.ndarray:
    c = np.atleast_2d(np.cov(x, rowvar=False, ddof=1))
    return c + ridge * np.eye(c.shape[0])


def _sqrtm_psd(m: np.ndarray) -> np.ndarray:
    w, v = np.linalg.eigh((m + m.T) / 2)
    return (v * np.sqrt(np.clip(w, 0, None))) @ v.T


def fid(a: FeatureSet, b: FeatureSet, ridge: float = 1e-6) -> float:
    """Frechet distance between Gaussian fits of two feature sets."""
    if a.kind != b.kind:
        raise ValidationError(f"feature kinds differ: {a.kind} vs {b.kind}")
    xa, xb = a.vectors, b.vectors
    if xa.shape[0] < 2 or xb.shape[0] < 2:
        raise ValidationError("FID needs at least two vectors per set")
    if xa.shape[1] != xb.shape[1]:
        raise ValidationError("feature dimensions differ")
    mu_a, mu_b = xa.mean(0), xb.mean(0)
    ca, cb = _cov(xa, ridge), _cov(xb, ridge)
    ra = _sqrtm_psd(ca)
    cross = _sqrtm_psd(ra @ cb @ ra)
    value = float(np.sum((mu_a - mu_b) ** 2) + np.trace(ca) + np.trace(cb) - 2 * np.trace(cross))
    return max(value, 0.0)


def diversity(a: FeatureSet, pairs: int = 1000, seed: int = 0) -> float:
    """Mean Euclidean distance over seeded random pairs of distinct rows."""
    x = a.vectors
    n = x.shape[0]
    if n < 2:
        raise ValidationError("diversity needs at least two vectors")
    i, j = sample_pairs(n, pairs, seed)
    return float(np.linalg.norm(x[i] - x[j], axis=-1).mean())


def sample_pairs(n: int, pairs: int, seed: int) -> tuple[np.ndarray, np.ndarray]:
    rng = np.random.default_rng(seed)
    i = rng.integers(0, n, size=pairs)
    j = (i + rng.integers(1, n, size=pairs)) % n
    return i, j


def evaluation_report(generated, references, music_beats, skel: Skeleton, sigma_frames: float = 3.0,
                      pairs: int = 1000, seed: int = 0) -> dict:
    """The ``eval`` summary: FID/diversity over feature sets and per-sample BAS.

    ``generated`` and ``music_beats`` are aligned lists; ``references`` are
    ground-truth motions for the FID reference distribution.
    """
    if len(generated) != len(music_beats):
        raise ValidationError("need one music beat set per generated motion")
    report = {}
    for kind, tag in (("kinetic", "k"), ("geometric", "g")):
        gen = FeatureSet([extract_features(m, skel, kind) for m in generated], kind)
        ref = FeatureSet([extract_features(m, skel, kind) for m in references], kind)
        report[f"fid_{tag}"] = fid(gen, ref)
        report[f"div_{tag}"] = diversity(gen, pairs, seed)
    bas = [beat_alignment_score(b, detect_dance_beats(m, skel), sigma_frames) for m, b in zip(generated, music_beats)]
    report["bas_mean"] = float(np.mean(bas))
    report["bas_per_sample"] = bas
    return report
