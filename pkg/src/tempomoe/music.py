"""Frame-level music features: container I/O, click-track synthesis, tempo estimation."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import uniform_filter1d

from .containers import read_container, write_container
from .exceptions import FormatError, ValidationError

MUSIC_DIM = 35
CHANNEL_MAP = {
    "energy": (0, 1),
    "mfcc": (1, 21),
    "chroma": (21, 33),
    "onset": (33, 34),
    "beat": (34, 35),
}
ENERGY, ONSET, BEAT = 0, 33, 34
MIN_BPM, MAX_BPM = 30.0, 300.0


@dataclass
class MusicFeatures:
    """An ``L x 35`` feature matrix sampled at ``fps``."""

    frames: np.ndarray
    fps: float = 30.0
    bpm: float | None = None
    channel_map: dict = field(default_factory=lambda: dict(CHANNEL_MAP))

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=np.float32)
        validate_music_frames(self.frames)
        if self.fps <= 0:
            raise ValidationError(f"fps must be positive, got {self.fps}")

    def __len__(self):
        return self.frames.shape[0]

    @property
    def beat_frames(self) -> np.ndarray:
        return np.flatnonzero(self.frames[:, BEAT] > 0.5)

    @property
    def onset(self) -> np.ndarray:
        return self.frames[:, ONSET]


@dataclass(frozen=True)
class TempoEstimate:
    bpm: float
    confidence: float
    valid: bool = True


def validate_music_frames(frames: np.ndarray) -> None:
    if frames.ndim != 2 or frames.shape[1] != MUSIC_DIM:
        raise ValidationError(f"music features must be L x {MUSIC_DIM}, got shape {frames.shape}")
    if frames.shape[0] < 1:
        raise ValidationError("music features need at least one frame")
    bad = ~np.isfinite(frames).all(axis=1)
    if bad.any():
        raise ValidationError(f"non-finite music features at frame {int(np.flatnonzero(bad)[0])}")
    beat = frames[:, BEAT]
    if not np.isin(beat, (0.0, 1.0)).all():
        raise ValidationError("beat channel must contain only 0 or 1")
    if (frames[:, ONSET] < 0).any():
        raise ValidationError("onset channel must be nonnegative")


def save_features(path, music: MusicFeatures) -> None:
    meta = {"kind": "music", "fps": music.fps, "channel_map": {k: list(v) for k, v in music.channel_map.items()}}
    if music.bpm is not None:
        meta["bpm"] = music.bpm
    write_container(path, music.frames, music.fps, meta)


def load_features(path) -> MusicFeatures:
    frames, fps, meta = read_container(path)
    if frames.shape[1] != MUSIC_DIM:
        raise FormatError(f"{path}: music files need d={MUSIC_DIM}, got d={frames.shape[1]}")
    if meta is not None and meta.get("kind", "music") != "music":
        raise FormatError(f"{path}: sidecar kind is {meta.get('kind')!r}, expected 'music'")
    bpm = meta.get("bpm") if meta else None
    try:
        return MusicFeatures(frames, fps=fps, bpm=bpm)
    except ValidationError as exc:
        raise FormatError(f"{path}: {exc}") from exc


def beat_period(bpm: float, fps: float) -> float:
    return 60.0 * fps / bpm


def synth_click_features(bpm: float, L: int, fps: float = 30.0, seed: int = 0) -> MusicFeatures:
    """Synthesize click-track features with beats at ``round(i * 60 * fps / bpm)``."""
    if not MIN_BPM <= bpm <= MAX_BPM:
        raise ValidationError(f"bpm must lie in [{MIN_BPM}, {MAX_BPM}], got {bpm}")
    period = beat_period(bpm, fps)
    if L < 2 * period:
        raise ValidationError(f"L={L} frames holds fewer than two beats at {bpm} bpm")
    rng = np.random.default_rng(seed)
    t = np.arange(L, dtype=np.float64)

    beat = np.zeros(L)
    idx = np.round(np.arange(0, L / period + 1) * period).astype(int)
    beat[idx[idx < L]] = 1.0

    onset = np.convolve(beat, [0.25, 0.5, 1.0, 0.5, 0.25], mode="same")
    phase = np.mod(t, period) / period
    energy = 0.2 + 0.8 * np.exp(-4.0 * phase)

    timbre = rng.standard_normal((L, 32))
    timbre = uniform_filter1d(timbre, size=max(3, int(round(period / 2))), axis=0, mode="nearest")
    timbre *= (0.5 + energy)[:, None]

    frames = np.empty((L, MUSIC_DIM))
    frames[:, ENERGY] = energy
    frames[:, 1:33] = timbre
    frames[:, ONSET] = onset
    frames[:, BEAT] = beat
    return MusicFeatures(frames.astype(np.float32), fps=fps, bpm=float(bpm))


def estimate_bpm(music: MusicFeatures, tolerance: float = 0.8) -> TempoEstimate:
    """Tempo from the autocorrelation of the onset channel.

    Every candidate period between 300 and 30 bpm (0.05-frame grid) is scored
    by the mean unbiased autocorrelation at its integer multiples. Multiples
    of the true period score as well as the period itself, so the shortest
    candidate within ``tolerance`` of the best score wins.
    """
    fps = music.fps
    onset = music.onset.astype(np.float64)
    n = onset.size
    if n < 4 * fps:
        raise ValidationError(f"need at least 4 s of frames, got {n}")
    x = onset - onset.mean()
    energy = float(x @ x)
    if energy <= 1e-12:
        return TempoEstimate(bpm=float("nan"), confidence=0.0, valid=False)

    full = np.correlate(x, x, mode="full")[n - 1:]
    unbiased = full / (energy / n) / (n - np.arange(n))

    lo = fps * 60.0 / MAX_BPM
    hi = min(fps * 60.0 / MIN_BPM, (n - 1) / 2)
    periods = np.arange(lo, hi + 1e-9, 0.05)
    limit = n // 2
    grid = np.arange(n)

    def multiples(p):
        return p * np.arange(1, max(1, int(limit // p)) + 1)

    # coarse: best neighbouring integer lag per multiple, robust to rounded beat frames
    coarse = np.array([
        np.maximum(unbiased[np.floor(m).astype(int)], unbiased[np.ceil(m).astype(int)]).mean()
        for m in map(multiples, periods)
    ])
    best = coarse.max()
    if best <= 0:
        return TempoEstimate(bpm=float("nan"), confidence=0.0, valid=False)
    period = float(periods[np.flatnonzero(coarse >= tolerance * best)[0]])
    near = periods[np.abs(periods - period) <= 1.0]
    fine = [np.interp(multiples(p), grid, unbiased).mean() for p in near]
    period = float(near[int(np.argmax(fine))])
    bpm = fps * 60.0 / period
    confidence = float(np.clip(np.interp(period, grid, full / energy), 0.0, 1.0))
    return TempoEstimate(bpm=bpm, confidence=confidence, valid=bool(MIN_BPM <= bpm <= MAX_BPM))
