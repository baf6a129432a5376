"""Input checks shared by the estimator facade and the CLI."""

from __future__ import annotations

import numpy as np

from .exceptions import ValidationError
from .kinematics import MotionSequence, joints_from_dim
from .music import MUSIC_DIM, MusicFeatures, validate_music_frames


def check_music(x, fps: float = 30.0) -> MusicFeatures:
    """Coerce an ``L x 35`` array (or MusicFeatures) into validated MusicFeatures."""
    if isinstance(x, MusicFeatures):
        return x
    arr = np.asarray(x, dtype=np.float32)
    if arr.ndim != 2 or arr.shape[1] != MUSIC_DIM:
        raise ValidationError(f"music must be L x {MUSIC_DIM}, got shape {arr.shape}")
    validate_music_frames(arr)
    return MusicFeatures(arr, fps=fps)


def check_motion(y, fps: float = 30.0) -> MotionSequence:
    if isinstance(y, MotionSequence):
        return y
    arr = np.asarray(y, dtype=np.float32)
    if arr.ndim != 2:
        raise ValidationError(f"motion must be L x d, got shape {arr.shape}")
    joints_from_dim(arr.shape[1])
    if not np.isfinite(arr).all():
        raise ValidationError("motion contains non-finite values")
    return MotionSequence(arr, fps=fps)


def check_music_list(X, fps: float = 30.0) -> list:
    if isinstance(X, (np.ndarray, MusicFeatures)) and np.ndim(getattr(X, "frames", X)) == 2:
        X = [X]
    items = [check_music(x, fps) for x in X]
    if not items:
        raise ValidationError("no music sequences given")
    return items


def check_pairs(X, y, fps: float = 30.0) -> list:
    music = check_music_list(X, fps)
    if isinstance(y, (np.ndarray, MotionSequence)) and np.ndim(getattr(y, "frames", y)) == 2:
        y = [y]
    motion = [check_motion(m, fps) for m in y]
    if len(music) != len(motion):
        raise ValidationError(f"{len(music)} music sequences but {len(motion)} motions")
    dims = {m.frames.shape[1] for m in motion}
    if len(dims) != 1:
        raise ValidationError(f"motions have mixed dims {sorted(dims)}")
    for i, (a, b) in enumerate(zip(music, motion)):
        if len(a) != b.frames.shape[0]:
            raise ValidationError(f"pair {i}: music has {len(a)} frames, motion {b.frames.shape[0]}")
    return list(zip(music, motion))


def check_positive(name: str, value, integer: bool = False):
    if integer and (isinstance(value, bool) or int(value) != value):
        raise ValidationError(f"{name} must be an integer, got {value!r}")
    if not value > 0:
        raise ValidationError(f"{name} must be positive, got {value!r}")
    return int(value) if integer else float(value)
