"""TMOE binary container shared by music and motion files.

Layout (little-endian): ``b"TMOE"``, version u32, rows u32, cols u32,
fps f32, then ``rows * cols`` f32 values in row-major order. A JSON
sidecar ``<stem>.meta.json`` carries ``kind``, ``fps``, optional ``bpm``
and ``channel_map``.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .exceptions import FormatError

MAGIC = b"TMOE"
VERSION = 1
_HEADER = struct.Struct("<4sIIIf")


def sidecar_path(path) -> Path:
    path = Path(path)
    return path.with_name(path.stem + ".meta.json")


def write_container(path, frames: np.ndarray, fps: float, meta: dict | None = None) -> Path:
    path = Path(path)
    frames = np.asarray(frames)
    if frames.ndim != 2:
        raise FormatError(f"expected a 2-D frame matrix, got shape {frames.shape}")
    rows, cols = frames.shape
    payload = np.ascontiguousarray(frames, dtype="<f4")
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, VERSION, rows, cols, float(fps)))
        fh.write(payload.tobytes())
    if meta is not None:
        sidecar_path(path).write_text(json.dumps(meta, indent=2, sort_keys=True))
    return path


def read_container(path) -> tuple[np.ndarray, float, dict | None]:
    """Return ``(frames float32 (rows, cols), fps, sidecar dict or None)``."""
    path = Path(path)
    if not path.exists():
        raise FormatError(f"missing file: {path}")
    raw = path.read_bytes()
    if len(raw) < _HEADER.size:
        raise FormatError(f"{path}: truncated header")
    magic, version, rows, cols, fps = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    if version != VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    expected = _HEADER.size + 4 * rows * cols
    if len(raw) != expected:
        raise FormatError(f"{path}: payload is {len(raw) - _HEADER.size} bytes, header implies {4 * rows * cols}")
    frames = np.frombuffer(raw, dtype="<f4", offset=_HEADER.size).reshape(rows, cols).astype(np.float32)
    meta = None
    side = sidecar_path(path)
    if side.exists():
        try:
            meta = json.loads(side.read_text())
        except json.JSONDecodeError as exc:
            raise FormatError(f"{side}: invalid JSON ({exc})") from exc
    return frames, float(fps), meta
