"""Motion layout, 6D rotations, forward kinematics and kinematic losses.

Frame layout: ``[foot_contact(4) | root_translation(3) | rot6d(J*6)]``.
Rotations use the two-column 6D parameterization: the first triple is the
first column of the rotation matrix, the second triple the second column
before Gram-Schmidt.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np
import torch

from .exceptions import ValidationError

CONTACT = slice(0, 4)
ROOT = slice(4, 7)
ROT_START = 7
_DEGENERATE = 1e-8
LOSS_DIFF_FPS = 1.0  # vel/acc losses use per-frame differences


def motion_dim(joints: int) -> int:
    return ROT_START + 6 * joints


def joints_from_dim(d: int) -> int:
    if d < ROT_START + 6 or (d - ROT_START) % 6:
        raise ValidationError(f"motion dim {d} does not match layout 7 + 6J")
    return (d - ROT_START) // 6


@dataclass
class Skeleton:
    parents: list
    offsets: np.ndarray
    contact_joints: tuple = (0, 0, 0, 0)
    names: list | None = None

    def __post_init__(self):
        self.parents = [int(p) for p in self.parents]
        self.offsets = np.asarray(self.offsets, dtype=np.float64)
        self.contact_joints = tuple(int(c) for c in self.contact_joints)
        J = len(self.parents)
        if J < 1 or self.parents[0] != -1:
            raise ValidationError("joint 0 must be the root (parent -1)")
        for j, p in enumerate(self.parents[1:], start=1):
            if not 0 <= p < j:
                raise ValidationError(f"joint {j} has parent {p}; parents must precede children")
        if self.offsets.shape != (J, 3) or not np.isfinite(self.offsets).all():
            raise ValidationError(f"offsets must be a finite {J}x3 array")
        if len(self.contact_joints) != 4 or not all(0 <= c < J for c in self.contact_joints):
            raise ValidationError("contact_joints must hold 4 valid joint indices")

    @property
    def joint_count(self) -> int:
        return len(self.parents)

    @property
    def motion_dim(self) -> int:
        return motion_dim(self.joint_count)

    def to_dict(self) -> dict:
        d = {
            "joints": self.joint_count,
            "parents": self.parents,
            "offsets": self.offsets.tolist(),
            "contact_joints": list(self.contact_joints),
        }
        if self.names:
            d["names"] = list(self.names)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "Skeleton":
        if "joints" in d and d["joints"] != len(d["parents"]):
            raise ValidationError("skeleton 'joints' disagrees with parents length")
        return cls(d["parents"], d["offsets"], d["contact_joints"], d.get("names"))

    @classmethod
    def load(cls, path) -> "Skeleton":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1))


def smpl_skeleton() -> Skeleton:
    """24-joint SMPL-topology skeleton (y-up, metres); contacts are ankles and feet."""
    text = resources.files("tempomoe").joinpath("assets/smpl24.json").read_text()
    return Skeleton.from_dict(json.loads(text))


def toy_skeleton() -> Skeleton:
    """Three-joint chain used by tests and desk-scale training."""
    return Skeleton(
        parents=[-1, 0, 1],
        offsets=[[0.0, 0.0, 0.0], [0.0, -0.5, 0.0], [0.2, -0.4, 0.1]],
        contact_joints=(1, 2, 1, 2),
        names=["root", "knee", "foot"],
    )


@dataclass
class MotionSequence:
    frames: np.ndarray
    fps: float = 30.0
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=np.float32)
        if self.frames.ndim != 2 or self.frames.shape[0] < 2:
            raise ValidationError(f"motion must be L x d with L >= 2, got {self.frames.shape}")
        joints_from_dim(self.frames.shape[1])
        bad = ~np.isfinite(self.frames).all(axis=1)
        if bad.any():
            raise ValidationError(f"non-finite motion values at frame {int(np.flatnonzero(bad)[0])}")

    def __len__(self):
        return self.frames.shape[0]

    @property
    def joint_count(self) -> int:
        return joints_from_dim(self.frames.shape[1])

    @property
    def contacts(self) -> np.ndarray:
        return self.frames[:, CONTACT]

    @property
    def root_translation(self) -> np.ndarray:
        return self.frames[:, ROOT]

    @property
    def rot6d(self) -> np.ndarray:
        return self.frames[:, ROT_START:].reshape(len(self), -1, 6)


def save_motion(path, motion: MotionSequence) -> None:
    from .containers import write_container

    meta = {"kind": "motion", "fps": motion.fps, "channel_map": {
        "contact": [0, 4], "root": [4, 7], "rot6d": [7, motion.frames.shape[1]]}}
    meta.update({k: v for k, v in motion.meta.items() if k == "bpm"})
    write_container(path, motion.frames, motion.fps, meta)


def load_motion(path) -> MotionSequence:
    from .containers import read_container
    from .exceptions import FormatError

    frames, fps, meta = read_container(path)
    if meta is not None and meta.get("kind", "motion") != "motion":
        raise FormatError(f"{path}: sidecar kind is {meta.get('kind')!r}, expected 'motion'")
    try:
        return MotionSequence(frames, fps=fps, meta={"bpm": meta["bpm"]} if meta and "bpm" in meta else {})
    except ValidationError as exc:
        raise FormatError(f"{path}: {exc}") from exc


def _as_tensor(x) -> torch.Tensor:
    if isinstance(x, torch.Tensor):
        return x
    return torch.as_tensor(np.asarray(x, dtype=np.float64))


def rot6d_to_matrix(r6, check: bool = True) -> torch.Tensor:
    """Map ``(..., 6)`` to ``(..., 3, 3)`` rotation matrices by Gram-Schmidt."""
    r6 = _as_tensor(r6)
    a1, a2 = r6[..., :3], r6[..., 3:6]
    n1 = a1.norm(dim=-1, keepdim=True)
    if check and bool((n1 < _DEGENERATE).any()):
        raise ValidationError(f"degenerate 6D rotation (zero first vector) at index {_first_bad(n1)}")
    a = a1 / n1.clamp_min(_DEGENERATE)
    resid = a2 - (a * a2).sum(-1, keepdim=True) * a
    n2 = resid.norm(dim=-1, keepdim=True)
    if check and bool((n2 < _DEGENERATE).any()):
        raise ValidationError(f"degenerate 6D rotation (parallel vectors) at index {_first_bad(n2)}")
    b = resid / n2.clamp_min(_DEGENERATE)
    c = torch.linalg.cross(a, b, dim=-1)
    return torch.stack([a, b, c], dim=-1)


def _first_bad(norms: torch.Tensor) -> tuple:
    idx = torch.nonzero(norms[..., 0] < _DEGENERATE)[0].tolist()
    return tuple(idx)


def matrix_to_rot6d(R) -> torch.Tensor:
    R = _as_tensor(R)
    return torch.cat([R[..., :, 0], R[..., :, 1]], dim=-1)


def forward_kinematics(motion, skel: Skeleton, check: bool = True) -> torch.Tensor:
    """Global joint positions ``(..., L, J, 3)`` for frames ``(..., L, d)``.

    Accepts a :class:`MotionSequence`, an array or a tensor; the tensor path
    is differentiable. ``check=False`` clamps degenerate 6D vectors instead
    of raising, for use inside training losses.
    """
    x = _as_tensor(motion.frames if isinstance(motion, MotionSequence) else motion)
    J = skel.joint_count
    if x.shape[-1] != motion_dim(J):
        raise ValidationError(f"motion dim {x.shape[-1]} does not match skeleton with {J} joints")
    r6 = x[..., ROT_START:].reshape(*x.shape[:-1], J, 6)
    try:
        local = rot6d_to_matrix(r6, check=check)
    except ValidationError:
        n1 = r6[..., :3].norm(dim=-1)
        bad = torch.nonzero(n1 < _DEGENERATE)
        where = bad[0].tolist() if len(bad) else _locate_parallel(r6)
        raise ValidationError(f"degenerate 6D rotation at frame {where[-2]}, joint {where[-1]}") from None
    offsets = torch.as_tensor(skel.offsets, dtype=x.dtype)
    root = x[..., ROOT]
    rots = [local[..., 0, :, :]]
    pos = [root]
    for j in range(1, J):
        p = skel.parents[j]
        pos.append(pos[p] + (rots[p] @ offsets[j].unsqueeze(-1)).squeeze(-1))
        rots.append(rots[p] @ local[..., j, :, :])
    return torch.stack(pos, dim=-2)


def _locate_parallel(r6):
    a = r6[..., :3] / r6[..., :3].norm(dim=-1, keepdim=True)
    resid = r6[..., 3:] - (a * r6[..., 3:]).sum(-1, keepdim=True) * a
    return torch.nonzero(resid.norm(dim=-1) < _DEGENERATE)[0].tolist()


def time_diff(x, order: int = 1, fps: float = 1.0):
    """Forward differences along the frame axis (second to last), scaled by ``fps``."""
    if order not in (1, 2):
        raise ValidationError(f"order must be 1 or 2, got {order}")
    if x.shape[-2] <= order:
        raise ValidationError(f"need more than {order} frames, got {x.shape[-2]}")
    for _ in range(order):
        x = (x[..., 1:, :] - x[..., :-1, :]) * fps
    return x


@dataclass(frozen=True)
class LossWeights:
    lambda_joint: float = 0.646
    lambda_vel: float = 2.964
    lambda_contact: float = 10.942
    lambda_acc: float = 1.0

    def __post_init__(self):
        if min(self.lambda_joint, self.lambda_vel, self.lambda_contact, self.lambda_acc) < 0:
            raise ValidationError("loss weights must be nonnegative")


@dataclass(frozen=True)
class LossBreakdown:
    simple: float
    joint: float
    vel: float
    acc: float
    contact: float
    kin_total: float
    total: float


def kinematic_terms(gt: torch.Tensor, pred: torch.Tensor, skel: Skeleton, fps: float = 1.0,
                    check: bool = True) -> dict:
    """Differentiable joint/vel/acc/contact losses, averaged over leading batch dims.

    Velocity and acceleration use ``time_diff`` scaled by ``fps``; losses
    pass ``fps=1`` (per-frame differences), the scale the default loss
    weights were tuned for.
    """
    if gt.shape != pred.shape:
        raise ValidationError(f"shape mismatch: {tuple(gt.shape)} vs {tuple(pred.shape)}")
    pos_gt = forward_kinematics(gt, skel, check)
    pos_pred = forward_kinematics(pred, skel, check)
    L = gt.shape[-2]

    def frame_sq(a, b, dims):
        return ((a - b) ** 2).sum(dim=dims).mean()

    joint = frame_sq(pos_gt, pos_pred, (-2, -1))
    vel = frame_sq(time_diff(gt, 1, fps), time_diff(pred, 1, fps), -1)
    if L < 2:
        raise ValidationError("kinematic losses need at least 2 frames")
    # a 2-frame window has no second differences; its acceleration term is 0
    acc = frame_sq(time_diff(gt, 2, fps), time_diff(pred, 2, fps), -1) if L > 2 else (gt - pred).sum() * 0.0

    feet = pos_pred[..., list(skel.contact_joints), :]  # (..., L, 4, 3)
    labels = pred[..., CONTACT].clamp(0.0, 1.0)
    disp = (feet[..., 1:, :, :] - feet[..., :-1, :, :]) * labels[..., :-1, :, None]
    contact = (disp ** 2).sum(dim=(-3, -2, -1)).mean() / (L - 1)
    return {"joint": joint, "vel": vel, "acc": acc, "contact": contact}


def weighted_kinematic(terms: dict, w: LossWeights):
    return (w.lambda_joint * terms["joint"] + w.lambda_vel * terms["vel"]
            + w.lambda_contact * terms["contact"] + w.lambda_acc * terms["acc"])


def loss_kinematic(gt: MotionSequence, pred: MotionSequence, skel: Skeleton,
                   w: LossWeights = LossWeights(), simple: float = 0.0) -> LossBreakdown:
    if gt.frames.shape != pred.frames.shape:
        raise ValidationError(f"shape mismatch: {gt.frames.shape} vs {pred.frames.shape}")
    if gt.fps != pred.fps:
        raise ValidationError(f"fps mismatch: {gt.fps} vs {pred.fps}")
    with torch.no_grad():
        terms = kinematic_terms(_as_tensor(gt.frames), _as_tensor(pred.frames), skel, LOSS_DIFF_FPS)
        kin = float(weighted_kinematic(terms, w))
    return LossBreakdown(
        simple=float(simple), joint=float(terms["joint"]), vel=float(terms["vel"]),
        acc=float(terms["acc"]), contact=float(terms["contact"]), kin_total=kin, total=float(simple) + kin,
    )
