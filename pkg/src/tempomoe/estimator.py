"""Estimator-style facade over training and sampling."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .dataset import build_windows
from .denoiser import DenoiserConfig
from .diffusion import SamplerConfig, make_schedule
from .exceptions import ValidationError
from .kinematics import Skeleton, joints_from_dim
from .metrics import extract_features
from .moe import DEFAULT_ANCHORS, RoutingConfig
from .training import TrainConfig, default_skeleton, fit, generate
from .validation import check_motion, check_pairs, check_music_list, check_positive


class TempoMoEDancer(BaseEstimator):
    """Music-to-dance generator with a ``fit(music, motion)`` / ``predict(music)`` surface.

    ``X`` is a list of ``L x 35`` music matrices, ``y`` the aligned ``L x d``
    motions. ``predict`` returns one sampled motion array per music input.
    """

    def __init__(self, blocks=2, latent_dim=64, heads=2, anchors=DEFAULT_ANCHORS, inter_mode="top2",
                 intra_mode="soft", homogeneity="hetero", ffn_baseline=False, max_steps=200, lr=1e-3,
                 warmup_steps=100, batch_size=8, cfg_dropout=0.1, window=128, stride=64, fps=30.0,
                 solver="dpmpp_2m", steps=10, guidance_scale=2.5, skeleton=None, seed=0):
        self.blocks = blocks
        self.latent_dim = latent_dim
        self.heads = heads
        self.anchors = anchors
        self.inter_mode = inter_mode
        self.intra_mode = intra_mode
        self.homogeneity = homogeneity
        self.ffn_baseline = ffn_baseline
        self.max_steps = max_steps
        self.lr = lr
        self.warmup_steps = warmup_steps
        self.batch_size = batch_size
        self.cfg_dropout = cfg_dropout
        self.window = window
        self.stride = stride
        self.fps = fps
        self.solver = solver
        self.steps = steps
        self.guidance_scale = guidance_scale
        self.skeleton = skeleton
        self.seed = seed

    def _train_config(self, motion_dim: int) -> TrainConfig:
        dcfg = DenoiserConfig(blocks=self.blocks, latent_dim=self.latent_dim, heads=self.heads,
                              motion_dim=motion_dim, fps=self.fps, anchors=tuple(self.anchors),
                              routing=RoutingConfig(inter_mode=self.inter_mode, intra_mode=self.intra_mode),
                              homogeneity=self.homogeneity, ffn_baseline=self.ffn_baseline)
        return TrainConfig(epochs=10 ** 9, max_steps=check_positive("max_steps", self.max_steps, integer=True),
                           lr=self.lr, warmup_steps=self.warmup_steps, batch_size=self.batch_size,
                           cfg_dropout=self.cfg_dropout, denoiser=dcfg, seed=self.seed,
                           window=self.window, stride=self.stride, log_every=0)

    def fit(self, X, y):
        pairs = check_pairs(X, y, self.fps)
        d = pairs[0][1].frames.shape[1]
        skel = self.skeleton if isinstance(self.skeleton, Skeleton) else default_skeleton(d)
        if skel.motion_dim != d:
            raise ValidationError(f"skeleton expects d={skel.motion_dim}, motions have d={d}")
        window = min(self.window, min(len(m) for m, _ in pairs))
        windows = build_windows(pairs, window, min(self.stride, window), self.seed)
        config = self._train_config(d)
        result = fit(config, windows, skel)
        self.model_ = result.model
        self.stats_ = result.stats
        self.skeleton_ = skel
        self.schedule_ = make_schedule(config.schedule, config.T)
        self.history_ = result.history
        self.n_steps_ = result.steps
        self.motion_dim_ = d
        return self

    def predict(self, X) -> list:
        check_is_fitted(self, "model_")
        scfg = SamplerConfig(solver=self.solver, steps=self.steps, guidance_scale=self.guidance_scale,
                             seed=self.seed)
        return [generate(self.model_, m.frames, self.stats_, self.schedule_, scfg)[0].frames
                for m in check_music_list(X, self.fps)]


class MotionFeatureExtractor(BaseEstimator, TransformerMixin):
    """Map each motion sequence to its kinetic or geometric feature vector."""

    def __init__(self, kind="kinetic", skeleton=None, fps=30.0):
        self.kind = kind
        self.skeleton = skeleton
        self.fps = fps

    def fit(self, X, y=None):
        if self.kind not in ("kinetic", "geometric"):
            raise ValidationError(f"kind must be 'kinetic' or 'geometric', got {self.kind!r}")
        first = check_motion(X[0], self.fps)
        d = first.frames.shape[1]
        self.skeleton_ = self.skeleton or default_skeleton(d)
        self.n_features_out_ = self.skeleton_.joint_count if self.kind == "kinetic" else 32
        joints_from_dim(d)
        return self

    def transform(self, X) -> np.ndarray:
        check_is_fitted(self, "skeleton_")
        return np.stack([extract_features(check_motion(m, self.fps), self.skeleton_, self.kind, self.fps)
                         for m in X])
