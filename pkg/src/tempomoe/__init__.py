"""Tempo-routed mixture-of-experts diffusion for music-to-dance generation."""

from .exceptions import FormatError, NonDeterministicError, TempoMoEError, TrainingDiverged, ValidationError
from .music import MusicFeatures, TempoEstimate, estimate_bpm, load_features, save_features, synth_click_features
from .kinematics import (LossWeights, MotionSequence, Skeleton, forward_kinematics, load_motion, loss_kinematic,
                         rot6d_to_matrix, save_motion, smpl_skeleton, toy_skeleton)
from .moe import RoutingConfig, RoutingDecision, TempoMoE, kernel_size, select_groups
from .denoiser import Denoiser, DenoiserConfig, load_checkpoint, save_checkpoint
from .diffusion import SamplerConfig, forward_noise, make_schedule, sample
from .dataset import NormStats, make_data, synth_pair
from .metrics import beat_alignment_score, detect_dance_beats, diversity, extract_features, fid
from .training import TrainConfig, fit, generate, train
from .ablation import ablation_expand
from .routing import RoutingRecord, analyze_routing
from .estimator import MotionFeatureExtractor, TempoMoEDancer

__version__ = "0.1.0"
