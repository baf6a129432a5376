"""Named configuration sweeps for the ablation study."""

from __future__ import annotations

import copy
import logging

from .exceptions import ValidationError
from .moe import uniform_anchors
from .training import TrainConfig, fit

log = logging.getLogger(__name__)

AXES = {
    "expert_group": ("homo-same", "homo-multi", "hetero"),
    "beat_scales": ("quarter-only", "half-only", "whole-only", "mixed"),
    "group_count": (4, 8, 16, 32),
    "inter_mode": ("top1", "top2", "soft", "average"),
    "intra_mode": ("top1", "top2", "soft", "average"),
    # dance/genre routing inputs need motion or genre encoders and are not provided
    "routing_feature": ("music",),
    "ffn_baseline": ("on",),
}
# the axes that have a table or figure counterpart in the ablation study
STUDY_AXES = ("expert_group", "beat_scales", "inter_mode", "intra_mode", "group_count", "ffn_baseline")

_SCALES = {
    "quarter-only": (0.25, 0.25, 0.25),
    "half-only": (0.5, 0.5, 0.5),
    "whole-only": (1.0, 1.0, 1.0),
    "mixed": (0.25, 0.5, 1.0),
}


def ablation_expand(base: TrainConfig, axis: str) -> list:
    """``[(name, config), ...]`` varying one axis of ``base``."""
    if axis not in AXES:
        raise ValidationError(f"unknown ablation axis {axis!r}; valid axes: {', '.join(AXES)}")
    out = []
    for value in AXES[axis]:
        cfg = copy.deepcopy(base)
        d = cfg.denoiser
        if axis == "expert_group":
            d.homogeneity = value
        elif axis == "beat_scales":
            d.beat_scales = _SCALES[value]
        elif axis == "group_count":
            d.anchors = uniform_anchors(value)
        elif axis == "inter_mode":
            d.routing.inter_mode = value
        elif axis == "intra_mode":
            d.routing.intra_mode = value
        elif axis == "ffn_baseline":
            d.ffn_baseline = True
        out.append((f"{axis}={value}", cfg))
    return out


def run_ablation(base: TrainConfig, windows, skel, axes=STUDY_AXES, steps: int = 1) -> list:
    """Instantiate every config on ``axes`` and run ``steps`` training updates each."""
    results = []
    for axis in axes:
        for name, cfg in ablation_expand(base, axis):
            cfg.max_steps = steps
            try:
                res = fit(cfg, windows, skel)
                results.append({"name": name, "ok": True, "steps": res.steps, "loss": res.history[-1]["total"]})
            except Exception as exc:  # reported per config; the sweep continues
                log.exception("ablation %s failed", name)
                results.append({"name": name, "ok": False, "error": f"{type(exc).__name__}: {exc}"})
    return results
