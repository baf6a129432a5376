"""Routing statistics: per-call records, CSV export and summaries."""

from __future__ import annotations

import csv
import json
from collections import defaultdict
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from .dataset import load_manifest, load_pairs, normalize
from .denoiser import Denoiser
from .diffusion import forward_noise
from .exceptions import ValidationError
from .moe import RoutingDecision

CSV_HEADER = ["layer", "sample_id", "frame", "group_a", "group_b", "w_a", "w_b",
              "gamma_quarter", "gamma_half", "gamma_whole"]


@dataclass
class RoutingRecord:
    layer: int
    sample_id: int
    frame: int  # -1 for sequence-level beat routing
    groups: tuple
    weights: tuple
    gamma: tuple

    def csv_row(self) -> list:
        ga, gb = (list(self.groups) + ["", ""])[:2]
        wa, wb = (list(self.weights) + ["", ""])[:2]
        return [self.layer, self.sample_id, self.frame, ga, gb, wa, wb, *self.gamma]


def decision_records(decision: RoutingDecision, sample_ids) -> list:
    """Expand one batched decision into rows; groups are ordered by weight, two at most."""
    rows = []
    sel = decision.selected.cpu().numpy()
    w = decision.group_weights.cpu().double().numpy()
    gam = decision.beat_weights.cpu().double().numpy()
    per_frame = gam.shape[1] > 1
    for b, sid in enumerate(sample_ids):
        order = np.argsort(-w[b], kind="stable")[:2]
        groups = tuple(int(sel[b, i]) for i in order)
        weights = tuple(float(w[b, i]) for i in order)
        for f in range(gam.shape[1]):
            rows.append(RoutingRecord(int(decision.layer), int(sid), f if per_frame else -1,
                                      groups, weights, tuple(float(x) for x in gam[b, f])))
    return rows


class RoutingCollector:
    """Hook target that accumulates records while a model runs."""

    def __init__(self):
        self.records: list = []
        self.sample_ids: list = []

    def __call__(self, decision: RoutingDecision):
        self.records.extend(decision_records(decision, self.sample_ids))


def collect_routing(model: Denoiser, music_batch, x_t, t, sample_ids) -> list:
    if not model.moe_layers:
        raise ValidationError("model has no TempoMoE layers (FFN baseline)")
    collector = RoutingCollector()
    collector.sample_ids = list(sample_ids)
    model.set_routing_hook(collector)
    try:
        with torch.no_grad():
            model(x_t, t, music_batch)
    finally:
        model.set_routing_hook(None)
    return collector.records


def write_csv(path, records) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_HEADER)
        for r in records:
            writer.writerow(r.csv_row())


def summarize(records, anchors, num_groups: int, sample_bpm: dict | None = None) -> dict:
    """Per-layer group activation frequency and mean beat weights, plus anchor diagnostics."""
    by_layer = defaultdict(list)
    for r in records:
        by_layer[r.layer].append(r)
    layers = {}
    for layer, rows in sorted(by_layer.items()):
        seen = {}
        for r in rows:
            seen[r.sample_id] = r.groups
        counts = np.zeros(num_groups)
        for groups in seen.values():
            for g in groups:
                counts[g] += 1
        layers[str(layer)] = {
            "group_activation_frequency": (counts / max(1, len(seen))).tolist(),
            "mean_gamma": np.mean([r.gamma for r in rows], axis=0).tolist(),
        }
    per_sample = defaultdict(list)
    for r in records:
        if r.frame in (0, -1):
            per_sample[r.sample_id].extend(anchors[g] for g in r.groups)
    summary = {"layers": layers,
               "mean_selected_anchor_per_sample": {str(k): float(np.mean(v)) for k, v in sorted(per_sample.items())}}
    if sample_bpm:
        by_bpm = defaultdict(list)
        for sid, v in per_sample.items():
            if sid in sample_bpm and sample_bpm[sid] is not None:
                by_bpm[float(sample_bpm[sid])].extend(v)
        summary["mean_selected_anchor_by_bpm"] = {f"{k:g}": float(np.mean(v)) for k, v in sorted(by_bpm.items())}
    return summary


def analyze_routing(checkpoint, manifest_path, out_dir, split: str | None = None, t: int | None = None,
                    seed: int = 0) -> tuple[Path, Path]:
    """Run every manifest pair through a trained model and export routing statistics."""
    from .training import load_trained

    model, stats, skel, sched = load_trained(checkpoint)
    if not model.moe_layers:
        raise ValidationError("checkpoint was trained with the FFN baseline; no routing to analyze")
    manifest = load_manifest(manifest_path)
    pairs = load_pairs(manifest, split)
    t = sched.T // 2 if t is None else t
    gen = torch.Generator().manual_seed(seed)
    records, sample_bpm = [], {}
    for sid, (music, motion) in enumerate(pairs):
        x0 = torch.from_numpy(normalize(motion.frames, stats).astype(np.float32)).unsqueeze(0)
        x_t = forward_noise(x0, t, torch.randn(x0.shape, generator=gen), sched)
        records += collect_routing(model, torch.from_numpy(music.frames).unsqueeze(0), x_t, float(t), [sid])
        sample_bpm[sid] = motion.meta.get("bpm", music.bpm)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    csv_path, json_path = out / "routing.csv", out / "routing_summary.json"
    write_csv(csv_path, records)
    anchors = list(model.cfg.anchors)
    json_path.write_text(json.dumps(summarize(records, anchors, len(anchors), sample_bpm), indent=1))
    return csv_path, json_path
