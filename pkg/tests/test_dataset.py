import json

import numpy as np
import pytest
import torch
from hypothesis import given, settings, strategies as st

from tempomoe.dataset import (NormStats, build_windows, denormalize, load_dataset, load_manifest, load_pairs,
                              make_data, motion_amplitudes, normalize, synth_pair, window_starts)
from tempomoe.exceptions import FormatError, ValidationError
from tempomoe.kinematics import MotionSequence, save_motion, smpl_skeleton
from tempomoe.metrics import beat_alignment_score, detect_dance_beats
from tempomoe.music import synth_click_features


def test_synth_pair_beats_on_grid(skel):
    music, motion = synth_pair(120, 240, skel=skel)
    beats = detect_dance_beats(motion, skel).frames
    grid = np.arange(0, 240, 15)
    interior = grid[(grid > 2) & (grid < 237)]
    assert all(np.min(np.abs(beats - g)) <= 2 for g in interior)


@pytest.mark.parametrize("bpm", [60, 80, 100, 120, 140, 160, 180, 200])
def test_synth_pairs_align(skel, bpm):
    music, motion = synth_pair(bpm, 256, skel=skel, seed=bpm)
    assert beat_alignment_score(music.beat_frames, detect_dance_beats(motion, skel), 3.0) >= 0.9


def test_synth_pair_smpl():
    skel = smpl_skeleton()
    music, motion = synth_pair(100, 128, skel=skel)
    assert motion.frames.shape == (128, 151)
    assert beat_alignment_score(music.beat_frames, detect_dance_beats(motion, skel)) >= 0.9


def test_amplitude_scaling():
    np.testing.assert_allclose(motion_amplitudes(60, 5, 3), 2 * motion_amplitudes(120, 5, 3), rtol=0, atol=1e-15)


def test_synth_deterministic_and_range(skel):
    a, b = synth_pair(90, 64, skel=skel, seed=4), synth_pair(90, 64, skel=skel, seed=4)
    assert np.array_equal(a[1].frames, b[1].frames) and np.array_equal(a[0].frames, b[0].frames)
    with pytest.raises(ValidationError):
        synth_pair(250, 64, skel=skel)


def make_motions(rng, n=3, L=20):
    out = []
    for _ in range(n):
        f = rng.normal(size=(L, 25)) * 3 + 1
        f[:, :4] = rng.uniform(size=(L, 4))
        f[:, 10] = 5.0  # constant channel
        out.append(MotionSequence(f))
    return out


def test_normalize_round_trip_and_moments(rng):
    motions = make_motions(rng)
    stats = NormStats.compute(motions)
    assert stats.std[10] == np.float32(1e-6)
    stacked = np.concatenate([normalize(m, stats).frames for m in motions]).astype(np.float64)
    moving = [c for c in range(4, 25) if c != 10]
    assert np.abs(stacked[:, moving].mean(0)).max() < 1e-5
    assert np.abs(stacked[:, moving].std(0) - 1).max() < 1e-5
    assert np.isfinite(stacked).all()
    for m in motions:
        back = denormalize(normalize(m, stats), stats)
        np.testing.assert_allclose(back.frames, m.frames, atol=1e-5)
        assert np.array_equal(normalize(m, stats).frames[:, :4], m.frames[:, :4])


def test_normalize_float64_precision(rng):
    motions = make_motions(rng)
    stats = NormStats.compute(motions)
    x = np.concatenate([m.frames for m in motions]).astype(np.float64)
    assert np.abs(denormalize(normalize(x, stats), stats) - x).max() < 1e-6
    t = torch.from_numpy(x)
    assert torch.allclose(denormalize(normalize(t, stats), stats), t, atol=1e-6)


def test_stats_mismatch(rng):
    stats = NormStats.compute(make_motions(rng))
    with pytest.raises(ValidationError):
        normalize(np.zeros((3, 31)), stats)


def test_window_arithmetic():
    assert len(window_starts(512, 256, 128)) == 3
    assert window_starts(100, 256, 128) == []


def test_windows_aligned_and_within_pairs(skel):
    pairs = [synth_pair(b, 300, skel=skel, seed=i) for i, b in enumerate((60, 120))]
    w = build_windows(pairs, 128, 64)
    assert len(w) == 2 * 3
    for k, (i, s) in enumerate(w.source):
        assert np.array_equal(w.music[k], pairs[i][0].frames[s:s + 128])
        assert np.array_equal(w.motion[k], pairs[i][1].frames[s:s + 128])
    assert list(w.epoch_order(3)) == list(w.epoch_order(3))
    batches = [b[0].tolist() for b in w.batches(1, 4)]
    assert batches == [b[0].tolist() for b in w.batches(1, 4)]


def test_windows_length_mismatch(skel):
    music, motion = synth_pair(120, 100, skel=skel)
    with pytest.raises(ValidationError, match="pair 0"):
        build_windows([(synth_click_features(120, 90), motion)], 32, 32)


def test_make_data_and_load(tmp_path):
    manifest = make_data(tmp_path, bpms=(60, 120), per_bpm=3, frames=128)
    m = load_manifest(manifest)
    assert len(m.split("train")) == 4 and len(m.split("val")) == 2
    assert m.skeleton is not None and m.motion_dim == 25
    w = load_dataset(manifest, window=64, stride=64)
    assert len(w) == 8 and w.motion.shape == (8, 64, 25)
    assert set(np.unique(w.bpm)) == {60.0, 120.0}


def test_manifest_errors(tmp_path):
    manifest = make_data(tmp_path, bpms=(120,), per_bpm=2, frames=64)
    doc = json.loads(manifest.read_text())
    doc["entries"][0]["motion_path"] = "nope.tmoe"
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps(doc))
    with pytest.raises(FormatError, match="missing file"):
        load_manifest(bad)
    doc = json.loads(manifest.read_text())
    short = synth_pair(120, 60)[1]
    save_motion(tmp_path / "short.motion.tmoe", short)
    doc["entries"][0]["motion_path"] = "short.motion.tmoe"
    bad.write_text(json.dumps(doc))
    with pytest.raises(ValidationError, match="length mismatch"):
        load_pairs(load_manifest(bad), "train")
