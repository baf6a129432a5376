import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from tempomoe.dataset import synth_pair
from tempomoe.exceptions import ValidationError
from tempomoe.kinematics import Skeleton
from tempomoe.metrics import (GEOMETRIC_DIM, BeatSet, FeatureSet, beat_alignment_score, detect_dance_beats,
                              diversity, evaluation_report, extract_features, fid, sample_pairs, strict_local_minima)

IDENT6 = [1, 0, 0, 0, 1, 0]


def static_motion(L=20, J=3):
    return np.tile(np.concatenate([np.zeros(4), [0, 0.9, 0], np.tile(IDENT6, J)]), (L, 1))


def bas_loop(m, d, sigma):
    total = 0.0
    for tm in m:
        best = min((td - tm) ** 2 for td in d)
        total += np.exp(-best / (2 * sigma ** 2))
    return total / len(m)


def test_bas_cases():
    m = np.array([10, 25, 40])
    assert beat_alignment_score(m, m) == 1.0
    assert abs(beat_alignment_score(m, m + 3, 3.0) - np.exp(-0.5)) < 1e-6
    assert beat_alignment_score(m, np.array([], dtype=int)) == 0.0
    with pytest.raises(ValidationError):
        beat_alignment_score(np.array([], dtype=int), m)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000))
def test_bas_matches_loop(seed):
    rng = np.random.default_rng(seed)
    m = np.sort(rng.choice(300, size=rng.integers(1, 12), replace=False))
    d = np.sort(rng.choice(300, size=rng.integers(1, 12), replace=False))
    assert abs(beat_alignment_score(m, d, 3.0) - bas_loop(m, d, 3.0)) < 1e-12


def test_bas_monotone_in_offset():
    m = np.arange(0, 300, 30)
    scores = [beat_alignment_score(m, m + k, 3.0) for k in range(10)]
    assert all(a >= b for a, b in zip(scores, scores[1:]))
    assert all(0 <= s <= 1 for s in scores)


def test_beatset_validation():
    with pytest.raises(ValidationError):
        BeatSet([3, 3])
    with pytest.raises(ValidationError):
        BeatSet([-1, 2])


def test_dance_beats_constant_pose_empty(skel):
    assert len(detect_dance_beats(static_motion(), skel)) == 0
    with pytest.raises(ValidationError):
        detect_dance_beats(static_motion(L=4), skel)


def test_dance_beats_sinusoid_spacing():
    chain = Skeleton(parents=[-1, 0], offsets=[[0, 0, 0], [1, 0, 0]], contact_joints=(0, 1, 0, 1))
    P = 24
    t = np.arange(240)
    ang = 0.5 * np.sin(2 * np.pi * t / P)
    frames = np.zeros((240, 4 + 3 + 12))
    c, s = np.cos(ang), np.sin(ang)
    frames[:, 7:13] = np.stack([c, s, 0 * c, -s, c, 0 * c], -1)  # root rotation about z
    frames[:, 13:19] = IDENT6
    beats = detect_dance_beats(frames, chain).frames
    gaps = np.diff(beats)
    assert len(gaps) > 5 and np.all(np.abs(gaps - P / 2) <= 1)  # speed minima twice per period


def test_strict_minima_edges():
    assert strict_local_minima(np.array([0.0, 1, 2, 1, 3])).tolist() == [0, 3]
    assert strict_local_minima(np.ones(5)).size == 0


def test_kinetic_features(skel):
    assert np.array_equal(extract_features(static_motion(), skel, "kinetic"), np.zeros(3))
    _, motion = synth_pair(90, 64, skel=skel)
    f = motion.frames.astype(np.float64)
    # rotation-free motion: every joint moves with the root, so doubling root motion doubles all velocities
    f[:, 7:] = np.tile(IDENT6, 3)
    fast = f.copy()
    fast[:, 4:7] *= 2
    np.testing.assert_allclose(extract_features(fast, skel, "kinetic"), 4 * extract_features(f, skel, "kinetic"),
                               rtol=1e-9)


def test_geometric_features(skel):
    _, motion = synth_pair(120, 64, skel=skel)
    g = extract_features(motion, skel, "geometric")
    assert g.shape == (GEOMETRIC_DIM,) and np.all((g >= 0) & (g <= 1))
    shifted = motion.frames.astype(np.float64).copy()
    shifted[:, 4:7] += [3.0, -2.0, 7.5]
    np.testing.assert_array_equal(extract_features(shifted, skel, "geometric"), g)
    with pytest.raises(ValidationError):
        extract_features(motion, skel, "spectral")


def test_fid_properties(rng):
    x = FeatureSet(rng.normal(size=(200, 4)), "kinetic")
    y = FeatureSet(rng.normal(size=(150, 4)) + 0.5, "kinetic")
    assert fid(x, x) < 1e-6
    assert abs(fid(x, y) - fid(y, x)) < 1e-6
    assert fid(x, y) >= 0
    with pytest.raises(ValidationError):
        fid(x, FeatureSet(rng.normal(size=(10, 4)), "geometric"))
    with pytest.raises(ValidationError):
        fid(x, FeatureSet(rng.normal(size=(1, 4)), "kinetic"))


def test_fid_1d_gaussians(rng):
    m = 2.0
    a = FeatureSet(rng.normal(size=(4096, 1)), "kinetic")
    b = FeatureSet(rng.normal(size=(4096, 1)) + m, "kinetic")
    assert abs(fid(a, b) - m * m) / (m * m) < 0.1


def test_fid_matches_scipy_sqrtm(rng):
    from scipy.linalg import sqrtm
    a, b = rng.normal(size=(300, 3)), rng.normal(size=(300, 3)) @ np.diag([1, 2, 0.5])
    ca, cb = np.cov(a, rowvar=False) + 1e-6 * np.eye(3), np.cov(b, rowvar=False) + 1e-6 * np.eye(3)
    ref = np.sum((a.mean(0) - b.mean(0)) ** 2) + np.trace(ca + cb - 2 * sqrtm(ca @ cb).real)
    assert abs(fid(FeatureSet(a, "kinetic"), FeatureSet(b, "kinetic")) - ref) < 1e-8


def test_diversity_cases(rng):
    assert diversity(FeatureSet(np.ones((5, 3)), "kinetic")) == 0.0
    x = rng.normal(size=(20, 4))
    assert abs(diversity(FeatureSet(3 * x, "kinetic")) - 3 * diversity(FeatureSet(x, "kinetic"))) < 1e-6
    with pytest.raises(ValidationError):
        diversity(FeatureSet(np.ones((1, 3)), "kinetic"))


def test_diversity_plus_minus_e1():
    x = np.zeros((6, 2))
    x[:3, 0], x[3:, 0] = 1, -1
    i, j = sample_pairs(6, 1000, 0)
    cross = np.mean((i < 3) != (j < 3))
    assert abs(diversity(FeatureSet(x, "kinetic"), 1000, 0) - 2 * cross) < 1e-12
    assert np.all(i != j)


def test_evaluation_report(skel):
    pairs = [synth_pair(b, 96, skel=skel, seed=i) for i, b in enumerate((60, 100, 140, 180))]
    report = evaluation_report([m for _, m in pairs], [m for _, m in pairs], [mu.beat_frames for mu, _ in pairs], skel)
    assert set(report) == {"fid_k", "fid_g", "div_k", "div_g", "bas_mean", "bas_per_sample"}
    assert report["fid_k"] < 1e-6 and len(report["bas_per_sample"]) == 4
    assert report["bas_mean"] > 0.9
