import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from tempomoe.exceptions import FormatError, ValidationError
from tempomoe.music import (BEAT, CHANNEL_MAP, MUSIC_DIM, MusicFeatures, beat_period, estimate_bpm, load_features,
                            save_features, synth_click_features)
from tempomoe.containers import write_container


def test_channel_map_covers_35():
    cover = sorted(i for a, b in CHANNEL_MAP.values() for i in range(a, b))
    assert cover == list(range(MUSIC_DIM))


def test_click_track_beats_on_grid():
    m = synth_click_features(120, 150)
    np.testing.assert_array_equal(m.beat_frames, np.arange(0, 150, 15))
    assert m.frames.shape == (150, 35) and m.bpm == 120


def test_non_integer_period_rounds():
    m = synth_click_features(184.75, 200)
    p = beat_period(184.75, 30)
    expected = np.round(np.arange(0, 200 / p + 1) * p).astype(int)
    np.testing.assert_array_equal(m.beat_frames, expected[expected < 200])


def test_too_short_raises():
    with pytest.raises(ValidationError):
        synth_click_features(60, 50)


def test_nan_frame_named():
    frames = np.zeros((10, 35), np.float32)
    frames[7, 3] = np.nan
    with pytest.raises(ValidationError, match="7"):
        MusicFeatures(frames)


def test_save_load_round_trip(tmp_path):
    m = synth_click_features(100, 90, seed=3)
    save_features(tmp_path / "m.music.tmoe", m)
    back = load_features(tmp_path / "m.music.tmoe")
    assert np.array_equal(back.frames, m.frames) and back.fps == 30.0 and back.bpm == 100


def test_wrong_width_is_format_error(tmp_path):
    write_container(tmp_path / "bad.tmoe", np.zeros((5, 34), np.float32), 30.0)
    with pytest.raises(FormatError):
        load_features(tmp_path / "bad.tmoe")


@pytest.mark.parametrize("bpm", [60, 90, 120, 150, 184.75, 200, 250])
def test_estimate_bpm_within_two_percent(bpm):
    est = estimate_bpm(synth_click_features(bpm, 512))
    assert est.valid and abs(est.bpm - bpm) / bpm < 0.02


@settings(max_examples=15, deadline=None)
@given(st.floats(40, 280))
def test_estimate_bpm_property(bpm):
    est = estimate_bpm(synth_click_features(bpm, 512))
    assert abs(est.bpm - bpm) / bpm < 0.02


def test_silence_is_invalid():
    frames = np.zeros((200, 35), np.float32)
    est = estimate_bpm(MusicFeatures(frames))
    assert not est.valid
