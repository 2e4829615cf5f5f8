import math

import numpy as np
import pytest
from scipy.stats import chisquare

from luseel.audio_core import Waveform, rms, save_wav, snr_db
from luseel.errors import ConfigurationError, DataError, DegenerateInputError, InputError
from luseel.harness.toy import toy_corpus
from luseel.localization import gcc_phat
from luseel.scene_sim import (ClipRecord, Corpus, HrirSet, ParametricHead, SceneSpec, SourceSpec,
                              circular_distance, fractional_delay, itd_seconds, read_scenes, render_scene,
                              sample_scene, spatialize, write_scenes)

FS = 16000


@pytest.fixture(scope="module")
def corpus():
    return toy_corpus(16, duration_s=0.5)


def _gcc_lag(w: Waveform) -> int:
    g = gcc_phat(w, 1024, 512, 16)
    return int(g.lags[np.argmax(g.values.sum(axis=0))])


def test_sampled_snr_range(corpus):
    rng = np.random.default_rng(0)
    snrs = [sample_scene(rng, corpus, 2, duration_s=0.5).sources[1].snr_db for _ in range(10000)]
    assert min(snrs) >= -5.0 and max(snrs) <= 5.0
    assert abs(np.mean(snrs)) < 0.2


def test_sampled_azimuths_uniform(corpus):
    rng = np.random.default_rng(1)
    az = [s.azimuth_deg for _ in range(10000) for s in sample_scene(rng, corpus, 2, duration_s=0.5).sources]
    counts, _ = np.histogram(az, bins=36, range=(0, 360))
    assert chisquare(counts).pvalue > 0.01


def test_three_source_structure(corpus):
    spec = sample_scene(np.random.default_rng(2), corpus, 3, duration_s=0.5)
    assert len(spec.sources) == 3
    assert spec.target.snr_db == 0.0
    assert sum(1 for i, s in enumerate(spec.sources) if i != spec.target_index) == 2
    assert len({s.clip_id for s in spec.sources}) == 3
    seps = [circular_distance(a.azimuth_deg, b.azimuth_deg)
            for i, a in enumerate(spec.sources) for b in spec.sources[i + 1:]]
    assert min(seps) >= 5.0


def test_sample_scene_errors(corpus):
    small = Corpus([ClipRecord("a", "a.wav", "x"), ClipRecord("b", "b.wav", "y")])
    with pytest.raises(ConfigurationError):
        sample_scene(np.random.default_rng(0), small, 3)
    with pytest.raises(ConfigurationError):
        sample_scene(np.random.default_rng(0), corpus, 4)


def test_spec_invariants():
    with pytest.raises(InputError):
        SourceSpec("a", 360.0, 0.0, "x")
    with pytest.raises(ConfigurationError):
        SceneSpec([SourceSpec("a", 0.0, 1.0, "x"), SourceSpec("b", 10.0, 0.0, "y")])


def test_itd_examples():
    assert itd_seconds(0.0) == 0.0
    expected = 0.0875 / 343 * (math.pi / 2 + 1)
    assert itd_seconds(90.0, 0.0875, 343.0) == pytest.approx(expected)
    assert expected == pytest.approx(6.558e-4, rel=1e-3)
    assert expected * FS == pytest.approx(10.49, abs=0.01)
    for a in np.linspace(0.5, 359.5, 73):
        assert itd_seconds(a) == pytest.approx(-itd_seconds(360.0 - a), abs=1e-15)


def test_fractional_delay_integer_is_exact_shift():
    x = np.random.default_rng(3).standard_normal(500)
    y = fractional_delay(x, 7.0)
    np.testing.assert_allclose(y[7:], x[:-7], atol=1e-12)


def test_fractional_delay_matches_bandlimited_oracle():
    # a slow sinusoid delayed by 2.5 samples, evaluated analytically
    n = np.arange(2000)
    f = 0.01
    y = fractional_delay(np.sin(2 * np.pi * f * n), 2.5)
    np.testing.assert_allclose(y[100:-100], np.sin(2 * np.pi * f * (n - 2.5))[100:-100], atol=1e-3)


def test_front_source_identical_channels():
    x = np.random.default_rng(4).standard_normal(4000)
    out = spatialize(Waveform(x), 0.0)
    np.testing.assert_array_equal(out.samples[0], out.samples[1])


def test_impulse_at_90_degrees_lag_matches_itd():
    x = np.zeros(4096)
    x[2000] = 1.0
    out = spatialize(Waveform(x), 90.0, ParametricHead(rear_shadow=0.0))
    lag = _gcc_lag(out)
    # right ear leads, so the left channel lags: negative lag in our convention
    assert abs(lag - (-round(itd_seconds(90.0) * FS))) <= 1


@pytest.mark.parametrize("az", list(range(0, 360, 30)))
def test_spatial_fidelity_broadband(az):
    x = np.random.default_rng(az).standard_normal(16000)
    lag = _gcc_lag(spatialize(Waveform(x), float(az)))
    assert abs(lag + itd_seconds(az) * FS) <= 1.0


@pytest.mark.parametrize("az", [0.0, 45.0, 90.0, 135.0, 200.0, 270.0, 330.0])
def test_energy_within_ild_bounds(az):
    x = np.random.default_rng(5).standard_normal(16000)
    out = spatialize(Waveform(x), az)
    ratio_db = 20 * np.log10(rms(out) / np.sqrt(np.mean(x**2)))
    assert np.all(np.abs(ratio_db) <= 6.0)


def test_hrir_identity_and_missing(tmp_path):
    ir = np.zeros((2, 64))
    ir[:, 0] = 1.0
    save_wav(tmp_path / "az_0.wav", Waveform(ir * 0.999))
    hrirs = HrirSet.from_directory(tmp_path)
    x = np.random.default_rng(6).uniform(-0.5, 0.5, 1000)
    out = spatialize(Waveform(x), 0.0, hrirs)
    assert out.frames == 1000
    np.testing.assert_allclose(out.samples[0], out.samples[1])
    np.testing.assert_allclose(out.samples[0], x * 0.999, atol=1e-4)
    with pytest.raises(DataError):
        spatialize(Waveform(x), 90.0, hrirs)
    with pytest.raises(DataError):
        HrirSet.from_directory(tmp_path / "nothing")


def test_spatialize_requires_mono():
    with pytest.raises(InputError):
        spatialize(Waveform(np.zeros((2, 100))), 0.0)


def _two_source_spec(snr=5.0, duration=0.5):
    return SceneSpec([SourceSpec("toy00", 30.0, 0.0, "low rumble"), SourceSpec("toy03", 250.0, snr, "airy hiss")],
                     duration_s=duration, scene_id="t0")


def test_render_additivity_and_target(corpus):
    scene = render_scene(_two_source_spec(), corpus)
    total = scene.components[0].samples + scene.components[1].samples
    assert np.all(scene.mixture.samples - total == 0.0)
    assert scene.target is scene.components[0]
    assert scene.prompt.text == "low rumble"
    assert scene.target_azimuth_deg == 30.0
    assert scene.mixture.samples.shape == scene.target.samples.shape


def test_render_snr_measured(corpus):
    spec = _two_source_spec(snr=5.0)
    frames = spec.frames
    anchor = Waveform(corpus.load("toy00", frames))
    interf = Waveform(corpus.load("toy03", frames))
    from luseel.audio_core import gain_for_snr
    scaled = Waveform(interf.samples * gain_for_snr(anchor, interf, 5.0))
    assert abs(snr_db(anchor, scaled) - 5.0) < 0.01
    # the rendered interferer is exactly the spatialized scaled clip
    scene = render_scene(spec, corpus)
    np.testing.assert_array_equal(scene.components[1].samples, spatialize(scaled, 250.0).samples)


def test_render_deterministic(corpus):
    a = render_scene(_two_source_spec(), corpus).mixture.samples
    b = render_scene(_two_source_spec(), corpus).mixture.samples
    assert a.tobytes() == b.tobytes()


def test_render_silent_clip_rejected():
    c = Corpus([ClipRecord("a", "", "x"), ClipRecord("b", "", "y")],
               audio={"a": np.ones(100), "b": np.zeros(100)})
    spec = SceneSpec([SourceSpec("a", 0.0, 0.0, "x"), SourceSpec("b", 90.0, 0.0, "y")], duration_s=100 / FS)
    with pytest.raises(DegenerateInputError):
        render_scene(spec, c)


def test_manifest_and_scene_files(tmp_path, corpus):
    from luseel.harness.toy import write_toy_corpus
    manifest = write_toy_corpus(tmp_path / "c", 4, 0.25)
    c = Corpus.from_manifest(manifest)
    assert len(c) == 4 and c.caption("toy01") == "soft hum"
    assert c.load("toy01", 100).shape == (100,)
    assert c.load("toy01", 8000).shape == (8000,)  # zero-padded past the clip end
    specs = [sample_scene(np.random.default_rng(i), corpus, 2, duration_s=0.5, scene_id=f"s{i}") for i in range(3)]
    write_scenes(tmp_path / "s.jsonl", specs)
    assert read_scenes(tmp_path / "s.jsonl") == specs


def test_separation_angle():
    spec = SceneSpec([SourceSpec("a", 10.0, 0.0, "x"), SourceSpec("b", 350.0, 1.0, "y")])
    assert spec.separation_deg() == pytest.approx(20.0)
