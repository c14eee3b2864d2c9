import numpy as np
import pytest

from specgate.audio import AudioBuffer
from specgate.datagen import NoiseSpec, generate_example, ground_truth_noise_spectrum, make_records, synth_colored_noise
from specgate.profile import blind_noise_profile, load_profile, region_noise_profile, save_profile

FS = 44100


def test_region_matches_ground_truth(fb):
    noise = synth_colored_noise(NoiseSpec("pink", seed=1), 4 * FS)
    clean = np.zeros((1, 4 * FS))
    clean[:, 2 * FS :] = 0.5 * np.sin(np.arange(2 * FS) * 0.07)
    audio = AudioBuffer(clean + noise.samples, FS)
    t_gt = ground_truth_noise_spectrum(noise, fb)
    prof = region_noise_profile(audio, 0, 2 * FS, fb)
    assert np.max(np.abs(prof - t_gt)) <= 1.0


def test_silent_region_is_floor(fb):
    prof = region_noise_profile(AudioBuffer(np.zeros(FS), FS), 0, FS, fb)
    assert np.allclose(prof, -100.0)


def test_region_bounds(fb):
    audio = AudioBuffer(np.zeros(FS), FS)
    with pytest.raises(ValueError):
        region_noise_profile(audio, 0, 2 * FS, fb)
    with pytest.raises(ValueError):
        region_noise_profile(audio, 0, 100, fb)


def test_blind_estimate_close_to_ground_truth(fb):
    # the percentile estimator needs frames where the noise is exposed, so the
    # source here is gapped notes rather than a sustained texture
    hits = []
    for rec in make_records(10, seed=21, length=131072):
        rec.loudness_diff = -20.0
        rec.synth_id = "tones"
        ex = generate_example(rec)
        prof = blind_noise_profile(ex.noisy, fb)
        hits.append(np.mean(np.abs(prof - ex.t_gt) <= 3.0))
    assert np.mean(hits) >= 0.8


def test_blind_estimate_unbiased_on_pure_noise(fb):
    for color in ("white", "pink", "lowpass"):
        noise = synth_colored_noise(NoiseSpec(color, seed=5), 131072)
        d = blind_noise_profile(noise, fb) - ground_truth_noise_spectrum(noise, fb)
        # 1/f noise piles into the DC bins of the lowest band, leaving it fewer
        # degrees of freedom than the calibration assumes
        assert abs(d[0]) <= 3.0, color
        assert np.max(np.abs(d[1:])) <= 1.0, color


def test_profile_file(tmp_path):
    save_profile(np.arange(27.0), tmp_path / "p.json", FS, "blind")
    np.testing.assert_array_equal(load_profile(tmp_path / "p.json"), np.arange(27.0))
