import math

import numpy as np
import pytest

from specgate.audio import AudioBuffer
from specgate.loudness import integrated_loudness, is_measurable, k_weighting

# independent BS.1770 implementation (pyloudnorm 0.1.x), 5 s stereo 997 Hz full-scale sine
REFERENCE_LUFS = {48000: -0.04138981604672931, 44100: -0.0421129969983407}


def _sine(fs, seconds=5.0, f=997.0, amp=1.0):
    t = np.arange(int(seconds * fs)) / fs
    x = amp * np.sin(2 * np.pi * f * t)
    return AudioBuffer(np.stack([x, x]), fs)


def test_k_weighting_48k_table():
    sos = k_weighting(48000)
    np.testing.assert_allclose(sos[0, :3], [1.53512485958697, -2.69169618940638, 1.19839281085285], atol=1e-9)
    np.testing.assert_allclose(sos[0, 4:], [-1.69065929318241, 0.73248077421585], atol=1e-9)
    np.testing.assert_allclose(sos[1, 4:], [-1.99004745483398, 0.99007225036621], atol=1e-9)


def test_silence_unmeasurable():
    v = integrated_loudness(AudioBuffer(np.zeros((1, 44100)), 44100))
    assert not is_measurable(v) and v == -math.inf


def test_too_short():
    with pytest.raises(ValueError):
        integrated_loudness(AudioBuffer(np.zeros((1, 1000)), 44100))


@pytest.mark.parametrize("fs", [48000, 44100])
def test_sine_matches_reference(fs):
    assert integrated_loudness(_sine(fs)) == pytest.approx(REFERENCE_LUFS[fs], abs=0.1)


def test_reference_implementation_live():
    pyln = pytest.importorskip("pyloudnorm")
    rng = np.random.default_rng(3)
    x = rng.standard_normal((2, 44100 * 3)) * 0.1
    ref = pyln.Meter(44100).integrated_loudness(x.T)
    assert integrated_loudness(AudioBuffer(x, 44100)) == pytest.approx(ref, abs=0.1)


@pytest.mark.parametrize("g", [0.5, 0.1, 2.0])
def test_gain_shifts_loudness(g):
    rng = np.random.default_rng(0)
    b = AudioBuffer(rng.standard_normal((1, 44100 * 2)) * 0.05, 44100)
    d = integrated_loudness(AudioBuffer(b.samples * g, 44100)) - integrated_loudness(b)
    assert d == pytest.approx(20 * math.log10(g), abs=1e-9)
