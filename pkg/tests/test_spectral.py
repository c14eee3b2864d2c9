import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from specgate.spectral import StftConfig, hz_to_mel, is_cola, istft, make_mel_filterbank, mel_to_hz, stft


def test_config_invariants():
    c = StftConfig()
    assert c.n_bins == 513 and c.pad == 768
    with pytest.raises(ValueError):
        StftConfig(1024, 300)


def test_cola_hann_75_percent():
    c = StftConfig()
    w = c.window_array()
    acc = np.zeros(4096)
    for s in range(0, 4096 - 1024 + 1, 256):
        acc[s : s + 1024] += w**2
    interior = acc[1024:-1024]
    assert np.ptp(interior) / interior.mean() <= 1e-6
    assert is_cola(w, 512)  # 50% overlap of the window itself


def test_frame_count_formula():
    # 1 + (262144 + 2*768 - 1024) / 256
    assert stft(np.zeros(262144)).n_frames == 1027


def test_zero_signal():
    s = stft(np.zeros(4096))
    assert not np.any(s.values)
    assert not np.any(istft(s))


def test_short_input_rejected():
    with pytest.raises(ValueError):
        stft(np.zeros(1023))


def test_sine_peak_bin():
    fs = 44100
    x = np.sin(2 * np.pi * 1000 * np.arange(8192) / fs)
    mag = stft(x).magnitude()
    peak = np.argmax(mag[5:-5].mean(axis=0))
    assert abs(peak - 23) <= 2


@pytest.mark.parametrize("n", [1024, 5000, 44100, 65536])
def test_round_trip(rng, n):
    x = rng.standard_normal(n)
    y = istft(stft(x))
    assert y.shape == x.shape
    assert np.max(np.abs(y - x)) <= 1e-6
    rel = 20 * np.log10(np.sqrt(np.mean((y - x) ** 2)) / np.sqrt(np.mean(x**2)))
    assert rel <= -100


def test_round_trip_stereo(rng):
    x = rng.standard_normal((2, 3000))
    assert np.allclose(istft(stft(x)), x, atol=1e-9)


@given(st.integers(-20, 20), st.integers(0, 2**32 - 1))
def test_linearity_exact_for_powers_of_two(k, seed):
    x = np.random.default_rng(seed).standard_normal(2048)
    a = 2.0**k
    np.testing.assert_array_equal(stft(a * x).values, a * stft(x).values)


@given(st.floats(min_value=-100, max_value=100, allow_nan=False), st.integers(0, 2**32 - 1))
def test_linearity(a, seed):
    x = np.random.default_rng(seed).standard_normal(2048)
    ref = a * stft(x).values
    assert np.max(np.abs(stft(a * x).values - ref)) <= 1e-12 * max(1.0, np.max(np.abs(ref)))


def test_mel_scale():
    assert hz_to_mel(1000.0) == pytest.approx(999.9855371396244, abs=1e-9)
    assert mel_to_hz(hz_to_mel(3000.0)) == pytest.approx(3000.0)


def test_mel_filterbank():
    fb = make_mel_filterbank(128, 2048, 44100)
    assert fb.shape == (1025, 128)
    assert np.all(fb >= 0) and np.all(fb.sum(axis=0) > 0)
    centers = np.argmax(fb, axis=0) + fb.argmax(axis=0) * 0
    peak_hz = (fb * np.arange(1025)[:, None]).sum(axis=0) / fb.sum(axis=0)
    assert np.all(np.diff(peak_hz) > 0)
    assert centers.shape == (128,)
    with pytest.raises(ValueError):
        make_mel_filterbank(2000, 2048, 44100)
