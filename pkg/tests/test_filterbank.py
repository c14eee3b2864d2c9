import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from specgate.filterbank import band_energies, design_bark_filterbank, hz_to_bark, project_gains
from specgate.spectral import stft


def test_design_defaults(fb):
    assert fb.n_bands == 27 and fb.n_bins == 513
    assert np.all(fb.analysis >= 0)
    assert np.max(np.abs(fb.analysis.sum(axis=1) - 1)) <= 1e-6
    assert np.all(np.diff(fb.centers) > 0)
    assert fb.band_edges[0] == 0 and fb.band_edges[-1] == 22050
    assert np.all(np.diff(fb.band_edges) > 0)
    assert len(fb.band_edges) == 29


def test_bark_upper_edge():
    assert hz_to_bark(22050.0) == pytest.approx(24.0914285714, abs=1e-9)


def test_design_errors():
    with pytest.raises(ValueError):
        design_bark_filterbank(1)
    with pytest.raises(ValueError):
        design_bark_filterbank(600, 44100, 1024)


def test_band_energy_floor(fb):
    e = band_energies(np.zeros((3, 513)), fb)
    assert np.allclose(e, -100.0)


def test_half_magnitude_lowers_6db(fb, rng):
    mag = np.abs(rng.standard_normal((4, 513))) + 0.1
    d = band_energies(0.5 * mag, fb) - band_energies(mag, fb)
    assert np.allclose(d, -6.020599913279624, atol=1e-6)


def test_shape_mismatch(fb):
    with pytest.raises(ValueError):
        band_energies(np.zeros((2, 100)), fb)


def test_sine_selectivity(fb):
    b = 13
    f = fb.centers[b]
    x = np.sin(2 * np.pi * f * np.arange(16384) / 44100)
    e = band_energies(stft(x).magnitude(), fb).mean(axis=0)
    others = np.delete(e, [b - 1, b, b + 1])
    assert e[b] >= others.max() + 20


def test_project_examples(fb):
    assert np.allclose(project_gains(np.ones((2, 27)), fb), 1.0, atol=1e-12)
    assert np.allclose(project_gains(np.full((2, 27), 0.5), fb), 0.5, atol=1e-12)
    g = np.ones((1, 27))
    g[0, 10] = 0.0
    m = project_gains(g, fb)[0]
    assert np.all((m >= 0) & (m <= 1 + 1e-12))
    np.testing.assert_array_equal(m == 0, np.isclose(fb.analysis[:, 10], 1.0))


def test_project_rejects_negative(fb):
    with pytest.raises(ValueError):
        project_gains(-np.ones((1, 27)), fb)


@given(arrays(np.float64, (3, 27), elements=st.floats(0, 1)))
def test_mask_bounds(g):
    fb = design_bark_filterbank()
    m = project_gains(g, fb)
    assert np.all(m >= -1e-12) and np.all(m <= 1 + 1e-12)


def test_frame_permutation_equivariance(fb, rng):
    mag = np.abs(rng.standard_normal((6, 513)))
    perm = rng.permutation(6)
    np.testing.assert_allclose(band_energies(mag[perm], fb), band_energies(mag, fb)[perm], rtol=1e-13)


def test_csv_dump(fb, tmp_path):
    fb.write_csv(tmp_path / "fb.csv")
    lines = (tmp_path / "fb.csv").read_text().splitlines()
    assert lines[0] == "band,low_hz,center_hz,high_hz"
    assert len(lines) == 28
