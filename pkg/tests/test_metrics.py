import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from specgate.audio import AudioBuffer
from specgate.datagen import MixtureExample
from specgate.metrics import EvalReport, evaluate_dataset, log_magnitude_l1, mel_stft_error, si_sdr


def test_si_sdr_examples(rng):
    y = rng.standard_normal(4096)
    assert si_sdr(y, y) == 100.0
    assert si_sdr(2 * y, y) == 100.0
    e = rng.standard_normal(4096)
    e -= np.dot(e, y) / np.dot(y, y) * y
    e *= np.linalg.norm(y) / np.linalg.norm(e)
    assert si_sdr(y + e, y) == pytest.approx(0.0, abs=1e-9)


def test_si_sdr_errors():
    with pytest.raises(ValueError):
        si_sdr(np.ones(10), np.zeros(10))
    with pytest.raises(ValueError):
        si_sdr(np.ones(10), np.ones(11))


@given(st.floats(1e-3, 1e3), st.integers(0, 2**32 - 1))
def test_si_sdr_scale_invariance(c, seed):
    r = np.random.default_rng(seed)
    y = r.standard_normal(512)
    est = y + 0.3 * r.standard_normal(512)
    assert si_sdr(c * est, y) == pytest.approx(si_sdr(est, y), abs=1e-9)


def test_mel_error_properties(rng):
    y = rng.standard_normal(44100)
    assert mel_stft_error(y, y) == 0.0
    hi = mel_stft_error(y + 0.1 * rng.standard_normal(y.size), y)
    lo = mel_stft_error(y + 0.01 * rng.standard_normal(y.size), y)
    assert hi > lo > 0
    with pytest.raises(ValueError):
        mel_stft_error(y, y[:-1])


def test_log_term_symmetric(rng):
    a, b = np.abs(rng.standard_normal((5, 9))), np.abs(rng.standard_normal((5, 9)))
    assert log_magnitude_l1(a, b) == log_magnitude_l1(b, a)


def _dataset(rng, n=3):
    out = []
    for i in range(n):
        y = np.sin(np.arange(8192) * 0.05 * (i + 1))
        w = 0.05 * rng.standard_normal(8192)
        out.append(MixtureExample(AudioBuffer(y, 44100), AudioBuffer(w, 44100), AudioBuffer(y + w, 44100), np.zeros(27), -20.0, i))
    return out


def test_identity_report(rng, tmp_path):
    data = _dataset(rng)
    rep = evaluate_dataset(lambda ex: ex.noisy, data)
    assert len(rep) == len(data)
    np.testing.assert_array_equal(rep.column("si_sdr_in"), rep.column("si_sdr_out"))
    np.testing.assert_array_equal(rep.column("mel_stft_in"), rep.column("mel_stft_out"))
    rep.write_csv(tmp_path / "r.csv")
    rep.write_json(tmp_path / "r.json")
    lines = (tmp_path / "r.csv").read_text().splitlines()
    assert lines[0] == "example_id,si_sdr_in,si_sdr_out,mel_stft_in,mel_stft_out" and len(lines) == 4
    agg = json.loads((tmp_path / "r.json").read_text())
    assert agg["count"] == 3 and set(agg["si_sdr_in"]) == {"mean", "median"}


def test_report_aggregates():
    rep = EvalReport([{"example_id": 0, "si_sdr_in": 1, "si_sdr_out": 3, "mel_stft_in": 2, "mel_stft_out": 1}])
    assert rep.aggregates()["si_sdr_out"]["mean"] == 3.0
