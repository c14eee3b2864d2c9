"""Noise profiles: per-band noise floors measured from a recording."""

from __future__ import annotations

import json
from functools import lru_cache
from pathlib import Path

import numpy as np

from specgate.audio import AudioBuffer
from specgate.datagen import ground_truth_noise_spectrum, valid_frames
from specgate.filterbank import ENERGY_EPS, BarkFilterbank, band_power
from specgate.spectral import StftConfig, analyze_frames

BLIND_PERCENTILE = 10.0


def region_noise_profile(audio: AudioBuffer, start: int, stop: int, fb: BarkFilterbank, config: StftConfig | None = None) -> np.ndarray:
    """Mean band energy (dB) over frames of a noise-only region ``[start, stop)`` in samples."""
    config = config or StftConfig()
    if not 0 <= start < stop <= audio.n_samples:
        raise ValueError(f"region {start}:{stop} outside 0:{audio.n_samples} samples")
    if stop - start < config.fft_size:
        raise ValueError(f"region shorter than fft_size {config.fft_size}")
    return ground_truth_noise_spectrum(AudioBuffer(audio.samples[:, start:stop], audio.sample_rate), fb, config)


def _frame_band_db(samples: np.ndarray, fb: BarkFilterbank, config: StftConfig) -> np.ndarray:
    power = band_power(np.abs(analyze_frames(valid_frames(samples, config), config)), fb).mean(axis=0)
    return 10.0 * np.log10(power + ENERGY_EPS)


@lru_cache(maxsize=8)
def _percentile_bias(fb: BarkFilterbank, config: StftConfig, percentile: float) -> np.ndarray:
    """Gap between the mean and the low percentile of frame energies (dB) for
    Gaussian noise; the gap depends on each band's width, not the noise color."""
    noise = np.random.default_rng(0).standard_normal((1, 2**18))
    e = _frame_band_db(noise, fb, config)
    return e.mean(axis=0) - np.percentile(e, percentile, axis=0)


def blind_noise_profile(audio: AudioBuffer, fb: BarkFilterbank, config: StftConfig | None = None, percentile: float = BLIND_PERCENTILE) -> np.ndarray:
    """Per-band low percentile of the frame energies, debiased so that on pure
    stationary noise it estimates the same mean level as a noise-only region."""
    config = config or StftConfig()
    if audio.n_samples < config.fft_size:
        raise ValueError(f"audio shorter than fft_size {config.fft_size}")
    e = _frame_band_db(audio.samples, fb, config)
    return np.percentile(e, percentile, axis=0) + _percentile_bias(fb, config, float(percentile))


def save_profile(thresholds, path, sample_rate: int, method: str) -> None:
    doc = {"thresholds_db": [float(t) for t in thresholds], "n_bands": len(thresholds), "sample_rate": sample_rate, "method": method}
    Path(path).write_text(json.dumps(doc, indent=2) + "\n")


def load_profile(path) -> np.ndarray:
    d = json.loads(Path(path).read_text())
    if "thresholds_db" not in d:
        raise ValueError(f"{path}: missing field 'thresholds_db'")
    return np.asarray(d["thresholds_db"], dtype=np.float64)
