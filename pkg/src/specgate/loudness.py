"""Gated integrated loudness (BS.1770 style K-weighting and block gating)."""

from __future__ import annotations

import math

import numpy as np
import scipy.signal

from specgate.audio import AudioBuffer

ABSOLUTE_GATE = -70.0
RELATIVE_GATE = -10.0
BLOCK_S = 0.4
STEP_S = 0.1


def k_weighting(sample_rate: float):
    """Second-order sections (high shelf, then high pass) for ``sample_rate``.

    Coefficients come from the analog prototypes behind the 48 kHz table,
    so they reproduce it at 48 kHz and remain valid at other rates.
    """
    # high shelf
    g, q, fc = 3.999843853973347, 0.7071752369554196, 1681.974450955533
    k = math.tan(math.pi * fc / sample_rate)
    vh = 10.0 ** (g / 20.0)
    vb = vh**0.4996667741545416
    a0 = 1.0 + k / q + k * k
    shelf = [
        (vh + vb * k / q + k * k) / a0,
        2.0 * (k * k - vh) / a0,
        (vh - vb * k / q + k * k) / a0,
        1.0,
        2.0 * (k * k - 1.0) / a0,
        (1.0 - k / q + k * k) / a0,
    ]
    # high pass
    q, fc = 0.5003270373238773, 38.13547087602444
    k = math.tan(math.pi * fc / sample_rate)
    a0 = 1.0 + k / q + k * k
    hp = [1.0, -2.0, 1.0, 1.0, 2.0 * (k * k - 1.0) / a0, (1.0 - k / q + k * k) / a0]
    return np.array([shelf, hp])


def block_loudness(buffer: AudioBuffer) -> np.ndarray:
    """Loudness (LUFS) of 400 ms blocks with 75 % overlap."""
    fs = buffer.sample_rate
    n_block = int(round(BLOCK_S * fs))
    n_step = int(round(STEP_S * fs))
    if buffer.n_samples < n_block:
        raise ValueError(f"loudness needs at least {BLOCK_S * 1000:.0f} ms of audio")
    y = scipy.signal.sosfilt(k_weighting(fs), buffer.samples, axis=-1)
    csum = np.concatenate([np.zeros((y.shape[0], 1)), np.cumsum(y * y, axis=-1)], axis=-1)
    starts = np.arange(0, buffer.n_samples - n_block + 1, n_step)
    z = (csum[:, starts + n_block] - csum[:, starts]) / n_block
    power = z.sum(axis=0)  # unit channel weights for mono/stereo
    with np.errstate(divide="ignore"):
        return -0.691 + 10.0 * np.log10(power)


def integrated_loudness(buffer: AudioBuffer) -> float:
    """Gated integrated loudness in LUFS; ``-inf`` when every block is gated."""
    lk = block_loudness(buffer)
    power = 10.0 ** ((lk + 0.691) / 10.0)
    keep = lk > ABSOLUTE_GATE
    if not np.any(keep):
        return -math.inf
    rel = -0.691 + 10.0 * math.log10(power[keep].mean()) + RELATIVE_GATE
    keep &= lk > rel
    return float(-0.691 + 10.0 * math.log10(power[keep].mean()))


def is_measurable(value: float) -> bool:
    return math.isfinite(value)
