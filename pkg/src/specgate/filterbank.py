"""Bark-scale analysis/synthesis filterbanks."""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

ENERGY_EPS = 1e-10


def hz_to_bark(f):
    """Traunmüller's bark approximation."""
    f = np.asarray(f, dtype=np.float64)
    return 26.81 * f / (1960.0 + f) - 0.53


def bark_to_hz(z):
    z = np.asarray(z, dtype=np.float64) + 0.53
    return 1960.0 * z / (26.81 - z)


@dataclass(frozen=True, eq=False)
class BarkFilterbank:
    """Triangular bands with rows of ``analysis`` summing to one.

    ``analysis`` has shape ``(F, B)``; ``band_edges`` holds ``B + 2`` values in
    Hz, the inner ``B`` of which are the band centers.
    """

    analysis: np.ndarray
    band_edges: np.ndarray
    sample_rate: float
    fft_size: int

    @property
    def n_bands(self) -> int:
        return self.analysis.shape[1]

    @property
    def n_bins(self) -> int:
        return self.analysis.shape[0]

    @property
    def centers(self) -> np.ndarray:
        return self.band_edges[1:-1]

    @property
    def synthesis(self) -> np.ndarray:
        """``(B, F)`` projection from band gains back to bins."""
        return self.analysis.T

    def to_dict(self) -> dict:
        return {"n_bands": self.n_bands, "sample_rate": self.sample_rate, "fft_size": self.fft_size}

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["band", "low_hz", "center_hz", "high_hz"])
            e = self.band_edges
            for b in range(self.n_bands):
                w.writerow([b, f"{e[b]:.3f}", f"{e[b + 1]:.3f}", f"{e[b + 2]:.3f}"])


def design_bark_filterbank(n_bands: int = 27, sample_rate: float = 44100, fft_size: int = 1024) -> BarkFilterbank:
    """Triangular filters centered uniformly on the bark scale over [0, fs/2].

    Adjacent triangles peak at each other's centers, so they cross-fade and
    sum to one; the first and last bands are held flat out to DC and Nyquist.
    """
    n_bins = fft_size // 2 + 1
    if n_bands < 2:
        raise ValueError("need at least 2 bands")
    if n_bands > n_bins:
        raise ValueError(f"{n_bands} bands exceed {n_bins} frequency bins")

    nyquist = sample_rate / 2.0
    z = np.linspace(hz_to_bark(0.0), hz_to_bark(nyquist), n_bands + 2)
    edges = bark_to_hz(z)
    edges[0], edges[-1] = 0.0, nyquist
    centers = edges[1:-1]

    freqs = np.arange(n_bins) * sample_rate / fft_size
    H = np.zeros((n_bins, n_bands))
    for b in range(n_bands):
        c = centers[b]
        rise = np.ones(n_bins) if b == 0 else (freqs - centers[b - 1]) / (c - centers[b - 1])
        fall = np.ones(n_bins) if b == n_bands - 1 else (centers[b + 1] - freqs) / (centers[b + 1] - c)
        H[:, b] = np.clip(np.minimum(rise, fall), 0.0, 1.0)
    H /= H.sum(axis=1, keepdims=True)
    H.setflags(write=False)
    return BarkFilterbank(H, edges, float(sample_rate), int(fft_size))


def band_power(mag: np.ndarray, fb: BarkFilterbank) -> np.ndarray:
    """Linear band power ``|X|^2 @ H_A`` for magnitudes of shape ``(..., F)``."""
    if mag.shape[-1] != fb.n_bins:
        raise ValueError(f"spectrogram has {mag.shape[-1]} bins, filterbank expects {fb.n_bins}")
    return (mag * mag) @ fb.analysis


def band_energies(mag: np.ndarray, fb: BarkFilterbank) -> np.ndarray:
    """Band energies in dB, shape ``(..., B)``; silent bands sit at -100 dB."""
    return 10.0 * np.log10(band_power(mag, fb) + ENERGY_EPS)


def project_gains(gains: np.ndarray, fb: BarkFilterbank) -> np.ndarray:
    """Map linear band gains ``(..., B)`` to a per-bin mask ``(..., F)``."""
    gains = np.asarray(gains, dtype=np.float64)
    if gains.shape[-1] != fb.n_bands:
        raise ValueError(f"gains have {gains.shape[-1]} bands, filterbank has {fb.n_bands}")
    if np.any(gains < 0):
        raise ValueError("band gains must be non-negative")
    return gains @ fb.synthesis
