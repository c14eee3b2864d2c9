"""STFT analysis/synthesis (Hann WOLA) and mel filterbanks."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.fft
import scipy.signal


@dataclass(frozen=True)
class StftConfig:
    fft_size: int = 1024
    hop: int = 256
    window: str = "hann"

    def __post_init__(self):
        if self.fft_size <= 0 or self.hop <= 0:
            raise ValueError("fft_size and hop must be positive")
        if self.fft_size % self.hop != 0:
            raise ValueError(f"hop {self.hop} must divide fft_size {self.fft_size}")
        if not is_cola(self.window_array(), self.hop):
            raise ValueError(f"{self.window} window with hop {self.hop} is not COLA")

    @property
    def n_bins(self) -> int:
        return self.fft_size // 2 + 1

    @property
    def pad(self) -> int:
        """Zero padding added before the first sample (also the stream latency)."""
        return self.fft_size - self.hop

    def window_array(self) -> np.ndarray:
        return _window(self.window, self.fft_size)

    def wola_norm(self) -> np.ndarray:
        """Per-sample synthesis normalization over one frame (periodic in the hop)."""
        return np.tile(overlap_sum(self.window_array() ** 2, self.hop), self.fft_size // self.hop)

    def tail_pad(self, n_samples: int) -> int:
        """Zero padding after the last sample; rounds the length up to a hop multiple."""
        return self.pad + (-n_samples) % self.hop

    def n_frames(self, n_samples: int) -> int:
        padded = n_samples + self.pad + self.tail_pad(n_samples)
        return 1 + (padded - self.fft_size) // self.hop

    def to_dict(self) -> dict:
        return {"fft_size": self.fft_size, "hop": self.hop, "window": self.window}


_WINDOWS: dict = {}


def _window(name: str, n: int) -> np.ndarray:
    key = (name, n)
    if key not in _WINDOWS:
        # periodic (DFT-even) windows are the COLA-exact ones
        w = scipy.signal.get_window(name, n, fftbins=True).astype(np.float64)
        w.setflags(write=False)
        _WINDOWS[key] = w
    return _WINDOWS[key]


def overlap_sum(w: np.ndarray, hop: int) -> np.ndarray:
    """Sum of ``w`` shifted by every multiple of ``hop``, over one hop period."""
    n = len(w)
    return w.reshape(n // hop, hop).sum(axis=0) if n % hop == 0 else np.array([np.nan])


def is_cola(w: np.ndarray, hop: int, rtol: float = 1e-6) -> bool:
    """Check that shifted copies of ``w`` sum to a constant."""
    s = overlap_sum(np.asarray(w), hop)
    if not np.all(np.isfinite(s)) or s.mean() <= 0:
        return False
    return bool(np.max(np.abs(s - s.mean())) <= rtol * s.mean())


@dataclass
class Spectrogram:
    """Complex STFT values of shape ``(..., frames, bins)``."""

    values: np.ndarray
    config: StftConfig
    n_samples: int = field(default=0)

    @property
    def n_frames(self) -> int:
        return self.values.shape[-2]

    @property
    def n_bins(self) -> int:
        return self.values.shape[-1]

    def magnitude(self) -> np.ndarray:
        return np.abs(self.values)


def frame_signal(x: np.ndarray, config: StftConfig) -> np.ndarray:
    """Zero-pad and slice ``x`` (shape ``(..., n)``) into frames ``(..., S, N)``."""
    n = x.shape[-1]
    pad = [(0, 0)] * (x.ndim - 1) + [(config.pad, config.tail_pad(n))]
    padded = np.pad(x, pad)
    frames = np.lib.stride_tricks.sliding_window_view(padded, config.fft_size, axis=-1)
    return frames[..., :: config.hop, :]


def analyze_frames(frames: np.ndarray, config: StftConfig) -> np.ndarray:
    return scipy.fft.rfft(frames * config.window_array(), axis=-1)


def stft(x, config: StftConfig | None = None) -> Spectrogram:
    """Short-time Fourier transform of a channel (or stacked channels).

    The signal is padded with ``N - H`` zeros at the front and at least
    ``N - H`` at the back so every sample is covered by ``N / H`` frames.
    """
    config = config or StftConfig()
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] < config.fft_size:
        raise ValueError(f"input of {x.shape[-1]} samples is shorter than fft_size {config.fft_size}")
    values = analyze_frames(frame_signal(x, config), config)
    return Spectrogram(values, config, x.shape[-1])


def overlap_add(frames: np.ndarray, hop: int) -> np.ndarray:
    """Overlap-add frames ``(..., S, N)`` with the given hop."""
    s, n = frames.shape[-2:]
    ratio = n // hop
    out = np.zeros(frames.shape[:-2] + ((s - 1) * hop + n,))
    for k in range(ratio):
        seg = frames[..., k * hop : (k + 1) * hop]
        out[..., k * hop : k * hop + s * hop] += seg.reshape(frames.shape[:-2] + (s * hop,))
    return out


def synthesize_frames(values: np.ndarray, config: StftConfig) -> np.ndarray:
    frames = scipy.fft.irfft(values, n=config.fft_size, axis=-1)
    return frames * (config.window_array() / config.wola_norm())


def istft(spec: Spectrogram, n_samples: int | None = None) -> np.ndarray:
    """Inverse STFT by weighted overlap-add; strips the analysis padding."""
    config = spec.config
    n = spec.n_samples if n_samples is None else n_samples
    if n == 0:
        n = (spec.n_frames - 1) * config.hop + config.fft_size - 2 * config.pad
    out = overlap_add(synthesize_frames(spec.values, config), config.hop)
    return out[..., config.pad : config.pad + n]


# --- mel ---------------------------------------------------------------------


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def make_mel_filterbank(n_mels: int, fft_size: int, sample_rate: float) -> np.ndarray:
    """Triangular HTK-mel filterbank of shape ``(fft_size // 2 + 1, n_mels)``."""
    n_bins = fft_size // 2 + 1
    if n_mels < 1:
        raise ValueError("n_mels must be >= 1")
    if n_mels > n_bins:
        raise ValueError(f"n_mels {n_mels} exceeds bin count {n_bins}")
    freqs = np.arange(n_bins) * sample_rate / fft_size
    edges = mel_to_hz(np.linspace(0.0, hz_to_mel(sample_rate / 2), n_mels + 2))
    lo, mid, hi = edges[:-2], edges[1:-1], edges[2:]
    f = freqs[:, None]
    up = (f - lo) / (mid - lo)
    down = (hi - f) / (hi - mid)
    fb = np.maximum(0.0, np.minimum(up, down))
    # filters narrower than a bin: fall back to the nearest bin
    empty = fb.sum(axis=0) <= 0
    for m in np.flatnonzero(empty):
        fb[int(np.argmin(np.abs(freqs - mid[m]))), m] = 1.0
    return fb
