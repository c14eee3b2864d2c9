"""Per-band expander gain computer and attack/release ballistics.

Gains are in dB and <= 0. The smoothing runs at the STFT frame rate
``fs / H``, so time constants are converted with the hop size.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

LN9 = math.log(9.0)


@dataclass(frozen=True)
class StaticCurve:
    thresholds: np.ndarray | float
    ratio: float = 2.0
    knee: float = 0.0
    mode: str = "expander"

    def __post_init__(self):
        if not 1.0 <= self.ratio <= 20.0:
            raise ValueError(f"ratio {self.ratio} outside [1, 20]")
        if not 0.0 <= self.knee <= 48.0:
            raise ValueError(f"knee {self.knee} outside [0, 48] dB")
        if not np.all(np.isfinite(self.thresholds)):
            raise ValueError("thresholds must be finite")
        if self.mode not in ("expander", "compressor"):
            raise ValueError(f"unknown curve mode {self.mode!r}")


def static_gain(level_db, thresholds, ratio, knee, mode: str = "expander"):
    """Gain (dB, <= 0) of the soft-knee static curve; arguments broadcast.

    In ``expander`` mode levels below ``T - W/2`` are pushed down by ``ratio``;
    ``compressor`` mode reduces levels above ``T + W/2`` by ``1/ratio``.
    A zero knee gives the hard two-piece curve.
    """
    x = np.asarray(level_db, dtype=np.float64)
    t = np.asarray(thresholds, dtype=np.float64)
    r = np.asarray(ratio, dtype=np.float64)
    w = np.asarray(knee, dtype=np.float64)
    half = w / 2.0
    safe_w = np.where(w > 0, w, 1.0)
    in_knee = (np.abs(x - t) <= half) & (w > 0)

    # the knee branch may overflow for tiny W where it is masked out anyway
    with np.errstate(over="ignore", invalid="ignore"):
        if mode == "expander":
            outer = np.where(x < t - half, t + (x - t) * r, x)
            knee_out = x + (1.0 - r) * (x - t - half) ** 2 / (2.0 * safe_w)
        elif mode == "compressor":
            outer = np.where(x > t + half, t + (x - t) / r, x)
            knee_out = x + (1.0 / r - 1.0) * (x - t + half) ** 2 / (2.0 * safe_w)
        else:
            raise ValueError(f"unknown curve mode {mode!r}")
    out = np.where(in_knee, knee_out, outer)
    return np.minimum(out - x, 0.0)


def curve_gain(level_db, curve: StaticCurve):
    return static_gain(level_db, curve.thresholds, curve.ratio, curve.knee, curve.mode)


def time_constant(seconds, sample_rate: float, hop: int):
    """One-pole coefficient reaching 8/9 of a step after ``seconds``."""
    c = np.asarray(seconds, dtype=np.float64)
    if np.any(c <= 0):
        raise ValueError("time constants must be positive")
    out = np.exp(-LN9 / (sample_rate / hop * c))
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class BallisticsConfig:
    attack: float  # seconds
    release: float  # seconds
    sample_rate: float = 44100.0
    hop: int = 256

    def __post_init__(self):
        if self.attack <= 0 or self.release <= 0:
            raise ValueError("attack and release must be positive")

    @property
    def alpha_attack(self) -> float:
        return time_constant(self.attack, self.sample_rate, self.hop)

    @property
    def alpha_release(self) -> float:
        return time_constant(self.release, self.sample_rate, self.hop)

    @property
    def frame_rate(self) -> float:
        return self.sample_rate / self.hop


def _per_frame(alpha, n_frames):
    a = np.asarray(alpha, dtype=np.float64)
    return np.broadcast_to(a, (n_frames,)) if a.ndim == 0 else a


def smooth_gain_recursive(gain_db: np.ndarray, alpha_attack, alpha_release, state=None):
    """Branching one-pole peak detector over axis 0 of ``gain_db``.

    ``alpha_attack``/``alpha_release`` are scalars or per-frame arrays whose
    leading axis matches the frames. Returns ``(smoothed, final_state)``.
    """
    g = np.asarray(gain_db, dtype=np.float64)
    n = g.shape[0]
    aa = _per_frame(alpha_attack, n)
    ar = _per_frame(alpha_release, n)
    s = np.zeros(g.shape[1:]) if state is None else np.array(state, dtype=np.float64)
    out = np.empty_like(g)
    for t in range(n):
        x = g[t]
        a = np.where(x <= s, aa[t], ar[t])
        s = a * s + (1.0 - a) * x
        out[t] = s
    return out, s


def smooth_gain_true(gain_db, ballistics: BallisticsConfig, state=None):
    """Recursive attack/release ballistics for a fixed configuration."""
    return smooth_gain_recursive(gain_db, ballistics.alpha_attack, ballistics.alpha_release, state)


def one_pole(x: np.ndarray, alpha: float, state=None) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    s = np.zeros(x.shape[1:]) if state is None else np.asarray(state, dtype=np.float64)
    out = np.empty_like(x)
    for t in range(x.shape[0]):
        s = alpha * s + (1.0 - alpha) * x[t]
        out[t] = s
    return out


def smooth_gain_approx(gain_db, ballistics: BallisticsConfig) -> np.ndarray:
    """Recursion-free approximation: the lower of two unconditional one-pole
    filters running at the attack and release rates."""
    g = np.asarray(gain_db, dtype=np.float64)
    attack = one_pole(g, ballistics.alpha_attack)
    release = one_pole(g, ballistics.alpha_release)
    return np.minimum(attack, release)


def gated_burst(
    frame_rate: float,
    burst_s: float = 0.4,
    gap_s: float = 0.4,
    n_bursts: int = 4,
    burst_db: float = -20.0,
    floor_db: float = -80.0,
) -> np.ndarray:
    """Frame-level test signal: ``n_bursts`` bursts at ``burst_db`` separated by gaps."""
    nb = max(1, int(round(burst_s * frame_rate)))
    ng = max(1, int(round(gap_s * frame_rate)))
    period = np.concatenate([np.full(ng, floor_db), np.full(nb, burst_db)])
    return np.concatenate([np.tile(period, n_bursts), np.full(ng, floor_db)])


def compare_ballistics(
    attack_ms: float,
    release_ms_list,
    test_signal,
    curve: StaticCurve | None = None,
    sample_rate: float = 44100.0,
    hop: int = 256,
) -> list[tuple[float, float, float]]:
    """Deviation of the approximate ballistics from the recursive ones.

    ``test_signal`` is a frame-level level sequence in dB; it is passed
    through ``curve`` (an expander by default) to get the gain frames fed to
    both smoothers. Returns rows ``(release_ms, max_abs_dev_db, rms_dev_db)``
    sorted by release time.
    """
    releases = sorted(float(r) for r in release_ms_list)
    if not releases:
        raise ValueError("release list is empty")
    level = np.asarray(test_signal, dtype=np.float64)
    if level.size == 0:
        raise ValueError("test signal is empty")
    if curve is None:
        curve = StaticCurve(thresholds=-40.0, ratio=2.0, knee=0.0)
    gain = curve_gain(level, curve)

    rows = []
    for release in releases:
        cfg = BallisticsConfig(attack_ms / 1000.0, release / 1000.0, sample_rate, hop)
        true, _ = smooth_gain_true(gain, cfg)
        approx = smooth_gain_approx(gain, cfg)
        dev = approx - true
        rows.append((release, float(np.max(np.abs(dev))), float(np.sqrt(np.mean(dev**2)))))
    return rows


def write_comparison_csv(rows, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["release_ms", "max_abs_dev_db", "rms_dev_db"])
        for r, mx, rms in rows:
            w.writerow([f"{r:g}", f"{mx:.6f}", f"{rms:.6f}"])
