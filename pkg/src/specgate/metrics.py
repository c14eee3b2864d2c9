"""Objective metrics: SI-SDR, mel STFT error and dataset reports."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from specgate.spectral import StftConfig, make_mel_filterbank, stft

SI_SDR_CAP = 100.0
LOG_EPS = 1e-7


def si_sdr(estimate, reference) -> float:
    """Scale-invariant SDR in dB, capped at +100 dB."""
    est = np.asarray(estimate, dtype=np.float64).reshape(-1)
    ref = np.asarray(reference, dtype=np.float64).reshape(-1)
    if est.shape != ref.shape:
        raise ValueError("estimate and reference lengths differ")
    ref_energy = np.dot(ref, ref)
    if ref_energy == 0:
        raise ValueError("reference signal is all zeros")
    target = (np.dot(est, ref) / ref_energy) * ref
    err = np.dot(target - est, target - est)
    t = np.dot(target, target)
    if err <= t * 10.0 ** (-SI_SDR_CAP / 10.0):
        return SI_SDR_CAP
    return float(10.0 * np.log10(t / err))


def spectral_convergence(est_mag: np.ndarray, ref_mag: np.ndarray) -> float:
    num = np.linalg.norm(est_mag - ref_mag)
    den = np.linalg.norm(ref_mag)
    if den == 0:
        return 0.0 if num == 0 else float("inf")
    return float(num / den)


def log_magnitude_l1(est_mag: np.ndarray, ref_mag: np.ndarray, eps: float = LOG_EPS) -> float:
    return float(np.mean(np.abs(np.log(est_mag + eps) - np.log(ref_mag + eps))))


@lru_cache(maxsize=8)
def _mel(n_mels, fft_size, sample_rate):
    return make_mel_filterbank(n_mels, fft_size, sample_rate)


def mel_stft_error(
    estimate, reference, sample_rate: int = 44100, fft_size: int = 2048, hop: int = 512, n_mels: int = 128
) -> float:
    """Spectral convergence plus log-magnitude L1 on mel-projected magnitudes."""
    est = np.atleast_2d(np.asarray(estimate, dtype=np.float64))
    ref = np.atleast_2d(np.asarray(reference, dtype=np.float64))
    if est.shape != ref.shape:
        raise ValueError("estimate and reference lengths differ")
    cfg = StftConfig(fft_size, hop)
    fb = _mel(n_mels, fft_size, float(sample_rate))
    em = stft(est, cfg).magnitude() @ fb
    rm = stft(ref, cfg).magnitude() @ fb
    return spectral_convergence(em, rm) + log_magnitude_l1(em, rm)


@dataclass
class EvalReport:
    rows: list = field(default_factory=list)

    COLUMNS = ("si_sdr_in", "si_sdr_out", "mel_stft_in", "mel_stft_out")

    def __len__(self):
        return len(self.rows)

    def column(self, name: str) -> np.ndarray:
        return np.array([r[name] for r in self.rows], dtype=np.float64)

    def aggregates(self) -> dict:
        out = {"count": len(self.rows)}
        for c in self.COLUMNS:
            v = self.column(c)
            out[c] = {"mean": float(v.mean()), "median": float(np.median(v))}
        return out

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(("example_id",) + self.COLUMNS)
            for r in self.rows:
                w.writerow([r["example_id"]] + [f"{r[c]:.6f}" for c in self.COLUMNS])

    def write_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.aggregates(), fh, indent=2)


def evaluate_dataset(denoise_fn, dataset) -> EvalReport:
    """Score ``denoise_fn(example) -> AudioBuffer`` over mixture examples."""
    report = EvalReport()
    for i, ex in enumerate(dataset):
        out = denoise_fn(ex)
        y, x = ex.clean.samples, ex.noisy.samples
        sr = ex.clean.sample_rate
        report.rows.append(
            {
                "example_id": getattr(ex, "seed", i) if getattr(ex, "seed", None) is not None else i,
                "si_sdr_in": si_sdr(x, y),
                "si_sdr_out": si_sdr(out.samples, y),
                "mel_stft_in": mel_stft_error(x, y, sr),
                "mel_stft_out": mel_stft_error(out.samples, y, sr),
            }
        )
    return report
