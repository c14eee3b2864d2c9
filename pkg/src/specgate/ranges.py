"""Legal ranges of the denoiser controls and the (de)normalization maps."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class ParamRange:
    name: str
    min: float
    max: float
    scale: str = "linear"
    unit: str = ""

    def __post_init__(self):
        if not self.min < self.max:
            raise ValueError(f"{self.name}: min must be < max")
        if self.scale not in ("linear", "log"):
            raise ValueError(f"{self.name}: unknown scale {self.scale!r}")
        if self.scale == "log" and self.min <= 0:
            raise ValueError(f"{self.name}: log scale needs a positive minimum")

    def denormalize(self, raw):
        """Map ``raw`` in [0, 1] onto the range."""
        raw = np.asarray(raw, dtype=np.float64)
        if self.scale == "log":
            lo, hi = math.log(self.min), math.log(self.max)
            out = np.exp(lo + raw * (hi - lo))
        else:
            out = self.min + raw * (self.max - self.min)
        # exp/log round-off must not leave the range
        out = np.clip(out, self.min, self.max)
        return float(out) if out.ndim == 0 else out

    def normalize(self, value):
        v = np.asarray(value, dtype=np.float64)
        if self.scale == "log":
            lo, hi = math.log(self.min), math.log(self.max)
            out = (np.log(v) - lo) / (hi - lo)
        else:
            out = (v - self.min) / (self.max - self.min)
        return float(out) if out.ndim == 0 else out

    @property
    def midpoint(self) -> float:
        return self.denormalize(0.5)

    def contains(self, value, tol: float = 1e-9) -> bool:
        v = np.asarray(value, dtype=np.float64)
        return bool(np.all(np.isfinite(v)) and np.all(v >= self.min - tol) and np.all(v <= self.max + tol))

    def describe(self) -> str:
        return f"{self.name} {self.min:g}..{self.max:g}{' ' + self.unit if self.unit else ''}"

    def check(self, value) -> None:
        if not self.contains(value):
            raise ValueError(f"{self.describe()} (got {np.asarray(value).round(4).tolist()})")

    def to_dict(self) -> dict:
        return {"min": self.min, "max": self.max, "scale": self.scale, "unit": self.unit}


@dataclass(frozen=True)
class ParamRanges:
    threshold: ParamRange = ParamRange("threshold", -80.0, 24.0, "linear", "dB")
    threshold_offset: ParamRange = ParamRange("threshold offset", -12.0, 32.0, "linear", "dB")
    attack_ms: ParamRange = ParamRange("attack", 10.0, 1000.0, "log", "ms")
    release_ms: ParamRange = ParamRange("release", 50.0, 250.0, "log", "ms")
    knee_db: ParamRange = ParamRange("knee", 0.0, 24.0, "linear", "dB")
    ratio: ParamRange = ParamRange("ratio", 2.0, 10.0, "linear", "")
    makeup_db: ParamRange = ParamRange("makeup gain", -12.0, 12.0, "linear", "dB")

    # order of the parameter head's outputs
    HEAD_ORDER = ("attack_ms", "release_ms", "knee_db", "ratio", "makeup_db", "threshold_offset")

    def head_ranges(self) -> list[ParamRange]:
        return [getattr(self, k) for k in self.HEAD_ORDER]

    def to_dict(self) -> dict:
        return {k: getattr(self, k).to_dict() for k in ("threshold",) + self.HEAD_ORDER}

    @classmethod
    def from_dict(cls, d: dict) -> "ParamRanges":
        base = cls()
        kw = {}
        for key, spec in d.items():
            ref = getattr(base, key)
            kw[key] = ParamRange(ref.name, float(spec["min"]), float(spec["max"]), spec.get("scale", "linear"), spec.get("unit", ref.unit))
        return cls(**kw)


DEFAULT_RANGES = ParamRanges()
