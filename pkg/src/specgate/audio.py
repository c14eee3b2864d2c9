"""Sample buffers, decibel conversions and RIFF/WAV file I/O."""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

DB_FLOOR = -120.0

_FORMAT_PCM = 1
_FORMAT_FLOAT = 3
_FORMAT_EXTENSIBLE = 0xFFFE

ENCODINGS = ("pcm16", "pcm24", "float32")


class WavError(ValueError):
    """Raised for unsupported or malformed WAV files."""


@dataclass
class AudioBuffer:
    """Planar multi-channel audio.

    ``samples`` has shape ``(channels, n_samples)``; channels are stored
    separately and only interleaved when written to disk.
    """

    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float64)
        if samples.ndim == 1:
            samples = samples[None, :]
        if samples.ndim != 2 or samples.shape[0] not in (1, 2):
            raise ValueError(f"expected 1 or 2 channels, got shape {samples.shape}")
        if self.sample_rate <= 0:
            raise ValueError("sample_rate must be positive")
        if not np.all(np.isfinite(samples)):
            raise ValueError("samples must be finite")
        self.samples = samples
        self.sample_rate = int(self.sample_rate)

    @property
    def channels(self) -> int:
        return self.samples.shape[0]

    @property
    def n_samples(self) -> int:
        return self.samples.shape[1]

    @property
    def duration(self) -> float:
        return self.n_samples / self.sample_rate

    def __len__(self):
        return self.n_samples

    def copy(self) -> "AudioBuffer":
        return AudioBuffer(self.samples.copy(), self.sample_rate)

    @classmethod
    def silence(cls, n_samples: int, sample_rate: int, channels: int = 1) -> "AudioBuffer":
        return cls(np.zeros((channels, n_samples)), sample_rate)


def db_to_linear(x_db):
    """Amplitude ratio for a level in dB (20*log10 convention)."""
    return 10.0 ** (np.asarray(x_db, dtype=np.float64) / 20.0)


def linear_to_db(x_lin, floor_db: float = DB_FLOOR):
    """Level in dB of an amplitude ratio, clamped to ``floor_db``."""
    x = np.asarray(x_lin, dtype=np.float64)
    if np.any(x < 0):
        raise ValueError("linear_to_db expects non-negative input")
    floor_lin = 10.0 ** (floor_db / 20.0)
    out = 20.0 * np.log10(np.maximum(x, floor_lin))
    return float(out) if out.ndim == 0 else out


def power_to_db(x_pow, floor_db: float = DB_FLOOR):
    x = np.asarray(x_pow, dtype=np.float64)
    out = 10.0 * np.log10(np.maximum(x, 10.0 ** (floor_db / 10.0)))
    return float(out) if out.ndim == 0 else out


# --- WAV I/O ---------------------------------------------------------------


def _iter_chunks(data: bytes):
    pos = 12
    while pos + 8 <= len(data):
        cid, size = struct.unpack("<4sI", data[pos : pos + 8])
        body = data[pos + 8 : pos + 8 + size]
        yield cid, size, body
        pos += 8 + size + (size & 1)


def read_wav(path) -> AudioBuffer:
    """Read a PCM16, PCM24 or IEEE float32 WAV file with 1 or 2 channels.

    Integer samples are normalized by ``2**(bits-1)`` so full-scale positive
    PCM16 maps to 32767/32768.
    """
    data = Path(path).read_bytes()
    if len(data) < 12 or data[:4] != b"RIFF" or data[8:12] != b"WAVE":
        raise WavError(f"{path}: not a RIFF/WAVE file")

    fmt = None
    pcm = None
    for cid, size, body in _iter_chunks(data):
        if cid == b"fmt ":
            if len(body) < 16:
                raise WavError(f"{path}: truncated fmt chunk")
            fmt = struct.unpack("<HHIIHH", body[:16])
            if fmt[0] == _FORMAT_EXTENSIBLE and len(body) >= 26:
                sub = struct.unpack("<H", body[24:26])[0]
                fmt = (sub,) + fmt[1:]
        elif cid == b"data":
            if len(body) < size:
                raise WavError(f"{path}: truncated data chunk ({len(body)} of {size} bytes)")
            pcm = body
    if fmt is None or pcm is None:
        raise WavError(f"{path}: missing fmt or data chunk")

    tag, channels, rate, _, block_align, bits = fmt
    if channels < 1 or channels > 2:
        raise WavError(f"{path}: {channels} channels not supported (max 2)")
    n_frames = len(pcm) // block_align
    pcm = pcm[: n_frames * block_align]

    if tag == _FORMAT_PCM and bits == 16:
        x = np.frombuffer(pcm, dtype="<i2").astype(np.float64) / 32768.0
    elif tag == _FORMAT_PCM and bits == 24:
        raw = np.frombuffer(pcm, dtype=np.uint8).reshape(-1, 3).astype(np.int32)
        ints = raw[:, 0] | (raw[:, 1] << 8) | (raw[:, 2] << 16)
        ints = np.where(ints >= 1 << 23, ints - (1 << 24), ints)
        x = ints.astype(np.float64) / float(1 << 23)
    elif tag == _FORMAT_FLOAT and bits == 32:
        x = np.frombuffer(pcm, dtype="<f4").astype(np.float64)
    else:
        raise WavError(f"{path}: unsupported encoding (format tag {tag}, {bits} bits)")

    samples = x.reshape(n_frames, channels).T
    return AudioBuffer(np.ascontiguousarray(samples), rate)


def write_wav(path, buffer: AudioBuffer, encoding: str = "float32") -> None:
    """Write ``buffer`` as a RIFF/WAVE file.

    Integer encodings clip to the representable range and round to nearest.
    """
    if encoding not in ENCODINGS:
        raise ValueError(f"encoding must be one of {ENCODINGS}")
    interleaved = buffer.samples.T.reshape(-1)
    if encoding == "pcm16":
        ints = np.clip(np.round(interleaved * 32768.0), -32768, 32767).astype("<i2")
        payload, tag, bits = ints.tobytes(), _FORMAT_PCM, 16
    elif encoding == "pcm24":
        scale = float(1 << 23)
        ints = np.clip(np.round(interleaved * scale), -scale, scale - 1).astype(np.int32)
        b = ints.astype("<i4").view(np.uint8).reshape(-1, 4)[:, :3]
        payload, tag, bits = b.tobytes(), _FORMAT_PCM, 24
    else:
        payload, tag, bits = interleaved.astype("<f4").tobytes(), _FORMAT_FLOAT, 32

    channels = buffer.channels
    block_align = channels * bits // 8
    fmt = struct.pack(
        "<HHIIHH", tag, channels, buffer.sample_rate, buffer.sample_rate * block_align, block_align, bits
    )
    pad = b"\x00" if len(payload) & 1 else b""
    body = b"WAVE" + b"fmt " + struct.pack("<I", len(fmt)) + fmt
    body += b"data" + struct.pack("<I", len(payload)) + payload + pad
    with open(path, "wb") as fh:
        fh.write(b"RIFF" + struct.pack("<I", len(body)) + body)
