"""Multi-band spectral expander: offline processing and block streaming.

Signal path per STFT frame::

    |X| -> band energies (dB) -> static gain (T(b) + O) -> ballistics
        -> linear gains (floored) -> bin mask -> |X| * G * mask -> iSTFT

The noisy phase is kept. In linked stereo the side-chain band power is the
mean over both channels and one gain matrix is applied to both.
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path

import numpy as np

from specgate.audio import AudioBuffer
from specgate.dynamics import static_gain, smooth_gain_recursive, time_constant
from specgate.filterbank import ENERGY_EPS, BarkFilterbank, band_power, design_bark_filterbank
from specgate.ranges import DEFAULT_RANGES, ParamRanges
from specgate.spectral import StftConfig, analyze_frames, frame_signal, overlap_add, synthesize_frames

DEFAULT_SEGMENT_LENGTH = 65536


class StereoMode(str, enum.Enum):
    DUAL_MONO = "dual-mono"
    LINKED = "linked"


@dataclass
class DenoiserParams:
    """Interpretable control set: per-band thresholds plus shared settings."""

    thresholds: np.ndarray
    threshold_offset: float = 10.0
    attack_ms: float = 100.0
    release_ms: float = 111.80339887498948
    knee_db: float = 12.0
    ratio: float = 6.0
    makeup_db: float = 0.0

    def __post_init__(self):
        self.thresholds = np.asarray(self.thresholds, dtype=np.float64).reshape(-1)

    @classmethod
    def midpoint(cls, thresholds, ranges: ParamRanges = DEFAULT_RANGES) -> "DenoiserParams":
        return cls(thresholds, **{k: getattr(ranges, k).midpoint for k in ranges.HEAD_ORDER})

    def validate(self, ranges: ParamRanges = DEFAULT_RANGES) -> "DenoiserParams":
        ranges.threshold.check(self.thresholds)
        for key in ranges.HEAD_ORDER:
            getattr(ranges, key).check(getattr(self, key))
        return self

    def to_dict(self) -> dict:
        return {
            "thresholds_db": [float(t) for t in self.thresholds],
            "threshold_offset_db": float(self.threshold_offset),
            "attack_ms": float(self.attack_ms),
            "release_ms": float(self.release_ms),
            "knee_db": float(self.knee_db),
            "ratio": float(self.ratio),
            "makeup_db": float(self.makeup_db),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DenoiserParams":
        return cls(
            thresholds=d["thresholds_db"],
            threshold_offset=d.get("threshold_offset_db", 10.0),
            attack_ms=d.get("attack_ms", 100.0),
            release_ms=d.get("release_ms", 111.80339887498948),
            knee_db=d.get("knee_db", 12.0),
            ratio=d.get("ratio", 6.0),
            makeup_db=d.get("makeup_db", 0.0),
        )


@dataclass
class ParamTrack:
    """Per-segment parameters, linearly interpolated at every STFT frame.

    Segment ``k`` is anchored at its center sample ``(k + 0.5) * L``; frames
    before the first or after the last anchor take the end values.
    """

    segments: list
    segment_length: int = DEFAULT_SEGMENT_LENGTH

    def __post_init__(self):
        if not self.segments:
            raise ValueError("a parameter track needs at least one segment")
        if self.segment_length <= 0:
            raise ValueError("segment_length must be positive")

    def validate(self, ranges: ParamRanges = DEFAULT_RANGES) -> "ParamTrack":
        for p in self.segments:
            p.validate(ranges)
        return self

    def to_dict(self) -> dict:
        return {"segment_length": self.segment_length, "segments": [p.to_dict() for p in self.segments]}

    @classmethod
    def from_dict(cls, d: dict) -> "ParamTrack":
        return cls([DenoiserParams.from_dict(s) for s in d["segments"]], int(d["segment_length"]))


def load_params(path):
    """Load a ``DenoiserParams`` or ``ParamTrack`` JSON document."""
    d = json.loads(Path(path).read_text())
    return ParamTrack.from_dict(d) if "segments" in d else DenoiserParams.from_dict(d)


def save_params(params, path) -> None:
    Path(path).write_text(json.dumps(params.to_dict(), indent=2) + "\n")


@dataclass
class FrameParams:
    """Parameters resolved per frame; scalar fields are arrays of shape (S,)."""

    thresholds: np.ndarray  # (S, B), already including the offset
    attack_s: np.ndarray
    release_s: np.ndarray
    knee_db: np.ndarray
    ratio: np.ndarray
    makeup_db: np.ndarray

    def __len__(self):
        return self.thresholds.shape[0]

    def slice(self, start: int, stop: int) -> "FrameParams":
        return FrameParams(*(getattr(self, f)[start:stop] for f in self.__dataclass_fields__))


_SCALARS = ("threshold_offset", "attack_ms", "release_ms", "knee_db", "ratio", "makeup_db")


def frame_centers(first_frame: int, n_frames: int, config: StftConfig) -> np.ndarray:
    """Center of each frame in input-sample coordinates (padding removed)."""
    t = np.arange(first_frame, first_frame + n_frames)
    return t * config.hop + config.fft_size / 2 - config.pad


def resolve_param_track(track, n_frames: int, config: StftConfig | None = None, first_frame: int = 0) -> FrameParams:
    """Upsample a parameter set or track to one parameter vector per frame."""
    config = config or StftConfig()
    if n_frames < 1:
        raise ValueError("n_frames must be >= 1")
    if isinstance(track, DenoiserParams):
        track = ParamTrack([track])
    segs = track.segments
    if len(segs) == 1:
        p = segs[0]
        vals = {k: np.full(n_frames, float(getattr(p, k))) for k in _SCALARS}
        thr = np.broadcast_to(p.thresholds, (n_frames, p.thresholds.size)).copy()
    else:
        anchors = (np.arange(len(segs)) + 0.5) * track.segment_length
        x = frame_centers(first_frame, n_frames, config)
        vals = {k: np.interp(x, anchors, [float(getattr(p, k)) for p in segs]) for k in _SCALARS}
        table = np.stack([p.thresholds for p in segs])
        thr = np.stack([np.interp(x, anchors, table[:, b]) for b in range(table.shape[1])], axis=1)
    return FrameParams(
        thresholds=thr + vals["threshold_offset"][:, None],
        attack_s=vals["attack_ms"] / 1000.0,
        release_s=vals["release_ms"] / 1000.0,
        knee_db=vals["knee_db"],
        ratio=vals["ratio"],
        makeup_db=vals["makeup_db"],
    )


@dataclass(frozen=True)
class DenoiserConfig:
    stft: StftConfig = field(default_factory=StftConfig)
    n_bands: int = 27
    mask_floor_db: float = -60.0

    def filterbank(self, sample_rate: float) -> BarkFilterbank:
        return _filterbank(self.n_bands, float(sample_rate), self.stft.fft_size)


@lru_cache(maxsize=16)
def _filterbank(n_bands, sample_rate, fft_size):
    return design_bark_filterbank(n_bands, sample_rate, fft_size)


def side_chain_levels(power: np.ndarray, mode: StereoMode) -> np.ndarray:
    """Band levels in dB from linear band power of shape (C, S, B)."""
    if mode == StereoMode.LINKED:
        power = np.broadcast_to(power.mean(axis=0, keepdims=True), power.shape)
    return 10.0 * np.log10(power + ENERGY_EPS)


def compute_band_gains(
    power: np.ndarray,
    fp: FrameParams,
    mode: StereoMode,
    sample_rate: float,
    hop: int,
    state: np.ndarray | None = None,
    mask_floor_db: float = -60.0,
):
    """Smoothed linear band gains (C, S, B) from band power (C, S, B).

    Returns ``(gains, final_state)`` where the state is the per-channel,
    per-band ballistics value in dB.
    """
    levels = side_chain_levels(power, mode)
    g = static_gain(levels, fp.thresholds[None], fp.ratio[None, :, None], fp.knee_db[None, :, None])
    # range-limit the gain computer so release starts from the floor
    g = np.maximum(g, mask_floor_db)
    aa = time_constant(fp.attack_s, sample_rate, hop)
    ar = time_constant(fp.release_s, sample_rate, hop)
    # frames first for the recursion
    smoothed, state = smooth_gain_recursive(np.moveaxis(g, 1, 0), aa[:, None, None], ar[:, None, None], state)
    gains = 10.0 ** (np.moveaxis(smoothed, 0, 1) / 20.0)
    return np.maximum(gains, 10.0 ** (mask_floor_db / 20.0)), state


def _check_mode(audio_channels: int, mode: StereoMode) -> StereoMode:
    mode = StereoMode(mode)
    if mode == StereoMode.LINKED and audio_channels != 2:
        raise ValueError("linked stereo mode requires 2 channels")
    return mode


def _validated(params, ranges: ParamRanges):
    params.validate(ranges)
    return params


def process_spectrum(
    spec: np.ndarray,
    fp: FrameParams,
    fb: BarkFilterbank,
    mode: StereoMode,
    sample_rate: float,
    hop: int,
    state=None,
    mask_floor_db: float = -60.0,
):
    """Apply the expander mask to complex frames (C, S, F)."""
    power = band_power(np.abs(spec), fb)
    gains, state = compute_band_gains(power, fp, mode, sample_rate, hop, state, mask_floor_db)
    mask = gains @ fb.synthesis
    mask *= 10.0 ** (fp.makeup_db / 20.0)[None, :, None]
    return spec * mask, state


def denoise_offline(
    audio: AudioBuffer,
    params,
    stereo_mode: StereoMode = StereoMode.DUAL_MONO,
    config: DenoiserConfig | None = None,
    ranges: ParamRanges = DEFAULT_RANGES,
) -> AudioBuffer:
    """Denoise a whole buffer with fixed parameters or a parameter track."""
    config = config or DenoiserConfig()
    mode = _check_mode(audio.channels, stereo_mode)
    sc = config.stft
    if audio.n_samples < sc.fft_size:
        raise ValueError(f"audio shorter than fft_size {sc.fft_size}")
    _validated(params, ranges)
    fb = config.filterbank(audio.sample_rate)
    spec = analyze_frames(frame_signal(audio.samples, sc), sc)
    fp = resolve_param_track(params, spec.shape[1], sc)
    out, _ = process_spectrum(spec, fp, fb, mode, audio.sample_rate, sc.hop, None, config.mask_floor_db)
    y = overlap_add(synthesize_frames(out, sc), sc.hop)[:, sc.pad : sc.pad + audio.n_samples]
    return AudioBuffer(y, audio.sample_rate)


class DenoiserStream:
    """Block-wise denoiser whose output equals :func:`denoise_offline`.

    Output is delayed by :attr:`latency` samples (``N - H``); the first
    ``latency`` samples emitted are silence.
    """

    def __init__(
        self,
        params,
        channels: int,
        sample_rate: int,
        stereo_mode: StereoMode = StereoMode.DUAL_MONO,
        config: DenoiserConfig | None = None,
        ranges: ParamRanges = DEFAULT_RANGES,
    ):
        self.config = config or DenoiserConfig()
        self.mode = _check_mode(channels, stereo_mode)
        self.params = _validated(params, ranges)
        self.channels = channels
        self.sample_rate = sample_rate
        self.fb = self.config.filterbank(sample_rate)
        self.reset()

    @property
    def latency(self) -> int:
        return self.config.stft.pad

    def reset(self) -> None:
        sc = self.config.stft
        self._in = np.zeros((self.channels, sc.pad))
        self._tail = np.zeros((self.channels, sc.fft_size - sc.hop))
        self._ballistics = None
        self.frames_processed = 0
        self.samples_in = 0
        self.samples_out = 0
        self.flushed = False

    def _run(self, block: np.ndarray) -> np.ndarray:
        sc = self.config.stft
        buf = np.concatenate([self._in, block], axis=1)
        k = block.shape[1] // sc.hop
        if k == 0:
            return np.zeros((self.channels, 0))
        windows = np.lib.stride_tricks.sliding_window_view(buf, sc.fft_size, axis=-1)[:, :: sc.hop][:, :k]
        spec = analyze_frames(windows, sc)
        fp = resolve_param_track(self.params, k, sc, first_frame=self.frames_processed)
        out, self._ballistics = process_spectrum(
            spec, fp, self.fb, self.mode, self.sample_rate, sc.hop, self._ballistics, self.config.mask_floor_db
        )
        acc = overlap_add(synthesize_frames(out, sc), sc.hop)
        acc[:, : self._tail.shape[1]] += self._tail
        emitted = acc[:, : k * sc.hop]
        self._tail = acc[:, k * sc.hop :].copy()
        self._in = buf[:, k * sc.hop :].copy()
        # output positions still inside the analysis pre-padding are silence
        start = self.frames_processed * sc.hop
        if start < sc.pad:
            emitted[:, : sc.pad - start] = 0.0
        self.frames_processed += k
        return emitted

    def process_block(self, block) -> np.ndarray:
        """Process ``(channels, n)`` samples, ``n`` a multiple of the hop."""
        if self.flushed:
            raise RuntimeError("stream already flushed; call reset() first")
        block = np.asarray(block, dtype=np.float64)
        if block.ndim == 1:
            block = block[None, :]
        if block.shape[0] != self.channels:
            raise ValueError(f"expected {self.channels} channels, got {block.shape[0]}")
        if block.shape[1] % self.config.stft.hop:
            raise ValueError(f"block length {block.shape[1]} is not a multiple of hop {self.config.stft.hop}")
        out = self._run(block)
        self.samples_in += block.shape[1]
        self.samples_out += out.shape[1]
        return out

    def flush(self, final_block=None) -> np.ndarray:
        """Process a final partial block and drain the overlap buffers."""
        if self.flushed:
            raise RuntimeError("stream already flushed")
        sc = self.config.stft
        if final_block is None:
            final_block = np.zeros((self.channels, 0))
        final_block = np.asarray(final_block, dtype=np.float64).reshape(self.channels, -1)
        n = final_block.shape[1]
        self.samples_in += n
        padded = np.pad(final_block, ((0, 0), (0, sc.tail_pad(n))))
        out = self._run(padded)
        want = self.samples_in + self.latency - self.samples_out
        self.samples_out += want
        self.flushed = True
        return out[:, :want]


def create_stream(
    config: DenoiserConfig | None,
    params,
    stereo_mode: StereoMode = StereoMode.DUAL_MONO,
    channels: int = 1,
    sample_rate: int = 44100,
) -> DenoiserStream:
    return DenoiserStream(params, channels, sample_rate, stereo_mode, config)


def stream_process(stream: DenoiserStream, samples: np.ndarray, block_size: int) -> np.ndarray:
    """Feed ``samples`` through ``stream`` and return the latency-aligned output."""
    samples = np.atleast_2d(samples)
    n = samples.shape[1]
    full = (n // block_size) * block_size
    pieces = [stream.process_block(samples[:, i : i + block_size]) for i in range(0, full, block_size)]
    rest = samples[:, full:]
    hop = stream.config.stft.hop
    whole = (rest.shape[1] // hop) * hop
    if whole:
        pieces.append(stream.process_block(rest[:, :whole]))
    pieces.append(stream.flush(rest[:, whole:]))
    out = np.concatenate(pieces, axis=1)
    return out[:, stream.latency : stream.latency + n]
