"""Synthetic noisy mixtures ``x = y + w`` for training and evaluation.

Clean sources are either user WAV files or built-in synthetic instruments;
noise is filtered white noise, so it is stationary by construction. Every
example is a pure function of its manifest record.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import scipy.signal

from specgate.audio import AudioBuffer, read_wav
from specgate.filterbank import ENERGY_EPS, BarkFilterbank, band_power, design_bark_filterbank
from specgate.loudness import integrated_loudness, is_measurable
from specgate.spectral import StftConfig, analyze_frames

NOISE_COLORS = ("white", "pink", "shelf", "bandpass", "lowpass")
SYNTH_SOURCES = ("tones", "chirp", "pluck", "legato")
NOISE_RMS_DB = -20.0
SOURCE_FLOOR_DB = -80.0  # recording floor added to synthetic sources


@dataclass
class NoiseSpec:
    color: str = "white"
    params: dict = field(default_factory=dict)
    seed: int = 0

    def __post_init__(self):
        if self.color not in NOISE_COLORS:
            raise ValueError(f"unknown noise color {self.color!r}")


@dataclass
class MixtureExample:
    clean: AudioBuffer
    noise: AudioBuffer
    noisy: AudioBuffer
    t_gt: np.ndarray
    loudness_diff: float
    seed: int = 0


# --- noise -------------------------------------------------------------------


def _biquad_shelf(freq, gain_db, fs, high=True, q=0.7071):
    """RBJ shelf as second-order sections."""
    a = 10.0 ** (gain_db / 40.0)
    w0 = 2 * np.pi * freq / fs
    alpha = np.sin(w0) / (2 * q)
    cw = np.cos(w0)
    sa = 2 * np.sqrt(a) * alpha
    sign = 1.0 if high else -1.0
    b0 = a * ((a + 1) + sign * (a - 1) * cw + sa)
    b1 = -2 * sign * a * ((a - 1) + sign * (a + 1) * cw)
    b2 = a * ((a + 1) + sign * (a - 1) * cw - sa)
    a0 = (a + 1) - sign * (a - 1) * cw + sa
    a1 = 2 * sign * ((a - 1) - sign * (a + 1) * cw)
    a2 = (a + 1) - sign * (a - 1) * cw - sa
    return np.array([[b0 / a0, b1 / a0, b2 / a0, 1.0, a1 / a0, a2 / a0]])


def _biquad_peak(freq, gain_db, q, fs):
    a = 10.0 ** (gain_db / 40.0)
    w0 = 2 * np.pi * freq / fs
    alpha = np.sin(w0) / (2 * q)
    b = [1 + alpha * a, -2 * np.cos(w0), 1 - alpha * a]
    den = [1 + alpha / a, -2 * np.cos(w0), 1 - alpha / a]
    return np.array([[b[0] / den[0], b[1] / den[0], b[2] / den[0], 1.0, den[1] / den[0], den[2] / den[0]]])


def _pink(white: np.ndarray) -> np.ndarray:
    spec = np.fft.rfft(white, axis=-1)
    f = np.arange(spec.shape[-1], dtype=np.float64)
    f[0] = 1.0
    return np.fft.irfft(spec / np.sqrt(f), n=white.shape[-1], axis=-1)


def synth_colored_noise(spec: NoiseSpec, length: int, channels: int = 1, sample_rate: int = 44100) -> AudioBuffer:
    """Seeded stationary noise, RMS-normalized to -20 dBFS."""
    rng = np.random.default_rng(spec.seed)
    warm = 4096  # lets IIR filters settle before the kept part
    white = rng.standard_normal((channels, length + warm))
    p = spec.params
    fs = sample_rate
    if spec.color == "white":
        w = white
    elif spec.color == "pink":
        w = _pink(white)
    elif spec.color == "shelf":
        sos = _biquad_shelf(p.get("freq_hz", 2000.0), p.get("gain_db", -12.0), fs, high=p.get("high", True))
        w = scipy.signal.sosfilt(sos, white, axis=-1)
    elif spec.color == "bandpass":
        lo = p.get("low_hz", 200.0)
        hi = min(p.get("high_hz", 4000.0), 0.45 * fs)
        sos = scipy.signal.butter(2, [lo, hi], btype="bandpass", fs=fs, output="sos")
        w = scipy.signal.sosfilt(sos, white, axis=-1)
    else:  # lowpass
        sos = scipy.signal.butter(p.get("order", 4), min(p.get("cutoff_hz", 1000.0), 0.45 * fs), fs=fs, output="sos")
        w = scipy.signal.sosfilt(sos, white, axis=-1)
    w = w[:, warm:]
    rms = np.sqrt(np.mean(w**2))
    w *= 10.0 ** (NOISE_RMS_DB / 20.0) / max(rms, 1e-12)
    return AudioBuffer(w, sample_rate)


def random_noise_spec(rng: np.random.Generator) -> NoiseSpec:
    color = NOISE_COLORS[int(rng.integers(len(NOISE_COLORS)))]
    if color == "shelf":
        params = {
            "freq_hz": float(np.exp(rng.uniform(np.log(300), np.log(8000)))),
            "gain_db": float(rng.uniform(-18, 12)),
            "high": bool(rng.integers(2)),
        }
    elif color == "bandpass":
        lo = float(np.exp(rng.uniform(np.log(60), np.log(2000))))
        params = {"low_hz": lo, "high_hz": float(lo * np.exp(rng.uniform(np.log(2), np.log(40))))}
    elif color == "lowpass":
        params = {"cutoff_hz": float(np.exp(rng.uniform(np.log(500), np.log(10000)))), "order": 2}
    else:
        params = {}
    return NoiseSpec(color, params, int(rng.integers(2**31)))


# --- clean sources -----------------------------------------------------------


def _adsr(n: int, fs: int, attack: float, decay: float, sustain: float, release: float) -> np.ndarray:
    t = np.arange(n) / fs
    env = np.where(t < attack, t / max(attack, 1e-4), sustain + (1 - sustain) * np.exp(-(t - attack) / max(decay, 1e-4)))
    tail = max(1, int(release * fs))
    if n > tail:
        env[-tail:] *= np.linspace(1.0, 0.0, tail)
    return env


def _tones(rng, length, fs):
    out = np.zeros(length)
    pos = int(rng.integers(0, fs // 4))
    while pos < length:
        dur = int(rng.uniform(0.15, 0.8) * fs)
        f0 = 55.0 * 2 ** (rng.integers(12, 48) / 12.0)
        n = min(dur, length - pos)
        t = np.arange(n) / fs
        note = np.zeros(n)
        tilt = rng.uniform(0.6, 1.4)
        for h in range(1, 16):
            if f0 * h > 0.45 * fs:
                break
            note += np.sin(2 * np.pi * f0 * h * t + rng.uniform(0, 2 * np.pi)) / h**tilt
        note *= _adsr(n, fs, rng.uniform(0.005, 0.05), rng.uniform(0.05, 0.4), rng.uniform(0.2, 0.7), 0.03)
        out[pos : pos + n] += note
        pos += n + int(rng.uniform(0.0, 0.3) * fs)
    return out


def _chirp(rng, length, fs):
    t = np.arange(length) / fs
    f_lo = rng.uniform(80, 400)
    f_hi = rng.uniform(1500, 8000)
    sweep = scipy.signal.chirp(t, f_lo, t[-1], f_hi, method="logarithmic", phi=rng.uniform(0, 360))
    sweep += 0.4 * scipy.signal.chirp(t, 2 * f_lo, t[-1], 2 * f_hi, method="logarithmic")
    am = 0.6 + 0.4 * np.sin(2 * np.pi * rng.uniform(0.5, 4.0) * t)
    return sweep * am


def _pluck(rng, length, fs):
    """Karplus-Strong plucked string notes."""
    out = np.zeros(length)
    pos = 0
    while pos < length:
        f0 = 82.4 * 2 ** (rng.integers(0, 30) / 12.0)
        period = max(2, int(round(fs / f0)))
        n = min(int(rng.uniform(0.3, 1.2) * fs), length - pos)
        buf = rng.uniform(-1, 1, period)
        decay = rng.uniform(0.990, 0.998)
        note = np.empty(n)
        # vectorized per period: each period is the smoothed previous one
        for start in range(0, n, period):
            nxt = decay * 0.5 * (buf + np.roll(buf, -1))
            m = min(period, n - start)
            note[start : start + m] = buf[:m]
            buf = nxt
        out[pos : pos + n] += note
        pos += n
    return out


def _legato(rng, length, fs, voices=3):
    """Sustained polyphonic voices with portamento and light vibrato."""
    out = np.zeros(length)
    glide = int(0.02 * fs)
    t = np.arange(length) / fs
    for _ in range(voices):
        base = 55.0 * 2 ** (rng.integers(12, 36) / 12.0)
        f = np.zeros(length)
        pos = 0
        while pos < length:
            n = int(rng.uniform(0.3, 1.0) * fs)
            f[pos : pos + n] = base * 2 ** (rng.integers(0, 12) / 12.0)
            pos += n
        f = np.convolve(f, np.ones(glide) / glide, mode="same")
        f[f <= 0] = base
        vib = 1.0 + 0.003 * np.sin(2 * np.pi * rng.uniform(4, 6) * t)
        phase = 2 * np.pi * np.cumsum(f * vib) / fs
        tilt = rng.uniform(0.8, 1.6)
        for h in range(1, 12):
            out += np.sin(h * phase + rng.uniform(0, 2 * np.pi)) / h**tilt * (f * h < 0.45 * fs)
    return out


def synth_source(kind: str, length: int, sample_rate: int, seed: int, channels: int = 1) -> AudioBuffer:
    rng = np.random.default_rng(seed)
    gen = {"tones": _tones, "chirp": _chirp, "pluck": _pluck, "legato": _legato}.get(kind)
    if gen is None:
        raise ValueError(f"unknown synthetic source {kind!r}")
    x = gen(rng, length, sample_rate)
    if channels == 2:
        x = np.stack([x, x * rng.uniform(0.6, 1.0)])
    x = np.atleast_2d(x)
    # no digital silence: log-spectral losses degenerate on exact zeros
    floor = np.random.default_rng([seed, 1]).standard_normal(x.shape)
    return AudioBuffer(x + 10.0 ** (SOURCE_FLOOR_DB / 20.0) * floor, sample_rate)


def load_source_segment(path, length: int, sample_rate: int, seed: int, channels: int = 1) -> AudioBuffer:
    audio = read_wav(path)
    if audio.sample_rate != sample_rate:
        raise ValueError(f"{path}: sample rate {audio.sample_rate} != {sample_rate} (no resampling)")
    x = audio.samples
    if x.shape[1] < length:
        x = np.pad(x, ((0, 0), (0, length - x.shape[1])))
    start = int(np.random.default_rng(seed).integers(0, x.shape[1] - length + 1))
    x = x[:, start : start + length]
    if channels == 1 and x.shape[0] == 2:
        x = x.mean(axis=0, keepdims=True)
    elif channels == 2 and x.shape[0] == 1:
        x = np.repeat(x, 2, axis=0)
    return AudioBuffer(x, sample_rate)


def normalize_loudness(buffer: AudioBuffer, target_lufs: float) -> AudioBuffer:
    lufs = integrated_loudness(buffer)
    if not is_measurable(lufs):
        raise ValueError("source is unmeasurable (silent)")
    x = buffer.samples * 10.0 ** ((target_lufs - lufs) / 20.0)
    peak = np.max(np.abs(x))
    if peak > 0.99:
        x *= 0.99 / peak
    return AudioBuffer(x, buffer.sample_rate)


# --- mixing ------------------------------------------------------------------


def valid_frames(x: np.ndarray, config: StftConfig) -> np.ndarray:
    """Frames ``(..., S, N)`` lying entirely inside ``x`` (no padding)."""
    if x.shape[-1] < config.fft_size:
        raise ValueError(f"signal shorter than fft_size {config.fft_size}")
    frames = np.lib.stride_tricks.sliding_window_view(x, config.fft_size, axis=-1)
    return frames[..., :: config.hop, :]


def ground_truth_noise_spectrum(noise: AudioBuffer, fb: BarkFilterbank, stft_config: StftConfig | None = None) -> np.ndarray:
    """Per-band noise level: mean over frames of the frame band energies (dB).

    Channels are combined by averaging band power, matching the linked
    side-chain.
    """
    config = stft_config or StftConfig()
    spec = analyze_frames(valid_frames(noise.samples, config), config)
    power = band_power(np.abs(spec), fb).mean(axis=0)
    return (10.0 * np.log10(power + ENERGY_EPS)).mean(axis=0)


def mix_at_loudness_diff(
    clean: AudioBuffer,
    noise: AudioBuffer,
    target_diff_db: float,
    fb: BarkFilterbank | None = None,
    stft_config: StftConfig | None = None,
    seed: int = 0,
) -> MixtureExample:
    """Scale ``noise`` so its loudness sits ``target_diff_db`` relative to ``clean``."""
    if clean.sample_rate != noise.sample_rate:
        raise ValueError("clean and noise sample rates differ")
    if clean.samples.shape != noise.samples.shape:
        raise ValueError("clean and noise shapes differ")
    stft_config = stft_config or StftConfig()
    fb = fb or design_bark_filterbank(27, clean.sample_rate, stft_config.fft_size)
    ly = integrated_loudness(clean)
    lw = integrated_loudness(noise)
    if not (is_measurable(ly) and is_measurable(lw)):
        raise ValueError("cannot mix unmeasurable signals")
    w = noise.samples * 10.0 ** ((target_diff_db - (lw - ly)) / 20.0)
    # one correction pass on the gated measure
    lw2 = integrated_loudness(AudioBuffer(w, noise.sample_rate))
    if is_measurable(lw2):
        w = w * 10.0 ** ((target_diff_db - (lw2 - ly)) / 20.0)
    y = clean.samples
    x = y + w
    peak = np.max(np.abs(x))
    if peak > 1.0:
        y, w = y * (0.99 / peak), w * (0.99 / peak)
        x = y + w
    # store the exact residual so x == y + w and x - y == w hold bit for bit
    for _ in range(4):
        w = x - y
        if np.array_equal(y + w, x):
            break
        x = y + w
    w_buf = AudioBuffer(w, clean.sample_rate)
    return MixtureExample(
        clean=AudioBuffer(y, clean.sample_rate),
        noise=w_buf,
        noisy=AudioBuffer(x, clean.sample_rate),
        t_gt=ground_truth_noise_spectrum(w_buf, fb, stft_config),
        loudness_diff=float(target_diff_db),
        seed=seed,
    )


# --- augmentation ------------------------------------------------------------


@dataclass
class AugmentConfig:
    eq: bool = False
    eq_gain_db: float = 6.0
    gain: bool = False
    gain_depth_db: float = 3.0
    ir_dir: str | None = None
    ir: bool = False

    def flags(self) -> dict:
        return {"eq": self.eq, "gain": self.gain, "ir": self.ir}


def _ir_files(ir_dir):
    if ir_dir is None or not Path(ir_dir).is_dir():
        raise FileNotFoundError(f"impulse response directory not found: {ir_dir}")
    files = sorted(Path(ir_dir).glob("*.wav"))
    if not files:
        raise FileNotFoundError(f"no .wav impulse responses in {ir_dir}")
    return files


def apply_ir(x: np.ndarray, ir: np.ndarray) -> np.ndarray:
    ir = ir / max(np.sqrt(np.sum(ir**2)), 1e-12)
    return scipy.signal.fftconvolve(x, ir[None, :], axes=-1)[:, : x.shape[-1]]


def augment(buffer: AudioBuffer, config: AugmentConfig, rng: np.random.Generator, ir=None) -> AudioBuffer:
    """Random peaking EQ, slow sinusoidal gain and optional IR convolution."""
    x = buffer.samples.copy()
    fs = buffer.sample_rate
    if config.eq:
        freq = float(np.exp(rng.uniform(np.log(100), np.log(8000))))
        sos = _biquad_peak(freq, rng.uniform(-config.eq_gain_db, config.eq_gain_db), rng.uniform(0.5, 2.0), fs)
        x = scipy.signal.sosfilt(sos, x, axis=-1)
    if config.gain:
        t = np.arange(x.shape[-1]) / fs
        depth = rng.uniform(0, config.gain_depth_db)
        g_db = depth * np.sin(2 * np.pi * rng.uniform(0.1, 1.0) * t + rng.uniform(0, 2 * np.pi))
        x = x * 10.0 ** (g_db / 20.0)
    if config.ir:
        if ir is None:
            files = _ir_files(config.ir_dir)
            ir = read_wav(files[int(rng.integers(len(files)))]).samples[0]
        x = apply_ir(x, ir)
    peak = np.max(np.abs(x))
    if peak > 1.0:
        x *= 0.99 / peak
    return AudioBuffer(x, fs)


# --- manifest ----------------------------------------------------------------


@dataclass
class ExampleRecord:
    seed: int
    synth_id: str | None = None
    source_path: str | None = None
    noise_spec: dict = field(default_factory=dict)
    loudness_diff: float = -30.0
    clean_lufs: float = -18.0
    augment_flags: dict = field(default_factory=dict)
    length: int = 65536
    sample_rate: int = 44100
    channels: int = 1

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)


def make_records(
    n: int,
    seed: int = 0,
    length: int = 65536,
    sample_rate: int = 44100,
    channels: int = 1,
    source_dir=None,
    diff_range=(-48.0, -12.0),
    augment_flags: dict | None = None,
) -> list[ExampleRecord]:
    """Draw ``n`` manifest records deterministically from ``seed``."""
    rng = np.random.default_rng(seed)
    sources = sorted(str(p) for p in Path(source_dir).glob("*.wav")) if source_dir else []
    records = []
    for _ in range(n):
        ex_seed = int(rng.integers(2**31))
        r = np.random.default_rng(ex_seed)
        if sources and r.random() < 0.5:
            src = {"source_path": sources[int(r.integers(len(sources)))]}
        else:
            src = {"synth_id": SYNTH_SOURCES[int(r.integers(len(SYNTH_SOURCES)))]}
        noise = random_noise_spec(r)
        records.append(
            ExampleRecord(
                seed=ex_seed,
                noise_spec={"color": noise.color, "params": noise.params, "seed": noise.seed},
                loudness_diff=float(r.uniform(*diff_range)),
                clean_lufs=float(r.uniform(-20.0, -14.0)),
                augment_flags=dict(augment_flags or {}),
                length=length,
                sample_rate=sample_rate,
                channels=channels,
                **src,
            )
        )
    return records


def generate_example(record: ExampleRecord, fb: BarkFilterbank | None = None, stft_config: StftConfig | None = None) -> MixtureExample:
    """Build the mixture described by ``record``; bit-identical on every call."""
    ss = np.random.SeedSequence(record.seed)
    src_seed, aug_seed = (int(s.generate_state(1)[0]) for s in ss.spawn(2))
    n, fs, ch = record.length, record.sample_rate, record.channels
    if record.source_path:
        clean = load_source_segment(record.source_path, n, fs, src_seed, ch)
    else:
        clean = synth_source(record.synth_id or "tones", n, fs, src_seed, ch)
    flags = record.augment_flags or {}
    aug_rng = np.random.default_rng(aug_seed)
    cfg = AugmentConfig(
        eq=flags.get("eq", False), gain=flags.get("gain", False), ir=flags.get("ir", False), ir_dir=flags.get("ir_dir")
    )
    if cfg.eq or cfg.gain:
        clean = augment(clean, AugmentConfig(eq=cfg.eq, gain=cfg.gain), aug_rng)
    clean = normalize_loudness(clean, record.clean_lufs)
    noise = synth_colored_noise(NoiseSpec(**record.noise_spec), n, ch, fs)
    if cfg.ir:
        files = _ir_files(cfg.ir_dir)
        ir = read_wav(files[int(aug_rng.integers(len(files)))]).samples[0]
        clean = AudioBuffer(apply_ir(clean.samples, ir), fs)
        if aug_rng.random() < 0.5:
            noise = AudioBuffer(apply_ir(noise.samples, ir), fs)
    return mix_at_loudness_diff(clean, noise, record.loudness_diff, fb, stft_config, seed=record.seed)


def write_manifest(records, path) -> None:
    with open(path, "w") as fh:
        for r in records:
            fh.write(r.to_json() + "\n")


def read_manifest(path) -> list[ExampleRecord]:
    p = Path(path)
    if not p.is_file():
        raise FileNotFoundError(f"manifest not found: {path}")
    return [ExampleRecord(**json.loads(line)) for line in p.read_text().splitlines() if line.strip()]
