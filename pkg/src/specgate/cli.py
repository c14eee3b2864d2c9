"""Command-line interface: ``specgate <command> [options]``.

Failures print one line ``specgate: error: <kind>: <message>`` to stderr and
exit with a nonzero status.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from specgate.audio import AudioBuffer, WavError, read_wav, write_wav
from specgate.datagen import AugmentConfig, generate_example, make_records, read_manifest, write_manifest
from specgate.denoiser import DenoiserConfig, DenoiserParams, StereoMode, denoise_offline, load_params
from specgate.dynamics import StaticCurve, compare_ballistics, gated_burst, write_comparison_csv
from specgate.metrics import evaluate_dataset
from specgate.neural import CheckpointError, controller_track, init_net, load_checkpoint, save_checkpoint
from specgate.profile import blind_noise_profile, load_profile, region_noise_profile, save_profile
from specgate.ranges import DEFAULT_RANGES
from specgate.spectral import StftConfig
from specgate.training import TrainConfig, evaluate_controller, prepare_examples, train_stage1, train_stage2

log = logging.getLogger("specgate")

EXIT_USAGE = 2
EXIT_FAILURE = 1

MANUAL_FLAGS = {
    "attack_ms": "attack_ms",
    "release_ms": "release_ms",
    "knee_db": "knee_db",
    "ratio": "ratio",
    "makeup_db": "makeup_db",
    "threshold_offset_db": "threshold_offset",
}


class CliError(Exception):
    def __init__(self, kind: str, message: str, code: int = EXIT_FAILURE):
        super().__init__(message)
        self.kind = kind
        self.code = code


def _threads(value) -> int:
    n = int(value)
    if n < 1:
        raise argparse.ArgumentTypeError("threads must be >= 1")
    return n


def _default_threads() -> int:
    try:
        return max(1, int(os.environ.get("SPECGATE_THREADS", "1")))
    except ValueError:
        return 1


def _pmap(fn, items, threads: int) -> list:
    if threads <= 1:
        return [fn(i) for i in items]
    with ThreadPoolExecutor(threads) as pool:
        return list(pool.map(fn, items))


def _read_input(path) -> AudioBuffer:
    if not Path(path).is_file():
        raise CliError("io", f"input not found: {path}")
    try:
        return read_wav(path)
    except WavError as exc:
        raise CliError("wav", f"{path}: {exc}") from exc


def _check_output(path) -> None:
    parent = Path(path).resolve().parent
    if not parent.is_dir():
        raise CliError("io", f"output directory does not exist: {parent}")


def _load_net(path):
    if not Path(path).is_file():
        raise CliError("io", f"checkpoint not found: {path}")
    try:
        return load_checkpoint(path)
    except CheckpointError as exc:
        raise CliError("checkpoint", str(exc)) from exc


# --- denoise ---------------------------------------------------------------


def _manual_params(args, audio: AudioBuffer, config: DenoiserConfig) -> DenoiserParams:
    fb = config.filterbank(audio.sample_rate)
    if args.noise_profile:
        thresholds = load_profile(args.noise_profile)
        if thresholds.size != fb.n_bands:
            raise CliError("profile", f"noise profile has {thresholds.size} bands, expected {fb.n_bands}")
    else:
        thresholds = blind_noise_profile(audio, fb, config.stft)
    params = DenoiserParams.midpoint(np.clip(thresholds, DEFAULT_RANGES.threshold.min, DEFAULT_RANGES.threshold.max))
    for flag, attr in MANUAL_FLAGS.items():
        value = getattr(args, flag)
        if value is not None:
            setattr(params, attr, float(value))
    return params


def cmd_denoise(args) -> int:
    manual = [f for f in MANUAL_FLAGS if getattr(args, f) is not None]
    sources = [name for name, on in (("--checkpoint", args.checkpoint), ("--params", args.params), ("manual flags", manual or args.noise_profile)) if on]
    if len(sources) > 1:
        raise CliError("usage", f"conflicting parameter sources: {', '.join(sources)}", EXIT_USAGE)
    audio = _read_input(args.input)
    _check_output(args.output)
    config = DenoiserConfig()
    if audio.n_samples < config.stft.fft_size:
        raise CliError("input", f"input shorter than {config.stft.fft_size} samples")
    if args.stereo_mode == "linked" and audio.channels != 2:
        raise CliError("usage", "linked stereo mode requires a 2-channel input", EXIT_USAGE)
    segment_length = max(config.stft.fft_size, int(round(args.segment_ms * audio.sample_rate / 1000.0)))
    if args.checkpoint:
        net, _ = _load_net(args.checkpoint)
        params = controller_track(net, audio, segment_length, config.stft)
        for k, p in enumerate(params.segments):
            print(
                f"segment {k}: offset {p.threshold_offset:.1f} dB, attack {p.attack_ms:.1f} ms, release {p.release_ms:.1f} ms, "
                f"knee {p.knee_db:.1f} dB, ratio {p.ratio:.2f}, makeup {p.makeup_db:.1f} dB, mean threshold {p.thresholds.mean():.1f} dB"
            )
    elif args.params:
        try:
            params = load_params(args.params)
        except (OSError, KeyError, ValueError) as exc:
            raise CliError("params", f"{args.params}: {exc}") from exc
    else:
        params = _manual_params(args, audio, config)
        if not manual and not args.noise_profile:
            print("auto mode without checkpoint: blind noise estimate, midpoint parameters")
    try:
        out = denoise_offline(audio, params, StereoMode(args.stereo_mode), config)
    except ValueError as exc:
        raise CliError("range", str(exc), EXIT_USAGE) from exc
    write_wav(args.output, out, args.encoding)
    return 0


# --- estimate-noise --------------------------------------------------------


def _parse_region(text: str, audio: AudioBuffer) -> tuple[int, int]:
    try:
        a, b = (float(v) for v in text.split(":"))
    except ValueError as exc:
        raise CliError("usage", f"region must be start:end in seconds, got {text!r}", EXIT_USAGE) from exc
    start, stop = int(round(a * audio.sample_rate)), int(round(b * audio.sample_rate))
    if a < 0 or start >= stop or stop > audio.n_samples:
        raise CliError("region", f"region {text} s outside 0:{audio.duration:g} s")
    return start, stop


def cmd_estimate_noise(args) -> int:
    audio = _read_input(args.input)
    _check_output(args.output)
    config = DenoiserConfig()
    fb = config.filterbank(audio.sample_rate)
    try:
        if args.noise_only_region:
            start, stop = _parse_region(args.noise_only_region, audio)
            profile = region_noise_profile(audio, start, stop, fb, config.stft)
            method = f"region {args.noise_only_region}"
        else:
            profile = blind_noise_profile(audio, fb, config.stft)
            method = "blind"
    except ValueError as exc:
        raise CliError("region", str(exc)) from exc
    save_profile(profile, args.output, audio.sample_rate, method)
    print(f"noise profile ({method}): mean {profile.mean():.1f} dB, min {profile.min():.1f} dB, max {profile.max():.1f} dB")
    return 0


# --- make-manifest ---------------------------------------------------------


def cmd_make_manifest(args) -> int:
    _check_output(args.output)
    if args.source_dir and not Path(args.source_dir).is_dir():
        raise CliError("io", f"source directory not found: {args.source_dir}")
    flags = {"eq": args.eq, "gain": args.gain}
    if args.ir_dir:
        flags.update(ir=True, ir_dir=str(args.ir_dir))
    records = make_records(args.n, args.seed, args.length, 44100, args.channels, args.source_dir, augment_flags=flags)
    write_manifest(records, args.output)
    print(f"wrote {len(records)} records to {args.output}")
    return 0


def _load_examples(path, threads: int):
    try:
        records = read_manifest(path)
    except FileNotFoundError as exc:
        raise CliError("io", str(exc)) from exc
    if not records:
        raise CliError("manifest", f"{path}: no records")
    return records, _pmap(generate_example, records, threads)


# --- train -----------------------------------------------------------------


def cmd_train(args) -> int:
    if args.stage == "2" and not args.checkpoint_in:
        raise CliError("usage", "stage 2 needs a stage-1 checkpoint (--checkpoint-in)", EXIT_USAGE)
    _check_output(args.checkpoint_out)
    config = TrainConfig()
    if args.config:
        try:
            config = TrainConfig.from_dict(json.loads(Path(args.config).read_text()))
        except (OSError, TypeError, ValueError) as exc:
            raise CliError("config", f"{args.config}: {exc}") from exc
    config.stage1.seed = config.stage2.seed = args.seed
    records, examples = _load_examples(args.manifest, args.threads)
    if args.checkpoint_in:
        net, _ = _load_net(args.checkpoint_in)
    else:
        net = init_net(seed=args.seed)
    prepared = prepare_examples(examples, net, with_audio=args.stage != "1")
    n_val = int(round(config.val_fraction * len(prepared)))
    if len(prepared) - n_val < 1:
        raise CliError("manifest", "not enough examples for a training split")
    train, val = prepared[: len(prepared) - n_val], prepared[len(prepared) - n_val :]
    out = Path(args.checkpoint_out)
    summary = {}
    if args.stage in ("1", "both"):
        curve = train_stage1(net, train, val, config.stage1)
        curve.write_csv(out.with_name(out.stem + "_stage1_loss.csv"))
        summary["stage1_val_mse"] = [curve.rows[0][2], curve.rows[-1][2]]
    if args.stage in ("2", "both"):
        curve, stats = train_stage2(net, train, val, config.stage2)
        curve.write_csv(out.with_name(out.stem + "_stage2_loss.csv"))
        summary["stage2_val_mrstft"] = [curve.rows[0][2], curve.rows[-1][2]]
        summary["denoiser_runs"] = stats["denoiser_runs"]
    save_checkpoint(net, out, extra={"seed": args.seed, "stage": args.stage, "train_config": config.to_dict()})
    print(json.dumps(summary))
    return 0


# --- bench -----------------------------------------------------------------


def cmd_bench(args) -> int:
    if args.duration_s <= 0 or args.runs < 1 or args.channels not in (1, 2):
        raise CliError("usage", "need duration > 0, runs >= 1, channels 1 or 2", EXIT_USAGE)
    result = run_bench(args.duration_s, args.channels, args.runs, args.seed)
    print(json.dumps(result))
    return 0


def run_bench(duration_s: float = 12.0, channels: int = 2, runs: int = 100, seed: int = 0, sample_rate: int = 44100) -> dict:
    """Real-time factor of offline denoising: duration over wall time."""
    rng = np.random.default_rng(seed)
    n = int(duration_s * sample_rate)
    t = np.arange(n) / sample_rate
    x = 0.3 * np.sin(2 * np.pi * 220.0 * t) + 0.01 * rng.standard_normal((channels, n))
    audio = AudioBuffer(x, sample_rate)
    params = DenoiserParams.midpoint(np.full(27, -30.0))
    mode = StereoMode.LINKED if channels == 2 else StereoMode.DUAL_MONO
    denoise_offline(audio, params, mode)  # warm caches
    times = []
    for _ in range(runs):
        t0 = time.perf_counter()
        denoise_offline(audio, params, mode)
        times.append(time.perf_counter() - t0)
    times = np.array(times)
    rtf = duration_s / times
    return {
        "duration_s": duration_s,
        "channels": channels,
        "runs": runs,
        "mean_wall_s": float(times.mean()),
        "rtf": float(duration_s / times.mean()),
        "rtf_std": float(rtf.std()),
    }


# --- eval ------------------------------------------------------------------


def cmd_eval(args) -> int:
    records, examples = _load_examples(args.manifest, args.threads)
    config = DenoiserConfig()
    if args.checkpoint:
        net, _ = _load_net(args.checkpoint)

        def denoise(ex):
            track = controller_track(net, ex.noisy, ex.noisy.n_samples, config.stft)
            return denoise_offline(ex.noisy, track, _mode(ex), config)

    elif args.oracle:

        def denoise(ex):
            t = np.clip(ex.t_gt, DEFAULT_RANGES.threshold.min, DEFAULT_RANGES.threshold.max)
            return denoise_offline(ex.noisy, DenoiserParams.midpoint(t), _mode(ex), config)

    else:

        def denoise(ex):
            return ex.noisy

    report = evaluate_dataset(denoise, examples)
    prefix = Path(args.report)
    _check_output(prefix)
    report.write_csv(prefix.with_suffix(".csv"))
    report.write_json(prefix.with_suffix(".json"))
    print(json.dumps(report.aggregates()))
    return 0


def _mode(ex) -> StereoMode:
    return StereoMode.LINKED if ex.noisy.channels == 2 else StereoMode.DUAL_MONO


# --- compare-ballistics ----------------------------------------------------


def cmd_compare_ballistics(args) -> int:
    _check_output(args.out)
    frame_rate = 44100 / 256
    curve = StaticCurve(thresholds=-40.0, ratio=2.0, knee=0.0, mode=args.curve)
    rows = compare_ballistics(args.attack_ms, args.release_ms, gated_burst(frame_rate), curve)
    write_comparison_csv(rows, args.out)
    for release, max_dev, rms_dev in rows:
        print(f"release {release:g} ms: max deviation {max_dev:.6g} dB, rms {rms_dev:.6g} dB")
    return 0


# --- parser ----------------------------------------------------------------


def _float_list(text: str) -> list:
    return [float(v) for v in text.replace(",", " ").split()]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="specgate", description="Multi-band spectral gating denoiser with a trainable controller.")
    parser.add_argument("--threads", type=_threads, default=_default_threads(), help="worker threads (default: $SPECGATE_THREADS or 1)")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("denoise", help="denoise a WAV file")
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--checkpoint", help="controller checkpoint (automatic mode)")
    p.add_argument("--params", help="DenoiserParams or ParamTrack JSON")
    p.add_argument("--attack-ms", type=float)
    p.add_argument("--release-ms", type=float)
    p.add_argument("--knee-db", type=float)
    p.add_argument("--ratio", type=float)
    p.add_argument("--makeup-db", type=float)
    p.add_argument("--threshold-offset-db", type=float)
    p.add_argument("--noise-profile", help="noise profile JSON from estimate-noise")
    p.add_argument("--stereo-mode", choices=[m.value for m in StereoMode], default="dual-mono")
    p.add_argument("--segment-ms", type=float, default=65536 / 44.1, help="controller segment length in automatic mode")
    p.add_argument("--encoding", choices=("pcm16", "pcm24", "float32"), default="float32")
    p.set_defaults(func=cmd_denoise)

    p = sub.add_parser("estimate-noise", help="measure a per-band noise profile")
    p.add_argument("--input", required=True)
    p.add_argument("--noise-only-region", help="start:end in seconds; blind estimate when omitted")
    p.add_argument("--output", required=True)
    p.set_defaults(func=cmd_estimate_noise)

    p = sub.add_parser("make-manifest", help="write a synthetic mixture manifest")
    p.add_argument("--n", type=int, default=250)
    p.add_argument("--output", required=True)
    p.add_argument("--length", type=int, default=65536)
    p.add_argument("--channels", type=int, choices=(1, 2), default=1)
    p.add_argument("--source-dir", help="directory of clean WAV sources (mixed with synthetic ones)")
    p.add_argument("--ir-dir", help="directory of impulse-response WAVs")
    p.add_argument("--eq", action="store_true", help="random peaking EQ on sources")
    p.add_argument("--gain", action="store_true", help="slow sinusoidal gain on sources")
    p.set_defaults(func=cmd_make_manifest)

    p = sub.add_parser("train", help="two-stage controller training")
    p.add_argument("--manifest", required=True)
    p.add_argument("--stage", choices=("1", "2", "both"), default="both")
    p.add_argument("--config", help="JSON with stage1/stage2/val_fraction fields")
    p.add_argument("--checkpoint-in", help="starting checkpoint (required for stage 2 alone)")
    p.add_argument("--checkpoint-out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("bench", help="real-time factor benchmark")
    p.add_argument("--duration-s", type=float, default=12.0)
    p.add_argument("--channels", type=int, default=2)
    p.add_argument("--runs", type=int, default=100)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("eval", help="SI-SDR / mel-STFT report over a manifest")
    p.add_argument("--manifest", required=True)
    g = p.add_mutually_exclusive_group()
    g.add_argument("--checkpoint")
    g.add_argument("--oracle", action="store_true", help="ground-truth thresholds, midpoint parameters")
    g.add_argument("--identity", action="store_true", help="no processing (default)")
    p.add_argument("--report", required=True, help="output path prefix for .csv and .json")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("compare-ballistics", help="true vs approximate ballistics deviation")
    p.add_argument("--attack-ms", type=float, default=50.0)
    p.add_argument("--release-ms", type=_float_list, default=[10.0, 50.0, 100.0, 250.0, 500.0, 1000.0])
    p.add_argument("--curve", choices=("expander", "compressor"), default="expander", help="static curve feeding both smoothers")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_compare_ballistics)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
    try:
        return args.func(args)
    except CliError as exc:
        print(f"specgate: error: {exc.kind}: {exc}", file=sys.stderr)
        return exc.code
    except (OSError, ValueError) as exc:
        msg = str(exc).replace("\n", " ")
        print(f"specgate: error: {type(exc).__name__}: {msg}", file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
