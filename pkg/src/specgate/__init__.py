"""Hybrid multi-band spectral gating denoiser with a trainable controller."""

from specgate.audio import AudioBuffer, db_to_linear, linear_to_db, read_wav, write_wav
from specgate.denoiser import DenoiserParams, ParamTrack, StereoMode, create_stream, denoise_offline
from specgate.filterbank import BarkFilterbank, design_bark_filterbank
from specgate.spectral import StftConfig, istft, stft

__version__ = "0.1.0"

__all__ = [
    "AudioBuffer",
    "BarkFilterbank",
    "DenoiserParams",
    "ParamTrack",
    "StereoMode",
    "StftConfig",
    "create_stream",
    "db_to_linear",
    "denoise_offline",
    "design_bark_filterbank",
    "istft",
    "linear_to_db",
    "read_wav",
    "stft",
    "write_wav",
]
