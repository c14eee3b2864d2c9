"""Controller network: feature extractor, INR noise-spectrum head, parameter head.

``g_c``  dense layers mapping per-segment features to a latent ``z``.
``g_t``  sine-activated implicit representation over normalized band index,
         with a modulator turning ``z`` into one scaling vector per layer.
``g_p``  3-layer MLP from ``z`` to the six shared denoiser controls.

Both heads end in a sigmoid and are denormalized into :class:`ParamRanges`,
so every output is inside its legal range whatever the weights are.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from specgate.autodiff import Tensor, parameter
from specgate.denoiser import DenoiserParams
from specgate.filterbank import ENERGY_EPS, BarkFilterbank, band_power
from specgate.ranges import DEFAULT_RANGES, ParamRanges
from specgate.spectral import StftConfig, analyze_frames

FORMAT_VERSION = 2
FEATURE_LEVEL_SCALE = 0.02  # dB -> O(1) for the appended mu/sigma


class CheckpointError(ValueError):
    pass


@dataclass(frozen=True)
class NetConfig:
    n_bands: int = 27
    feature_hidden: tuple = (128,)
    latent_dim: int = 64
    inr_width: int = 64
    inr_layers: int = 3
    omega0: float = 30.0
    mod_hidden: int = 64
    mod_layers: int = 2
    head_hidden: int = 64
    n_params: int = 6

    @property
    def feature_dim(self) -> int:
        return 2 * self.n_bands + 2

    def to_dict(self) -> dict:
        d = asdict(self)
        d["feature_hidden"] = list(self.feature_hidden)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "NetConfig":
        d = dict(d)
        d["feature_hidden"] = tuple(d.get("feature_hidden", (128,)))
        return cls(**d)


def segment_features(samples: np.ndarray, fb: BarkFilterbank, config: StftConfig | None = None) -> np.ndarray:
    """Feature vector of one segment: per-band mean and std of the
    mean/std-normalized band energies, then the raw mean and std (scaled)."""
    config = config or StftConfig()
    x = np.atleast_2d(samples)
    if x.shape[-1] < config.fft_size:
        x = np.pad(x, ((0, 0), (0, config.fft_size - x.shape[-1])))
    frames = np.lib.stride_tricks.sliding_window_view(x, config.fft_size, axis=-1)[:, :: config.hop]
    power = band_power(np.abs(analyze_frames(frames, config)), fb).mean(axis=0)
    e = 10.0 * np.log10(power + ENERGY_EPS)
    mu, sigma = e.mean(), e.std() + 1e-6
    ep = (e - mu) / sigma
    return np.concatenate([ep.mean(axis=0), ep.std(axis=0), [mu * FEATURE_LEVEL_SCALE, sigma * FEATURE_LEVEL_SCALE]])


def band_coordinates(n_bands: int) -> np.ndarray:
    """Band indices mapped linearly onto [-1, 1]."""
    return np.linspace(-1.0, 1.0, n_bands)


class ControllerNet:
    GROUPS = ("g_c", "g_t", "g_p")

    def __init__(self, config: NetConfig, params: dict, ranges: ParamRanges = DEFAULT_RANGES):
        self.config = config
        self.params = params
        self.ranges = ranges
        self._coords = Tensor(band_coordinates(config.n_bands)[:, None])

    # --- parameter bookkeeping ---

    def group(self, name: str) -> dict:
        return {k: v for k, v in self.params.items() if k.startswith(name + ".")}

    def parameters(self, groups=GROUPS) -> list:
        return [v for k, v in self.params.items() if k.split(".")[0] in groups]

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def state_dict(self) -> dict:
        return {k: v.data.copy() for k, v in self.params.items()}

    def flat(self, group: str) -> np.ndarray:
        return np.concatenate([v.data.ravel() for v in self.group(group).values()])

    def set_flat(self, group: str, theta: np.ndarray) -> None:
        pos = 0
        for v in self.group(group).values():
            n = v.data.size
            v.data = theta[pos : pos + n].reshape(v.data.shape).copy()
            pos += n

    def n_weights(self, groups=GROUPS) -> int:
        return sum(p.data.size for p in self.parameters(groups))

    # --- forward ---

    def _dense(self, x: Tensor, prefix: str) -> Tensor:
        return x @ self.params[prefix + ".w"] + self.params[prefix + ".b"]

    def latent(self, features) -> Tensor:
        h = Tensor(np.atleast_2d(features))
        if h.shape[-1] != self.config.feature_dim:
            raise ValueError(f"expected {self.config.feature_dim} features, got {h.shape[-1]}")
        for i in range(len(self.config.feature_hidden)):
            h = self._dense(h, f"g_c.{i}").relu()
        return self._dense(h, "g_c.out").tanh()

    def pre_activation(self, coords) -> np.ndarray:
        """First sine layer input before the omega0 scaling (for init checks)."""
        return (Tensor(coords) @ self.params["g_t.sine0.w"] + self.params["g_t.sine0.b"]).data

    def threshold_head(self, z: Tensor) -> Tensor:
        """Sigmoid outputs of shape (batch, B)."""
        cfg = self.config
        m = z
        for i in range(cfg.mod_layers):
            m = self._dense(m, f"g_t.mod{i}").relu()
        batch = z.shape[0]
        h = self._coords  # (B, 1)
        for l in range(cfg.inr_layers):
            scale = self._dense(m, f"g_t.scale{l}") + 1.0  # (batch, width)
            pre = self._dense(h, f"g_t.sine{l}") * cfg.omega0
            h = pre.sin() * scale.reshape(batch, 1, cfg.inr_width)
        out = self._dense(h, "g_t.out")  # (batch, B, 1)
        return out.reshape(batch, cfg.n_bands).sigmoid()

    def param_head(self, z: Tensor) -> Tensor:
        """Sigmoid outputs of shape (batch, 6) in ``ParamRanges.HEAD_ORDER``."""
        h = self._dense(z, "g_p.0").relu()
        h = self._dense(h, "g_p.1").relu()
        return self._dense(h, "g_p.2").sigmoid()

    def forward(self, features):
        """Denormalized outputs: thresholds (batch, B) in dB and a list of
        :class:`DenoiserParams`."""
        z = self.latent(features)
        t_raw = self.threshold_head(z).data
        p_raw = self.param_head(z).data
        return self.denormalize_outputs(t_raw, p_raw)

    def denormalize_outputs(self, t_raw: np.ndarray, p_raw: np.ndarray):
        thresholds = self.ranges.threshold.denormalize(t_raw)
        return thresholds, [params_from_raw(thr, p, self.ranges) for thr, p in zip(thresholds, p_raw)]


def params_from_raw(thresholds_db, p_raw, ranges: ParamRanges = DEFAULT_RANGES) -> DenoiserParams:
    vals = {k: float(r.denormalize(v)) for k, r, v in zip(ranges.HEAD_ORDER, ranges.head_ranges(), p_raw)}
    return DenoiserParams(np.asarray(thresholds_db, dtype=np.float64), **vals)


def _uniform(rng, shape, bound):
    return rng.uniform(-bound, bound, shape)


def init_net(config: NetConfig | None = None, seed: int = 0, ranges: ParamRanges = DEFAULT_RANGES, zero_final: bool = True) -> ControllerNet:
    """Dense layers uniform +-sqrt(6/fan_in); sine layers SIREN-style.

    With ``zero_final`` the last layer of each head starts at zero, so every
    output starts at the middle of its range.
    """
    config = config or NetConfig()
    rng = np.random.default_rng(seed)
    p = {}

    def dense(name, fan_in, fan_out, zero=False):
        w = np.zeros((fan_in, fan_out)) if zero else _uniform(rng, (fan_in, fan_out), np.sqrt(6.0 / fan_in))
        p[name + ".w"] = parameter(w, name + ".w")
        p[name + ".b"] = parameter(np.zeros(fan_out), name + ".b")

    d = config.feature_dim
    for i, width in enumerate(config.feature_hidden):
        dense(f"g_c.{i}", d, width)
        d = width
    dense("g_c.out", d, config.latent_dim)

    d = config.latent_dim
    for i in range(config.mod_layers):
        dense(f"g_t.mod{i}", d, config.mod_hidden)
        d = config.mod_hidden
    w = config.inr_width
    for l in range(config.inr_layers):
        fan_in = 1 if l == 0 else w
        bound = 1.0 / fan_in if l == 0 else np.sqrt(6.0 / fan_in) / config.omega0
        p[f"g_t.sine{l}.w"] = parameter(_uniform(rng, (fan_in, w), bound), f"g_t.sine{l}.w")
        p[f"g_t.sine{l}.b"] = parameter(_uniform(rng, w, 1.0 / np.sqrt(fan_in)), f"g_t.sine{l}.b")
        # modulation starts near identity scaling
        p[f"g_t.scale{l}.w"] = parameter(_uniform(rng, (config.mod_hidden, w), 0.1 / np.sqrt(config.mod_hidden)), f"g_t.scale{l}.w")
        p[f"g_t.scale{l}.b"] = parameter(np.zeros(w), f"g_t.scale{l}.b")
    dense("g_t.out", w, 1, zero=zero_final)

    dense("g_p.0", config.latent_dim, config.head_hidden)
    dense("g_p.1", config.head_hidden, config.head_hidden)
    dense("g_p.2", config.head_hidden, config.n_params, zero=zero_final)
    return ControllerNet(config, p, ranges)


# --- checkpoints ---------------------------------------------------------------


def save_checkpoint(net: ControllerNet, path, stft_config: StftConfig | None = None, filterbank: dict | None = None, extra: dict | None = None) -> None:
    stft_config = stft_config or StftConfig()
    doc = {
        "format_version": FORMAT_VERSION,
        "net_config": net.config.to_dict(),
        "param_ranges": net.ranges.to_dict(),
        "stft_config": stft_config.to_dict(),
        "filterbank_config": filterbank or {"n_bands": net.config.n_bands, "sample_rate": 44100, "fft_size": stft_config.fft_size},
        "weights": {k: {"shape": list(v.data.shape), "values": v.data.ravel().tolist()} for k, v in net.params.items()},
    }
    if extra:
        doc["extra"] = extra
    Path(path).write_text(json.dumps(doc))


def load_checkpoint(path) -> tuple[ControllerNet, dict]:
    """Load and validate a checkpoint; returns ``(net, document)``."""
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"{path}: not valid JSON ({exc})") from exc
    version = doc.get("format_version")
    if version != FORMAT_VERSION:
        raise CheckpointError(f"unsupported checkpoint format_version {version!r} (expected {FORMAT_VERSION})")
    for key in ("net_config", "param_ranges", "stft_config", "filterbank_config", "weights"):
        if key not in doc:
            raise CheckpointError(f"checkpoint missing field {key!r}")
    try:
        config = NetConfig.from_dict(doc["net_config"])
    except TypeError as exc:
        raise CheckpointError(f"invalid field 'net_config': {exc}") from exc
    try:
        ranges = ParamRanges.from_dict(doc["param_ranges"])
    except (KeyError, TypeError, ValueError) as exc:
        raise CheckpointError(f"invalid field 'param_ranges': {exc}") from exc
    template = init_net(config, 0, ranges)
    weights = doc["weights"]
    for name, ref in template.params.items():
        if name not in weights:
            raise CheckpointError(f"checkpoint missing weight {name!r}")
        entry = weights[name]
        try:
            arr = np.asarray(entry["values"], dtype=np.float64)
        except (TypeError, ValueError, KeyError) as exc:
            raise CheckpointError(f"invalid values for weight {name!r}") from exc
        if list(entry.get("shape", [])) != list(ref.data.shape) or arr.size != ref.data.size:
            raise CheckpointError(f"shape mismatch for weight {name!r}: expected {list(ref.data.shape)}")
        if not np.all(np.isfinite(arr)):
            raise CheckpointError(f"non-finite values in weight {name!r}")
        ref.data = arr.reshape(ref.data.shape)
    extra = set(weights) - set(template.params)
    if extra:
        raise CheckpointError(f"unexpected weights {sorted(extra)}")
    return template, doc


def checkpoint_stft_config(doc: dict) -> StftConfig:
    d = doc["stft_config"]
    return StftConfig(int(d["fft_size"]), int(d["hop"]), d.get("window", "hann"))


def controller_track(net: ControllerNet, audio, segment_length: int = 65536, stft_config: StftConfig | None = None, fb=None):
    """Run the controller once per segment of ``audio`` and return a
    :class:`ParamTrack` for the denoiser.

    A short final segment is analyzed over the last full ``segment_length``
    samples when the input is long enough.
    """
    from specgate.denoiser import ParamTrack
    from specgate.filterbank import design_bark_filterbank

    stft_config = stft_config or StftConfig()
    fb = fb or design_bark_filterbank(net.config.n_bands, audio.sample_rate, stft_config.fft_size)
    x = audio.samples
    n = x.shape[1]
    n_seg = max(1, -(-n // segment_length))
    feats = []
    for k in range(n_seg):
        start = k * segment_length
        stop = min(n, start + segment_length)
        if stop - start < segment_length and n >= segment_length:
            start = n - segment_length
        feats.append(segment_features(x[:, start:stop], fb, stft_config))
    _, params = net.forward(np.stack(feats))
    return ParamTrack(params, segment_length)
