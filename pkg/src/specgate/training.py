"""Two-stage controller training.

Stage 1 regresses the range-normalized noise spectrum with exact gradients
from :mod:`specgate.autodiff`. Stage 2 freezes the feature network and the
threshold head and tunes the parameter head with SPSA gradient estimates of
a multi-resolution STFT loss measured through the real denoiser.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from specgate.autodiff import Tensor, mse
from specgate.denoiser import DenoiserConfig, StereoMode, process_spectrum, resolve_param_track
from specgate.metrics import LOG_EPS, si_sdr
from specgate.neural import ControllerNet, params_from_raw, segment_features
from specgate.spectral import StftConfig, analyze_frames, frame_signal, overlap_add, synthesize_frames

log = logging.getLogger(__name__)


# --- loss ----------------------------------------------------------------------


@dataclass(frozen=True)
class MRStftConfig:
    windows: tuple = (256, 1024, 4096, 16384)

    def configs(self) -> list[StftConfig]:
        return [StftConfig(w, w // 2) for w in self.windows]


def _mag(x: np.ndarray, cfg: StftConfig) -> np.ndarray:
    return np.abs(analyze_frames(frame_signal(np.atleast_2d(x), cfg), cfg))


def reference_mags(reference, config: MRStftConfig = MRStftConfig()) -> list:
    """Reference magnitudes per resolution, for reuse across many estimates."""
    return [_mag(reference, c) for c in config.configs()]


def _sc_logmag(est: np.ndarray, ref: np.ndarray) -> tuple[float, float]:
    den = np.linalg.norm(ref)
    num = np.linalg.norm(est - ref)
    sc = (0.0 if num == 0 else np.inf) if den == 0 else num / den
    return float(sc), float(np.mean(np.abs(np.log(est + LOG_EPS) - np.log(ref + LOG_EPS))))


def mrstft_terms(estimate, reference, config: MRStftConfig = MRStftConfig(), ref_mags=None) -> list:
    """``(spectral_convergence, log_l1)`` for each resolution."""
    est = np.atleast_2d(np.asarray(estimate, dtype=np.float64))
    ref = np.atleast_2d(np.asarray(reference, dtype=np.float64))
    if est.shape != ref.shape:
        raise ValueError("estimate and reference lengths differ")
    if est.shape[-1] < max(config.windows):
        raise ValueError(f"signals shorter than the largest window {max(config.windows)}")
    ref_mags = ref_mags if ref_mags is not None else reference_mags(ref, config)
    return [_sc_logmag(_mag(est, c), r) for c, r in zip(config.configs(), ref_mags)]


def mrstft_loss(estimate, reference, config: MRStftConfig = MRStftConfig(), ref_mags=None) -> float:
    """Mean over resolutions of spectral convergence plus log-magnitude L1."""
    return float(np.mean([sc + lm for sc, lm in mrstft_terms(estimate, reference, config, ref_mags)]))


# --- optimizer -------------------------------------------------------------------


def clip_global_norm(grads: dict, max_norm: float) -> tuple[dict, float]:
    """Scale all gradients together so their joint L2 norm is at most ``max_norm``."""
    norm = float(np.sqrt(sum(float(np.sum(g * g)) for g in grads.values())))
    if norm > max_norm:
        s = max_norm / norm
        grads = {k: g * s for k, g in grads.items()}
    return grads, norm


class AdamW:
    """Adam with decoupled weight decay, updating arrays held by tensors."""

    def __init__(self, params: dict, lr: float = 1e-4, betas=(0.9, 0.999), eps: float = 1e-8, weight_decay: float = 0.01):
        self.params = params
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.wd = weight_decay
        self.t = 0
        self.m = {k: np.zeros_like(v.data) for k, v in params.items()}
        self.v = {k: np.zeros_like(v.data) for k, v in params.items()}

    def step(self, grads: dict) -> None:
        self.t += 1
        c1 = 1.0 - self.b1**self.t
        c2 = 1.0 - self.b2**self.t
        for k, g in grads.items():
            p = self.params[k]
            self.m[k] = self.b1 * self.m[k] + (1 - self.b1) * g
            self.v[k] = self.b2 * self.v[k] + (1 - self.b2) * g * g
            p.data = p.data * (1.0 - self.lr * self.wd) - self.lr * (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + self.eps)


def step_decay_lr(base_lr: float, step: int, total: int) -> float:
    """Learning rate divided by 10 at 80% and again at 95% of training."""
    lr = base_lr
    if step >= int(0.8 * total):
        lr *= 0.1
    if step >= int(0.95 * total):
        lr *= 0.1
    return lr


# --- gradient estimators -------------------------------------------------------


class CountingLoss:
    """Wrap a loss function and count its evaluations."""

    def __init__(self, fn):
        self.fn = fn
        self.calls = 0

    def __call__(self, theta):
        self.calls += 1
        return self.fn(theta)


def spsa_gradient(loss_fn, theta, eps: float = 0.01, n_probes: int = 1, rng: np.random.Generator | None = None) -> np.ndarray:
    """Simultaneous-perturbation gradient estimate with Rademacher probes.

    Each probe costs two loss evaluations. Probes whose loss is not finite are
    dropped; if all are dropped a ``FloatingPointError`` is raised.
    """
    if eps <= 0:
        raise ValueError("eps must be > 0")
    if n_probes < 1:
        raise ValueError("n_probes must be >= 1")
    rng = rng if rng is not None else np.random.default_rng()
    theta = np.asarray(theta, dtype=np.float64)
    total = np.zeros_like(theta)
    kept = 0
    for _ in range(n_probes):
        delta = rng.choice((-1.0, 1.0), size=theta.shape)
        lp = loss_fn(theta + eps * delta)
        lm = loss_fn(theta - eps * delta)
        if not (np.isfinite(lp) and np.isfinite(lm)):
            continue
        # 1/delta == delta for +-1 entries
        total += (lp - lm) / (2.0 * eps) * delta
        kept += 1
    if kept == 0:
        raise FloatingPointError("all SPSA probes produced non-finite losses")
    return total / kept


def fd_gradient(loss_fn, theta, h: float = 1e-4) -> np.ndarray:
    """Central finite differences, two evaluations per coordinate."""
    theta = np.asarray(theta, dtype=np.float64)
    grad = np.empty_like(theta)
    for i in range(theta.size):
        e = np.zeros_like(theta)
        e.flat[i] = h
        lp, lm = loss_fn(theta + e), loss_fn(theta - e)
        if not (np.isfinite(lp) and np.isfinite(lm)):
            raise FloatingPointError(f"non-finite loss at coordinate {i}")
        grad.flat[i] = (lp - lm) / (2.0 * h)
    return grad


# --- prepared data -------------------------------------------------------------


@dataclass
class PreparedExample:
    """Everything the trainers need from one mixture, computed once."""

    features: np.ndarray
    target: np.ndarray  # normalized noise spectrum in [0, 1]
    noisy_spec: np.ndarray
    clean: np.ndarray
    ref_mags: list
    n_samples: int
    sample_rate: int
    noisy: np.ndarray


def prepare_examples(examples, net: ControllerNet, config: DenoiserConfig | None = None, mr: MRStftConfig = MRStftConfig(), with_audio: bool = True) -> list:
    config = config or DenoiserConfig(n_bands=net.config.n_bands)
    out = []
    for ex in examples:
        sr = ex.noisy.sample_rate
        fb = config.filterbank(sr)
        x = ex.noisy.samples
        spec = ref = None
        if with_audio:
            spec = analyze_frames(frame_signal(x, config.stft), config.stft)
            ref = reference_mags(ex.clean.samples, mr)
        target = np.clip(net.ranges.threshold.normalize(ex.t_gt), 0.0, 1.0)
        out.append(PreparedExample(segment_features(x, fb, config.stft), target, spec, ex.clean.samples, ref, ex.noisy.n_samples, sr, x))
    return out


def render(prep: PreparedExample, params, config: DenoiserConfig) -> np.ndarray:
    """Denoise a prepared example's cached spectrum back to samples."""
    sc = config.stft
    fb = config.filterbank(prep.sample_rate)
    fp = resolve_param_track(params, prep.noisy_spec.shape[1], sc)
    mode = StereoMode.LINKED if prep.noisy_spec.shape[0] == 2 else StereoMode.DUAL_MONO
    out, _ = process_spectrum(prep.noisy_spec, fp, fb, mode, prep.sample_rate, sc.hop, None, config.mask_floor_db)
    return overlap_add(synthesize_frames(out, sc), sc.hop)[:, sc.pad : sc.pad + prep.n_samples]


# --- stage 1 -------------------------------------------------------------------


@dataclass
class Stage1Config:
    steps: int = 5000
    lr: float = 1e-4
    batch_size: int = 8
    grad_clip: float = 4.0
    weight_decay: float = 0.01
    eval_every: int = 100
    seed: int = 0

    def __post_init__(self):
        if self.steps <= 0:
            raise ValueError("steps must be > 0")
        if self.batch_size <= 0:
            raise ValueError("batch_size must be > 0")


@dataclass
class LossCurve:
    rows: list = field(default_factory=list)

    def add(self, step, train_loss, val_loss, lr):
        self.rows.append((int(step), float(train_loss), float(val_loss), float(lr)))

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(("step", "train_loss", "val_loss", "lr"))
            for r in self.rows:
                w.writerow((r[0], f"{r[1]:.8g}", "" if np.isnan(r[2]) else f"{r[2]:.8g}", f"{r[3]:.3g}"))

    @property
    def val_losses(self) -> np.ndarray:
        return np.array([r[2] for r in self.rows if not np.isnan(r[2])])


def threshold_mse(net: ControllerNet, prepared) -> float:
    if not prepared:
        return float("nan")
    feats = np.stack([p.features for p in prepared])
    targets = np.stack([p.target for p in prepared])
    pred = net.threshold_head(net.latent(feats)).data
    return float(np.mean((pred - targets) ** 2))


def train_stage1(net: ControllerNet, train, val=(), config: Stage1Config = Stage1Config()) -> LossCurve:
    """Fit ``g_c`` and ``g_t`` to the normalized ground-truth noise spectra.

    ``train`` and ``val`` are lists of :class:`PreparedExample`.
    """
    if not train:
        raise ValueError("empty training set")
    rng = np.random.default_rng(config.seed)
    trainable = {k: v for k, v in net.params.items() if k.split(".")[0] in ("g_c", "g_t")}
    opt = AdamW(trainable, config.lr, weight_decay=config.weight_decay)
    feats = np.stack([p.features for p in train])
    targets = np.stack([p.target for p in train])
    curve = LossCurve()
    curve.add(0, threshold_mse(net, train), threshold_mse(net, val), config.lr)
    for step in range(1, config.steps + 1):
        idx = rng.choice(len(train), size=min(config.batch_size, len(train)), replace=False)
        net.zero_grad()
        loss = mse(net.threshold_head(net.latent(feats[idx])), targets[idx])
        loss.backward()
        grads = {k: v.grad if v.grad is not None else np.zeros_like(v.data) for k, v in trainable.items()}
        grads, _ = clip_global_norm(grads, config.grad_clip)
        opt.lr = step_decay_lr(config.lr, step - 1, config.steps)
        opt.step(grads)
        if not np.isfinite(loss.data):
            raise FloatingPointError(f"stage 1 loss became non-finite at step {step}")
        last = step == config.steps
        if step % config.eval_every == 0 or last:
            val_loss = threshold_mse(net, val)
            curve.add(step, float(loss.data), val_loss, opt.lr)
            log.info("stage1 step %d train %.5f val %.5f", step, float(loss.data), val_loss)
    net.zero_grad()
    return curve


# --- stage 2 -------------------------------------------------------------------


@dataclass
class Stage2Config:
    steps: int = 1000
    eps: float = 0.01
    n_probes: int = 4
    lr: float = 1e-3
    batch_size: int = 8
    grad_clip: float = 4.0
    weight_decay: float = 0.01
    eval_every: int = 50
    seed: int = 0

    def __post_init__(self):
        if self.steps <= 0:
            raise ValueError("steps must be > 0")
        if self.eps <= 0:
            raise ValueError("eps must be > 0")
        if self.n_probes < 1:
            raise ValueError("n_probes must be >= 1")


class ParamHeadLoss:
    """MRSTFT loss through the denoiser as a pure function of the flat
    parameter-head weights, for a fixed batch."""

    def __init__(self, net: ControllerNet, batch, config: DenoiserConfig, mr: MRStftConfig = MRStftConfig()):
        self.net = net
        self.batch = batch
        self.config = config
        self.mr = mr
        feats = np.stack([p.features for p in batch])
        z = net.latent(feats)
        self.z = Tensor(z.data)
        self.thresholds = net.ranges.threshold.denormalize(net.threshold_head(z).data)
        self.denoiser_runs = 0

    def params_for(self, theta: np.ndarray) -> list:
        saved = self.net.flat("g_p")
        self.net.set_flat("g_p", theta)
        try:
            raw = self.net.param_head(self.z).data
        finally:
            self.net.set_flat("g_p", saved)
        return [params_from_raw(t, r, self.net.ranges) for t, r in zip(self.thresholds, raw)]

    def per_example(self, theta: np.ndarray) -> np.ndarray:
        losses = []
        for prep, params in zip(self.batch, self.params_for(theta)):
            y_hat = render(prep, params, self.config)
            self.denoiser_runs += 1
            losses.append(mrstft_loss(y_hat, prep.clean, self.mr, prep.ref_mags))
        return np.array(losses)

    def __call__(self, theta: np.ndarray) -> float:
        return float(np.mean(self.per_example(theta)))


def evaluate_controller(net: ControllerNet, prepared, config: DenoiserConfig, mr: MRStftConfig = MRStftConfig(), midpoint: bool = False) -> dict:
    """Mean MRSTFT and SI-SDR of the controller-driven denoiser.

    With ``midpoint`` the parameter head is bypassed and every scalar control
    sits at the middle of its range (thresholds still come from ``g_t``).
    """
    if not prepared:
        return {"mrstft": float("nan"), "si_sdr": float("nan")}
    feats = np.stack([p.features for p in prepared])
    z = net.latent(feats)
    thresholds = net.ranges.threshold.denormalize(net.threshold_head(z).data)
    raw = np.full((len(prepared), 6), 0.5) if midpoint else net.param_head(z).data
    losses, sdrs = [], []
    for prep, thr, r in zip(prepared, thresholds, raw):
        y_hat = render(prep, params_from_raw(thr, r, net.ranges), config)
        losses.append(mrstft_loss(y_hat, prep.clean, mr, prep.ref_mags))
        sdrs.append(si_sdr(y_hat, prep.clean))
    return {"mrstft": float(np.mean(losses)), "si_sdr": float(np.mean(sdrs))}


def train_stage2(
    net: ControllerNet,
    train,
    val=(),
    config: Stage2Config = Stage2Config(),
    denoiser_config: DenoiserConfig | None = None,
    mr: MRStftConfig = MRStftConfig(),
) -> tuple[LossCurve, dict]:
    """Tune ``g_p`` with SPSA; ``g_c`` and ``g_t`` stay bit-identical.

    Returns the loss curve and bookkeeping (denoiser runs, clipped norms).
    """
    if not train:
        raise ValueError("empty training set")
    denoiser_config = denoiser_config or DenoiserConfig(n_bands=net.config.n_bands)
    rng = np.random.default_rng(config.seed)
    frozen = {k: v.data.copy() for k, v in net.params.items() if not k.startswith("g_p.")}
    head = net.group("g_p")
    opt = AdamW(head, config.lr, weight_decay=config.weight_decay)
    shapes = [(k, v.data.shape, v.data.size) for k, v in head.items()]
    curve = LossCurve()
    stats = {"denoiser_runs": 0, "grad_norms": [], "applied_norms": []}
    curve.add(0, float("nan"), evaluate_controller(net, val, denoiser_config, mr)["mrstft"] if val else float("nan"), config.lr)
    for step in range(1, config.steps + 1):
        idx = rng.choice(len(train), size=min(config.batch_size, len(train)), replace=False)
        loss_fn = ParamHeadLoss(net, [train[i] for i in idx], denoiser_config, mr)
        theta = net.flat("g_p")
        flat_grad = spsa_gradient(loss_fn, theta, config.eps, config.n_probes, rng)
        stats["denoiser_runs"] += loss_fn.denoiser_runs
        grads, pos = {}, 0
        for k, shape, n in shapes:
            grads[k] = flat_grad[pos : pos + n].reshape(shape)
            pos += n
        grads, norm = clip_global_norm(grads, config.grad_clip)
        stats["grad_norms"].append(norm)
        stats["applied_norms"].append(float(np.sqrt(sum(np.sum(g * g) for g in grads.values()))))
        opt.lr = step_decay_lr(config.lr, step - 1, config.steps)
        opt.step(grads)
        last = step == config.steps
        if step % config.eval_every == 0 or last:
            train_loss = loss_fn(net.flat("g_p"))
            val_loss = evaluate_controller(net, val, denoiser_config, mr)["mrstft"] if val else float("nan")
            curve.add(step, train_loss, val_loss, opt.lr)
            log.info("stage2 step %d train %.5f val %.5f", step, train_loss, val_loss)
    for k, v in frozen.items():
        assert np.array_equal(net.params[k].data, v), f"frozen weight {k} was modified"
    return curve, stats


@dataclass
class TrainConfig:
    """Both stages plus data sizes, as read from a JSON config file."""

    stage1: Stage1Config = field(default_factory=Stage1Config)
    stage2: Stage2Config = field(default_factory=Stage2Config)
    val_fraction: float = 0.2

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        return cls(
            Stage1Config(**d.get("stage1", {})),
            Stage2Config(**d.get("stage2", {})),
            float(d.get("val_fraction", 0.2)),
        )

    def to_dict(self) -> dict:
        return asdict(self)
