import numpy as np
import pytest

from specgate.neural import init_net
from specgate.training import (
    AdamW,
    CountingLoss,
    LossCurve,
    MRStftConfig,
    ParamHeadLoss,
    Stage1Config,
    Stage2Config,
    TrainConfig,
    clip_global_norm,
    evaluate_controller,
    fd_gradient,
    mrstft_loss,
    mrstft_terms,
    prepare_examples,
    spsa_gradient,
    step_decay_lr,
    threshold_mse,
    train_stage1,
    train_stage2,
)
from specgate.autodiff import parameter
from specgate.denoiser import DenoiserConfig


# --- loss -------------------------------------------------------------------


def test_mrstft_identical_zero(rng):
    y = rng.standard_normal(20000)
    assert mrstft_loss(y, y) == 0.0


def test_mrstft_zero_estimate_sc_one(rng):
    y = rng.standard_normal(20000)
    for sc, _ in mrstft_terms(np.zeros_like(y), y):
        assert sc == 1.0


def test_mrstft_monotone_in_noise(rng):
    y = rng.standard_normal(20000)
    e = rng.standard_normal(20000)
    losses = [mrstft_loss(y + a * e, y) for a in (0.1, 0.01, 0.001)]
    assert losses[0] > losses[1] > losses[2] > 0


def test_mrstft_errors(rng):
    with pytest.raises(ValueError):
        mrstft_loss(np.zeros(20000), np.zeros(20001))
    with pytest.raises(ValueError):
        mrstft_loss(np.zeros(1000), np.zeros(1000))


def test_mrstft_config():
    cfgs = MRStftConfig().configs()
    assert [(c.fft_size, c.hop) for c in cfgs] == [(256, 128), (1024, 512), (4096, 2048), (16384, 8192)]


# --- optimizer ----------------------------------------------------------------


def test_lr_schedule():
    assert step_decay_lr(1e-4, 0, 100) == 1e-4
    assert step_decay_lr(1e-4, 79, 100) == 1e-4
    assert step_decay_lr(1e-4, 80, 100) == pytest.approx(1e-5)
    assert step_decay_lr(1e-4, 95, 100) == pytest.approx(1e-6)


def test_clip_global_norm():
    grads = {"a": np.array([3.0, 0.0]), "b": np.array([[4.0]])}
    clipped, norm = clip_global_norm(grads, 4.0)
    assert norm == 5.0
    total = np.sqrt(sum(np.sum(g**2) for g in clipped.values()))
    assert total == pytest.approx(4.0)
    same, _ = clip_global_norm(grads, 10.0)
    np.testing.assert_array_equal(same["a"], grads["a"])


def test_adamw_decoupled_decay():
    p = parameter(np.array([2.0, -4.0]))
    opt = AdamW({"p": p}, lr=0.1, weight_decay=0.01)
    opt.step({"p": np.zeros(2)})
    np.testing.assert_allclose(p.data, [2.0 * 0.999, -4.0 * 0.999])


def test_adamw_first_step_is_lr_sized():
    p = parameter(np.zeros(3))
    AdamW({"p": p}, lr=0.01, weight_decay=0.0).step({"p": np.array([5.0, -0.1, 1e-3])})
    np.testing.assert_allclose(np.abs(p.data), 0.01, rtol=1e-4)


# --- gradient estimators ------------------------------------------------------


def test_spsa_linear_unbiased():
    rng = np.random.default_rng(0)
    g = np.mean([spsa_gradient(lambda t: 1.7 * t[0], np.zeros(1), 0.01, 1, rng) for _ in range(10000)])
    assert g == pytest.approx(1.7, rel=0.02)
    # with several coordinates the cross terms add zero-mean noise per probe
    a = np.array([1.5, -2.0, 0.5])
    g = np.mean([spsa_gradient(lambda t: a @ t, np.zeros(3), 0.01, 1, rng) for _ in range(10000)], axis=0)
    assert np.linalg.norm(g - a) <= 0.02 * np.linalg.norm(a)


def test_spsa_quadratic():
    rng = np.random.default_rng(1)
    g = spsa_gradient(lambda t: t @ t, np.ones(2), 0.01, 10000, rng)
    np.testing.assert_allclose(g, [2.0, 2.0], rtol=0.05)


def test_spsa_eps_independent_on_quadratic():
    f = lambda t: t @ t
    a = spsa_gradient(f, np.ones(2), 0.01, 5000, np.random.default_rng(2))
    b = spsa_gradient(f, np.ones(2), 0.1, 5000, np.random.default_rng(2))
    # central differences are exact on quadratics, so same probes give same estimates
    np.testing.assert_allclose(a, b, rtol=1e-9)


def test_spsa_evaluation_count_and_nonfinite():
    f = CountingLoss(lambda t: t @ t)
    spsa_gradient(f, np.ones(4), 0.01, 6, np.random.default_rng(0))
    assert f.calls == 12
    calls = iter(range(100))

    def flaky(t):
        return np.nan if next(calls) < 2 else float(t @ t)

    g = spsa_gradient(flaky, np.ones(2), 0.01, 3, np.random.default_rng(0))
    assert np.all(np.isfinite(g))
    with pytest.raises(FloatingPointError):
        spsa_gradient(lambda t: np.inf, np.ones(2), 0.01, 3, np.random.default_rng(0))
    with pytest.raises(ValueError):
        spsa_gradient(lambda t: 0.0, np.ones(2), 0.0, 3)


def test_fd_gradient():
    f = CountingLoss(lambda t: float(t @ t))
    theta = np.array([0.3, -1.2, 2.0])
    np.testing.assert_allclose(fd_gradient(f, theta, 1e-4), 2 * theta, atol=1e-6)
    assert f.calls == 6


# --- stages -------------------------------------------------------------------


@pytest.fixture(scope="module")
def prepared(tiny_examples):
    net = init_net(seed=0)
    return prepare_examples(tiny_examples, net)


def test_prepare_targets_normalized(prepared):
    for p in prepared:
        assert np.all((p.target >= 0) & (p.target <= 1))
        assert p.features.shape == (56,)


def test_stage1_reduces_and_is_deterministic(prepared):
    train, val = prepared[:8], prepared[8:]
    cfg = Stage1Config(steps=150, lr=1e-3, batch_size=4, eval_every=50, seed=3)
    a = init_net(seed=1)
    ca = train_stage1(a, train, val, cfg)
    b = init_net(seed=1)
    train_stage1(b, train, val, cfg)
    for k in a.params:
        np.testing.assert_array_equal(a.params[k].data, b.params[k].data)
    assert np.all(np.isfinite([r[1] for r in ca.rows]))
    assert threshold_mse(a, train) < ca.rows[0][1]
    # stage 1 does not touch the parameter head
    np.testing.assert_array_equal(a.params["g_p.2.w"].data, 0.0)


def test_stage1_errors():
    with pytest.raises(ValueError):
        train_stage1(init_net(), [], [], Stage1Config(steps=1))
    with pytest.raises(ValueError):
        Stage1Config(steps=0)


def test_stage2_freeze_accounting_and_clip(prepared):
    net = init_net(seed=4)
    train_stage1(net, prepared[:8], [], Stage1Config(steps=20, lr=1e-3, batch_size=4))
    frozen = {k: v.data.copy() for k, v in net.params.items() if not k.startswith("g_p")}
    cfg = Stage2Config(steps=3, n_probes=2, batch_size=2, lr=1e-2, eval_every=3, grad_clip=0.5)
    curve, stats = train_stage2(net, prepared[:8], prepared[8:], cfg)
    for k, v in frozen.items():
        np.testing.assert_array_equal(net.params[k].data, v)
    assert stats["denoiser_runs"] == cfg.steps * 2 * cfg.n_probes * cfg.batch_size
    assert max(stats["applied_norms"]) <= 0.5 + 1e-9
    assert np.isfinite(curve.rows[-1][2])


def test_stage2_deterministic(prepared):
    cfg = Stage2Config(steps=2, n_probes=1, batch_size=2, eval_every=2)
    a, b = init_net(seed=4), init_net(seed=4)
    train_stage2(a, prepared[:4], [], cfg)
    train_stage2(b, prepared[:4], [], cfg)
    np.testing.assert_array_equal(a.flat("g_p"), b.flat("g_p"))
    with pytest.raises(ValueError):
        train_stage2(a, [], [], cfg)


def test_param_head_loss_is_pure(prepared):
    net = init_net(seed=0, zero_final=False)
    loss = ParamHeadLoss(net, prepared[:2], DenoiserConfig())
    theta = net.flat("g_p")
    before = net.flat("g_p").copy()
    v1 = loss(theta + 0.01)
    v2 = loss(theta + 0.01)
    assert v1 == v2
    np.testing.assert_array_equal(net.flat("g_p"), before)
    assert loss.denoiser_runs == 4


def test_midpoint_evaluation(prepared):
    net = init_net(seed=0)
    a = evaluate_controller(net, prepared[:3], DenoiserConfig())
    b = evaluate_controller(net, prepared[:3], DenoiserConfig(), midpoint=True)
    assert a == b  # zero-initialized head already sits at the midpoints


def test_loss_curve_csv(tmp_path):
    c = LossCurve()
    c.add(0, 1.0, float("nan"), 1e-4)
    c.add(10, 0.5, 0.6, 1e-5)
    c.write_csv(tmp_path / "l.csv")
    lines = (tmp_path / "l.csv").read_text().splitlines()
    assert lines[0] == "step,train_loss,val_loss,lr" and len(lines) == 3
    np.testing.assert_array_equal(c.val_losses, [0.6])


def test_train_config_dict():
    cfg = TrainConfig.from_dict({"stage1": {"steps": 7}, "stage2": {"n_probes": 2}, "val_fraction": 0.1})
    assert cfg.stage1.steps == 7 and cfg.stage2.n_probes == 2 and cfg.stage2.eps == 0.01
    assert TrainConfig.from_dict(cfg.to_dict()) == cfg
