import json

import numpy as np
import pytest

from specgate.audio import AudioBuffer
from specgate.denoiser import DenoiserParams, ParamTrack
from specgate.neural import (
    FORMAT_VERSION,
    CheckpointError,
    NetConfig,
    band_coordinates,
    controller_track,
    init_net,
    load_checkpoint,
    save_checkpoint,
    segment_features,
)
from specgate.ranges import DEFAULT_RANGES, ParamRanges


def _features(rng, n=2):
    return rng.standard_normal((n, NetConfig().feature_dim))


def test_band_coordinates():
    c = band_coordinates(27)
    assert c[0] == -1.0 and c[-1] == 1.0 and c.size == 27


def test_zero_final_layers_give_midpoints(rng):
    net = init_net(seed=3)
    thr, params = net.forward(_features(rng))
    assert np.allclose(thr, DEFAULT_RANGES.threshold.midpoint)
    p = params[0]
    assert p.attack_ms == pytest.approx(100.0)
    assert p.release_ms == pytest.approx(np.sqrt(50 * 250))
    assert (p.knee_db, p.ratio, p.makeup_db, p.threshold_offset) == pytest.approx((12.0, 6.0, 0.0, 10.0))


def test_deterministic_init(rng):
    a, b = init_net(seed=5), init_net(seed=5)
    for k in a.params:
        np.testing.assert_array_equal(a.params[k].data, b.params[k].data)
    assert not np.array_equal(init_net(seed=6).params["g_c.0.w"].data, a.params["g_c.0.w"].data)


def test_forward_finite_and_pure(rng):
    net = init_net(seed=1, zero_final=False)
    f = _features(rng, 4)
    t1, p1 = net.forward(f)
    t2, _ = net.forward(f)
    assert np.all(np.isfinite(t1))
    np.testing.assert_array_equal(t1, t2)
    assert len(p1) == 4 and isinstance(p1[0], DenoiserParams)


def test_feature_dimension_error(rng):
    with pytest.raises(ValueError):
        init_net().forward(rng.standard_normal((1, 10)))


def test_first_sine_preactivation_scale(rng):
    net = init_net(seed=0)
    pre = net.pre_activation(rng.standard_normal((4000, 1)))
    assert 0.5 <= pre.std() <= 2.0


def test_range_safety_random_weights(rng):
    for i in range(200):
        net = init_net(seed=i, zero_final=False)
        for v in net.params.values():
            v.data = v.data * rng.uniform(0.1, 50)
        _, params = net.forward(_features(rng, 3) * 10)
        for p in params:
            p.validate()


def test_segment_features(fb, rng):
    x = 0.1 * rng.standard_normal((2, 20000))
    f = segment_features(x, fb)
    assert f.shape == (56,) and np.all(np.isfinite(f))
    # standardized block: band means average to zero
    assert abs(f[:27].mean()) <= 1e-9
    g = segment_features(0.5 * x, fb)
    np.testing.assert_allclose(g[:54], f[:54], atol=1e-6)
    assert g[54] < f[54]


def test_checkpoint_round_trip(tmp_path, rng):
    net = init_net(seed=2, zero_final=False)
    save_checkpoint(net, tmp_path / "c.json")
    back, doc = load_checkpoint(tmp_path / "c.json")
    f = _features(rng)
    np.testing.assert_array_equal(net.forward(f)[0], back.forward(f)[0])
    assert doc["format_version"] == FORMAT_VERSION
    assert set(doc) >= {"net_config", "param_ranges", "stft_config", "filterbank_config", "weights"}


def test_checkpoint_custom_ranges(tmp_path):
    ranges = ParamRanges.from_dict({**DEFAULT_RANGES.to_dict(), "ratio": {"min": 1.5, "max": 4.0, "scale": "linear", "unit": ""}})
    save_checkpoint(init_net(ranges=ranges), tmp_path / "c.json")
    assert load_checkpoint(tmp_path / "c.json")[0].ranges.ratio.max == 4.0


def test_checkpoint_validation(tmp_path):
    save_checkpoint(init_net(), tmp_path / "c.json")
    doc = json.loads((tmp_path / "c.json").read_text())

    def broken(mutate):
        d = json.loads(json.dumps(doc))
        mutate(d)
        (tmp_path / "b.json").write_text(json.dumps(d))
        return tmp_path / "b.json"

    with pytest.raises(CheckpointError, match="format_version"):
        load_checkpoint(broken(lambda d: d.update(format_version=1)))
    with pytest.raises(CheckpointError, match="g_p.2.w"):
        load_checkpoint(broken(lambda d: d["weights"]["g_p.2.w"].update(shape=[3, 3])))
    with pytest.raises(CheckpointError, match="stft_config"):
        load_checkpoint(broken(lambda d: d.pop("stft_config")))
    with pytest.raises(CheckpointError, match="g_c.0.b"):
        load_checkpoint(broken(lambda d: d["weights"]["g_c.0.b"].update(values=["x"] * 128)))
    (tmp_path / "junk.json").write_text("{not json")
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "junk.json")


def test_controller_track(fb, rng):
    net = init_net(seed=0)
    audio = AudioBuffer(0.1 * rng.standard_normal((1, 3 * 8192 + 100)), 44100)
    track = controller_track(net, audio, 8192)
    assert isinstance(track, ParamTrack) and len(track.segments) == 4
    track.validate()
