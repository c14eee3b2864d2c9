import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from specgate.ranges import DEFAULT_RANGES, ParamRange, ParamRanges


def test_defaults_and_order():
    r = DEFAULT_RANGES
    assert (r.threshold.min, r.threshold.max) == (-80, 24)
    assert (r.threshold_offset.min, r.threshold_offset.max) == (-12, 32)
    assert (r.attack_ms.min, r.attack_ms.max, r.attack_ms.scale) == (10, 1000, "log")
    assert (r.release_ms.min, r.release_ms.max, r.release_ms.scale) == (50, 250, "log")
    assert (r.ratio.min, r.ratio.max) == (2, 10)
    assert (r.knee_db.min, r.knee_db.max) == (0, 24)
    assert (r.makeup_db.min, r.makeup_db.max) == (-12, 12)
    assert ParamRanges.HEAD_ORDER == ("attack_ms", "release_ms", "knee_db", "ratio", "makeup_db", "threshold_offset")


def test_denormalize_examples():
    lin = ParamRange("g", -12, 12)
    assert lin.denormalize(0.0) == -12 and lin.denormalize(1.0) == 12
    assert lin.denormalize(0.5) == 0.0
    assert DEFAULT_RANGES.attack_ms.denormalize(0.5) == pytest.approx(100.0, rel=1e-12)
    assert DEFAULT_RANGES.release_ms.midpoint == pytest.approx(111.80339887498948, rel=1e-12)


def test_invalid_ranges():
    with pytest.raises(ValueError):
        ParamRange("x", 1, 1)
    with pytest.raises(ValueError):
        ParamRange("x", 0, 10, "log")


def test_describe_and_check():
    assert DEFAULT_RANGES.attack_ms.describe() == "attack 10..1000 ms"
    with pytest.raises(ValueError, match="attack 10..1000 ms"):
        DEFAULT_RANGES.attack_ms.check(5.0)


@given(st.floats(0, 1), st.sampled_from(list(ParamRanges.HEAD_ORDER) + ["threshold"]))
def test_round_trip(raw, name):
    r = getattr(DEFAULT_RANGES, name)
    v = r.denormalize(raw)
    assert r.contains(v)
    assert r.normalize(v) == pytest.approx(raw, abs=1e-9)


def test_dict_round_trip():
    assert ParamRanges.from_dict(DEFAULT_RANGES.to_dict()) == DEFAULT_RANGES
    assert np.isclose(DEFAULT_RANGES.knee_db.midpoint, 12.0)
