import math

import pytest
from hypothesis import given, strategies as st

from aacons.sweep import SweepPoint, fit, instantiate, run_point, slope, sweep


def test_instantiate_per_n_overrides():
    tpl = {"mode": "aabc", "h0_fraction": "2/3", "per_n": {"4": {"inputs": [1, 1, 1, 1]}}}
    assert instantiate(tpl, 4, 3) == {"mode": "aabc", "h0_fraction": "2/3", "n": 4, "seed": 3,
                                      "inputs": [1, 1, 1, 1]}
    assert "inputs" not in instantiate(tpl, 5, 3)


@given(st.floats(0.5, 5), st.floats(0.1, 100))
def test_slope_recovers_power_law(k, c):
    xs = [4, 8, 16, 32]
    assert slope(xs, [c * x ** k for x in xs]) == pytest.approx(k, rel=1e-9)


def test_fit_uses_per_n_mean():
    pts = [SweepPoint(n, s, "quiescent", {"x": n * n * (1 + s)}, {"x": 1}, 1, 0) for n in (2, 4, 8) for s in (0, 1)]
    assert fit(pts)["x"] == pytest.approx(2.0)


def test_sweep_rejects_two_sizes():
    with pytest.raises(ValueError):
        sweep({"mode": "aarb", "h0_fraction": "2/3", "pre_gst_pattern": "none"}, [4, 8], [1])


def test_run_point_and_parallel_agree():
    tpl = {"mode": "aarb", "h0_fraction": "2/3", "pre_gst_pattern": "none"}
    serial = sweep(tpl, [4, 5, 6], [1, 2], workers=1)
    parallel = sweep(tpl, [4, 5, 6], [1, 2], workers=2)
    assert serial == parallel
    assert run_point((tpl, 4, 1)) == serial[0]


def test_aarb_message_count_is_quadratic_shape():
    # failure-free AARB: INIT n-1, ECHO n(n-1), READY n(n-1), plus whole broadcasts of timer relays
    p = run_point(({"mode": "aarb", "h0_fraction": "2/3", "pre_gst_pattern": "none"}, 7, 1))
    assert p.messages["aarb"] >= 6 + 2 * 7 * 6
    assert p.messages["aarb"] % 6 == 0
    assert math.isclose(slope([4, 8], [3 + 24, 7 + 112]), math.log(119 / 27) / math.log(2))
