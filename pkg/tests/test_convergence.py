import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from kzsurface.convergence import assess, error_orders, richardson


@given(st.floats(-5, 5), st.floats(0.1, 10), st.floats(0.5, 4), st.floats(0.05, 0.5))
@settings(max_examples=200)
def test_richardson_recovers_power_law(limit, c, p, h):
    q = [limit + c * (h / 2**k) ** p for k in range(3)]
    r = richardson(*q)
    assert r.status == "ok"
    assert r.order == pytest.approx(p, rel=1e-6, abs=1e-6)
    assert r.extrapolated == pytest.approx(limit, abs=1e-8 * max(1.0, c))


def test_richardson_sign_change_is_inconclusive():
    r = richardson(1.0, 1.1, 1.05)
    assert r.status == "inconclusive" and "sign" in r.reason
    assert r.order is None and r.extrapolated is None


def test_richardson_stalled_sequence():
    assert richardson(1.0, 0.9, 0.7).status == "inconclusive"
    assert richardson(1.0, 1.0, 1.0).order == math.inf


def test_error_orders():
    assert error_orders([1.0, 0.25, 0.0625]) == pytest.approx([2.0, 2.0])
    assert error_orders([1.0, 0.0]) == [None]


def test_assess_value_kind():
    rep = assess("x", [0, 1, 2, 3], [1 + 4.0**-k for k in range(4)], 1.5)
    assert rep.status == "pass"
    assert rep.orders == pytest.approx([2.0, 2.0])
    assert rep.extrapolated == pytest.approx(1.0)
    slow = assess("x", [0, 1, 2], [1 + 2.0**-k for k in range(3)], 1.5)
    assert slow.status == "fail"


def test_assess_error_kind_non_monotone():
    rep = assess("e", [0, 1, 2], [0.1, 0.2, 0.05], 1.0, kind="error")
    assert rep.status == "inconclusive" and "monotone" in rep.reason


def test_assess_needs_three_levels():
    assert assess("x", [0, 1], [1.0, 0.5], 1.0).status == "inconclusive"
    assert assess("x", [0, 1, 2], [0.4, 0.2, 0.1], 1.0, kind="error").as_dict()["status"] == "pass"
