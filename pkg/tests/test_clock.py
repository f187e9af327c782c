import logging
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import W0
from vpdroop.clock import ClockEvent, ClockModel, apply_event, phase_at, phases_at, unwrapped_phase

TWO_PI = 2 * math.pi


def wrap_diff(a, b):
    return (a - b + math.pi) % TWO_PI - math.pi


def test_synchronized_phase():
    c = ClockModel()
    for t in (0.0, 0.001, 1 / 60, 12.345):
        assert phase_at(c, t, W0) == pytest.approx((W0 * t) % TWO_PI, abs=1e-9)


def test_constant_offset_lead():
    c = ClockModel(phase_offset=math.radians(5))
    for t in np.linspace(0, 3, 17):
        assert wrap_diff(phase_at(c, t, W0), phase_at(ClockModel(), t, W0)) == pytest.approx(
            math.radians(5), abs=1e-9)


def test_holdover_drift_accumulates():
    c = apply_event([ClockModel(drift_rate=1e-5)], ClockEvent(0.0, 0, "loss"), W0)[0]
    extra = unwrapped_phase(c, 10.0, W0) - W0 * 10.0
    assert extra == pytest.approx(TWO_PI * 60 * 1e-4, rel=1e-9)
    assert extra == pytest.approx(0.0377, abs=1e-4)


def test_zero_drift_loss_is_invisible():
    c0 = ClockModel()
    c1 = apply_event([c0], ClockEvent(1.0, 0, "loss"), W0)[0]
    for t in np.linspace(1.0, 5.0, 41):
        assert wrap_diff(phase_at(c1, t, W0), phase_at(c0, t, W0)) == pytest.approx(0, abs=1e-9)


def test_restore_slews_out_residual():
    clocks = [ClockModel(drift_rate=1e-4)]
    clocks = apply_event(clocks, ClockEvent(1.0, 0, "loss"), W0)
    held = unwrapped_phase(clocks[0], 1.1, W0) - W0 * 1.1
    assert 0 < held <= TWO_PI * 60 * 1e-5 + 1e-12
    clocks = apply_event(clocks, ClockEvent(1.1, 0, "restore"), W0)
    c = clocks[0]
    assert unwrapped_phase(c, 1.1, W0) - W0 * 1.1 == pytest.approx(held, abs=1e-12)
    assert unwrapped_phase(c, 1.1 + 1 / 60, W0) == pytest.approx(W0 * (1.1 + 1 / 60), abs=1e-9)
    mid = unwrapped_phase(c, 1.1 + 0.5 / 60, W0) - W0 * (1.1 + 0.5 / 60)
    assert mid == pytest.approx(held / 2, rel=1e-6)


def test_restore_without_loss_warns(caplog):
    with caplog.at_level(logging.WARNING):
        out = apply_event([ClockModel()], ClockEvent(0.5, 0, "restore"), W0)
    assert out == [ClockModel()]
    assert "restore without prior loss" in caplog.text


def test_set_offset_shifts_phase():
    c = apply_event([ClockModel()], ClockEvent(0.2, 0, "set_offset", math.radians(10)), W0)[0]
    t = 0.2 + 2 / 60
    assert wrap_diff(phase_at(c, t, W0), W0 * t) == pytest.approx(math.radians(10), abs=1e-9)


def test_invalid_inputs():
    with pytest.raises(ValueError):
        ClockModel(phase_offset=4.0)
    with pytest.raises(ValueError):
        ClockModel(drift_rate=-1e-6)
    with pytest.raises(ValueError):
        ClockEvent(-1.0, 0, "loss")
    with pytest.raises(ValueError):
        ClockEvent(1.0, 0, "jump")
    with pytest.raises(IndexError):
        apply_event([ClockModel()], ClockEvent(1.0, 3, "loss"), W0)
    with pytest.raises(ValueError):
        phase_at(ClockModel(), -1.0, W0)


events = st.lists(st.tuples(st.sampled_from(["loss", "restore", "set_offset"]), st.floats(-0.5, 0.5)),
                  min_size=1, max_size=6)


@given(events, st.floats(0, 1e-3))
def test_phase_continuous_across_events(evs, drift):
    dt = 1e-5
    clocks = [ClockModel(drift_rate=drift)]
    for i, (kind, val) in enumerate(evs):
        t = 0.05 * (i + 1)
        before = unwrapped_phase(clocks[0], t, W0)
        clocks = apply_event(clocks, ClockEvent(t, 0, kind, val), W0)
        assert unwrapped_phase(clocks[0], t, W0) == pytest.approx(before, abs=1e-9)
        ts = t + np.arange(0, 2 / 60, dt)
        ph = np.array([unwrapped_phase(clocks[0], x, W0) for x in ts])
        assert np.max(np.abs(np.diff(ph))) <= W0 * dt * (1 + drift) + 0.5 * 60 * dt * TWO_PI + 1e-9


@given(st.integers(1, 8), st.floats(0, 100))
def test_isochronous_without_offsets(n, t):
    ph = phases_at([ClockModel()] * n, t, W0)
    assert np.all(ph == ph[0])
