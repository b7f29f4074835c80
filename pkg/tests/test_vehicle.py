import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from lavt.control import ControlCommand
from lavt.vehicle import (ActuationLimits, EventKind, TERMINAL, VehicleState, detect_events, step)
from lavt.world import CenterlineQuery, build_route

LIM = ActuationLimits()
DT = 0.01


def _drive(state, cmd, n, drag=0.0):
    xs = []
    for _ in range(n):
        state = step(state, cmd, LIM, DT, drag=drag)
        xs.append((state.x, state.y))
    return state, np.array(xs)


def test_straight_line_constant_speed():
    s0 = VehicleState(0.0, 0.0, 0.3, 5.0)
    s1, _ = _drive(s0, ControlCommand(0.0, 0.0, 0.0), 100)
    assert s1.heading == s0.heading
    assert s1.speed == 5.0
    assert math.hypot(s1.x, s1.y) == pytest.approx(5.0, rel=1e-12)
    assert math.atan2(s1.y, s1.x) == pytest.approx(0.3, abs=1e-12)


def test_throttle_balancing_drag_holds_speed():
    v = 8.0
    cmd = ControlCommand(0.0, 0.05 * v / LIM.max_accel, 0.0)
    s1, _ = _drive(VehicleState(0.0, 0.0, 0.0, v), cmd, 200, drag=0.05)
    assert s1.speed == pytest.approx(v, abs=1e-9)
    assert s1.heading == 0.0 and s1.y == 0.0


def test_circle_closes_after_one_period():
    delta = math.radians(10.0)
    R = LIM.wheelbase / math.tan(delta)
    # speed chosen so one revolution is a whole number of ticks
    n = 2000
    v = 2 * math.pi * R / (n * DT)
    s1, _ = _drive(VehicleState(0.0, 0.0, 0.0, v), ControlCommand(delta, 0.0, 0.0), n)
    assert math.hypot(s1.x, s1.y) <= 1e-3 * R


def test_brake_at_standstill_no_reverse():
    s = VehicleState(1.0, 2.0, 0.5, 0.0)
    s1 = step(s, ControlCommand(0.2, 0.0, 1.0), LIM, DT)
    assert s1.speed == 0.0 and (s1.x, s1.y, s1.heading) == (1.0, 2.0, 0.5)


def test_inputs_are_clamped():
    s = VehicleState(0.0, 0.0, 0.0, 5.0)
    a = step(s, ControlCommand(5.0, 3.0, -1.0), LIM, DT)
    b = step(s, ControlCommand(LIM.max_steer, 1.0, 0.0), LIM, DT)
    assert a == b


def test_bad_dt_and_limits():
    with pytest.raises(ValueError):
        step(VehicleState(0, 0, 0, 1), ControlCommand(), LIM, 0.0)
    with pytest.raises(ValueError):
        ActuationLimits(wheelbase=0.0)


@given(st.floats(0.0, 20.0), st.floats(-math.pi, math.pi), st.floats(-1, 1), st.floats(0, 1), st.floats(0, 1))
def test_step_invariants_and_determinism(v, h, steer, thr, brk):
    s = VehicleState(0.0, 0.0, h, v)
    cmd = ControlCommand(steer, thr, brk)
    a, b = step(s, cmd, LIM, DT), step(s, cmd, LIM, DT)
    assert a == b
    assert a.speed >= 0.0
    assert -math.pi < a.heading <= math.pi


@given(st.floats(0.0, 30.0))
def test_energy_free_without_drag(v):
    s, _ = _drive(VehicleState(0.0, 0.0, 0.0, v), ControlCommand(0.1, 0.0, 0.0), 50)
    assert s.speed == v


def _kasa_radius(pts):
    x, y = pts[:, 0], pts[:, 1]
    A = np.stack([x, y, np.ones_like(x)], axis=1)
    b = x * x + y * y
    c, *_ = np.linalg.lstsq(A, b, rcond=None)
    cx, cy = c[0] / 2, c[1] / 2
    return math.sqrt(c[2] + cx * cx + cy * cy)


@given(st.floats(2.0, 30.0), st.floats(1.0, 15.0), st.booleans())
def test_turning_radius_matches_geometry(delta_deg, v, left):
    delta = math.radians(delta_deg) * (1 if left else -1)
    R = LIM.wheelbase / math.tan(abs(delta))
    n = max(50, round(2 * math.pi * R / v / DT))
    _, pts = _drive(VehicleState(0.0, 0.0, 0.0, v), ControlCommand(delta, 0.0, 0.0), n)
    assert _kasa_radius(pts) == pytest.approx(R, rel=5e-3)


ROUTE = build_route("A")


def _q(e, s=10.0):
    return CenterlineQuery(s, e, 0.0)


def _kinds(evs):
    return [e.kind for e in evs]


def test_single_lane_invasion():
    st_ = VehicleState(0, 0, 0, 1, 10.0)
    assert _kinds(detect_events(st_, 1.0, _q(2.0), ROUTE, 1.0, 100.0)) == [EventKind.LANE_INVASION]
    assert detect_events(st_, 2.0, _q(2.5), ROUTE, 1.0, 100.0) == []


def test_departure_threshold():
    st_ = VehicleState(0, 0, 0, 1, 10.0)
    assert _kinds(detect_events(st_, 3.4, _q(3.6), ROUTE, 1.0, 100.0)) == [EventKind.ROAD_DEPARTURE]
    assert _kinds(detect_events(st_, 3.4, _q(-3.6), ROUTE, 1.0, 100.0)) == [EventKind.ROAD_DEPARTURE]


def test_oscillation_counts_each_crossing():
    trace = [1.0, 2.0, 1.0, 2.0]
    st_ = VehicleState(0, 0, 0, 1, 10.0)
    evs = []
    for prev, e in zip(trace, trace[1:]):
        evs += detect_events(st_, prev, _q(e), ROUTE, 1.0, 100.0)
    assert _kinds(evs) == [EventKind.LANE_INVASION] * 2
    oracle = sum(1 for a, b in zip(trace, trace[1:]) if abs(a) <= 1.75 < abs(b))
    assert oracle == 2


def test_completion_and_timeout():
    end = ROUTE.scoring_window[1]
    done = VehicleState(0, 0, 0, 1, end - 1.0)
    assert _kinds(detect_events(done, 0.0, _q(0.0), ROUTE, 1.0, 100.0)) == [EventKind.COMPLETED]
    late = VehicleState(0, 0, 0, 1, 5.0)
    assert _kinds(detect_events(late, 0.0, _q(0.0), ROUTE, 100.5, 100.0)) == [EventKind.TIMEOUT]


@given(st.lists(st.floats(-4.0, 4.0), min_size=2, max_size=60))
def test_at_most_one_terminal_and_it_is_last(es):
    st_ = VehicleState(0, 0, 0, 1, 10.0)
    evs = []
    for prev, e in zip(es, es[1:]):
        out = detect_events(st_, prev, _q(e), ROUTE, 1.0, 100.0)
        terms = [x for x in out if x.kind in TERMINAL]
        assert len(terms) <= 1
        if terms:
            assert out[-1] is terms[0]
        evs += out
        if terms:
            break
    times = [x.time for x in evs]
    assert times == sorted(times)
