import json
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from lavt.world import (KEY_MARGIN, LANE_HALF_WIDTH, TURN_RADIUS, Arc, OutOfEnvelope, RouteGeometry,
                        Straight, build_route, locate, sample_markings, wrap_angle)

ROUTES = ("A", "B", "C", "A_key", "B_key", "C_key")


def test_route_a_shape():
    r = build_route("A")
    assert r.segments == (Straight(40.0), Arc(TURN_RADIUS, -math.pi / 2), Straight(150.0))
    assert isinstance(r.segments[0], Straight)
    assert r.total_length == pytest.approx(40 + TURN_RADIUS * math.pi / 2 + 150, abs=1e-12)


def test_route_a_length_with_twenty_metre_turn():
    r = RouteGeometry("A20", (Straight(40.0), Arc(20.0, -math.pi / 2), Straight(150.0)))
    assert r.total_length == pytest.approx(221.416, abs=1e-3)


def test_route_shapes_b_c():
    b = build_route("B")
    assert [type(s) for s in b.segments] == [Arc, Straight, Arc]
    assert b.segments[0].sweep == pytest.approx(math.pi / 2)
    assert b.segments[2] == Arc(50.0, 2 * math.pi / 3)
    c = build_route("C")
    assert isinstance(c.segments[0], Straight)
    assert c.segments[1] == Arc(60.0, -5 * math.pi / 6)


def test_unknown_route():
    with pytest.raises(ValueError):
        build_route("D")


@pytest.mark.parametrize("rid", ROUTES)
def test_key_interval_inside_route(rid):
    r = build_route(rid)
    lo, hi = r.key_interval
    assert 0.0 <= lo < hi <= r.total_length
    assert r.total_length == pytest.approx(sum(s.length for s in r.segments))


@pytest.mark.parametrize("parent,k", [("A", 1), ("B", 2), ("C", 1)])
def test_key_interval_covers_turn_with_margin(parent, k):
    r = build_route(parent + "_key")
    s_lo = sum(s.length for s in r.segments[:k])
    s_hi = s_lo + r.segments[k].length
    assert r.key_interval == (max(0.0, s_lo - KEY_MARGIN), min(r.total_length, s_hi + KEY_MARGIN))
    assert build_route(parent).key_interval == (0.0, r.total_length)


def test_geometry_invariants_rejected():
    with pytest.raises(ValueError):
        Arc(-1.0, 1.0)
    with pytest.raises(ValueError):
        Straight(0.0)
    with pytest.raises(ValueError):
        RouteGeometry("x", (Straight(10.0),), lane_half_width=0.0)
    with pytest.raises(ValueError):
        RouteGeometry("x", (Straight(10.0),), key_interval=(0.0, 11.0))


@pytest.mark.parametrize("rid", ("A", "B", "C"))
def test_segments_are_continuous(rid):
    r = build_route(rid)
    s = 0.0
    for seg in r.segments[:-1]:
        s += seg.length
        a, b = np.array(r.pose_at(s - 1e-9)), np.array(r.pose_at(s + 1e-9))
        assert np.allclose(a[:2], b[:2], atol=1e-6)
        assert abs(wrap_angle(a[2] - b[2])) < 1e-6


def test_wrap_angle_range():
    assert wrap_angle(math.pi) == pytest.approx(math.pi)
    assert wrap_angle(-math.pi) == pytest.approx(math.pi)
    assert wrap_angle(3 * math.pi / 2) == pytest.approx(-math.pi / 2)


@given(st.sampled_from(ROUTES), st.floats(0.0, 1.0))
def test_on_centerline_zero_error(rid, frac):
    r = build_route(rid)
    s = frac * r.total_length
    x, y, h = r.pose_at(s)
    q = locate(r, (x, y), h)
    assert abs(q.cross_track_e) <= 1e-9
    assert abs(q.heading_error) <= 1e-9
    assert q.s == pytest.approx(s, abs=1e-6)


def test_straight_left_offset_positive():
    r = build_route("A")
    q = locate(r, (20.0, 1.0), 0.0)
    assert q.cross_track_e == pytest.approx(1.0, abs=1e-12)
    assert q.s == pytest.approx(20.0)


def _dense_nearest(route, p, step=1e-3):
    ss = np.arange(0.0, route.total_length + step, step)
    pts = np.array([route.pose_at(float(s))[:2] for s in ss])
    i = int(np.argmin(np.hypot(pts[:, 0] - p[0], pts[:, 1] - p[1])))
    return ss[i], float(np.hypot(*(pts[i] - p)))


def test_arc_midpoint_radial_offset():
    r = RouteGeometry("t", (Straight(40.0), Arc(20.0, -math.pi / 2), Straight(150.0)))
    s_mid = 40.0 + 20.0 * math.pi / 4
    x, y, h = r.pose_at(s_mid)
    # right turn: outward is to the left of travel
    p = np.array([x - 0.5 * math.sin(h), y + 0.5 * math.cos(h)])
    q = locate(r, p, h)
    assert abs(q.cross_track_e) == pytest.approx(0.5, abs=1e-9)
    assert q.s == pytest.approx(s_mid, abs=1e-9)
    s_dense, d_dense = _dense_nearest(r, p)
    assert q.s == pytest.approx(s_dense, abs=2e-3)
    assert abs(q.cross_track_e) == pytest.approx(d_dense, abs=1e-6)


def test_tie_breaks_to_smallest_s():
    # the centre of a half circle is equidistant from every arc point
    r = RouteGeometry("t", (Arc(10.0, math.pi),))
    q = locate(r, (0.0, 10.0), 0.0)
    assert q.s == 0.0


def test_out_of_envelope():
    with pytest.raises(OutOfEnvelope):
        locate(build_route("A"), (20.0, 80.0), 0.0)


@given(st.sampled_from(("A", "B", "C")), st.floats(0.02, 0.98), st.floats(0.01, 3.0))
def test_mirror_antisymmetry(rid, frac, d):
    r = build_route(rid)
    x, y, h = r.pose_at(frac * r.total_length)
    nx, ny = -math.sin(h), math.cos(h)
    ql = locate(r, (x + d * nx, y + d * ny), h)
    qr = locate(r, (x - d * nx, y - d * ny), h)
    assert ql.cross_track_e == pytest.approx(-qr.cross_track_e, abs=1e-6)
    assert abs(ql.cross_track_e) == pytest.approx(d, abs=1e-6)


def test_markings_straight_parallel():
    r = build_route("A")
    left, right = sample_markings(r, (0.0, 40.0), 5.0)
    assert np.allclose(left[:, 1], LANE_HALF_WIDTH)
    assert np.allclose(right[:, 1], -LANE_HALF_WIDTH)
    assert np.allclose(np.hypot(*(left - right).T), 2 * LANE_HALF_WIDTH)


@pytest.mark.parametrize("sweep", (math.pi / 2, -math.pi / 2))
def test_markings_arc_radii(sweep):
    r = RouteGeometry("t", (Arc(20.0, sweep),))
    left, right = sample_markings(r, (0.0, r.total_length), 0.5)
    cx, cy = 0.0, 20.0 * math.copysign(1.0, sweep)
    rl = np.hypot(left[:, 0] - cx, left[:, 1] - cy)
    rr = np.hypot(right[:, 0] - cx, right[:, 1] - cy)
    inner, outer = (rl, rr) if sweep > 0 else (rr, rl)
    assert np.allclose(inner, 20.0 - LANE_HALF_WIDTH, atol=1e-9)
    assert np.allclose(outer, 20.0 + LANE_HALF_WIDTH, atol=1e-9)


def test_markings_two_points_when_step_spans():
    left, right = sample_markings(build_route("B"), (10.0, 30.0), 20.0)
    assert left.shape == (2, 2) and right.shape == (2, 2)


@given(st.sampled_from(ROUTES), st.floats(0.0, 0.9), st.floats(0.1, 7.0))
def test_marking_distance_from_centerline(rid, frac, step):
    r = build_route(rid)
    lo = frac * r.total_length
    left, right = sample_markings(r, (lo, r.total_length), step)
    n = len(left)
    ss = np.minimum(lo + step * np.arange(n), r.total_length)
    for k, s in enumerate(ss):
        x, y, _ = r.pose_at(float(s))
        assert abs(math.hypot(left[k, 0] - x, left[k, 1] - y) - r.lane_half_width) <= 1e-9
        assert abs(math.hypot(right[k, 0] - x, right[k, 1] - y) - r.lane_half_width) <= 1e-9


def test_markings_errors():
    r = build_route("A")
    with pytest.raises(ValueError):
        sample_markings(r, (10.0, 10.0), 1.0)
    with pytest.raises(ValueError):
        sample_markings(r, (0.0, 10.0), 0.0)


def test_json_dump():
    r = build_route("C_key")
    d = json.loads(r.to_json(step=2.0))
    assert d["route_id"] == "C_key"
    assert [s["type"] for s in d["segments"]] == ["straight", "arc"]
    assert d["key_interval"] == list(r.key_interval)
    assert d["centerline"][0] == pytest.approx([0.0, 0.0])
    assert len(d["centerline"]) >= r.total_length / 2
