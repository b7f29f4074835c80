"""Ground-truth helpers shared by tests; deliberately independent of the vision code."""

import math

from lavt.vehicle import VehicleState
from lavt.world import locate


def true_offset_ahead(route, pose, dist):
    """Centerline lateral offset in the vehicle frame at forward distance dist (bisection on x)."""
    c, s = math.cos(pose.heading), math.sin(pose.heading)
    q = locate(route, (pose.x, pose.y), pose.heading)
    lo, hi = q.s, q.s + 3 * dist
    for _ in range(80):
        mid = 0.5 * (lo + hi)
        px, py, _ = route.pose_at(mid)
        fx = c * (px - pose.x) + s * (py - pose.y)
        lo, hi = (mid, hi) if fx < dist else (lo, mid)
    px, py, _ = route.pose_at(lo)
    return -s * (px - pose.x) + c * (py - pose.y)


def pose_off_centerline(route, s, e, psi):
    """Vehicle pose displaced e to the left of the centerline at s, rotated psi."""
    x, y, h = route.pose_at(s)
    return VehicleState(x - e * math.sin(h), y + e * math.cos(h), h + psi, 0.0)
