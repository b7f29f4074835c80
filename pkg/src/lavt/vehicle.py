"""Kinematic bicycle plant and episode event detection."""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from enum import Enum

from .world import wrap_angle

DEPARTURE_THRESHOLD = 3.5
COMPLETION_SLACK = 1.0
DRAG = 0.05


@dataclass(frozen=True)
class VehicleState:
    x: float
    y: float
    heading: float
    speed: float
    s_progress: float = 0.0


@dataclass(frozen=True)
class ActuationLimits:
    max_steer: float = math.radians(35.0)
    max_accel: float = 3.0
    max_brake_decel: float = 6.0
    wheelbase: float = 2.8

    def __post_init__(self):
        if min(self.max_steer, self.max_accel, self.max_brake_decel, self.wheelbase) <= 0:
            raise ValueError("actuation limits must be positive")


class EventKind(str, Enum):
    LANE_INVASION = "LaneInvasion"
    ROAD_DEPARTURE = "RoadDeparture"
    COMPLETED = "Completed"
    TIMEOUT = "Timeout"


TERMINAL = (EventKind.ROAD_DEPARTURE, EventKind.COMPLETED, EventKind.TIMEOUT)


@dataclass(frozen=True)
class EpisodeEvent:
    kind: EventKind
    time: float
    s: float


def _clamp(v, lo, hi):
    return lo if v < lo else hi if v > hi else v


def step(state: VehicleState, cmd, limits: ActuationLimits, dt: float, drag: float = DRAG) -> VehicleState:
    """One explicit-Euler tick of the rear-axle kinematic bicycle.

    ``cmd`` needs ``steering``, ``throttle`` and ``brake``; values are clamped
    to the actuator range.  Speed never goes negative.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    delta = _clamp(cmd.steering, -limits.max_steer, limits.max_steer)
    throttle = _clamp(cmd.throttle, 0.0, 1.0)
    brake = _clamp(cmd.brake, 0.0, 1.0)
    v = state.speed
    accel = throttle * limits.max_accel - brake * limits.max_brake_decel - drag * v
    return replace(
        state,
        x=state.x + v * math.cos(state.heading) * dt,
        y=state.y + v * math.sin(state.heading) * dt,
        heading=wrap_angle(state.heading + v * math.tan(delta) / limits.wheelbase * dt),
        speed=max(0.0, v + accel * dt),
    )


def detect_events(state: VehicleState, prev_e: float, query, route, t: float, budget: float,
                  departure_threshold: float = DEPARTURE_THRESHOLD) -> list:
    """Events raised by the tick that produced ``state``.

    Terminal events (departure, completion, timeout) are returned last and
    at most one of them is reported; the caller stops the episode on it.
    """
    hw = route.lane_half_width
    e = query.cross_track_e
    events = []
    if abs(prev_e) <= hw < abs(e):
        events.append(EpisodeEvent(EventKind.LANE_INVASION, t, query.s))
    if abs(e) > departure_threshold:
        events.append(EpisodeEvent(EventKind.ROAD_DEPARTURE, t, query.s))
    elif state.s_progress >= route.scoring_window[1] - COMPLETION_SLACK:
        events.append(EpisodeEvent(EventKind.COMPLETED, t, query.s))
    elif t > budget:
        events.append(EpisodeEvent(EventKind.TIMEOUT, t, query.s))
    return events
