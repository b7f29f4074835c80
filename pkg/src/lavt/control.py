"""Client-side policy: Pure Pursuit steering, PI speed, staleness fallback.

Everything here consumes only what the client can measure: the received
frame, its measured age, and the speed telemetry that rode along with it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from enum import Enum

from .camera import CameraModel, Frame, extract_timestamp, STAMP
from .vehicle import ActuationLimits
from .vision import DEFAULT_VISION, INVALID, LaneEstimate, VisionConfig, detect, lateral_offset_at


@dataclass(frozen=True)
class ControlCommand:
    steering: float = 0.0
    throttle: float = 0.0
    brake: float = 0.0
    tx_ts_client_ns: int = 0
    source_frame_ts_ns: int = 0
    seq: int = 0


HOLD_NOTHING = ControlCommand()


@dataclass(frozen=True)
class ControllerConfig:
    target_speed: float = 8.33
    lookahead_gain: float = 0.6  # s
    lookahead_min: float = 5.0
    lookahead_max: float = 20.0
    kp: float = 0.5
    ki: float = 0.1
    integral_clamp: float = 2.0
    stale_threshold_ms: float = 500.0
    low_conf_threshold: float = 0.5
    low_conf_speed_factor: float = 0.5
    # per-command steering multiplier while braking to a stop
    steer_decay: float = 0.5

    def __post_init__(self):
        vals = [self.target_speed, self.lookahead_gain, self.lookahead_min, self.lookahead_max,
                self.kp, self.ki, self.integral_clamp, self.stale_threshold_ms,
                self.low_conf_threshold, self.low_conf_speed_factor, self.steer_decay]
        if min(vals) <= 0:
            raise ValueError("controller parameters must be positive")
        if self.low_conf_speed_factor > 1 or self.steer_decay > 1:
            raise ValueError("speed factor and steering decay must be <= 1")
        if self.lookahead_min > self.lookahead_max:
            raise ValueError("lookahead_min exceeds lookahead_max")


class SafetyMode(str, Enum):
    NORMAL = "Normal"
    SLOW_DOWN = "SlowDown"
    SAFE_STOP = "SafeStop"


def _clamp(v, lo, hi):
    return lo if v < lo else hi if v > hi else v


def lookahead(speed: float, cfg: ControllerConfig) -> float:
    return _clamp(cfg.lookahead_gain * speed, cfg.lookahead_min, cfg.lookahead_max)


def pursuit_angle(y_target: float, l_d: float, wheelbase: float) -> float:
    """Unclamped steering that arcs the rear axle through (l_d, y_target).

    ``l_d`` is the forward distance of the target; the chord to it is
    hypot(l_d, y_target), which is what enters the curvature 2 sin(alpha) / chord.
    """
    alpha = math.atan2(y_target, l_d)
    chord = math.hypot(l_d, y_target)
    return math.atan2(2.0 * wheelbase * math.sin(alpha), chord)


def pure_pursuit(est: LaneEstimate, speed: float, cfg: ControllerConfig,
                 limits: ActuationLimits = ActuationLimits()) -> float:
    l_d = lookahead(speed, cfg)
    y = lateral_offset_at(est, l_d)  # raises on an invalid estimate
    delta = pursuit_angle(y, l_d, limits.wheelbase)
    return _clamp(delta, -limits.max_steer, limits.max_steer)


def pi_speed(target: float, measured: float, integ: float, dt: float, cfg: ControllerConfig):
    """Returns (throttle, brake, new integrator)."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    e = target - measured
    integ = _clamp(integ + e * dt, -cfg.integral_clamp, cfg.integral_clamp)
    u = cfg.kp * e + cfg.ki * integ
    return _clamp(u, 0.0, 1.0), _clamp(-u, 0.0, 1.0), integ


def safety_monitor(frame_age_ms: float, confidence: float, cfg: ControllerConfig) -> SafetyMode:
    if frame_age_ms > cfg.stale_threshold_ms:
        return SafetyMode.SAFE_STOP
    if confidence < cfg.low_conf_threshold:
        return SafetyMode.SLOW_DOWN
    return SafetyMode.NORMAL


@dataclass(frozen=True)
class ControllerState:
    integ: float = 0.0
    prev_est: LaneEstimate = field(default=INVALID)
    steering: float = 0.0
    seq: int = 0


@dataclass(frozen=True)
class PolicyOutput:
    cmd: ControlCommand
    est: LaneEstimate
    mode: SafetyMode
    state: ControllerState


def _decodable(frame, cam: CameraModel) -> bool:
    return (isinstance(frame, Frame) and frame.width >= STAMP and frame.height >= STAMP
            and frame.width == cam.width and frame.height == cam.height)


def policy_step(frame: Frame, frame_age_ms: float, speed: float, state: ControllerState,
                cfg: ControllerConfig = ControllerConfig(), limits: ActuationLimits = ActuationLimits(),
                now_client_ns: int = 0, dt: float = 0.05, cam: CameraModel = CameraModel(),
                vision: VisionConfig = DEFAULT_VISION) -> PolicyOutput:
    """One frame-driven control decision.

    Pure in (inputs, state): the returned state carries the PI integrator,
    the estimate used for tracking, the last steering and the command seq.
    """
    seq = state.seq + 1
    if not _decodable(frame, cam):
        cmd = ControlCommand(state.steering * cfg.steer_decay, 0.0, 1.0, now_client_ns, 0, seq)
        return PolicyOutput(cmd, INVALID, SafetyMode.SAFE_STOP,
                            replace(state, prev_est=INVALID, steering=cmd.steering, seq=seq))
    src_ts = extract_timestamp(frame)
    est = detect(frame, state.prev_est, cam, vision)
    mode = safety_monitor(frame_age_ms, est.confidence, cfg)
    if mode is SafetyMode.SAFE_STOP or not est.valid:
        steering, throttle, brake, integ = state.steering * cfg.steer_decay, 0.0, 1.0, state.integ
    else:
        target = cfg.target_speed * (cfg.low_conf_speed_factor if mode is SafetyMode.SLOW_DOWN else 1.0)
        steering = pure_pursuit(est, speed, cfg, limits)
        throttle, brake, integ = pi_speed(target, speed, state.integ, dt, cfg)
    cmd = ControlCommand(steering, throttle, brake, now_client_ns, src_ts, seq)
    return PolicyOutput(cmd, est, mode, ControllerState(integ, est, steering, seq))
