"""Virtual-time closed loop: camera -> video channel -> policy -> control channel -> plant.

One episode is a single-threaded discrete-event run.  True time is an
integer nanosecond count starting at ``TRUE_EPOCH_NS``; each endpoint reads
it through its own clock offset.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field, replace

import numpy as np

from . import netchan as nc
from .camera import CameraModel, Frame, embed_timestamp, extract_timestamp, render
from .control import HOLD_NOTHING, ControllerConfig, ControllerState, policy_step
from .vehicle import TERMINAL, ActuationLimits, EventKind, VehicleState, detect_events, step
from .world import build_route, locate

MS = nc.MS
S = nc.S
# large enough that any offset within +-10 s keeps every clock reading positive
TRUE_EPOCH_NS = 1_700_000_000 * S


@dataclass(frozen=True)
class LatencyCondition:
    name: str
    inject_video_ms: float
    inject_control_ms: float


CONDITIONS = {
    "L0": LatencyCondition("L0", 0, 0),
    "L1": LatencyCondition("L1", 75, 0),
    "L2": LatencyCondition("L2", 150, 0),
    "L3": LatencyCondition("L3", 225, 0),
    "L4": LatencyCondition("L4", 150, 75),
    "L5": LatencyCondition("L5", 225, 100),
}
CONDITION_ORDER = tuple(CONDITIONS)
MATRIX_ROUTES = ("A", "B", "C", "A_key", "B_key", "C_key")


def parse_condition(text: str) -> LatencyCondition:
    """``L0``..``L5`` or a custom ``video_ms,control_ms`` pair."""
    if text in CONDITIONS:
        return CONDITIONS[text]
    try:
        v, c = (float(p) for p in text.split(","))
    except ValueError:
        raise ValueError(f"condition {text!r} is neither L0..L5 nor 'video_ms,control_ms'") from None
    if v < 0 or c < 0:
        raise ValueError("injected delays must be >= 0")
    return LatencyCondition(f"custom_{v:g}_{c:g}", v, c)


@dataclass(frozen=True)
class EpisodeConfig:
    route_id: str
    condition: LatencyCondition = CONDITIONS["L0"]
    seed: int = 0
    physics_hz: int = 100
    camera_hz: int = 20
    controller: ControllerConfig = ControllerConfig()
    clocks: nc.ClockModel = nc.ClockModel()
    camera: CameraModel = CameraModel()
    limits: ActuationLimits = ActuationLimits()
    video_baseline_ns: int = nc.VIDEO_BASELINE_NS
    control_baseline_ns: int = nc.CONTROL_BASELINE_NS
    processing_ns: int = 5 * MS
    video_jitter: nc.Jitter = None
    control_jitter: nc.Jitter = None
    loss_prob: float = 0.0
    init_offset_max: float = 0.3
    init_heading_max: float = math.radians(2.0)
    budget_factor: float = 3.0

    def __post_init__(self):
        if self.physics_hz <= 0 or self.camera_hz <= 0:
            raise ValueError("rates must be positive")
        if self.physics_hz % self.camera_hz:
            raise ValueError("camera rate must divide the physics rate")
        if S % self.physics_hz:
            raise ValueError("physics period must be a whole number of nanoseconds")

    def video_channel(self) -> nc.ChannelConfig:
        return nc.ChannelConfig(self.video_baseline_ns + round(self.condition.inject_video_ms * MS),
                                self.video_jitter, self.loss_prob, False, self.seed * 2 + 1)

    def control_channel(self) -> nc.ChannelConfig:
        return nc.ChannelConfig(self.control_baseline_ns + round(self.condition.inject_control_ms * MS),
                                self.control_jitter, self.loss_prob, False, self.seed * 2 + 2)


TRACE_COLUMNS = ("t", "x", "y", "heading", "speed", "s", "e", "heading_error",
                 "steering", "throttle", "brake", "frame_age_ms")
COL = {name: i for i, name in enumerate(TRACE_COLUMNS)}


@dataclass(frozen=True)
class RunSummary:
    route_id: str
    condition: str
    seed: int
    completed: bool
    aborted_departure: bool
    timed_out: bool
    lane_invasions: int
    mae: float
    rms: float
    p95: float
    max_abs_e: float
    tau_v_median: float
    tau_v_p95: float
    tau_c_median: float
    duration: float
    rep: int = 0


@dataclass
class EpisodeResult:
    config: EpisodeConfig
    trace: np.ndarray
    summary: RunSummary
    events: list
    latency: list  # LatencySample
    video_deliveries: list  # (frame seq, true delivery ns)
    control_deliveries: list  # (command seq, true delivery ns)


def nearest_rank(values, q: float) -> float:
    """q-th percentile by the nearest-rank rule: the ceil(q/100 * n)-th smallest value."""
    v = np.sort(np.asarray(values, dtype=float))
    if v.size == 0:
        raise ValueError("no values")
    rank = max(1, math.ceil(q / 100.0 * v.size))
    return float(v[rank - 1])


def compute_metrics(e) -> dict:
    """MAE, RMS, nearest-rank P95 and max of |e| over a non-empty scoring window."""
    e = np.asarray(e, dtype=float)
    if e.size == 0:
        raise ValueError("empty scoring window")
    a = np.abs(e)
    # fsum: exactly rounded, so the result does not depend on summation order
    return {
        "mae": math.fsum(a) / a.size,
        "rms": math.sqrt(math.fsum(e * e) / e.size),
        "p95": nearest_rank(a, 95),
        "max_abs_e": float(a.max()),
    }


def scoring_rows(trace: np.ndarray, window) -> np.ndarray:
    s = trace[:, COL["s"]]
    return trace[(s >= window[0]) & (s <= window[1])]


def initial_state(route, cfg: EpisodeConfig) -> VehicleState:
    rng = np.random.default_rng(cfg.seed)
    e0 = rng.uniform(-cfg.init_offset_max, cfg.init_offset_max)
    psi0 = rng.uniform(-cfg.init_heading_max, cfg.init_heading_max)
    s0 = route.scoring_window[0]
    x, y, h = route.pose_at(s0)
    return VehicleState(x - e0 * math.sin(h), y + e0 * math.cos(h), h + psi0,
                        cfg.controller.target_speed, s0)


def _ms_stats(samples, channel):
    tau = [x.tau_ns for x in samples if x.channel == channel]
    if not tau:
        return float("nan"), float("nan")
    return float(np.median(tau)) / MS, nearest_rank(tau, 95) / MS


def run_episode(cfg: EpisodeConfig) -> EpisodeResult:
    route = build_route(cfg.route_id)
    window = route.scoring_window
    clk = cfg.clocks
    delta = clk.delta
    dt_ns = S // cfg.physics_hz
    dt = dt_ns / S
    cam_every = cfg.physics_hz // cfg.camera_hz
    budget = cfg.budget_factor * (window[1] - window[0]) / cfg.controller.target_speed

    video = nc.DelayChannel(cfg.video_channel())
    control = nc.DelayChannel(cfg.control_channel())
    outbox = deque()  # (true send ns, command) awaiting client processing
    ctrl = ControllerState()

    state = initial_state(route, cfg)
    q = locate(route, (state.x, state.y), state.heading)
    prev_e = q.cross_track_e
    held = HOLD_NOTHING
    held_src_true = None

    rows, events, latency = [], [], []
    v_deliv, c_deliv = [], []

    def record(t_true):
        age = math.nan if held_src_true is None else (t_true - held_src_true) / MS
        rows.append(((t_true - TRUE_EPOCH_NS) / S, state.x, state.y, state.heading, state.speed,
                     q.s, q.cross_track_e, q.heading_error,
                     held.steering, held.throttle, held.brake, age))

    record(TRUE_EPOCH_NS)
    frame_seq = 0
    k = 0
    done = False
    while not done:
        now = TRUE_EPOCH_NS + k * dt_ns
        # everything scheduled up to this tick, in time order
        while True:
            cand = []
            t_c = control.next_delivery()
            if t_c is not None:
                cand.append((t_c, 0))
            if outbox:
                cand.append((outbox[0][0], 1))
            t_v = video.next_delivery()
            if t_v is not None:
                cand.append((t_v, 2))
            if not cand:
                break
            t_ev, kind = min(cand)
            if t_ev > now:
                break
            if kind == 0:
                for d in control.poll(t_ev):
                    cmd = d.payload
                    latency.append(nc.measure_control_latency(
                        nc.local_time(clk, nc.SERVER, d.deliver_ns), cmd.tx_ts_client_ns, delta))
                    c_deliv.append((cmd.seq, d.deliver_ns))
                    held = cmd
                    held_src_true = cmd.source_frame_ts_ns - clk.offset_server_ns
            elif kind == 1:
                t_send, cmd = outbox.popleft()
                control.send(cmd, t_send)
            else:
                for d in video.poll(t_ev):
                    frame, speed = d.payload
                    recv_local = nc.local_time(clk, nc.CLIENT, d.deliver_ns)
                    sample = nc.measure_video_latency(recv_local, extract_timestamp(frame), delta)
                    latency.append(sample)
                    v_deliv.append((frame.seq, d.deliver_ns))
                    t_send = d.deliver_ns + cfg.processing_ns
                    out = policy_step(frame, (sample.tau_ns + cfg.processing_ns) / MS, speed, ctrl,
                                      cfg.controller, cfg.limits,
                                      nc.local_time(clk, nc.CLIENT, t_send), 1.0 / cfg.camera_hz, cfg.camera)
                    ctrl = out.state
                    outbox.append((t_send, out.cmd))
        if k % cam_every == 0:
            frame_seq += 1
            frame = render(route, state, cfg.camera, seq=frame_seq)
            frame = embed_timestamp(frame, nc.local_time(clk, nc.SERVER, now))
            video.send((frame, state.speed), now)

        state = step(state, held, cfg.limits, dt)
        k += 1
        t_true = TRUE_EPOCH_NS + k * dt_ns
        q = locate(route, (state.x, state.y), state.heading)
        if q.s > state.s_progress:
            state = VehicleState(state.x, state.y, state.heading, state.speed, q.s)
        record(t_true)
        for ev in detect_events(state, prev_e, q, route, (t_true - TRUE_EPOCH_NS) / S, budget):
            events.append(ev)
            done = done or ev.kind in TERMINAL
        prev_e = q.cross_track_e

    trace = np.array(rows, dtype=float)
    kinds = [ev.kind for ev in events]
    scored = scoring_rows(trace, window)
    metrics = compute_metrics(scored[:, COL["e"]])
    tv_med, tv_p95 = _ms_stats(latency, "video")
    tc_med, _ = _ms_stats(latency, "control")
    summary = RunSummary(
        route_id=cfg.route_id, condition=cfg.condition.name, seed=cfg.seed,
        completed=EventKind.COMPLETED in kinds,
        aborted_departure=EventKind.ROAD_DEPARTURE in kinds,
        timed_out=EventKind.TIMEOUT in kinds,
        lane_invasions=kinds.count(EventKind.LANE_INVASION),
        tau_v_median=tv_med, tau_v_p95=tv_p95, tau_c_median=tc_med,
        duration=float(trace[-1, COL["t"]]), **metrics,
    )
    return EpisodeResult(cfg, trace, summary, events, latency, v_deliv, c_deliv)


@dataclass(frozen=True)
class AggregateRow:
    condition: str
    completion_pct: float
    mean_departures: float
    mean_lane_invasions: float
    p95_over_completed: float | None  # None when no run completed
    runs: int = 0


def aggregate(summaries, order=None) -> list:
    """Per-condition table; P95 is the mean per-run P95 over completed runs only."""
    by = {}
    for r in summaries:
        by.setdefault(r.condition, []).append(r)
    names = [c for c in (order or by) if c in by]
    rows = []
    for name in names:
        runs = by[name]
        done = [r.p95 for r in runs if r.completed]
        rows.append(AggregateRow(
            name,
            100.0 * sum(r.completed for r in runs) / len(runs),
            sum(r.aborted_departure for r in runs) / len(runs),
            sum(r.lane_invasions for r in runs) / len(runs),
            float(np.mean(done)) if done else None,
            len(runs),
        ))
    return rows


@dataclass
class MatrixResult:
    results: list = field(default_factory=list)

    @property
    def summaries(self) -> list:
        return [r.summary for r in self.results]

    def aggregate(self) -> list:
        order = [c for c in CONDITION_ORDER] + sorted({s.condition for s in self.summaries} - set(CONDITION_ORDER))
        return aggregate(self.summaries, order)


def run_matrix(conditions=None, routes=MATRIX_ROUTES, reps: int = 5, base_seed: int = 0,
               progress=None, **episode_kw) -> MatrixResult:
    """Every (condition, route, rep) episode.

    The seed of a run is base_seed + route_index * reps + rep, the same for
    every condition, so conditions are compared on identical start poses.
    Controller settings come from ``episode_kw`` and are shared by all
    conditions.
    """
    if reps < 1:
        raise ValueError("reps must be >= 1")
    if conditions is None:
        conditions = [CONDITIONS[n] for n in CONDITION_ORDER]
    out = MatrixResult()
    for cond in conditions:
        for ri, route_id in enumerate(routes):
            for rep in range(reps):
                seed = base_seed + ri * reps + rep
                res = run_episode(EpisodeConfig(route_id, cond, seed, **episode_kw))
                res.summary = replace(res.summary, rep=rep + 1)
                out.results.append(res)
                if progress is not None:
                    progress(res)
    return out


def verify_latency(condition: LatencyCondition, samples: int = 500, clocks: nc.ClockModel = nc.ClockModel(),
                   camera: CameraModel = CameraModel(), camera_hz: int = 20,
                   video_baseline_ns: int = nc.VIDEO_BASELINE_NS,
                   control_baseline_ns: int = nc.CONTROL_BASELINE_NS) -> list:
    """Channel-only latency measurement with stamped blank frames.

    Each delivered frame is answered immediately by a command on the control
    channel.  Returns the measured LatencySample list (video and control).
    """
    cfg = EpisodeConfig("A", condition, 0, camera_hz=camera_hz, clocks=clocks, camera=camera,
                        video_baseline_ns=video_baseline_ns, control_baseline_ns=control_baseline_ns)
    video = nc.DelayChannel(cfg.video_channel())
    control = nc.DelayChannel(cfg.control_channel())
    blank = Frame(camera.width, camera.height, np.zeros((camera.height, camera.width), dtype=np.uint8))
    period = S // camera_hz
    delta = clocks.delta
    out = []
    for i in range(samples):
        t = TRUE_EPOCH_NS + i * period
        video.send(embed_timestamp(blank, nc.local_time(clocks, nc.SERVER, t)), t)
    while video.pending:
        t = video.next_delivery()
        for d in video.poll(t):
            recv = nc.local_time(clocks, nc.CLIENT, d.deliver_ns)
            out.append(nc.measure_video_latency(recv, extract_timestamp(d.payload), delta))
            control.send(recv, d.deliver_ns)
    while control.pending:
        t = control.next_delivery()
        for d in control.poll(t):
            out.append(nc.measure_control_latency(nc.local_time(clocks, nc.SERVER, d.deliver_ns), d.payload, delta))
    return out
