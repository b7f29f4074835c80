"""Command line entry point: run, sweep, verify-latency, report."""

from __future__ import annotations

import argparse
import json
import math
import sys
import time
from pathlib import Path

import numpy as np

from . import netchan as nc
from . import report as rp
from .camera import CameraModel
from .control import ControllerConfig
from .harness import (CONDITION_ORDER, MATRIX_ROUTES, EpisodeConfig, parse_condition,
                      run_episode, run_matrix, verify_latency)


def _jitter(conf):
    if conf is None:
        return None
    kind = conf.get("kind", "none").lower()
    if kind == "none":
        return None
    if kind == "uniform":
        return nc.UniformJitter(round(conf["half_width_ms"] * nc.MS))
    if kind == "gaussian":
        return nc.GaussianJitter(conf["sigma_ms"] * nc.MS)
    raise ValueError(f"unknown jitter kind {kind!r}")


def episode_kwargs(cfg: dict) -> dict:
    """EpisodeConfig keyword arguments from the JSON config sections."""
    kw = {}
    if "controller" in cfg:
        kw["controller"] = ControllerConfig(**cfg["controller"])
    if "camera" in cfg:
        cam = dict(cfg["camera"])
        for key in ("horizontal_fov_deg", "pitch_down_deg"):
            if key in cam:
                cam[key[:-4]] = math.radians(cam.pop(key))
        kw["camera"] = CameraModel(**cam)
    ch = cfg.get("channel", {})
    if "video_baseline_ms" in ch:
        kw["video_baseline_ns"] = round(ch["video_baseline_ms"] * nc.MS)
    if "control_baseline_ms" in ch:
        kw["control_baseline_ns"] = round(ch["control_baseline_ms"] * nc.MS)
    if "processing_ms" in ch:
        kw["processing_ns"] = round(ch["processing_ms"] * nc.MS)
    if "video_jitter" in ch:
        kw["video_jitter"] = _jitter(ch["video_jitter"])
    if "control_jitter" in ch:
        kw["control_jitter"] = _jitter(ch["control_jitter"])
    if "loss_prob" in ch:
        kw["loss_prob"] = float(ch["loss_prob"])
    if "clocks" in cfg:
        c = cfg["clocks"]
        kw["clocks"] = nc.ClockModel(round(c.get("offset_server_ms", 0) * nc.MS),
                                     round(c.get("offset_client_ms", 0) * nc.MS))
    return kw


def load_config(path) -> dict:
    with open(path) as f:
        cfg = json.load(f)
    unknown = set(cfg) - {"conditions", "routes", "reps", "base_seed", "controller", "camera", "channel", "clocks"}
    if unknown:
        raise ValueError(f"unknown config keys: {sorted(unknown)}")
    return cfg


def cmd_run(args):
    cfg = load_config(args.config) if args.config else {}
    res = run_episode(EpisodeConfig(args.route, parse_condition(args.condition), args.seed, **episode_kwargs(cfg)))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rp.write_trace(res.trace, out / "trace.csv")
    rp.write_runs([res.summary], out / "runs.csv")
    rp.write_latency([res], out / "latency.csv")
    (out / f"trajectories_{args.route}.svg").write_text(rp.trajectory_svg(args.route, [res], res))
    s = res.summary
    status = "completed" if s.completed else "departed" if s.aborted_departure else "timeout"
    print(f"{s.route_id} {s.condition} seed={s.seed}: {status}, lane invasions {s.lane_invasions}, "
          f"P95 {s.p95:.3f} m, tau_v {s.tau_v_median:.1f} ms, tau_c {s.tau_c_median:.1f} ms")
    return 0


def cmd_sweep(args):
    cfg = load_config(args.config)
    conds = [parse_condition(c) for c in cfg.get("conditions", CONDITION_ORDER)]
    routes = cfg.get("routes", MATRIX_ROUTES)
    t0 = time.perf_counter()

    def progress(res):
        if not args.quiet:
            s = res.summary
            print(f"{s.condition} {s.route_id} rep {s.rep}: {'ok' if s.completed else 'FAIL'}",
                  file=sys.stderr, flush=True)

    m = run_matrix(conds, routes, cfg.get("reps", 5), cfg.get("base_seed", 0), progress, **episode_kwargs(cfg))
    rp.emit_report(m.results, args.out)
    for r in m.aggregate():
        p95 = rp.NA if r.p95_over_completed is None else f"{r.p95_over_completed:.3f}"
        print(f"{r.condition}: completion {r.completion_pct:.1f}%  departures {r.mean_departures:.2f}  "
              f"lane invasions {r.mean_lane_invasions:.2f}  P95 {p95}")
    print(f"{len(m.results)} runs in {time.perf_counter() - t0:.1f} s")
    return 0


def cmd_verify(args):
    names = CONDITION_ORDER if args.condition == "all" else [args.condition]
    clocks = nc.ClockModel(round(args.offset_server_ms * nc.MS), round(args.offset_client_ms * nc.MS))
    for name in names:
        cond = parse_condition(name)
        samples = verify_latency(cond, args.samples, clocks)
        if args.out:
            Path(args.out).mkdir(parents=True, exist_ok=True)
            rp.write_latency_samples(samples, cond.name, Path(args.out) / f"latency_{cond.name}.csv")
        for ch in ("video", "control"):
            tau = np.array([x.tau_ns for x in samples if x.channel == ch])
            q1, med, q3 = np.percentile(tau, [25, 50, 75]) / nc.MS
            print(f"{cond.name} {ch:7s} n={tau.size} median {med:.3f} ms  IQR [{q1:.3f}, {q3:.3f}]")
    return 0


def cmd_report(args):
    for r in rp.report_from_dir(args.in_dir):
        p95 = rp.NA if r.p95_over_completed is None else f"{r.p95_over_completed:.3f}"
        print(f"{r.condition}: completion {r.completion_pct:.1f}%  P95 {p95}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="lavt", description="Closed-loop latency testbed")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="one episode")
    r.add_argument("--route", required=True, choices=MATRIX_ROUTES)
    r.add_argument("--condition", default="L0", help="L0..L5 or 'video_ms,control_ms'")
    r.add_argument("--seed", type=int, default=0)
    r.add_argument("--out", required=True)
    r.add_argument("--config")
    r.set_defaults(func=cmd_run)

    s = sub.add_parser("sweep", help="condition x route x rep matrix")
    s.add_argument("--config", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--quiet", action="store_true")
    s.set_defaults(func=cmd_sweep)

    v = sub.add_parser("verify-latency", help="channel-only latency distributions")
    v.add_argument("--condition", default="all", help="L0..L5, 'all', or 'video_ms,control_ms'")
    v.add_argument("--samples", type=int, default=500)
    v.add_argument("--offset-server-ms", type=float, default=0.0)
    v.add_argument("--offset-client-ms", type=float, default=0.0)
    v.add_argument("--out")
    v.set_defaults(func=cmd_verify)

    rep = sub.add_parser("report", help="rebuild aggregate table from runs.csv")
    rep.add_argument("--in", dest="in_dir", required=True)
    rep.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
