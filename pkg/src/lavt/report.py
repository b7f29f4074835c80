"""CSV tables and hand-written SVG plots for episode and matrix results.

Number formatting is fixed (``repr`` for floats) so repeated runs with the
same seed produce byte-identical files.
"""

from __future__ import annotations

import csv
import math
from dataclasses import asdict, fields
from pathlib import Path

import numpy as np

from .harness import COL, CONDITION_ORDER, TRACE_COLUMNS, AggregateRow, RunSummary, aggregate
from .world import build_route, sample_markings

AGGREGATE_COLUMNS = ("cond", "comp_pct", "coll", "laneinv", "p95_x")
NA = "NA"
PALETTE = ("#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b",
           "#e377c2", "#7f7f7f", "#bcbd22", "#17becf")


def _fmt(v):
    if v is None:
        return NA
    if isinstance(v, bool):
        return "1" if v else "0"
    if isinstance(v, float):
        return NA if math.isnan(v) else repr(v)
    return str(v)


def _writer(path):
    f = open(path, "w", newline="")
    return f, csv.writer(f, lineterminator="\n")


def write_aggregate(rows, path) -> Path:
    f, w = _writer(path)
    with f:
        w.writerow(AGGREGATE_COLUMNS)
        for r in rows:
            w.writerow([r.condition, _fmt(r.completion_pct), _fmt(r.mean_departures),
                        _fmt(r.mean_lane_invasions), _fmt(r.p95_over_completed)])
    return Path(path)


def read_aggregate(path) -> list:
    out = []
    with open(path, newline="") as f:
        for rec in csv.DictReader(f):
            p95 = None if rec["p95_x"] == NA else float(rec["p95_x"])
            out.append(AggregateRow(rec["cond"], float(rec["comp_pct"]), float(rec["coll"]),
                                    float(rec["laneinv"]), p95))
    return out


RUN_COLUMNS = tuple(f.name for f in fields(RunSummary))


def write_runs(summaries, path) -> Path:
    f, w = _writer(path)
    with f:
        w.writerow(RUN_COLUMNS)
        for s in summaries:
            d = asdict(s)
            w.writerow([_fmt(d[c]) for c in RUN_COLUMNS])
    return Path(path)


def read_runs(path) -> list:
    types = {f.name: f.type for f in fields(RunSummary)}
    out = []
    with open(path, newline="") as f:
        for rec in csv.DictReader(f):
            kw = {}
            for k, v in rec.items():
                t = types[k]
                if t in ("bool", bool):
                    kw[k] = v == "1"
                elif t in ("int", int):
                    kw[k] = int(v)
                elif t in ("float", float):
                    kw[k] = math.nan if v == NA else float(v)
                else:
                    kw[k] = v
            out.append(RunSummary(**kw))
    return out


def write_latency(results, path) -> Path:
    """One row per measured sample, for per-condition distribution plots."""
    f, w = _writer(path)
    with f:
        w.writerow(("cond", "route", "seed", "channel", "tau_ns", "measured_at_ns"))
        for res in results:
            s = res.summary
            for x in res.latency:
                w.writerow((s.condition, s.route_id, s.seed, x.channel, x.tau_ns, x.measured_at_ns))
    return Path(path)


def write_latency_samples(samples, cond: str, path) -> Path:
    f, w = _writer(path)
    with f:
        w.writerow(("cond", "channel", "tau_ns", "measured_at_ns"))
        for x in samples:
            w.writerow((cond, x.channel, x.tau_ns, x.measured_at_ns))
    return Path(path)


def write_trace(trace: np.ndarray, path) -> Path:
    f, w = _writer(path)
    with f:
        w.writerow(TRACE_COLUMNS)
        for row in trace:
            w.writerow([_fmt(float(v)) for v in row])
    return Path(path)


# -- SVG ---------------------------------------------------------------------

def _n(v: float) -> str:
    return f"{v:.3f}"


class _Frame:
    """Maps data coordinates into a padded SVG viewport (y up)."""

    def __init__(self, xlo, xhi, ylo, yhi, width=640, height=480, pad=40, equal=False):
        if xhi <= xlo:
            xhi = xlo + 1.0
        if yhi <= ylo:
            yhi = ylo + 1.0
        self.w, self.h, self.pad = width, height, pad
        sx = (width - 2 * pad) / (xhi - xlo)
        sy = (height - 2 * pad) / (yhi - ylo)
        if equal:
            sx = sy = min(sx, sy)
        self.sx, self.sy, self.xlo, self.ylo = sx, sy, xlo, ylo

    def __call__(self, x, y):
        return self.pad + (x - self.xlo) * self.sx, self.h - self.pad - (y - self.ylo) * self.sy


def _polyline(fr, xs, ys, color, width, extra=""):
    pts = " ".join(f"{_n(a)},{_n(b)}" for a, b in (fr(x, y) for x, y in zip(xs, ys)))
    return f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="{width}"{extra}/>'


def _svg(fr, body, title):
    head = (f'<svg xmlns="http://www.w3.org/2000/svg" width="{fr.w}" height="{fr.h}" '
            f'viewBox="0 0 {fr.w} {fr.h}">')
    return "\n".join([head, '<rect width="100%" height="100%" fill="white"/>',
                      f'<text x="{fr.pad}" y="20" font-size="14">{title}</text>', *body, "</svg>", ""])


def trajectory_svg(route_id: str, results, reference=None, decimate: int = 5) -> str:
    """All runs of one route as thin lines, the reference run thick, aborts marked with an x."""
    route = build_route(route_id)
    lo, hi = route.scoring_window
    left, right = sample_markings(route, (lo, hi), 1.0)
    pts = [left, right] + [r.trace[:, [COL["x"], COL["y"]]] for r in results]
    allp = np.vstack(pts)
    fr = _Frame(allp[:, 0].min() - 5, allp[:, 0].max() + 5, allp[:, 1].min() - 5, allp[:, 1].max() + 5, equal=True)
    body = [_polyline(fr, b[:, 0], b[:, 1], "#999999", 1) for b in (left, right)]
    conds = sorted({r.summary.condition for r in results},
                   key=lambda c: (CONDITION_ORDER.index(c) if c in CONDITION_ORDER else 99, c))
    color = {c: PALETTE[i % len(PALETTE)] for i, c in enumerate(conds)}
    for r in results:
        t = r.trace
        xs, ys = t[::decimate, COL["x"]], t[::decimate, COL["y"]]
        xs = np.append(xs, t[-1, COL["x"]])
        ys = np.append(ys, t[-1, COL["y"]])
        thick = r is reference
        body.append(_polyline(fr, xs, ys, "black" if thick else color[r.summary.condition],
                              2.5 if thick else 0.7, "" if thick else ' stroke-opacity="0.8"'))
        if r.summary.aborted_departure:
            cx, cy = fr(t[-1, COL["x"]], t[-1, COL["y"]])
            body.append(f'<path d="M{_n(cx - 4)},{_n(cy - 4)} L{_n(cx + 4)},{_n(cy + 4)} '
                        f'M{_n(cx - 4)},{_n(cy + 4)} L{_n(cx + 4)},{_n(cy - 4)}" '
                        f'stroke="{color[r.summary.condition]}" stroke-width="2" class="abort"/>')
    for i, c in enumerate(conds):
        body.append(f'<text x="{fr.w - 80}" y="{40 + 16 * i}" font-size="12" fill="{color[c]}">{c}</text>')
    return _svg(fr, body, f"Route {route_id}: trajectories (thick: reference)")


def degradation_svg(rows) -> str:
    """Completion (%) and P95 over completed runs versus condition."""
    n = len(rows)
    fr = _Frame(-0.5, max(n - 0.5, 0.5), 0, 100)
    p95 = [r.p95_over_completed for r in rows]
    pmax = max([p for p in p95 if p is not None] or [1.0])
    body = [f'<line x1="{fr.pad}" y1="{fr.h - fr.pad}" x2="{fr.w - fr.pad}" y2="{fr.h - fr.pad}" stroke="black"/>']
    xs = list(range(n))
    body.append(_polyline(fr, xs, [r.completion_pct for r in rows], PALETTE[0], 2))
    for i, r in enumerate(rows):
        cx, cy = fr(i, r.completion_pct)
        body.append(f'<circle cx="{_n(cx)}" cy="{_n(cy)}" r="3" fill="{PALETTE[0]}"/>')
        lx, ly = fr(i, 0)
        body.append(f'<text x="{_n(lx - 8)}" y="{_n(ly + 16)}" font-size="12">{r.condition}</text>')
    # P95 on a secondary scale, undefined points left out
    seg = [(i, 100.0 * p / pmax) for i, p in enumerate(p95) if p is not None]
    if seg:
        body.append(_polyline(fr, [a for a, _ in seg], [b for _, b in seg], PALETTE[3], 2, ' stroke-dasharray="5,3"'))
    body.append(f'<text x="{fr.w - 230}" y="40" font-size="12" fill="{PALETTE[0]}">completion %</text>')
    body.append(f'<text x="{fr.w - 230}" y="56" font-size="12" fill="{PALETTE[3]}">'
                f'P95 |e| (full scale {pmax:.3f} m)</text>')
    return _svg(fr, body, "Degradation across conditions")


def emit_report(results, out_dir, reference_rep: int = 5) -> dict:
    """Write aggregate/runs/latency CSVs and the SVG plots; returns {name: path}."""
    if not results:
        raise ValueError("no runs to report")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    summaries = [r.summary for r in results]
    order = list(CONDITION_ORDER) + sorted({s.condition for s in summaries} - set(CONDITION_ORDER))
    rows = aggregate(summaries, order)
    files = {
        "aggregate": write_aggregate(rows, out / "aggregate.csv"),
        "runs": write_runs(summaries, out / "runs.csv"),
        "latency": write_latency(results, out / "latency.csv"),
    }
    (out / "degradation.svg").write_text(degradation_svg(rows))
    files["degradation"] = out / "degradation.svg"
    for route_id in sorted({s.route_id for s in summaries}):
        runs = [r for r in results if r.summary.route_id == route_id]
        ref = next((r for r in runs if r.summary.condition == "L0" and r.summary.rep == reference_rep), None)
        path = out / f"trajectories_{route_id}.svg"
        path.write_text(trajectory_svg(route_id, runs, ref))
        files[f"trajectories_{route_id}"] = path
    return files


def report_from_dir(in_dir) -> list:
    """Recompute the aggregate table from a runs.csv and rewrite the derived files."""
    in_dir = Path(in_dir)
    summaries = read_runs(in_dir / "runs.csv")
    order = list(CONDITION_ORDER) + sorted({s.condition for s in summaries} - set(CONDITION_ORDER))
    rows = aggregate(summaries, order)
    write_aggregate(rows, in_dir / "aggregate.csv")
    (in_dir / "degradation.svg").write_text(degradation_svg(rows))
    return rows
