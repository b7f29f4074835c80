"""Client-side lane detection: ROI threshold, BEV warp, sliding-window fit.

Works only on received frames and the fixed camera rig description.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from functools import lru_cache

import numpy as np

from .camera import STAMP, CameraModel, Frame


@dataclass(frozen=True)
class VisionConfig:
    x_range: tuple = (2.0, 30.0)
    y_range: tuple = (-8.0, 8.0)
    cell: float = 0.1
    n_windows: int = 9
    margin: float = 0.8
    minpix: int = 30
    min_cells: int = 6
    intensity_threshold: int = 200
    roi_top_fraction: float = 0.4
    width_gate: tuple = (2.5, 4.5)
    min_confidence: float = 0.5

    @property
    def shape(self) -> tuple:
        nx = round((self.x_range[1] - self.x_range[0]) / self.cell)
        ny = round((self.y_range[1] - self.y_range[0]) / self.cell)
        return nx, ny


DEFAULT_VISION = VisionConfig()


@dataclass(frozen=True, eq=False)
class BevGrid:
    """Binary occupancy, indexed [i, j] with x along i (forward) and y along j (left)."""

    occupancy: np.ndarray
    x_range: tuple = DEFAULT_VISION.x_range
    y_range: tuple = DEFAULT_VISION.y_range
    cell: float = DEFAULT_VISION.cell

    @property
    def xs(self) -> np.ndarray:
        return self.x_range[0] + (np.arange(self.occupancy.shape[0]) + 0.5) * self.cell

    @property
    def ys(self) -> np.ndarray:
        return self.y_range[0] + (np.arange(self.occupancy.shape[1]) + 0.5) * self.cell

    @classmethod
    def empty(cls, cfg: VisionConfig = DEFAULT_VISION) -> "BevGrid":
        return cls(np.zeros(cfg.shape, dtype=bool), cfg.x_range, cfg.y_range, cfg.cell)


@dataclass(frozen=True)
class LaneEstimate:
    left_poly: tuple
    right_poly: tuple
    centerline_poly: tuple
    confidence: float
    valid: bool
    width: float = float("nan")


INVALID = LaneEstimate((0.0, 0.0, 0.0), (0.0, 0.0, 0.0), (0.0, 0.0, 0.0), 0.0, False)


def polyval(p, x):
    return (p[0] * x + p[1]) * x + p[2]


def threshold(frame: Frame, cfg: VisionConfig = DEFAULT_VISION) -> np.ndarray:
    """Bright-pixel mask restricted to the bottom of the image."""
    mask = frame.pixels >= cfg.intensity_threshold
    roi_top = int(round(frame.height * cfg.roi_top_fraction))
    mask[:roi_top] = False
    mask[:STAMP, :STAMP] = False
    return mask


@lru_cache(maxsize=8)
def _bev_lookup(cam: CameraModel, cfg: VisionConfig):
    nx, ny = cfg.shape
    xs = cfg.x_range[0] + (np.arange(nx) + 0.5) * cfg.cell
    ys = cfg.y_range[0] + (np.arange(ny) + 0.5) * cfg.cell
    gx, gy = np.meshgrid(xs, ys, indexing="ij")
    row, col = cam.project(gx, gy)
    ok = np.isfinite(row) & np.isfinite(col)
    ok &= (row >= 0) & (row < cam.height) & (col >= 0) & (col < cam.width)
    r = np.where(ok, np.floor(np.where(ok, row, 0)), 0).astype(np.int64)
    c = np.where(ok, np.floor(np.where(ok, col, 0)), 0).astype(np.int64)
    cells = np.flatnonzero(ok.ravel())
    return cells, r.ravel()[cells] * cam.width + c.ravel()[cells]


def bev_warp(mask: np.ndarray, cam: CameraModel = CameraModel(), cfg: VisionConfig = DEFAULT_VISION) -> BevGrid:
    """Nearest-neighbour inverse perspective map of the mask onto the ground grid."""
    cells, pix = _bev_lookup(cam, cfg)
    occ = np.zeros(cfg.shape[0] * cfg.shape[1], dtype=bool)
    occ[cells] = mask.ravel()[pix]
    return BevGrid(occ.reshape(cfg.shape), cfg.x_range, cfg.y_range, cfg.cell)


def _lstsq_quadratic(x, y):
    design = np.stack([x * x, x, np.ones_like(x)], axis=1)
    coef, *_ = np.linalg.lstsq(design, y, rcond=None)
    return tuple(float(v) for v in coef)


def _window_edges(cfg: VisionConfig):
    return np.linspace(cfg.x_range[0], cfg.x_range[1], cfg.n_windows + 1)


def _slide(x, y, base, cfg):
    """Sliding-window search from a base lateral position; returns (selected, hits).

    Each hit aims the next window along the boundary's lateral drift (the
    shift between consecutive hit windows, or the in-window slope after a
    first hit), so curved boundaries stay inside the margin.
    """
    edges = _window_edges(cfg)
    chosen = np.zeros(x.shape, dtype=bool)
    hits = 0
    center = base
    drift = 0.0
    last_hit = None
    for w in range(cfg.n_windows):
        in_x = (x >= edges[w]) & (x < edges[w + 1])
        sel = in_x & (np.abs(y - center) <= cfg.margin)
        n = int(sel.sum())
        chosen |= sel
        if n >= cfg.minpix:
            hits += 1
            mean = float(y[sel].mean())
            if last_hit is not None:
                drift = mean - last_hit
            else:
                # no previous window to difference against: use the local slope
                xs = x[sel]
                dx = xs - xs.mean()
                den = float(dx @ dx)
                if den > 0:
                    drift = float(dx @ (y[sel] - mean)) / den * (edges[w + 1] - edges[w])
            last_hit = mean
            center = mean + drift
        else:
            last_hit = None
            center += drift
    return chosen, hits


def _track(x, y, poly, cfg):
    sel = np.abs(y - polyval(poly, x)) <= cfg.margin
    counts = np.histogram(x[sel], bins=_window_edges(cfg))[0]
    return sel, int((counts >= cfg.minpix).sum())


def _lane_width(left, right, xl, xr, cfg):
    """Mean left-right separation over the x span both boundaries were observed in."""
    lo = max(cfg.x_range[0], float(xl.min()), float(xr.min()))
    hi = min(cfg.x_range[1], float(xl.max()), float(xr.max()))
    if hi <= lo:
        return float("nan")
    xs = np.linspace(lo, hi, 32)
    return float(np.mean(polyval(left, xs) - polyval(right, xs)))


def fit_lanes(bev: BevGrid, prev: LaneEstimate | None = None, cfg: VisionConfig = DEFAULT_VISION) -> LaneEstimate:
    """Fit quadratic lane boundaries y(x) in the vehicle frame (y positive left).

    With a valid ``prev`` the boundaries are tracked inside a band around the
    previous polynomials; if that fails the frame is searched afresh.
    """
    ii, jj = np.nonzero(bev.occupancy)
    x = bev.x_range[0] + (ii + 0.5) * bev.cell
    y = bev.y_range[0] + (jj + 0.5) * bev.cell
    if prev is not None and prev.valid:
        est = _fit(x, y, [_track(x, y, prev.left_poly, cfg), _track(x, y, prev.right_poly, cfg)], cfg)
        if est.valid:
            return est
    near = x < bev.x_range[0] + (bev.x_range[1] - bev.x_range[0]) / 3
    hist = np.bincount(jj[near], minlength=bev.occupancy.shape[1])
    centers = bev.ys
    picks = []
    for side in (centers > 0, centers < 0):
        h = np.where(side, hist, 0)
        if h.max() == 0:
            picks.append((np.zeros(x.shape, dtype=bool), 0))
        else:
            picks.append(_slide(x, y, float(centers[int(np.argmax(h))]), cfg))
    return _fit(x, y, picks, cfg)


def _fit(x, y, picks, cfg):
    (sel_l, hits_l), (sel_r, hits_r) = picks
    confidence = (hits_l + hits_r) / (2 * cfg.n_windows)
    if sel_l.sum() < cfg.min_cells or sel_r.sum() < cfg.min_cells:
        return replace(INVALID, confidence=confidence)
    left = _lstsq_quadratic(x[sel_l], y[sel_l])
    right = _lstsq_quadratic(x[sel_r], y[sel_r])
    center = tuple((a + b) / 2 for a, b in zip(left, right))
    width = _lane_width(left, right, x[sel_l], x[sel_r], cfg)
    valid = (confidence >= cfg.min_confidence
             and cfg.width_gate[0] <= width <= cfg.width_gate[1])
    return LaneEstimate(left, right, center, confidence, bool(valid), width)


def lateral_offset_at(est: LaneEstimate, x: float) -> float:
    if not est.valid:
        raise ValueError("lane estimate is not valid")
    return float(polyval(est.centerline_poly, x))


def detect(frame: Frame, prev: LaneEstimate | None, cam: CameraModel = CameraModel(),
           cfg: VisionConfig = DEFAULT_VISION) -> LaneEstimate:
    """threshold -> bev_warp -> fit_lanes."""
    return fit_lanes(bev_warp(threshold(frame, cfg), cam, cfg), prev, cfg)
