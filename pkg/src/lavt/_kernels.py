"""Compiled geometry kernels shared by ``world.locate`` and ``camera.render``.

Segments are packed into a float64 table, one row per segment (see ``_pack``
in world.py), so single-point queries and per-pixel rendering read the same
data.
"""

import math

import numpy as np
from numba import njit

# column layout of the packed segment table
KIND = 0  # 0 straight, 1 arc
S0 = 1
LENGTH = 2
SX = 3
SY = 4
SCOS = 5
SSIN = 6
RADIUS = 7
SWEEP = 8
CX = 9
CY = 10
EX = 11
EY = 12
ECOS = 13
ESIN = 14
BCX = 15  # bounding circle
BCY = 16
BR = 17
HEADING0 = 18
U0X = 19  # unit radials, centre -> start / end (arcs only)
U0Y = 20
U1X = 21
U1Y = 22
SIGN = 23  # +1 left arc, -1 right arc
NCOLS = 24

STRAIGHT = 0.0
ARC = 1.0

_JIT = dict(cache=True, error_model="numpy")


@njit(**_JIT)
def _arc_inside(segs, i, rx, ry):
    sg = segs[i, SIGN]
    c0 = sg * (segs[i, U0X] * ry - segs[i, U0Y] * rx)
    c1 = sg * (rx * segs[i, U1Y] - ry * segs[i, U1X])
    if abs(segs[i, SWEEP]) <= math.pi:
        return c0 >= 0.0 and c1 >= 0.0
    # reflex sweep: the excluded wedge is convex
    return not (c0 < 0.0 and c1 < 0.0)


@njit(**_JIT)
def seg_dist2(segs, i, px, py):
    """Squared distance from (px, py) to segment i."""
    if segs[i, KIND] == STRAIGHT:
        dx = px - segs[i, SX]
        dy = py - segs[i, SY]
        t = dx * segs[i, SCOS] + dy * segs[i, SSIN]
        n = -dx * segs[i, SSIN] + dy * segs[i, SCOS]
        if t < 0.0:
            return t * t + n * n
        if t > segs[i, LENGTH]:
            u = t - segs[i, LENGTH]
            return u * u + n * n
        return n * n
    rx = px - segs[i, CX]
    ry = py - segs[i, CY]
    if _arc_inside(segs, i, rx, ry):
        d = math.sqrt(rx * rx + ry * ry) - segs[i, RADIUS]
        return d * d
    ax = px - segs[i, SX]
    ay = py - segs[i, SY]
    bx = px - segs[i, EX]
    by = py - segs[i, EY]
    da = ax * ax + ay * ay
    db = bx * bx + by * by
    return da if da <= db else db


@njit(**_JIT)
def nearest_segment(segs, px, py, hint):
    """Index and squared distance of the nearest segment.

    Ties go to the lower index, i.e. the smaller arc length.  ``hint`` seeds
    the search bound; other segments are pruned by bounding circle.
    """
    best = hint
    best_d2 = seg_dist2(segs, hint, px, py)
    best_d = math.sqrt(best_d2)
    for i in range(segs.shape[0]):
        if i == hint:
            continue
        qx = px - segs[i, BCX]
        qy = py - segs[i, BCY]
        lim = segs[i, BR] + best_d
        if qx * qx + qy * qy > lim * lim:
            continue
        d2 = seg_dist2(segs, i, px, py)
        if d2 < best_d2 or (d2 == best_d2 and i < best):
            best = i
            best_d2 = d2
            best_d = math.sqrt(d2)
    return best, best_d2


@njit(**_JIT)
def seg_project(segs, i, px, py):
    """(s, signed e, tangent heading, clamp) of the nearest point on segment i.

    clamp is -1 when the foot is the segment start, +1 the end, 0 interior.
    """
    if segs[i, KIND] == STRAIGHT:
        dx = px - segs[i, SX]
        dy = py - segs[i, SY]
        t = dx * segs[i, SCOS] + dy * segs[i, SSIN]
        n = -dx * segs[i, SSIN] + dy * segs[i, SCOS]
        sgn = 1.0 if n >= 0.0 else -1.0
        if t < 0.0:
            return segs[i, S0], sgn * math.sqrt(t * t + n * n), segs[i, HEADING0], -1
        if t > segs[i, LENGTH]:
            u = t - segs[i, LENGTH]
            return segs[i, S0] + segs[i, LENGTH], sgn * math.sqrt(u * u + n * n), segs[i, HEADING0], 1
        return segs[i, S0] + t, n, segs[i, HEADING0], 0
    r = segs[i, RADIUS]
    sg = segs[i, SIGN]
    rx = px - segs[i, CX]
    ry = py - segs[i, CY]
    if _arc_inside(segs, i, rx, ry):
        u0x = segs[i, U0X]
        u0y = segs[i, U0Y]
        a = math.atan2(sg * (u0x * ry - u0y * rx), u0x * rx + u0y * ry)
        if a < 0.0:
            a += 2.0 * math.pi
        if a > abs(segs[i, SWEEP]):
            a = abs(segs[i, SWEEP])
        d = math.sqrt(rx * rx + ry * ry)
        return segs[i, S0] + r * a, sg * (r - d), segs[i, HEADING0] + sg * a, 0
    ax = px - segs[i, SX]
    ay = py - segs[i, SY]
    bx = px - segs[i, EX]
    by = py - segs[i, EY]
    da = ax * ax + ay * ay
    db = bx * bx + by * by
    if da <= db:
        cr = segs[i, SCOS] * ay - segs[i, SSIN] * ax
        sgn = 1.0 if cr >= 0.0 else -1.0
        return segs[i, S0], sgn * math.sqrt(da), segs[i, HEADING0], -1
    cr = segs[i, ECOS] * by - segs[i, ESIN] * bx
    sgn = 1.0 if cr >= 0.0 else -1.0
    return segs[i, S0] + segs[i, LENGTH], sgn * math.sqrt(db), segs[i, HEADING0] + segs[i, SWEEP], 1


@njit(**_JIT)
def locate_point(segs, px, py):
    """(s, e, tangent heading, distance) of the nearest centerline point."""
    i, d2 = nearest_segment(segs, px, py, 0)
    s, e, th, _c = seg_project(segs, i, px, py)
    return s, e, th, math.sqrt(d2)


@njit(**_JIT)
def locate_many(segs, xs, ys):
    n = xs.shape[0]
    s_out = np.empty(n)
    e_out = np.empty(n)
    h_out = np.empty(n)
    hint = 0
    for k in range(n):
        i, _ = nearest_segment(segs, xs[k], ys[k], hint)
        s, e, th, _c = seg_project(segs, i, xs[k], ys[k])
        s_out[k] = s
        e_out[k] = e
        h_out[k] = th
        hint = i
    return s_out, e_out, h_out


@njit(**_JIT)
def interior_offset(segs, i, px, py):
    """Signed offset from segment i if the foot point is interior, else NaN."""
    if segs[i, KIND] == STRAIGHT:
        dx = px - segs[i, SX]
        dy = py - segs[i, SY]
        t = dx * segs[i, SCOS] + dy * segs[i, SSIN]
        if t < 0.0 or t > segs[i, LENGTH]:
            return np.nan
        return -dx * segs[i, SSIN] + dy * segs[i, SCOS]
    rx = px - segs[i, CX]
    ry = py - segs[i, CY]
    if not _arc_inside(segs, i, rx, ry):
        return np.nan
    return segs[i, SIGN] * (segs[i, RADIUS] - math.sqrt(rx * rx + ry * ry))


@njit(**_JIT)
def _point_segment_dist2(qx, qy, ax, ay, bx, by):
    vx = bx - ax
    vy = by - ay
    wx = qx - ax
    wy = qy - ay
    vv = vx * vx + vy * vy
    t = 0.0
    if vv > 0.0:
        t = (wx * vx + wy * vy) / vv
        if t < 0.0:
            t = 0.0
        elif t > 1.0:
            t = 1.0
    dx = wx - t * vx
    dy = wy - t * vy
    return dx * dx + dy * dy


@njit(**_JIT)
def _candidates(segs, pool, npool, out, ax, ay, bx, by, inflate):
    n = 0
    for k in range(npool):
        i = pool[k]
        lim = segs[i, BR] + inflate
        if _point_segment_dist2(segs[i, BCX], segs[i, BCY], ax, ay, bx, by) <= lim * lim:
            out[n] = i
            n += 1
    return n


@njit(**_JIT)
def render_ground(
    segs, rows, row_gx, row_t, col_a, out, pose_x, pose_y, pose_c, pose_s,
    lane_half_width, road_half_width, marking_half_width,
    marking_value, road_value, grass_value, block,
):
    """Fill ground pixels of ``out`` (height x width, pre-filled with sky).

    A ground point is a marking when some segment has an interior foot point
    with | |e| - lane_half_width | <= marking_half_width, road when some
    interior |e| <= road_half_width, grass otherwise.  Rows and column
    blocks map to straight ground segments, so segments are culled per row
    and per block against their inflated bounding circles before any
    per-pixel work.
    """
    nseg = segs.shape[0]
    width = col_a.shape[0]
    inflate = max(road_half_width, lane_half_width + marking_half_width)
    all_idx = np.arange(nseg)
    row_cand = np.empty(nseg, dtype=np.int64)
    blk_cand = np.empty(nseg, dtype=np.int64)
    lo_marking = lane_half_width - marking_half_width
    hi_marking = lane_half_width + marking_half_width
    for k in range(rows.shape[0]):
        r = rows[k]
        gx = row_gx[k]
        t = row_t[k]
        bx0 = pose_x + pose_c * gx
        by0 = pose_y + pose_s * gx
        # ground y of column c is -t * col_a[c]
        g0 = -t * col_a[0]
        g1 = -t * col_a[width - 1]
        nrow = _candidates(segs, all_idx, nseg, row_cand,
                           bx0 - pose_s * g0, by0 + pose_c * g0,
                           bx0 - pose_s * g1, by0 + pose_c * g1, inflate)
        if nrow == 0:
            for c in range(width):
                out[r, c] = grass_value
            continue
        for c0 in range(0, width, block):
            c1 = min(c0 + block, width) - 1
            g0 = -t * col_a[c0]
            g1 = -t * col_a[c1]
            nb = _candidates(segs, row_cand, nrow, blk_cand,
                             bx0 - pose_s * g0, by0 + pose_c * g0,
                             bx0 - pose_s * g1, by0 + pose_c * g1, inflate)
            for c in range(c0, c1 + 1):
                if nb == 0:
                    out[r, c] = grass_value
                    continue
                gy = -t * col_a[c]
                wx = bx0 - pose_s * gy
                wy = by0 + pose_c * gy
                value = grass_value
                for q in range(nb):
                    e = interior_offset(segs, blk_cand[q], wx, wy)
                    if e != e:
                        continue
                    ae = abs(e)
                    if lo_marking <= ae <= hi_marking:
                        value = marking_value
                        break
                    if ae <= road_half_width:
                        value = road_value
                out[r, c] = value
