"""Server-side forward camera: ground-plane ray casting and the 8x8 time stamp."""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, replace
from functools import lru_cache
from pathlib import Path

import numpy as np

from . import _kernels as K

SKY = 20
GRASS = 40
ROAD = 60
MARKING = 255
MARKING_HALF_WIDTH = 0.10
ROAD_HALF_WIDTH = 3.5
STAMP = 8
U64_MAX = (1 << 64) - 1


@dataclass(frozen=True)
class CameraModel:
    width: int = 640
    height: int = 480
    horizontal_fov: float = math.radians(90.0)
    mount_height: float = 1.5
    pitch_down: float = math.radians(10.0)
    forward_offset: float = 1.0

    def __post_init__(self):
        if self.width <= 0 or self.height <= 0:
            raise ValueError("image size must be positive")
        if not 0 < self.horizontal_fov < math.pi:
            raise ValueError("horizontal_fov must lie in (0, pi)")
        if self.mount_height <= 0:
            raise ValueError("mount_height must be positive")

    @property
    def focal_px(self) -> float:
        return (self.width / 2) / math.tan(self.horizontal_fov / 2)

    @property
    def vertical_fov(self) -> float:
        return 2 * math.atan((self.height / 2) / self.focal_px)

    def horizon_row(self) -> int:
        h2 = self.height / 2
        return round(h2 - h2 * math.tan(self.pitch_down) / math.tan(self.vertical_fov / 2))

    def _axes(self):
        cp, sp = math.cos(self.pitch_down), math.sin(self.pitch_down)
        fwd = np.array([cp, 0.0, -sp])
        right = np.array([0.0, -1.0, 0.0])
        down = np.array([-sp, 0.0, -cp])
        return fwd, right, down

    def project(self, x, y):
        """Vehicle-frame ground points -> (row, col) float pixel coordinates.

        Points behind the image plane get NaN.
        """
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        fwd, right, down = self._axes()
        rx = x - self.forward_offset
        ry = y
        rz = -self.mount_height
        depth = rx * fwd[0] + ry * fwd[1] + rz * fwd[2]
        uc = rx * right[0] + ry * right[1] + rz * right[2]
        vc = rx * down[0] + ry * down[1] + rz * down[2]
        f = self.focal_px
        with np.errstate(divide="ignore", invalid="ignore"):
            col = np.where(depth > 0, self.width / 2 + f * uc / depth, np.nan)
            row = np.where(depth > 0, self.height / 2 + f * vc / depth, np.nan)
        return row, col


@lru_cache(maxsize=8)
def ground_rays(cam: CameraModel):
    """Per-row ground geometry for rows whose pixel-centre rays hit the ground.

    Returns (rows, gx, t, a): the ground point of pixel (rows[k], c) in the
    vehicle frame (x forward, y left) is (gx[k], -t[k] * a[c]).
    """
    f = cam.focal_px
    a = (np.arange(cam.width) + 0.5 - cam.width / 2) / f
    b = (np.arange(cam.height) + 0.5 - cam.height / 2) / f
    fwd, _right, down = cam._axes()
    dz = fwd[2] + b * down[2]
    rows = np.flatnonzero(dz < 0)
    t = cam.mount_height / -dz[rows]
    gx = cam.forward_offset + t * (fwd[0] + b[rows] * down[0])
    return rows.astype(np.int64), gx, t, a


@dataclass(frozen=True, eq=False)
class Frame:
    width: int
    height: int
    pixels: np.ndarray
    capture_ts_server_ns: int = 0
    seq: int = 0

    def __post_init__(self):
        if self.pixels.shape != (self.height, self.width):
            raise ValueError(f"pixel grid {self.pixels.shape} does not match {self.height}x{self.width}")

    def __eq__(self, other):
        if not isinstance(other, Frame):
            return NotImplemented
        return (self.width == other.width and self.height == other.height
                and self.capture_ts_server_ns == other.capture_ts_server_ns
                and self.seq == other.seq and np.array_equal(self.pixels, other.pixels))


def render(route, pose, cam: CameraModel = CameraModel(), seq: int = 0) -> Frame:
    """Ray-cast the lane scene seen from ``pose`` (anything with x, y, heading)."""
    rows, gx, t, a = ground_rays(cam)
    out = np.full((cam.height, cam.width), SKY, dtype=np.uint8)
    K.render_ground(
        route.render_table, rows, gx, t, a, out,
        float(pose.x), float(pose.y), math.cos(pose.heading), math.sin(pose.heading),
        route.lane_half_width, ROAD_HALF_WIDTH, MARKING_HALF_WIDTH,
        MARKING, ROAD, GRASS, 32,
    )
    return Frame(cam.width, cam.height, out, 0, seq)


def _check_stamp_size(frame: Frame):
    if frame.width < STAMP or frame.height < STAMP:
        raise ValueError(f"frame {frame.width}x{frame.height} too small for an {STAMP}x{STAMP} stamp")


def embed_timestamp(frame: Frame, ts_ns: int) -> Frame:
    """Write ts_ns MSB-first into the top-left 8x8 block, one saturated pixel per bit."""
    _check_stamp_size(frame)
    if not 0 <= ts_ns <= U64_MAX:
        raise ValueError(f"timestamp {ts_ns} is not a u64")
    bits = np.unpackbits(np.frombuffer(int(ts_ns).to_bytes(8, "big"), dtype=np.uint8))
    pixels = frame.pixels.copy()
    pixels[:STAMP, :STAMP] = bits.reshape(STAMP, STAMP) * np.uint8(255)
    return replace(frame, pixels=pixels, capture_ts_server_ns=int(ts_ns))


def extract_timestamp(frame: Frame) -> int:
    _check_stamp_size(frame)
    bits = (frame.pixels[:STAMP, :STAMP] >= 128).astype(np.uint8).ravel()
    return int.from_bytes(np.packbits(bits).tobytes(), "big")


def write_pgm(path, pixels: np.ndarray) -> Path:
    """Binary (P5) greyscale dump."""
    path = Path(path)
    pixels = np.asarray(pixels, dtype=np.uint8)
    h, w = pixels.shape
    path.write_bytes(b"P5\n%d %d\n255\n" % (w, h) + pixels.tobytes())
    return path


def read_pgm(path) -> np.ndarray:
    data = Path(path).read_bytes()
    m = re.match(rb"P5\s+(\d+)\s+(\d+)\s+255\s", data)
    if m is None:
        raise ValueError("not an 8-bit binary PGM")
    w, h = int(m.group(1)), int(m.group(2))
    return np.frombuffer(data, dtype=np.uint8, count=w * h, offset=m.end()).reshape(h, w)
