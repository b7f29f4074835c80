"""Delay channels, endpoint clocks, one-way latency math and the wire format.

All times are integer nanoseconds.  ``DelayChannel`` is the in-process
emulator driven by a virtual clock; ``UdpLink`` pushes the same packets
through a real loopback socket with the delay applied at the sender.
"""

from __future__ import annotations

import heapq
import queue
import socket
import struct
import threading
import time
from dataclasses import dataclass
from typing import Any, NamedTuple, Optional, Union

import numpy as np

MS = 1_000_000
S = 1_000_000_000
VIDEO_BASELINE_NS = 60 * MS
CONTROL_BASELINE_NS = 9 * MS


# -- channel configuration ---------------------------------------------------

@dataclass(frozen=True)
class UniformJitter:
    half_width_ns: int


@dataclass(frozen=True)
class GaussianJitter:
    sigma_ns: float


Jitter = Optional[Union[UniformJitter, GaussianJitter]]


@dataclass(frozen=True)
class ChannelConfig:
    base_delay_ns: int = 0
    jitter: Jitter = None
    loss_prob: float = 0.0
    allow_reorder: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.base_delay_ns < 0:
            raise ValueError("base_delay_ns must be >= 0")
        if not 0.0 <= self.loss_prob <= 1.0:
            raise ValueError("loss_prob must lie in [0, 1]")


class Delivery(NamedTuple):
    payload: Any
    send_ns: int
    deliver_ns: int


class DelayChannel:
    """Timestamped queue: each payload comes out base_delay (+ jitter) after it went in.

    Loss and jitter draws come from a generator seeded by the config, one
    loss draw and (if configured) one jitter draw per send, so a fixed seed
    replays the same drop set and schedule.
    """

    def __init__(self, config: ChannelConfig):
        self.config = config
        self._rng = np.random.default_rng(config.seed)
        self._heap = []
        self._counter = 0
        self.last_send = None
        self.last_delivery = 0
        self.sent = 0
        self.delivered = 0
        self.dropped = 0

    @property
    def pending(self) -> int:
        return len(self._heap)

    def _jitter(self) -> int:
        j = self.config.jitter
        if j is None:
            return 0
        if isinstance(j, UniformJitter):
            return int(self._rng.integers(-j.half_width_ns, j.half_width_ns, endpoint=True))
        return int(round(self._rng.normal(0.0, j.sigma_ns)))

    def send(self, payload, now_ns: int) -> bool:
        """Enqueue ``payload``; returns False if the channel dropped it."""
        if self.last_send is not None and now_ns < self.last_send:
            raise ValueError("send times must be non-decreasing")
        self.last_send = now_ns
        self.sent += 1
        lost = self._rng.random() < self.config.loss_prob
        jitter = self._jitter()
        if lost:
            self.dropped += 1
            return False
        deliver = max(now_ns, now_ns + self.config.base_delay_ns + jitter)
        if not self.config.allow_reorder:
            deliver = max(deliver, self.last_delivery)
        self.last_delivery = max(self.last_delivery, deliver)
        heapq.heappush(self._heap, (deliver, self._counter, now_ns, payload))
        self._counter += 1
        return True

    def next_delivery(self) -> Optional[int]:
        return self._heap[0][0] if self._heap else None

    def poll(self, now_ns: int) -> list:
        """Pop every payload due by ``now_ns`` in delivery order (ties in send order)."""
        out = []
        while self._heap and self._heap[0][0] <= now_ns:
            deliver, _, sent, payload = heapq.heappop(self._heap)
            out.append(Delivery(payload, sent, deliver))
        self.delivered += len(out)
        return out


# -- clocks and latency ------------------------------------------------------

SERVER = "server"
CLIENT = "client"


@dataclass(frozen=True)
class ClockModel:
    offset_server_ns: int = 0
    offset_client_ns: int = 0

    @property
    def delta(self) -> int:
        return self.offset_server_ns - self.offset_client_ns

    def local_time(self, endpoint: str, true_ns: int) -> int:
        return local_time(self, endpoint, true_ns)


def local_time(clock: ClockModel, endpoint: str, true_ns: int) -> int:
    if endpoint == SERVER:
        return true_ns + clock.offset_server_ns
    if endpoint == CLIENT:
        return true_ns + clock.offset_client_ns
    raise ValueError(f"unknown endpoint {endpoint!r}")


@dataclass(frozen=True)
class LatencySample:
    channel: str
    tau_ns: int
    measured_at_ns: int


def measure_video_latency(recv_client_ns: int, embedded_server_send_ns: int, delta_ns: int) -> LatencySample:
    """Server send time is mapped onto the client clock before differencing."""
    tau = recv_client_ns - (embedded_server_send_ns - delta_ns)
    return LatencySample("video", tau, recv_client_ns)


def measure_control_latency(rx_server_ns: int, tx_client_ns: int, delta_ns: int) -> LatencySample:
    """Client send time is mapped onto the server clock before differencing."""
    tau = rx_server_ns - (tx_client_ns + delta_ns)
    return LatencySample("control", tau, rx_server_ns)


def estimate_offset_rtt(t1_client_ns: int, t_server_ns: int, t2_client_ns: int) -> int:
    """Offset estimate from one request/response probe, assuming symmetric paths.

    Integer result; the midpoint is floored, so it is within 1/2 ns of the
    exact rational estimate.  With a request leg (client to server) of d_back
    and a reply leg (server to client, the video direction) of d_fwd the
    estimate is biased by (d_back - d_fwd) / 2.
    """
    if t2_client_ns < t1_client_ns:
        raise ValueError("probe response precedes request")
    return t_server_ns - (t1_client_ns + t2_client_ns) // 2


# -- wire format -------------------------------------------------------------

MAGIC = 0x4C415654
VERSION = 1
VIDEO = 0
CONTROL = 1
FORMAT_GRAY8 = 0
HEADER = struct.Struct(">IBBHIQI")
VIDEO_HEAD = struct.Struct(">HHB")
CONTROL_BODY = struct.Struct(">dddQ")
MAX_DATAGRAM = 65507

# (field, offset, struct) in header order, for error reporting
_HEADER_FIELDS = (
    ("magic", 0, struct.Struct(">I")),
    ("version", 4, struct.Struct(">B")),
    ("channel", 5, struct.Struct(">B")),
    ("flags", 6, struct.Struct(">H")),
    ("seq", 8, struct.Struct(">I")),
    ("send_ts_ns", 12, struct.Struct(">Q")),
    ("payload_len", 20, struct.Struct(">I")),
)


class PacketError(ValueError):
    def __init__(self, field: str, msg: str):
        super().__init__(f"{field}: {msg}")
        self.field = field


@dataclass(frozen=True)
class Packet:
    channel: int
    seq: int
    send_ts_ns: int
    payload: bytes = b""
    flags: int = 0


@dataclass(frozen=True)
class VideoPayload:
    width: int
    height: int
    pixels: bytes
    fmt: int = FORMAT_GRAY8


@dataclass(frozen=True)
class ControlPayload:
    steering: float
    throttle: float
    brake: float
    source_frame_ts_ns: int


def encode_packet(pkt: Packet) -> bytes:
    if pkt.channel not in (VIDEO, CONTROL):
        raise PacketError("channel", f"unknown channel {pkt.channel}")
    try:
        head = HEADER.pack(MAGIC, VERSION, pkt.channel, pkt.flags, pkt.seq, pkt.send_ts_ns, len(pkt.payload))
    except struct.error as exc:
        raise PacketError("header", str(exc)) from None
    return head + bytes(pkt.payload)


def decode_packet(buf: bytes) -> Packet:
    buf = bytes(buf)
    vals = {}
    for name, off, st in _HEADER_FIELDS:
        if len(buf) < off + st.size:
            raise PacketError(name, f"truncated at {len(buf)} bytes")
        vals[name] = st.unpack_from(buf, off)[0]
        if name == "magic" and vals[name] != MAGIC:
            raise PacketError("magic", f"bad magic 0x{vals[name]:08X}")
        if name == "version" and vals[name] != VERSION:
            raise PacketError("version", f"unsupported version {vals[name]}")
        if name == "channel" and vals[name] not in (VIDEO, CONTROL):
            raise PacketError("channel", f"unknown channel {vals[name]}")
    n = vals["payload_len"]
    body = buf[HEADER.size:]
    if len(body) < n:
        raise PacketError("payload", f"expected {n} bytes, got {len(body)}")
    if len(body) > n:
        raise PacketError("payload_len", f"{len(body) - n} trailing bytes")
    return Packet(vals["channel"], vals["seq"], vals["send_ts_ns"], body, vals["flags"])


def encode_video(v: VideoPayload) -> bytes:
    if len(v.pixels) != v.width * v.height:
        raise PacketError("pixels", f"{len(v.pixels)} bytes for {v.width}x{v.height}")
    try:
        return VIDEO_HEAD.pack(v.width, v.height, v.fmt) + bytes(v.pixels)
    except struct.error as exc:
        raise PacketError("width", str(exc)) from None


def decode_video(payload: bytes) -> VideoPayload:
    if len(payload) < VIDEO_HEAD.size:
        raise PacketError("width", "truncated video header")
    w, h, fmt = VIDEO_HEAD.unpack_from(payload)
    if fmt != FORMAT_GRAY8:
        raise PacketError("format", f"unsupported pixel format {fmt}")
    pixels = payload[VIDEO_HEAD.size:]
    if len(pixels) != w * h:
        raise PacketError("pixels", f"{len(pixels)} bytes for {w}x{h}")
    return VideoPayload(w, h, bytes(pixels), fmt)


def encode_control(c: ControlPayload) -> bytes:
    try:
        return CONTROL_BODY.pack(c.steering, c.throttle, c.brake, c.source_frame_ts_ns)
    except struct.error as exc:
        raise PacketError("source_frame_ts", str(exc)) from None


def decode_control(payload: bytes) -> ControlPayload:
    if len(payload) != CONTROL_BODY.size:
        raise PacketError("control", f"expected {CONTROL_BODY.size} bytes, got {len(payload)}")
    return ControlPayload(*CONTROL_BODY.unpack(payload))


# -- UDP loopback ------------------------------------------------------------

class UdpLink:
    """One-way loopback link: delay applied in user space, then a real sendto.

    ``send`` enqueues encoded bytes into a DelayChannel stamped with the
    monotonic clock; a pacer thread transmits them when due and a receiver
    thread hands datagrams to a thread-safe queue.
    """

    def __init__(self, config: ChannelConfig, host: str = "127.0.0.1", clock=time.monotonic_ns):
        self._clock = clock
        self._chan = DelayChannel(config)
        self._lock = threading.Lock()
        self._wake = threading.Event()
        self._stop = threading.Event()
        self.received = queue.Queue()
        self._rx = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
        self._rx.bind((host, 0))
        self._rx.settimeout(0.05)
        self._tx = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
        self.address = self._rx.getsockname()
        self._threads = [threading.Thread(target=self._pace, daemon=True),
                         threading.Thread(target=self._receive, daemon=True)]
        for t in self._threads:
            t.start()

    def send(self, data: bytes) -> bool:
        if len(data) > MAX_DATAGRAM:
            raise PacketError("payload_len", f"{len(data)} bytes exceeds one UDP datagram")
        with self._lock:
            ok = self._chan.send(bytes(data), self._clock())
        self._wake.set()
        return ok

    def _pace(self):
        while not self._stop.is_set():
            with self._lock:
                due = self._chan.poll(self._clock())
                nxt = self._chan.next_delivery()
            for d in due:
                self._tx.sendto(d.payload, self.address)
            if nxt is None:
                self._wake.wait(0.05)
            else:
                self._wake.wait(max(0.0, (nxt - self._clock()) / S))
            self._wake.clear()

    def _receive(self):
        while not self._stop.is_set():
            try:
                data, _ = self._rx.recvfrom(MAX_DATAGRAM)
            except socket.timeout:
                continue
            except OSError:
                break
            self.received.put((self._clock(), data))

    def recv(self, timeout: float = 1.0):
        """(arrival monotonic ns, bytes); raises queue.Empty on timeout."""
        return self.received.get(timeout=timeout)

    def close(self):
        self._stop.set()
        self._wake.set()
        for t in self._threads:
            t.join(timeout=1.0)
        self._rx.close()
        self._tx.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()
