"""Split-pipeline frame streaming and the loopback latency harness.

Three concurrent stages model the deployment: a capture simulator feeds a
render host over a reliable stream channel, which forwards to a headset
simulator over a second stream channel. Stages run as threads in one
process and share one monotonic clock, so per-frame stamps at each stage
compose into latency records without cross-clock comparison.

Stream messages are length-prefixed (u32) encoded FramePackets; a
zero-length message is the end-of-stream sentinel. Each receiving stage
buffers through a bounded drop-oldest queue so a slow stage sheds load
instead of growing without bound; drops are counted, and frames missing
any stamp are reported as losses, not failures.
"""

from __future__ import annotations

import csv
import socket
import struct
import threading
import time
from collections import deque
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .wire import FramePacket, _FRAME_HEADER, encode_frame


def monotonic_us() -> int:
    return time.monotonic_ns() // 1000


class BoundedQueue:
    """Thread-safe FIFO with a drop-oldest overflow policy."""

    def __init__(self, capacity: int):
        if capacity < 1:
            raise ValueError("capacity must be at least 1")
        self._items: deque = deque()
        self._capacity = capacity
        self._lock = threading.Lock()
        self._ready = threading.Condition(self._lock)
        self.drops = 0

    def put(self, item) -> None:
        with self._ready:
            if len(self._items) >= self._capacity:
                self._items.popleft()
                self.drops += 1
            self._items.append(item)
            self._ready.notify()

    def get(self, timeout: Optional[float] = None):
        with self._ready:
            if not self._ready.wait_for(lambda: self._items, timeout=timeout):
                raise TimeoutError("queue empty")
            return self._items.popleft()


@dataclass(frozen=True)
class LatencyRecord:
    """Per-frame stage stamps, microseconds on one monotonic clock."""

    frame_id: int
    t_capture_us: int
    t_render_host_us: int
    t_headset_display_us: int

    def __post_init__(self):
        if not (
            self.t_capture_us <= self.t_render_host_us <= self.t_headset_display_us
        ):
            raise ValueError("stage stamps must be monotonically ordered")

    @property
    def t1_us(self) -> int:
        """Capture to render-host display."""
        return self.t_render_host_us - self.t_capture_us

    @property
    def t2_us(self) -> int:
        """Capture to headset display."""
        return self.t_headset_display_us - self.t_capture_us


@dataclass
class LatencySummary:
    frames_sent: int
    frames_completed: int
    lost_frame_ids: Tuple[int, ...]
    t1_mean_ms: float
    t1_std_ms: float
    t2_mean_ms: float
    t2_std_ms: float
    host_queue_drops: int
    headset_queue_drops: int

    @property
    def loss_fraction(self) -> float:
        if self.frames_sent == 0:
            return 0.0
        return len(self.lost_frame_ids) / self.frames_sent


@dataclass
class LatencyProbeConfig:
    """Knobs for one loopback latency run."""

    fps: float = 60.0
    duration_s: float = 10.0
    frame_width: int = 64
    frame_height: int = 64
    host_delay_s: float = 0.0
    headset_delay_s: float = 0.0
    queue_capacity: int = 8
    probe_tag: str = "SC5-1U"

    def __post_init__(self):
        if self.fps <= 0 or self.duration_s <= 0:
            raise ValueError("fps and duration_s must be positive")
        if self.frame_width < 1 or self.frame_height < 1:
            raise ValueError("frame dimensions must be positive")


def _send_message(sock: socket.socket, payload: bytes) -> None:
    sock.sendall(struct.pack("<I", len(payload)) + payload)


def _recv_exact(sock: socket.socket, n: int) -> Optional[bytes]:
    chunks = []
    remaining = n
    while remaining:
        chunk = sock.recv(min(remaining, 1 << 20))
        if not chunk:
            return None
        chunks.append(chunk)
        remaining -= len(chunk)
    return b"".join(chunks)


def _recv_message(sock: socket.socket) -> Optional[bytes]:
    header = _recv_exact(sock, 4)
    if header is None:
        return None
    (length,) = struct.unpack("<I", header)
    if length == 0:
        return b""  # end-of-stream sentinel
    return _recv_exact(sock, length)


def _peek_frame_header(data: bytes) -> Tuple[int, int]:
    """(frame_id, capture_timestamp_us) without decoding the payload."""
    fields = _FRAME_HEADER.unpack_from(data, 0)
    return fields[2], fields[3]


class _RelayStage(threading.Thread):
    """Receive framed messages, stamp them after a work delay, optionally forward."""

    def __init__(
        self,
        name: str,
        listener: socket.socket,
        delay_s: float,
        queue_capacity: int,
        stamps: Dict[int, int],
        forward_to: Optional[int] = None,
    ):
        super().__init__(name=name, daemon=True)
        self.listener = listener
        self.delay_s = delay_s
        self.queue = BoundedQueue(queue_capacity)
        self.stamps = stamps
        self.forward_port = forward_to
        self._done = threading.Event()

    def run(self) -> None:
        conn, _ = self.listener.accept()
        out = None
        if self.forward_port is not None:
            out = socket.create_connection(("127.0.0.1", self.forward_port))
            out.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)

        reader = threading.Thread(target=self._read_loop, args=(conn,), daemon=True)
        reader.start()
        try:
            while True:
                try:
                    message = self.queue.get(timeout=5.0)
                except TimeoutError:
                    break
                if message == b"":
                    if out is not None:
                        _send_message(out, b"")
                    break
                if self.delay_s > 0:
                    time.sleep(self.delay_s)
                frame_id, _ = _peek_frame_header(message)
                self.stamps[frame_id] = monotonic_us()
                if out is not None:
                    _send_message(out, message)
        finally:
            if out is not None:
                out.close()
            conn.close()
            self.listener.close()
            self._done.set()

    def _read_loop(self, conn: socket.socket) -> None:
        while True:
            message = _recv_message(conn)
            if message is None:
                break
            self.queue.put(message)
            if message == b"":
                break

    def wait(self, timeout: float) -> bool:
        return self._done.wait(timeout)


def _make_listener() -> Tuple[socket.socket, int]:
    listener = socket.socket()
    listener.bind(("127.0.0.1", 0))
    listener.listen(1)
    return listener, listener.getsockname()[1]


def run_latency_probe(
    config: LatencyProbeConfig,
) -> Tuple[List[LatencyRecord], LatencySummary]:
    """Stream synthetic frames capture->host->headset and measure latency.

    Every frame is stamped once per stage on the shared monotonic clock.
    Frames missing a downstream stamp (queue drops) are reported in the
    summary as lost frame ids. Returns records ordered by frame_id.
    """
    host_stamps: Dict[int, int] = {}
    headset_stamps: Dict[int, int] = {}

    headset_listener, headset_port = _make_listener()
    host_listener, host_port = _make_listener()
    headset = _RelayStage(
        "headset-sim",
        headset_listener,
        config.headset_delay_s,
        config.queue_capacity,
        headset_stamps,
    )
    host = _RelayStage(
        "render-host",
        host_listener,
        config.host_delay_s,
        config.queue_capacity,
        host_stamps,
        forward_to=headset_port,
    )
    headset.start()
    host.start()

    # One static image/mask reused every frame; headers change per frame.
    rng = np.random.default_rng(0)
    crop = rng.integers(0, 256, size=(config.frame_height, config.frame_width), dtype=np.uint8)
    mask = np.ones((config.frame_height, config.frame_width), dtype=bool)
    bounds = (0, config.frame_width - 1, 0, config.frame_height - 1)

    sender = socket.create_connection(("127.0.0.1", host_port))
    sender.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
    capture_stamps: Dict[int, int] = {}
    total = int(round(config.fps * config.duration_s))
    period = 1.0 / config.fps
    start = time.monotonic()
    try:
        for frame_id in range(total):
            deadline = start + frame_id * period
            now = time.monotonic()
            if deadline > now:
                time.sleep(deadline - now)
            t_capture = monotonic_us()
            capture_stamps[frame_id] = t_capture
            packet = FramePacket(
                frame_id=frame_id,
                capture_timestamp_us=t_capture,
                bounds=bounds,
                probe_tag=config.probe_tag,
                crop=crop,
                mask=mask,
            )
            _send_message(sender, encode_frame(packet))
        _send_message(sender, b"")
    finally:
        sender.close()

    host.wait(timeout=config.duration_s + 10.0)
    headset.wait(timeout=config.duration_s + 10.0)

    records = []
    lost = []
    for frame_id in range(total):
        t0 = capture_stamps[frame_id]
        t1 = host_stamps.get(frame_id)
        t2 = headset_stamps.get(frame_id)
        if t1 is None or t2 is None:
            lost.append(frame_id)
            continue
        records.append(
            LatencyRecord(
                frame_id=frame_id,
                t_capture_us=t0,
                t_render_host_us=t1,
                t_headset_display_us=max(t2, t1),
            )
        )

    t1_ms = np.array([r.t1_us for r in records]) / 1000.0
    t2_ms = np.array([r.t2_us for r in records]) / 1000.0
    summary = LatencySummary(
        frames_sent=total,
        frames_completed=len(records),
        lost_frame_ids=tuple(lost),
        t1_mean_ms=float(t1_ms.mean()) if records else float("nan"),
        t1_std_ms=float(t1_ms.std(ddof=1)) if len(records) > 1 else 0.0,
        t2_mean_ms=float(t2_ms.mean()) if records else float("nan"),
        t2_std_ms=float(t2_ms.std(ddof=1)) if len(records) > 1 else 0.0,
        host_queue_drops=host.queue.drops,
        headset_queue_drops=headset.queue.drops,
    )
    return records, summary


LATENCY_CSV_COLUMNS = (
    "frame_id",
    "t_capture_us",
    "t_render_host_us",
    "t_headset_display_us",
    "t1_us",
    "t2_us",
)


def write_latency_csv(records: Sequence[LatencyRecord], path) -> None:
    """Export latency records with the documented column set."""
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(LATENCY_CSV_COLUMNS)
        for r in records:
            writer.writerow(
                [
                    r.frame_id,
                    r.t_capture_us,
                    r.t_render_host_us,
                    r.t_headset_display_us,
                    r.t1_us,
                    r.t2_us,
                ]
            )
