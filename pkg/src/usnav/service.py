"""Session-oriented navigation service.

Runs the tracking->cue pipeline on live or simulated inputs and publishes
cue states and poses to clients. The engine core is synchronous and
transport-free so scripts and tests can drive it directly; the asyncio
server wraps it with three interfaces:

  * a persistent bidirectional client channel (TCP, u32 length-prefixed
    UTF-8 JSON messages) for steering UIs and test drivers,
  * a UDP ingest port accepting encoded TrackingPackets,
  * an HTTP health endpoint reporting session and drop counters.

Every broadcast carries the session id and a per-session monotonically
increasing sequence number; updates are applied in one total order per
session (the engine is only ever called from the server's event loop).
"""

from __future__ import annotations

import asyncio
import json
import struct
import time
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np

from .calibration import ProbeGeometry
from .cues import (
    CueConfig,
    IN_PLANE,
    OUT_OF_PLANE,
    NeedleToolGeometry,
    ToolPoseSample,
    TrackingLostCue,
    cue_frame,
)
from .geometry import GeometryError, RigidTransform
from .wire import TrackingPacket, decode_tracking, MalformedPacket, NonUnitQuaternion

BROADCAST = "broadcast"
TO_SENDER = "sender"

DEFAULT_GRACE_US = 100_000


class ServiceError(ValueError):
    pass


class UnknownSession(ServiceError):
    pass


class UnknownTool(ServiceError):
    pass


class MalformedMessage(ServiceError):
    pass


@dataclass
class SessionConfig:
    """Static wiring of one guidance session: exactly one probe, one needle."""

    session_id: str = "default"
    probe_tool_id: int = 1
    needle_tool_id: int = 2
    mode: str = OUT_OF_PLANE
    cue_config: CueConfig = field(default_factory=CueConfig)
    needle_geometry: NeedleToolGeometry = field(default_factory=NeedleToolGeometry)
    probe_geometry: Optional[ProbeGeometry] = None
    grace_us: int = DEFAULT_GRACE_US
    flip_plane: bool = False

    def __post_init__(self):
        if self.probe_tool_id == self.needle_tool_id:
            raise ValueError("probe and needle must be distinct tools")
        if self.mode not in (IN_PLANE, OUT_OF_PLANE):
            raise ValueError(f"unknown mode {self.mode!r}")


@dataclass
class Session:
    """Live state of one session.

    ``poses`` carries receipt stamps on the service clock (for the grace
    window); ``source_stamps`` keeps each tool's newest source timestamp
    for latest-wins ordering, so clients never need the service's clock.
    """

    config: SessionConfig
    mode: str = ""
    poses: Dict[int, ToolPoseSample] = field(default_factory=dict)
    source_stamps: Dict[int, int] = field(default_factory=dict)
    seq: int = 0
    tracking_lost_active: bool = False
    unknown_tool_drops: int = 0
    stale_packet_drops: int = 0

    def __post_init__(self):
        if not self.mode:
            self.mode = self.config.mode

    def next_seq(self) -> int:
        self.seq += 1
        return self.seq


def _pose_from_fields(quaternion, translation) -> RigidTransform:
    q = np.asarray(quaternion, dtype=np.float64)
    packet = TrackingPacket(
        tool_id=0,
        timestamp_us=0,
        quaternion=tuple(q),
        translation=tuple(float(v) for v in translation),
        rms_error=0.0,
        occluded_count=0,
    )
    return packet.pose()


def _pose_fields(pose: RigidTransform) -> Tuple[Tuple[float, ...], Tuple[float, ...]]:
    packet = TrackingPacket.from_pose(0, 0, pose)
    return packet.quaternion, packet.translation


class NavEngine:
    """Transport-free service core: sessions, updates, and broadcasts.

    Methods return (scope, message) pairs: BROADCAST messages go to every
    subscriber of the session, TO_SENDER messages only to the caller.
    """

    def __init__(self, sessions: List[SessionConfig], clock: Callable[[], int] = None):
        if not sessions:
            sessions = [SessionConfig()]
        self.sessions: Dict[str, Session] = {
            cfg.session_id: Session(config=cfg) for cfg in sessions
        }
        if len(self.sessions) != len(sessions):
            raise ValueError("duplicate session_id")
        self.clock = clock if clock is not None else (lambda: time.monotonic_ns() // 1000)

    def _session(self, session_id: str) -> Session:
        try:
            return self.sessions[session_id]
        except KeyError:
            raise UnknownSession(f"unknown session {session_id!r}") from None

    def _compute_cue(self, session: Session, now_us: int):
        cfg = session.config
        return cue_frame(
            mode=session.mode,
            probe=session.poses.get(cfg.probe_tool_id),
            needle=session.poses.get(cfg.needle_tool_id),
            probe_geometry=cfg.probe_geometry,
            needle_geometry=cfg.needle_geometry,
            cfg=cfg.cue_config,
            now_us=now_us,
            grace_us=cfg.grace_us,
            flip_plane=cfg.flip_plane,
        )

    def _cue_messages(self, session: Session, now_us: int) -> List[Tuple[str, dict]]:
        """Evaluate cue_frame and translate it into broadcast messages.

        A TrackingLostCue emits exactly one tracking_lost until a tracked
        frame recovers the session.
        """
        sid = session.config.session_id
        try:
            state = self._compute_cue(session, now_us)
        except GeometryError as exc:
            return [
                (
                    BROADCAST,
                    {
                        "type": "error",
                        "session": sid,
                        "seq": session.next_seq(),
                        "code": type(exc).__name__,
                        "message": str(exc),
                    },
                )
            ]
        if isinstance(state, TrackingLostCue):
            if session.tracking_lost_active:
                return []
            session.tracking_lost_active = True
            return [
                (
                    BROADCAST,
                    {
                        "type": "tracking_lost",
                        "session": sid,
                        "seq": session.next_seq(),
                        "stale_tools": list(state.stale_tools),
                    },
                )
            ]
        session.tracking_lost_active = False
        return [
            (
                BROADCAST,
                {
                    "type": "cue_state",
                    "session": sid,
                    "seq": session.next_seq(),
                    "now_us": now_us,
                    "state": state.to_dict(),
                },
            )
        ]

    def _apply_pose(
        self, session: Session, tool_id: int, sample: ToolPoseSample
    ) -> List[Tuple[str, dict]]:
        cfg = session.config
        if tool_id not in (cfg.probe_tool_id, cfg.needle_tool_id):
            raise UnknownTool(f"tool {tool_id} is not bound to session")
        applied = session.source_stamps.get(tool_id)
        if applied is not None and sample.timestamp_us <= applied:
            session.stale_packet_drops += 1
            return []
        session.source_stamps[tool_id] = sample.timestamp_us
        # staleness is judged on the receipt stamp (service clock); the
        # source stamp only orders packets from the sender's clock domain
        session.poses[tool_id] = ToolPoseSample(
            pose=sample.pose, timestamp_us=self.clock()
        )
        quaternion, translation = _pose_fields(sample.pose)
        out = [
            (
                BROADCAST,
                {
                    "type": "pose_update",
                    "session": cfg.session_id,
                    "seq": session.next_seq(),
                    "tool_id": tool_id,
                    "timestamp_us": sample.timestamp_us,
                    "quaternion": list(quaternion),
                    "translation": list(translation),
                },
            )
        ]
        out.extend(self._cue_messages(session, now_us=self.clock()))
        return out

    def handle_client_message(self, msg: dict) -> List[Tuple[str, dict]]:
        """Apply one client message; raises ServiceError subclasses on bad input."""
        if not isinstance(msg, dict) or "type" not in msg:
            raise MalformedMessage("message must be an object with a 'type'")
        session = self._session(msg.get("session", ""))
        kind = msg["type"]
        if kind == "set_pose":
            try:
                tool_id = int(msg["tool_id"])
                sample = ToolPoseSample(
                    pose=_pose_from_fields(msg["quaternion"], msg["translation"]),
                    timestamp_us=int(msg["timestamp_us"]),
                )
            except ServiceError:
                raise
            except (KeyError, TypeError, ValueError) as exc:
                raise MalformedMessage(f"bad set_pose: {exc}") from exc
            return self._apply_pose(session, tool_id, sample)
        if kind == "set_mode":
            mode = msg.get("mode")
            if mode not in (IN_PLANE, OUT_OF_PLANE):
                raise MalformedMessage(f"unknown mode {mode!r}")
            session.mode = mode  # takes effect on the next frame
            return []
        if kind == "set_cue_config":
            try:
                session.config.cue_config = CueConfig.from_dict(msg["config"])
            except (KeyError, TypeError, ValueError) as exc:
                raise MalformedMessage(f"bad cue config: {exc}") from exc
            return []
        if kind == "subscribe":
            return [
                (
                    TO_SENDER,
                    {
                        "type": "session_info",
                        "session": session.config.session_id,
                        "seq": session.next_seq(),
                        "mode": session.mode,
                        "cue_config": session.config.cue_config.to_dict(),
                        "probe_tool_id": session.config.probe_tool_id,
                        "needle_tool_id": session.config.needle_tool_id,
                    },
                )
            ]
        raise MalformedMessage(f"unknown message type {kind!r}")

    def ingest_tracking(
        self, session_id: str, packet: TrackingPacket
    ) -> List[Tuple[str, dict]]:
        """Apply one sensor packet with datagram semantics (never raises).

        Stale packets (timestamp not newer than the applied one) are
        dropped silently; packets for unbound tools bump a counter.
        """
        session = self._session(session_id)
        cfg = session.config
        if packet.tool_id not in (cfg.probe_tool_id, cfg.needle_tool_id):
            session.unknown_tool_drops += 1
            return []
        sample = ToolPoseSample(pose=packet.pose(), timestamp_us=packet.timestamp_us)
        try:
            return self._apply_pose(session, packet.tool_id, sample)
        except UnknownTool:  # unreachable given the guard; defensive
            session.unknown_tool_drops += 1
            return []

    def tick(self, session_id: str) -> List[Tuple[str, dict]]:
        """Liveness check: emit tracking_lost once when poses go stale."""
        session = self._session(session_id)
        try:
            state = self._compute_cue(session, now_us=self.clock())
        except GeometryError:
            return []
        if isinstance(state, TrackingLostCue) and not session.tracking_lost_active:
            session.tracking_lost_active = True
            return [
                (
                    BROADCAST,
                    {
                        "type": "tracking_lost",
                        "session": session.config.session_id,
                        "seq": session.next_seq(),
                        "stale_tools": list(state.stale_tools),
                    },
                )
            ]
        return []

    def health(self) -> dict:
        return {
            "sessions": len(self.sessions),
            "unknown_tool_drops": sum(
                s.unknown_tool_drops for s in self.sessions.values()
            ),
            "stale_packet_drops": sum(
                s.stale_packet_drops for s in self.sessions.values()
            ),
        }


def encode_message(msg: dict) -> bytes:
    payload = json.dumps(msg, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return struct.pack("<I", len(payload)) + payload


@dataclass
class NavServiceConfig:
    host: str = "127.0.0.1"
    tcp_port: int = 0
    udp_port: int = 0
    health_port: int = 0
    tick_interval_s: float = 0.05
    sessions: List[SessionConfig] = field(default_factory=lambda: [SessionConfig()])


class NavService:
    """Asyncio wrapper exposing the engine over TCP, UDP, and HTTP."""

    def __init__(self, config: NavServiceConfig, engine: Optional[NavEngine] = None):
        self.config = config
        self.engine = engine if engine is not None else NavEngine(config.sessions)
        self.subscribers: Dict[str, List[asyncio.StreamWriter]] = {}
        self.clients = 0
        self._servers = []
        self._udp_transport = None
        self._tick_task = None
        self.tcp_port = None
        self.udp_port = None
        self.health_port = None

    async def start(self) -> None:
        loop = asyncio.get_running_loop()
        tcp = await asyncio.start_server(
            self._handle_client, self.config.host, self.config.tcp_port
        )
        self.tcp_port = tcp.sockets[0].getsockname()[1]
        health = await asyncio.start_server(
            self._handle_health, self.config.host, self.config.health_port
        )
        self.health_port = health.sockets[0].getsockname()[1]
        self._servers = [tcp, health]
        transport, _ = await loop.create_datagram_endpoint(
            lambda: _UdpIngest(self),
            local_addr=(self.config.host, self.config.udp_port),
        )
        self._udp_transport = transport
        self.udp_port = transport.get_extra_info("sockname")[1]
        self._tick_task = asyncio.ensure_future(self._tick_loop())

    async def stop(self) -> None:
        if self._tick_task:
            self._tick_task.cancel()
        if self._udp_transport:
            self._udp_transport.close()
        for server in self._servers:
            server.close()
            await server.wait_closed()

    async def _tick_loop(self) -> None:
        while True:
            await asyncio.sleep(self.config.tick_interval_s)
            for session_id in list(self.engine.sessions):
                self._route(session_id, self.engine.tick(session_id), sender=None)

    def _route(
        self,
        session_id: str,
        messages: List[Tuple[str, dict]],
        sender: Optional[asyncio.StreamWriter],
    ) -> None:
        for scope, msg in messages:
            data = encode_message(msg)
            if scope == TO_SENDER:
                targets = [sender] if sender is not None else []
            else:
                targets = self.subscribers.get(session_id, [])
            for writer in targets:
                if not writer.is_closing():
                    writer.write(data)

    async def _handle_client(
        self, reader: asyncio.StreamReader, writer: asyncio.StreamWriter
    ) -> None:
        self.clients += 1
        subscribed: List[str] = []
        try:
            while True:
                try:
                    header = await reader.readexactly(4)
                except asyncio.IncompleteReadError:
                    break
                (length,) = struct.unpack("<I", header)
                payload = await reader.readexactly(length)
                try:
                    msg = json.loads(payload.decode("utf-8"))
                except (UnicodeDecodeError, json.JSONDecodeError) as exc:
                    writer.write(
                        encode_message(
                            {"type": "error", "code": "MalformedMessage", "message": str(exc)}
                        )
                    )
                    continue
                session_id = msg.get("session", "") if isinstance(msg, dict) else ""
                try:
                    out = self.engine.handle_client_message(msg)
                except ServiceError as exc:
                    writer.write(
                        encode_message(
                            {
                                "type": "error",
                                "code": type(exc).__name__,
                                "session": session_id,
                                "message": str(exc),
                            }
                        )
                    )
                    continue
                if (
                    isinstance(msg, dict)
                    and msg.get("type") == "subscribe"
                    and session_id in self.engine.sessions
                    and writer not in self.subscribers.setdefault(session_id, [])
                ):
                    self.subscribers[session_id].append(writer)
                    subscribed.append(session_id)
                self._route(session_id, out, sender=writer)
                await writer.drain()
        finally:
            for session_id in subscribed:
                if writer in self.subscribers.get(session_id, []):
                    self.subscribers[session_id].remove(writer)
            writer.close()
            self.clients -= 1

    async def _handle_health(
        self, reader: asyncio.StreamReader, writer: asyncio.StreamWriter
    ) -> None:
        try:
            request = await reader.readline()
            while True:
                line = await reader.readline()
                if line in (b"\r\n", b"\n", b""):
                    break
            status = self.engine.health()
            status["clients"] = self.clients
            body = json.dumps(status, sort_keys=True).encode("utf-8")
            head = (
                b"HTTP/1.1 200 OK\r\nContent-Type: application/json\r\n"
                + f"Content-Length: {len(body)}\r\n\r\n".encode("ascii")
            )
            if not request.startswith(b"GET"):
                head = head.replace(b"200 OK", b"405 Method Not Allowed")
            writer.write(head + body)
            await writer.drain()
        finally:
            writer.close()


class _UdpIngest(asyncio.DatagramProtocol):
    """Datagram ingest: a packet routes to every session binding its tool."""

    def __init__(self, service: NavService):
        self.service = service

    def datagram_received(self, data: bytes, addr) -> None:
        try:
            packet = decode_tracking(data)
        except (MalformedPacket, NonUnitQuaternion):
            return  # datagram semantics: drop bad packets silently
        engine = self.service.engine
        for session_id, session in engine.sessions.items():
            cfg = session.config
            if packet.tool_id in (cfg.probe_tool_id, cfg.needle_tool_id):
                out = engine.ingest_tracking(session_id, packet)
                self.service._route(session_id, out, sender=None)


def replay_trace(entries: List[dict], config: SessionConfig) -> List[str]:
    """Deterministic replay: timestamped pose records -> canonical cue log.

    Each record is either a pose ({"tool_id", "timestamp_us",
    "quaternion", "translation"}) or a mode switch ({"type": "set_mode",
    "mode": ...}). Poses apply with latest-wins semantics; after every
    applied record the cue state is evaluated at that record's timestamp
    and appended as canonical JSON. Geometric degeneracies (perpendicular
    or parallel needle) become error records instead of aborting the
    replay. Identical traces produce byte-identical logs.
    """
    from .cues import cue_state_to_json

    poses: Dict[int, ToolPoseSample] = {}
    mode = config.mode
    lines: List[str] = []
    now_us = 0
    for entry in entries:
        if entry.get("type") == "set_mode":
            mode = entry["mode"]
            continue
        tool_id = int(entry["tool_id"])
        sample = ToolPoseSample(
            pose=_pose_from_fields(entry["quaternion"], entry["translation"]),
            timestamp_us=int(entry["timestamp_us"]),
        )
        now_us = max(now_us, sample.timestamp_us)
        if tool_id not in (config.probe_tool_id, config.needle_tool_id):
            continue
        current = poses.get(tool_id)
        if current is None or sample.timestamp_us > current.timestamp_us:
            poses[tool_id] = sample
        try:
            state = cue_frame(
                mode=mode,
                probe=poses.get(config.probe_tool_id),
                needle=poses.get(config.needle_tool_id),
                probe_geometry=config.probe_geometry,
                needle_geometry=config.needle_geometry,
                cfg=config.cue_config,
                now_us=now_us,
                grace_us=config.grace_us,
                flip_plane=config.flip_plane,
            )
        except GeometryError as exc:
            lines.append(
                json.dumps(
                    {"code": type(exc).__name__, "kind": "error"},
                    sort_keys=True,
                    separators=(",", ":"),
                )
            )
            continue
        lines.append(cue_state_to_json(state))
    return lines


async def serve_forever(config: NavServiceConfig) -> None:
    service = NavService(config)
    await service.start()
    print(
        f"usnav service listening: tcp={service.tcp_port} "
        f"udp={service.udp_port} health={service.health_port}",
        flush=True,
    )
    try:
        await asyncio.Event().wait()
    finally:
        await service.stop()
