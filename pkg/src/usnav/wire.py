"""Bit-exact wire formats for frame and tracking streams.

All integers are little-endian. A frame packet carries an 8-bit crop plus
a run-length-encoded validity mask; a tracking packet is a fixed 75-byte
pose record suitable for datagram transport.

Frame packet layout (offsets in bytes):

    0   magic  b"USNV"
    4   version u8 (= 1)
    5   frame_id u64
    13  capture_timestamp_us u64
    21  bounds 4 x u16 (u_min, u_max, v_min, v_max, inclusive)
    29  probe_tag 8 bytes, NUL-padded ASCII
    37  payload_len u32
    41  payload: crop pixels (u8, row-major, bounds-sized), then the mask
        RLE: run_count u32 followed by run_count x u16 run lengths.

Mask RLE: runs alternate validity starting with invalid; zero-length runs
are legal and keep the alternation when the mask starts valid or a run
exceeds 65535. Run lengths must sum to the crop pixel count. The encoder
is canonical (maximal 65535 chunks), so encode(decode(bytes)) == bytes.

Tracking packet layout (75 bytes total):

    0   magic b"USTK"
    4   version u8 (= 1)
    5   tool_id u8
    6   timestamp_us u64
    14  quaternion 4 x f64 (w, x, y, z), unit norm to 1e-9
    46  translation 3 x f64, mm
    70  rms_error f32, mm
    74  occluded_count u8

rms_error travels at single precision to keep the record at 75 bytes;
constructing a TrackingPacket quantizes the field accordingly.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import Tuple

import numpy as np
from numpy.typing import NDArray
from scipy.spatial.transform import Rotation

from .geometry import RigidTransform

FRAME_MAGIC = b"USNV"
TRACKING_MAGIC = b"USTK"
WIRE_VERSION = 1

_FRAME_HEADER = struct.Struct("<4sBQQ4H8sI")
FRAME_HEADER_SIZE = _FRAME_HEADER.size  # 41
_TRACKING = struct.Struct("<4sBBQ4d3dfB")
TRACKING_PACKET_SIZE = _TRACKING.size  # 75

_RUN_MAX = 0xFFFF


class MalformedPacket(ValueError):
    """Decode failure; ``offset`` is the byte position of the first violation."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte {offset})")
        self.offset = offset


class NonUnitQuaternion(ValueError):
    """Tracking quaternion norm differs from 1 by more than 1e-9."""


@dataclass(frozen=True)
class FramePacket:
    """One image+mask frame restricted to its effective bounding area."""

    frame_id: int
    capture_timestamp_us: int
    bounds: Tuple[int, int, int, int]  # u_min, u_max, v_min, v_max
    probe_tag: str
    crop: NDArray[np.uint8]
    mask: NDArray[np.bool_]
    version: int = WIRE_VERSION

    def __post_init__(self):
        u_min, u_max, v_min, v_max = self.bounds
        if not (0 <= u_min <= u_max <= _RUN_MAX and 0 <= v_min <= v_max <= _RUN_MAX):
            raise ValueError("bounds must be ordered u16 pixel indices")
        shape = (v_max - v_min + 1, u_max - u_min + 1)
        crop = np.asarray(self.crop, dtype=np.uint8)
        mask = np.asarray(self.mask, dtype=bool)
        if crop.shape != shape or mask.shape != shape:
            raise ValueError(f"crop {crop.shape} / mask {mask.shape} must equal {shape}")
        if len(self.probe_tag.encode("ascii")) > 8:
            raise ValueError("probe_tag must fit 8 ASCII bytes")
        crop = crop.copy()
        mask = mask.copy()
        crop.setflags(write=False)
        mask.setflags(write=False)
        object.__setattr__(self, "crop", crop)
        object.__setattr__(self, "mask", mask)

    def __eq__(self, other) -> bool:
        if not isinstance(other, FramePacket):
            return NotImplemented
        return (
            self.frame_id == other.frame_id
            and self.capture_timestamp_us == other.capture_timestamp_us
            and self.bounds == other.bounds
            and self.probe_tag == other.probe_tag
            and self.version == other.version
            and np.array_equal(self.crop, other.crop)
            and np.array_equal(self.mask, other.mask)
        )


def encode_mask_rle(mask: NDArray[np.bool_]) -> bytes:
    """Canonical RLE of a boolean grid: u32 count + u16 runs, invalid first."""
    flat = np.asarray(mask, dtype=bool).ravel()
    if flat.size == 0:
        return struct.pack("<I", 0)
    change = np.flatnonzero(np.diff(flat))
    edges = np.concatenate(([0], change + 1, [flat.size]))
    lengths = np.diff(edges)
    runs = []
    value = bool(flat[0])
    if value:
        runs.append(0)  # keep invalid-first alternation
    for length in lengths:
        n = int(length)
        while n > _RUN_MAX:
            runs.extend((_RUN_MAX, 0))
            n -= _RUN_MAX
        runs.append(n)
    return struct.pack("<I", len(runs)) + np.asarray(runs, dtype="<u2").tobytes()


def decode_mask_rle(data: bytes, pixel_count: int, base_offset: int = 0) -> NDArray[np.bool_]:
    """Inverse of encode_mask_rle; validates the run sum against pixel_count."""
    if len(data) < 4:
        raise MalformedPacket("mask RLE truncated before run count", base_offset + len(data))
    (count,) = struct.unpack_from("<I", data, 0)
    need = 4 + 2 * count
    if len(data) < need:
        raise MalformedPacket("mask RLE runs truncated", base_offset + len(data))
    if len(data) > need:
        raise MalformedPacket("trailing bytes after mask RLE", base_offset + need)
    runs = np.frombuffer(data, dtype="<u2", count=count, offset=4).astype(np.int64)
    total = int(runs.sum())
    if total != pixel_count:
        if total > pixel_count:
            overflow = int(np.searchsorted(np.cumsum(runs), pixel_count, side="right"))
            raise MalformedPacket(
                f"mask runs exceed {pixel_count} pixels", base_offset + 4 + 2 * overflow
            )
        raise MalformedPacket(
            f"mask runs cover {total} of {pixel_count} pixels", base_offset + need
        )
    values = (np.arange(count) % 2).astype(bool)  # invalid, valid, invalid, ...
    return np.repeat(values, runs)


def encode_frame(packet: FramePacket) -> bytes:
    """Serialize a FramePacket to its documented byte layout."""
    rle = encode_mask_rle(packet.mask)
    crop_bytes = packet.crop.tobytes()
    payload_len = len(crop_bytes) + len(rle)
    header = _FRAME_HEADER.pack(
        FRAME_MAGIC,
        packet.version,
        packet.frame_id,
        packet.capture_timestamp_us,
        *packet.bounds,
        packet.probe_tag.encode("ascii").ljust(8, b"\0"),
        payload_len,
    )
    return header + crop_bytes + rle


def decode_frame(data: bytes) -> FramePacket:
    """Parse a FramePacket, rejecting malformed input with its byte offset."""
    if len(data) < FRAME_HEADER_SIZE:
        raise MalformedPacket("frame header truncated", len(data))
    magic, version, frame_id, ts, u_min, u_max, v_min, v_max, tag, payload_len = (
        _FRAME_HEADER.unpack_from(data, 0)
    )
    if magic != FRAME_MAGIC:
        raise MalformedPacket(f"bad magic {magic!r}", 0)
    if version != WIRE_VERSION:
        raise MalformedPacket(f"unsupported version {version}", 4)
    if u_min > u_max or v_min > v_max:
        raise MalformedPacket("bounds are not ordered", 21)
    total = FRAME_HEADER_SIZE + payload_len
    if len(data) < total:
        raise MalformedPacket("frame payload truncated", len(data))
    if len(data) > total:
        raise MalformedPacket("trailing bytes after frame payload", total)

    width = u_max - u_min + 1
    height = v_max - v_min + 1
    pixels = width * height
    if payload_len < pixels + 4:
        raise MalformedPacket("payload_len too small for crop plus mask", 37)
    crop = np.frombuffer(data, dtype=np.uint8, count=pixels, offset=FRAME_HEADER_SIZE)
    mask_bytes = data[FRAME_HEADER_SIZE + pixels : total]
    mask = decode_mask_rle(mask_bytes, pixels, base_offset=FRAME_HEADER_SIZE + pixels)
    return FramePacket(
        frame_id=frame_id,
        capture_timestamp_us=ts,
        bounds=(u_min, u_max, v_min, v_max),
        probe_tag=tag.rstrip(b"\0").decode("ascii"),
        crop=crop.reshape(height, width),
        mask=mask.reshape(height, width),
        version=version,
    )


@dataclass(frozen=True)
class TrackingPacket:
    """Fixed-size pose record for one tool: quaternion + translation."""

    tool_id: int
    timestamp_us: int
    quaternion: Tuple[float, float, float, float]  # w, x, y, z
    translation: Tuple[float, float, float]
    rms_error: float
    occluded_count: int
    version: int = WIRE_VERSION

    def __post_init__(self):
        if not (0 <= self.tool_id <= 255 and 0 <= self.occluded_count <= 255):
            raise ValueError("tool_id and occluded_count must fit u8")
        q = np.asarray(self.quaternion, dtype=np.float64)
        if q.shape != (4,):
            raise ValueError("quaternion must have 4 components")
        norm = float(np.linalg.norm(q))
        if abs(norm - 1.0) > 1e-9:
            raise NonUnitQuaternion(f"quaternion norm {norm} is not 1 within 1e-9")
        object.__setattr__(self, "quaternion", tuple(float(v) for v in q))
        object.__setattr__(
            self, "translation", tuple(float(v) for v in self.translation)
        )
        # rms_error travels as f32; quantize now so round-trips are exact.
        object.__setattr__(self, "rms_error", float(np.float32(self.rms_error)))

    @staticmethod
    def from_pose(
        tool_id: int,
        timestamp_us: int,
        pose: RigidTransform,
        rms_error: float = 0.0,
        occluded_count: int = 0,
    ) -> "TrackingPacket":
        x, y, z, w = Rotation.from_matrix(pose.rotation).as_quat()
        q = np.array([w, x, y, z])
        q /= np.linalg.norm(q)
        if q[0] < 0:  # canonical hemisphere
            q = -q
        return TrackingPacket(
            tool_id=tool_id,
            timestamp_us=timestamp_us,
            quaternion=tuple(q),
            translation=tuple(pose.translation),
            rms_error=rms_error,
            occluded_count=occluded_count,
        )

    def pose(self) -> RigidTransform:
        w, x, y, z = self.quaternion
        rot = Rotation.from_quat([x, y, z, w]).as_matrix()
        return RigidTransform(rot, np.asarray(self.translation))


def encode_tracking(packet: TrackingPacket) -> bytes:
    return _TRACKING.pack(
        TRACKING_MAGIC,
        packet.version,
        packet.tool_id,
        packet.timestamp_us,
        *packet.quaternion,
        *packet.translation,
        packet.rms_error,
        packet.occluded_count,
    )


def decode_tracking(data: bytes) -> TrackingPacket:
    if len(data) < TRACKING_PACKET_SIZE:
        raise MalformedPacket("tracking packet truncated", len(data))
    if len(data) > TRACKING_PACKET_SIZE:
        raise MalformedPacket("trailing bytes after tracking packet", TRACKING_PACKET_SIZE)
    magic, version, tool_id, ts, qw, qx, qy, qz, tx, ty, tz, rms, occ = _TRACKING.unpack(
        data
    )
    if magic != TRACKING_MAGIC:
        raise MalformedPacket(f"bad magic {magic!r}", 0)
    if version != WIRE_VERSION:
        raise MalformedPacket(f"unsupported version {version}", 4)
    return TrackingPacket(
        tool_id=tool_id,
        timestamp_us=ts,
        quaternion=(qw, qx, qy, qz),
        translation=(tx, ty, tz),
        rms_error=rms,
        occluded_count=occ,
        version=version,
    )
