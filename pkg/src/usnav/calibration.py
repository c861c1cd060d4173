"""Ultrasound probe geometry from a binary mask of the valid imaging area.

The mask analysis recovers pixel width, the image-origin pixel, and the
image->tool extrinsic for convex and linear probes, and packages
crop+mask frames for streaming. Pixel coordinates are (u, v) =
(column, row); masks are stored as (height, width) boolean grids.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Tuple

import numpy as np
from numpy.typing import NDArray

import scipy.ndimage

# Reference top row must carry a valid run at least this long; guards the
# corner search against speckle above the true top edge.
TOP_RUN_MIN_PX = 5

PROBE_KINDS = ("convex", "linear")


class CalibrationError(ValueError):
    """Base class for mask-analysis failures."""


class EmptyMask(CalibrationError):
    """Mask contains no valid pixel."""


class DegenerateTopEdge(CalibrationError):
    """No usable top row for corner identification."""


class DimensionMismatch(CalibrationError):
    """Image and mask dimensions differ."""


@dataclass(frozen=True)
class ImageMask:
    """Binary validity grid; True marks pixels inside the imaging area."""

    bits: NDArray[np.bool_]

    def __post_init__(self):
        bits = np.asarray(self.bits, dtype=bool)
        if bits.ndim != 2:
            raise ValueError("mask must be a 2-D grid")
        if not bits.any():
            raise EmptyMask("mask has no valid pixel")
        bits = bits.copy()
        bits.setflags(write=False)
        object.__setattr__(self, "bits", bits)

    @property
    def height(self) -> int:
        return int(self.bits.shape[0])

    @property
    def width(self) -> int:
        return int(self.bits.shape[1])

    def is_connected(self) -> bool:
        """True when the valid region forms a single 4-connected component."""
        structure = np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]], dtype=bool)
        _, count = scipy.ndimage.label(self.bits, structure=structure)
        return count == 1


@dataclass(frozen=True)
class BoundingBox:
    """Tight inclusive pixel bounds of the valid region."""

    u_min: int
    u_max: int
    v_min: int
    v_max: int

    def __post_init__(self):
        if self.u_min > self.u_max or self.v_min > self.v_max:
            raise ValueError("bounding box must be non-empty")

    @property
    def width(self) -> int:
        return self.u_max - self.u_min + 1

    @property
    def height(self) -> int:
        return self.v_max - self.v_min + 1


@dataclass(frozen=True)
class ProbeGeometry:
    """Identified probe parameters and the Eq.-style pixel->tool extrinsic.

    ``extrinsic`` is a 4x4 matrix mapping homogeneous bounding-box-relative
    pixel coordinates (u - u_min, v - v_min, 0, 1) to tool-space mm. Its
    structure is fixed: scale ``pixel_width`` on x and y, 1 on z, zero
    rotation, translation (-pw (u_c - u_min), -pw (v_c - v_min), 0).
    """

    kind: str
    pixel_width: float
    origin: Tuple[int, int]
    sensor_width: float
    corners: Tuple[int, int]
    bounds: BoundingBox
    extrinsic: NDArray[np.float64]

    def __post_init__(self):
        if self.kind not in PROBE_KINDS:
            raise ValueError(f"kind must be one of {PROBE_KINDS}")
        if not self.pixel_width > 0:
            raise ValueError("pixel_width must be positive")
        if self.corners[0] >= self.corners[1]:
            raise ValueError("left corner must lie left of right corner")
        ext = np.asarray(self.extrinsic, dtype=np.float64)
        if ext.shape != (4, 4):
            raise ValueError("extrinsic must be 4x4")
        expected = _extrinsic_matrix(
            self.pixel_width, self.origin, (self.bounds.u_min, self.bounds.v_min)
        )
        if not np.array_equal(ext, expected):
            raise ValueError("extrinsic entries do not match the probe parameters")
        ext = ext.copy()
        ext.setflags(write=False)
        object.__setattr__(self, "extrinsic", ext)

    def pixel_to_tool(self, u: float, v: float) -> NDArray[np.float64]:
        """Map an absolute image pixel to tool-space mm (z = 0 plane)."""
        rel = np.array([u - self.bounds.u_min, v - self.bounds.v_min, 0.0, 1.0])
        return (self.extrinsic @ rel)[:3]

    def tool_to_pixel(self, point) -> Tuple[float, float]:
        """Invert pixel_to_tool for points on the image plane."""
        x, y = float(point[0]), float(point[1])
        u_rel = x / self.pixel_width + (self.origin[0] - self.bounds.u_min)
        v_rel = y / self.pixel_width + (self.origin[1] - self.bounds.v_min)
        return u_rel + self.bounds.u_min, v_rel + self.bounds.v_min

    def to_json(self) -> str:
        return json.dumps(
            {
                "kind": self.kind,
                "pixel_width_mm": self.pixel_width,
                "origin_px": list(self.origin),
                "sensor_width_mm": self.sensor_width,
                "corners_px": list(self.corners),
                "bounds_px": [
                    self.bounds.u_min,
                    self.bounds.u_max,
                    self.bounds.v_min,
                    self.bounds.v_max,
                ],
                "extrinsic": self.extrinsic.tolist(),
            },
            indent=2,
            sort_keys=True,
        )

    @staticmethod
    def from_json(text: str) -> "ProbeGeometry":
        data = json.loads(text)
        bounds = BoundingBox(*data["bounds_px"])
        return ProbeGeometry(
            kind=data["kind"],
            pixel_width=float(data["pixel_width_mm"]),
            origin=tuple(int(x) for x in data["origin_px"]),
            sensor_width=float(data["sensor_width_mm"]),
            corners=tuple(int(x) for x in data["corners_px"]),
            bounds=bounds,
            extrinsic=np.asarray(data["extrinsic"], dtype=np.float64),
        )


@dataclass(frozen=True)
class PackagedFrame:
    """Crop + validity mask restricted to the effective bounding area.

    The documented payload encoding is one byte per crop pixel plus one
    byte per mask pixel, so a full-size frame with a full-size mask lands
    in the same size class as streaming both planes raw. Invalid pixels
    are transparent; their flag is the mask itself.
    """

    crop: NDArray[np.uint8]
    mask: NDArray[np.bool_]
    bounds: BoundingBox
    probe_tag: str = ""

    def __post_init__(self):
        crop = np.asarray(self.crop, dtype=np.uint8)
        mask = np.asarray(self.mask, dtype=bool)
        expected = (self.bounds.height, self.bounds.width)
        if crop.shape != expected or mask.shape != expected:
            raise DimensionMismatch(
                f"crop {crop.shape} and mask {mask.shape} must both equal {expected}"
            )
        crop = crop.copy()
        mask = mask.copy()
        crop.setflags(write=False)
        mask.setflags(write=False)
        object.__setattr__(self, "crop", crop)
        object.__setattr__(self, "mask", mask)

    @property
    def transparent_count(self) -> int:
        return int((~self.mask).sum())

    @property
    def nbytes(self) -> int:
        """Payload size under the documented one-byte-per-plane-pixel encoding."""
        return int(self.crop.size + self.mask.size)


def _extrinsic_matrix(
    pw: float, origin: Tuple[int, int], box_min: Tuple[int, int]
) -> NDArray[np.float64]:
    u_c, v_c = origin
    u_min, v_min = box_min
    return np.array(
        [
            [pw, 0.0, 0.0, -pw * (u_c - u_min)],
            [0.0, pw, 0.0, -pw * (v_c - v_min)],
            [0.0, 0.0, 1.0, 0.0],
            [0.0, 0.0, 0.0, 1.0],
        ]
    )


def extract_bounds(mask: ImageMask) -> BoundingBox:
    """Tight bounding box of the valid pixels."""
    rows = np.flatnonzero(mask.bits.any(axis=1))
    cols = np.flatnonzero(mask.bits.any(axis=0))
    if rows.size == 0:
        raise EmptyMask("mask has no valid pixel")
    return BoundingBox(
        u_min=int(cols[0]), u_max=int(cols[-1]), v_min=int(rows[0]), v_max=int(rows[-1])
    )


def _max_run_length(row: NDArray[np.bool_]) -> int:
    if not row.any():
        return 0
    padded = np.concatenate(([False], row, [False]))
    edges = np.flatnonzero(np.diff(padded.astype(np.int8)))
    starts, ends = edges[::2], edges[1::2]
    return int((ends - starts).max())


def detect_top_corners(
    mask: ImageMask, bounds: BoundingBox, min_run: int = TOP_RUN_MIN_PX
) -> Tuple[int, int]:
    """Columns of the left and right corners on the reference top row.

    The reference row is the smallest v whose longest valid run is at
    least ``min_run`` pixels; isolated speckle above the true top edge is
    skipped. Corners are that row's extreme valid columns.

    Raises:
        DegenerateTopEdge: No row qualifies, or the reference row holds
            fewer than 2 valid pixels.
    """
    for v in range(bounds.v_min, bounds.v_max + 1):
        row = mask.bits[v]
        if _max_run_length(row) >= min_run:
            cols = np.flatnonzero(row)
            if cols.size < 2:
                raise DegenerateTopEdge(f"top row {v} has fewer than 2 valid pixels")
            return int(cols[0]), int(cols[-1])
    raise DegenerateTopEdge(f"no row with a valid run of at least {min_run} px")


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def compute_probe_geometry(
    mask: ImageMask, kind: str, sensor_width: float
) -> ProbeGeometry:
    """Identify pixel width, image origin, and the Eq.-structured extrinsic.

    Convex probes measure pixel width against the top-corner span
    (pw = L / (u_right - u_left)); linear probes use the bounding-box
    borders instead. The origin column is the rounded corner midpoint and
    the origin row the first valid pixel scanning down that column.
    """
    if kind not in PROBE_KINDS:
        raise ValueError(f"kind must be one of {PROBE_KINDS}")
    if not sensor_width > 0:
        raise ValueError("sensor_width must be positive")

    bounds = extract_bounds(mask)
    if kind == "convex":
        u_left, u_right = detect_top_corners(mask, bounds)
    else:
        u_left, u_right = bounds.u_min, bounds.u_max
        if u_left >= u_right:
            raise DegenerateTopEdge("linear mask must span more than one column")

    pw = sensor_width / float(u_right - u_left)
    u_c = _round_half_up((u_left + u_right) / 2.0)
    column = mask.bits[:, u_c]
    rows = np.flatnonzero(column)
    if rows.size == 0:
        raise CalibrationError(f"origin column {u_c} has no valid pixel")
    v_c = int(rows[0])

    return ProbeGeometry(
        kind=kind,
        pixel_width=pw,
        origin=(u_c, v_c),
        sensor_width=sensor_width,
        corners=(u_left, u_right),
        bounds=bounds,
        extrinsic=_extrinsic_matrix(pw, (u_c, v_c), (bounds.u_min, bounds.v_min)),
    )


def package_frame(
    image: NDArray[np.uint8],
    mask: ImageMask,
    geom: ProbeGeometry,
    probe_tag: str = "",
) -> PackagedFrame:
    """Restrict an image and its mask to the effective bounding area.

    Valid pixel payloads are byte-identical to the source; invalid pixels
    are flagged transparent through the packaged mask.

    Raises:
        DimensionMismatch: Image and mask dimensions differ.
    """
    image = np.asarray(image, dtype=np.uint8)
    if image.shape != mask.bits.shape:
        raise DimensionMismatch(
            f"image {image.shape} does not match mask {mask.bits.shape}"
        )
    b = geom.bounds
    crop = image[b.v_min : b.v_max + 1, b.u_min : b.u_max + 1]
    region = mask.bits[b.v_min : b.v_max + 1, b.u_min : b.u_max + 1]
    return PackagedFrame(crop=crop, mask=region, bounds=b, probe_tag=probe_tag)


def write_pgm(path, grid: NDArray) -> None:
    """Write an 8-bit grayscale grid (or boolean mask as 0/255) as binary PGM."""
    arr = np.asarray(grid)
    if arr.dtype == bool:
        arr = np.where(arr, np.uint8(255), np.uint8(0))
    arr = arr.astype(np.uint8, copy=False)
    h, w = arr.shape
    with open(path, "wb") as f:
        f.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        f.write(arr.tobytes())


def read_pgm(path) -> NDArray[np.uint8]:
    """Read a binary (P5) PGM with maxval <= 255."""
    with open(path, "rb") as f:
        data = f.read()
    if not data.startswith(b"P5"):
        raise CalibrationError("not a binary PGM (P5) file")
    # Header: magic, width, height, maxval as whitespace-separated tokens,
    # with '#' comments allowed between them.
    tokens = []
    pos = 2
    while len(tokens) < 3:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if data[pos : pos + 1] == b"#":
            while pos < len(data) and data[pos : pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        tokens.append(data[start:pos])
    pos += 1  # single whitespace after maxval
    w, h, maxval = (int(t) for t in tokens)
    if maxval > 255:
        raise CalibrationError("only 8-bit PGM is supported")
    grid = np.frombuffer(data[pos : pos + w * h], dtype=np.uint8)
    if grid.size != w * h:
        raise CalibrationError("PGM payload truncated")
    return grid.reshape(h, w).copy()


def read_mask_pgm(path) -> ImageMask:
    """Read a 0/255 PGM as an ImageMask (any nonzero pixel is valid)."""
    return ImageMask(read_pgm(path) > 0)
