"""Synthetic sensing: fan masks, default tools, and the depth-camera model.

Stands in for the physical rig: a parametric convex-fan mask generator
whose analytic shape doubles as the oracle for calibration tests, two
default planar marker tools, and a noise model producing per-frame
marker observations with lateral/depth noise, depth quantization,
occlusion, and clutter.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, Sequence, Tuple

import numpy as np
from numpy.typing import NDArray

from .calibration import ImageMask, ProbeGeometry, compute_probe_geometry
from .geometry import RigidTransform
from .tracking import MarkerObservation, ToolDefinition

# Default probe fan: 84 px between the top corners, so a 42 mm aperture
# gives exactly 0.5 mm/px; the 10 mm target grid inside this fan holds
# 353 positions over a 200 mm depth extent.
DEFAULT_SENSOR_WIDTH_MM = 42.0


@dataclass(frozen=True)
class FanSpec:
    """Analytic convex imaging fan in pixel coordinates.

    A pixel (u, v) is valid when it lies at or below the flat top row,
    within ``half_angle`` of the straight-down axis through the apex, and
    within ``r_outer`` of the apex. The apex sits above the image so the
    flat top cuts the fan into the familiar truncated-wedge shape.
    """

    width: int = 640
    height: int = 480
    apex_u: float = 320.0
    apex_v: float = -40.0
    v_top: int = 20
    half_angle: float = math.radians(35.5)
    r_outer: float = 485.0

    def contains(self, u, v):
        """Vectorized validity predicate over pixel indices."""
        du = np.asarray(u, dtype=np.float64) - self.apex_u
        dv = np.asarray(v, dtype=np.float64) - self.apex_v
        radius = np.hypot(du, dv)
        angle = np.abs(np.arctan2(du, dv))
        return (
            (np.asarray(v) >= self.v_top)
            & (angle <= self.half_angle)
            & (radius <= self.r_outer)
        )

    def rasterize(self) -> ImageMask:
        vv, uu = np.mgrid[0 : self.height, 0 : self.width]
        return ImageMask(self.contains(uu, vv))

    def top_corner_columns(self) -> Tuple[int, int]:
        """Extreme valid columns on the flat top row, from the predicate."""
        cols = np.arange(self.width)
        valid = np.flatnonzero(self.contains(cols, np.full(self.width, self.v_top)))
        return int(valid[0]), int(valid[-1])

    def expected_bounds(self) -> Tuple[int, int, int, int]:
        """(u_min, u_max, v_min, v_max) from the predicate, not the raster."""
        vv, uu = np.mgrid[0 : self.height, 0 : self.width]
        inside = self.contains(uu, vv)
        rows = np.flatnonzero(inside.any(axis=1))
        cols = np.flatnonzero(inside.any(axis=0))
        return int(cols[0]), int(cols[-1]), int(rows[0]), int(rows[-1])


DEFAULT_FAN = FanSpec()


def default_probe_geometry(
    fan: FanSpec = DEFAULT_FAN, sensor_width: float = DEFAULT_SENSOR_WIDTH_MM
) -> ProbeGeometry:
    return compute_probe_geometry(fan.rasterize(), "convex", sensor_width)


def default_tools() -> Tuple[ToolDefinition, ToolDefinition]:
    """The two desk-scale infrared tools: probe (id 1) and needle (id 2).

    Both are planar 5-marker plates whose ten pairwise distances are
    separated by at least 10 mm, comfortably above the 2 x 3 mm
    self-ambiguity guard. The probe plate sits above the image origin on
    the transducer handle; the needle plate is centered on its tool
    origin with the shaft leaving along +z.
    """
    probe = ToolDefinition(
        tool_id=1,
        markers=np.array(
            [
                [54.1, -199.0, 25.0],
                [-94.4, -109.2, 25.0],
                [60.5, -68.1, 25.0],
                [-18.4, -108.0, 25.0],
                [-1.9, -65.8, 25.0],
            ]
        ),
        max_occlusion=1,
    )
    needle = ToolDefinition(
        tool_id=2,
        markers=np.array(
            [
                [-6.5, -21.6, 0.0],
                [-63.6, 73.4, 0.0],
                [9.3, -53.9, 0.0],
                [54.6, -73.5, 0.0],
                [6.1, 75.7, 0.0],
            ]
        ),
        max_occlusion=1,
    )
    return probe, needle


@dataclass(frozen=True)
class DepthCameraModel:
    """Parametric infrared depth-camera noise.

    Per observed marker: lateral Gaussian noise on x/y, depth Gaussian
    noise on z, then depth quantization to ``quant_step`` (quantization
    is applied after noise). Markers outside the view cone or hit by the
    occlusion draw are dropped.

    The defaults are tuned so the tracked accuracy-experiment errors sit
    in the low-millimeter class and degrade with target depth; they are
    plain config values, not measured sensor constants.
    """

    sigma_xy: float = 0.3
    sigma_z: float = 0.35
    quant_step: float = 1.0
    fov_half_angle: float = 0.6
    occlusion_prob: float = 0.0

    def __post_init__(self):
        for name in ("sigma_xy", "sigma_z", "quant_step", "fov_half_angle"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} cannot be negative")
        if not 0.0 <= self.occlusion_prob <= 1.0:
            raise ValueError("occlusion_prob must lie in [0, 1]")

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}

    @staticmethod
    def from_dict(data: dict) -> "DepthCameraModel":
        return DepthCameraModel(**data)


NOISELESS_CAMERA = DepthCameraModel(
    sigma_xy=0.0, sigma_z=0.0, quant_step=0.0, occlusion_prob=0.0
)


def synthesize_observation(
    poses: Mapping[int, RigidTransform],
    tools: Sequence[ToolDefinition],
    camera: DepthCameraModel,
    seed,
    clutter: int = 0,
    timestamp_us: int = 0,
) -> MarkerObservation:
    """One synthetic sensor frame for a posed tool scene.

    Markers are transformed by their tool's true pose, perturbed and
    depth-quantized per the camera model, dropped by occlusion draws or
    the view cone, merged with optional clutter points, and shuffled
    deterministically by the seed.
    """
    rng = np.random.default_rng(seed)
    clouds = []
    for tool in tools:
        pose = poses.get(tool.tool_id)
        if pose is None:
            continue
        pts = tool.markers @ pose.rotation.T + pose.translation
        if camera.sigma_xy > 0:
            pts = pts + np.concatenate(
                [
                    rng.normal(0.0, camera.sigma_xy, size=(len(pts), 2)),
                    np.zeros((len(pts), 1)),
                ],
                axis=1,
            )
        if camera.sigma_z > 0:
            pts = pts + np.concatenate(
                [np.zeros((len(pts), 2)), rng.normal(0.0, camera.sigma_z, size=(len(pts), 1))],
                axis=1,
            )
        if camera.quant_step > 0:
            pts[:, 2] = camera.quant_step * np.round(pts[:, 2] / camera.quant_step)
        keep = np.ones(len(pts), dtype=bool)
        if camera.occlusion_prob > 0:
            keep &= rng.random(len(pts)) >= camera.occlusion_prob
        # View cone around +z: markers behind the camera or beyond the
        # half-angle are unseen.
        radial = np.linalg.norm(pts[:, :2], axis=1)
        keep &= pts[:, 2] > 0
        keep &= np.arctan2(radial, pts[:, 2]) <= camera.fov_half_angle
        clouds.append(pts[keep])

    if clutter > 0:
        anchor = (
            np.vstack(clouds)
            if clouds
            else np.array([[0.0, 0.0, 500.0]])
        )
        lo = anchor.min(axis=0) - 50.0
        hi = anchor.max(axis=0) + 50.0
        clouds.append(rng.uniform(lo, hi, size=(clutter, 3)))

    if clouds:
        merged = np.vstack(clouds)
        merged = merged[rng.permutation(len(merged))]
    else:
        merged = np.zeros((0, 3))
    return MarkerObservation(points=merged, timestamp_us=timestamp_us)


def scene_probe_pose() -> RigidTransform:
    """Default experiment pose: image faces the camera ~520 mm away.

    The probe tool frame maps x -> camera x, y -> -y, z -> -z, so the
    image normal points back toward the sensor and marker plates lie
    roughly parallel to the sensor's image plane.
    """
    rotation = np.diag([1.0, -1.0, -1.0])
    return RigidTransform(rotation, np.array([0.0, 50.0, 520.0]))


def frame_from_direction(direction) -> NDArray[np.float64]:
    """Deterministic orthonormal frame whose z axis is ``direction``."""
    z = np.asarray(direction, dtype=np.float64)
    z = z / np.linalg.norm(z)
    up = np.array([0.0, 1.0, 0.0])
    if abs(float(np.dot(up, z))) > 0.9:
        up = np.array([1.0, 0.0, 0.0])
    x = np.cross(up, z)
    x /= np.linalg.norm(x)
    y = np.cross(z, x)
    return np.column_stack([x, y, z])
