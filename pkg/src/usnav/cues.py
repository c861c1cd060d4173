"""Guidance-cue computation for in-plane and out-of-plane punctures.

Converts instantaneous probe/needle geometry into renderable cue states:
concentric alignment circles, the projected needle shadow, hit-point
markers, and contact transparency. Every numeric mapping is an explicit
clamped-linear ramp with its constants in CueConfig, so cue states are
deterministic and replayable byte-for-byte.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Optional, Tuple, Union

import numpy as np

from .calibration import ProbeGeometry
from .geometry import (
    ImagePlane,
    NeedleState,
    RigidTransform,
    Vec3,
    as_vec3,
    plane_distance_and_hit,
    project_needle_to_plane,
)

IN_PLANE = "in_plane"
OUT_OF_PLANE = "out_of_plane"

DEFAULT_GRACE_US = 100_000


@dataclass(frozen=True)
class CueConfig:
    """Every constant behind the cue mappings, in mm / radians.

    Translation offsets ramp over (t_near, t_far) and rotation offsets
    over (theta_near, theta_far); both ranges must be strictly ordered.
    Circle 2 grows from the circle-1 base radius with translation
    misalignment, circle 4 from circle 3 with rotation misalignment.
    """

    t_near: float = 0.5
    t_far: float = 10.0
    theta_near: float = math.radians(1.0)
    theta_far: float = math.radians(10.0)
    r1_base: float = 5.0
    r2_base: float = 15.0
    r3_base: float = 5.0
    r4_base: float = 15.0
    w_min: float = 0.2
    w_max: float = 1.0
    epsilon_contact: float = 0.5
    d_switch: float = 20.0
    sphere_radius: float = 3.0
    outer_radius: float = 12.0
    inner_radius_min: float = 2.0
    tip_radius_max: float = 2.0
    tip_radius_min: float = 0.5
    contact_image_alpha: float = 0.3
    color_aligned: str = "#2e7d32"
    color_misaligned: str = "#ff8f00"
    color_contact: str = "#c62828"

    def __post_init__(self):
        if not (0 <= self.t_near < self.t_far):
            raise ValueError("need 0 <= t_near < t_far")
        if not (0 <= self.theta_near < self.theta_far):
            raise ValueError("need 0 <= theta_near < theta_far")
        for name in (
            "r1_base",
            "r2_base",
            "r3_base",
            "r4_base",
            "epsilon_contact",
            "d_switch",
            "sphere_radius",
            "outer_radius",
            "inner_radius_min",
            "tip_radius_max",
            "tip_radius_min",
            "w_min",
            "w_max",
        ):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.r2_base <= self.r1_base or self.r4_base <= self.r3_base:
            raise ValueError("outer circle base radii must exceed inner ones")
        if self.w_min >= self.w_max:
            raise ValueError("need w_min < w_max")
        if self.inner_radius_min >= self.outer_radius:
            raise ValueError("need inner_radius_min < outer_radius")
        if self.tip_radius_min >= self.tip_radius_max:
            raise ValueError("need tip_radius_min < tip_radius_max")
        if not (0.0 <= self.contact_image_alpha < 1.0):
            raise ValueError("contact_image_alpha must lie in [0, 1)")

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}

    @staticmethod
    def from_dict(data: dict) -> "CueConfig":
        return CueConfig(**data)


@dataclass(frozen=True)
class NeedleToolGeometry:
    """Needle shaft in its infrared tool's local frame.

    The shaft ray starts at ``origin`` along unit ``direction``; the
    physical tip sits ``length`` mm along the ray (the tracked tool
    center and the tip are distinct points on a real needle).
    """

    origin: Tuple[float, float, float] = (0.0, 0.0, 0.0)
    direction: Tuple[float, float, float] = (0.0, 0.0, 1.0)
    length: float = 120.0

    def _unit_direction(self) -> np.ndarray:
        d = np.asarray(self.direction, dtype=np.float64)
        return d / np.linalg.norm(d)

    def tip_state_in(self, pose: RigidTransform) -> NeedleState:
        """Needle state whose reference point is the physical tip.

        Guidance cues measure distances from the tip itself, so the
        returned state puts the tip ``length`` mm down the shaft ray.
        """
        d = self._unit_direction()
        return NeedleState(
            tip=pose.apply(as_vec3(np.asarray(self.origin) + self.length * d)),
            direction=pose.apply_direction(as_vec3(d)),
            length=self.length,
        )

    def shaft_ray_in(self, pose: RigidTransform) -> NeedleState:
        """Needle state whose reference point is the shaft origin.

        Intersection solving and puncture-error evaluation parameterize
        the needle as origin + (length + overshoot) * direction.
        """
        d = self._unit_direction()
        return NeedleState(
            tip=pose.apply(as_vec3(self.origin)),
            direction=pose.apply_direction(as_vec3(d)),
            length=self.length,
        )


@dataclass(frozen=True)
class InPlaneCueState:
    """Renderable cue parameters while steering within the image plane."""

    shadow_origin: Vec3
    shadow_direction: Vec3
    traversed_segment: Tuple[Vec3, Vec3]
    future_segment: Tuple[Vec3, Vec3]
    r1: float
    r2: float
    r3: float
    r4: float
    line_width: float
    translation_offset: float
    rotation_angle: float
    translation_color: str
    rotation_color: str
    trajectory_color: str

    def to_dict(self) -> dict:
        return {
            "kind": IN_PLANE,
            "shadow_origin": list(self.shadow_origin),
            "shadow_direction": list(self.shadow_direction),
            "traversed_segment": [list(p) for p in self.traversed_segment],
            "future_segment": [list(p) for p in self.future_segment],
            "r1": self.r1,
            "r2": self.r2,
            "r3": self.r3,
            "r4": self.r4,
            "line_width": self.line_width,
            "translation_offset": self.translation_offset,
            "rotation_angle": self.rotation_angle,
            "translation_color": self.translation_color,
            "rotation_color": self.rotation_color,
            "trajectory_color": self.trajectory_color,
        }


@dataclass(frozen=True)
class OutOfPlaneCueState:
    """Renderable cue parameters while crossing the image plane."""

    display_mode: str  # "far_sphere" | "near_circles" | "contact"
    hit_point: Vec3
    distance: float
    outer_radius: float
    inner_radius: float
    tip_radius: float
    tip_color: str
    image_alpha: float
    circles_visible: bool
    sphere_radius: float

    def to_dict(self) -> dict:
        return {
            "kind": OUT_OF_PLANE,
            "display_mode": self.display_mode,
            "hit_point": list(self.hit_point),
            "distance": self.distance,
            "outer_radius": self.outer_radius,
            "inner_radius": self.inner_radius,
            "tip_radius": self.tip_radius,
            "tip_color": self.tip_color,
            "image_alpha": self.image_alpha,
            "circles_visible": self.circles_visible,
            "sphere_radius": self.sphere_radius,
        }


@dataclass(frozen=True)
class TrackingLostCue:
    """Emitted when a tool pose is missing or older than the grace window."""

    stale_tools: Tuple[str, ...]

    def to_dict(self) -> dict:
        return {"kind": "tracking_lost", "stale_tools": list(self.stale_tools)}


CueState = Union[InPlaneCueState, OutOfPlaneCueState, TrackingLostCue]


@dataclass(frozen=True)
class ToolPoseSample:
    """A tool pose stamped with its acquisition time."""

    pose: RigidTransform
    timestamp_us: int


def _ramp(value: float, lo: float, hi: float) -> float:
    """Clamped-linear ramp: 0 for value <= lo, 1 for value >= hi."""
    if value <= lo:
        return 0.0
    if value >= hi:
        return 1.0
    return (value - lo) / (hi - lo)


def inplane_cues(
    needle: NeedleState,
    plane: ImagePlane,
    insertion_point,
    cfg: CueConfig,
) -> InPlaneCueState:
    """Cues for in-plane puncture: shadow trajectory plus alignment circles.

    Circle 2 grows above circle 1 with the tip's out-of-plane offset;
    circle 4 grows above circle 3 with the angle between the needle and
    its in-plane shadow. The trajectory thins as the tip approaches the
    plane so virtual content never obscures the image.
    """
    shadow_origin, shadow_dir = project_needle_to_plane(needle, plane)
    offset = float(np.dot(needle.tip - shadow_origin, plane.normal))
    angle = math.acos(min(1.0, max(-1.0, float(np.dot(needle.direction, shadow_dir)))))

    t_frac = _ramp(abs(offset), cfg.t_near, cfg.t_far)
    a_frac = _ramp(angle, cfg.theta_near, cfg.theta_far)
    r2 = cfg.r1_base + (cfg.r2_base - cfg.r1_base) * t_frac
    r4 = cfg.r3_base + (cfg.r4_base - cfg.r3_base) * a_frac
    line_width = cfg.w_min + (cfg.w_max - cfg.w_min) * t_frac

    ins = as_vec3(insertion_point)
    ins_on_plane = ins + float(np.dot(plane.origin - ins, plane.normal)) * plane.normal
    future_end = shadow_origin + needle.length * shadow_dir

    translation_color = (
        cfg.color_aligned if abs(offset) <= cfg.t_near else cfg.color_misaligned
    )
    rotation_color = (
        cfg.color_aligned if angle <= cfg.theta_near else cfg.color_misaligned
    )
    aligned = abs(offset) <= cfg.t_near and angle <= cfg.theta_near
    return InPlaneCueState(
        shadow_origin=shadow_origin,
        shadow_direction=shadow_dir,
        traversed_segment=(ins_on_plane, shadow_origin),
        future_segment=(shadow_origin, future_end),
        r1=cfg.r1_base,
        r2=r2,
        r3=cfg.r3_base,
        r4=r4,
        line_width=line_width,
        translation_offset=offset,
        rotation_angle=angle,
        translation_color=translation_color,
        rotation_color=rotation_color,
        trajectory_color=cfg.color_aligned if aligned else cfg.color_misaligned,
    )


def outofplane_cues(
    needle: NeedleState, plane: ImagePlane, cfg: CueConfig
) -> OutOfPlaneCueState:
    """Cues for out-of-plane puncture: hit point plus distance circles.

    Far from the plane a sphere marks the predicted hit point; within
    ``d_switch`` two concentric circles converge as the tip approaches,
    and the virtual tip shrinks. At contact the circles disappear, the
    tip turns the contact color, and the image becomes translucent.
    """
    d, hit = plane_distance_and_hit(needle, plane, mode="exact")
    abs_d = abs(d)
    if abs_d <= cfg.epsilon_contact:
        mode = "contact"
    elif d > cfg.d_switch:
        mode = "far_sphere"
    else:
        mode = "near_circles"

    frac = min(1.0, abs_d / cfg.d_switch)
    inner = cfg.outer_radius - (cfg.outer_radius - cfg.inner_radius_min) * frac
    tip_radius = cfg.tip_radius_min + (cfg.tip_radius_max - cfg.tip_radius_min) * frac

    contact = mode == "contact"
    return OutOfPlaneCueState(
        display_mode=mode,
        hit_point=hit,
        distance=d,
        outer_radius=cfg.outer_radius,
        inner_radius=inner,
        tip_radius=tip_radius,
        tip_color=cfg.color_contact if contact else cfg.color_aligned,
        image_alpha=cfg.contact_image_alpha if contact else 1.0,
        circles_visible=mode == "near_circles",
        sphere_radius=cfg.sphere_radius,
    )


def cue_frame(
    mode: str,
    probe: Optional[ToolPoseSample],
    needle: Optional[ToolPoseSample],
    probe_geometry: Optional[ProbeGeometry],
    needle_geometry: NeedleToolGeometry,
    cfg: CueConfig,
    now_us: int,
    insertion_point=None,
    grace_us: int = DEFAULT_GRACE_US,
    flip_plane: bool = False,
) -> CueState:
    """Per-frame orchestration: compose poses and dispatch by guidance mode.

    The image plane is the x-y plane of the probe pose composed with the
    probe extrinsic (the extrinsic's in-plane offsets move pixels, not the
    plane frame). ``flip_plane`` selects the session's signed-distance
    convention so d > 0 on the needle-entry side. Poses older than the
    grace window yield a TrackingLostCue naming the stale tools.
    """
    stale = []
    for name, sample in (("probe", probe), ("needle", needle)):
        if sample is None or now_us - sample.timestamp_us > grace_us:
            stale.append(name)
    if stale:
        return TrackingLostCue(stale_tools=tuple(stale))

    plane = ImagePlane.from_pose(probe.pose)
    if flip_plane:
        plane = plane.flipped()
    needle_state = needle_geometry.tip_state_in(needle.pose)

    if mode == IN_PLANE:
        ins = insertion_point if insertion_point is not None else needle_state.tip
        return inplane_cues(needle_state, plane, ins, cfg)
    if mode == OUT_OF_PLANE:
        return outofplane_cues(needle_state, plane, cfg)
    raise ValueError(f"unknown guidance mode {mode!r}")


def cue_state_to_json(state: CueState) -> str:
    """Canonical JSON for a cue state: sorted keys, no whitespace."""
    return json.dumps(state.to_dict(), sort_keys=True, separators=(",", ":"))
