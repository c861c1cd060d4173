"""Spatial types and closed-form guidance/evaluation math.

Everything here is a pure function over immutable value types, in
millimeters. Direction vectors are unit-norm; analytic operations are
held to a 1e-9 mm tolerance.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Tuple

import numpy as np
from numpy.typing import NDArray

Vec3 = NDArray[np.float64]

ANALYTIC_TOL = 1e-9
SINGULAR_COND_LIMIT = 1e12


class GeometryError(ValueError):
    """Base class for geometric degeneracies."""


class DegenerateProjection(GeometryError):
    """Needle perpendicular to the plane: shadow direction undefined."""


class RayParallelToPlane(GeometryError):
    """Needle ray parallel to the plane: no intersection point."""


class SingularSystem(GeometryError):
    """Intersection system is rank-deficient."""


def vec3(x: float, y: float, z: float) -> Vec3:
    """Build an immutable 3-vector (mm)."""
    v = np.array([x, y, z], dtype=np.float64)
    v.setflags(write=False)
    return v


def as_vec3(v) -> Vec3:
    """Coerce to an immutable float64 3-vector, validating shape and finiteness."""
    a = np.asarray(v, dtype=np.float64)
    if a.shape != (3,):
        raise ValueError(f"expected a 3-vector, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError("vector components must be finite")
    out = a.copy()
    out.setflags(write=False)
    return out


def normalize(v: Vec3) -> Vec3:
    """Return v scaled to unit norm.

    Raises:
        GeometryError: If ``norm(v) < 1e-9`` (no meaningful direction).
    """
    n = float(np.linalg.norm(v))
    if n < ANALYTIC_TOL:
        raise GeometryError("cannot normalize a near-zero vector")
    out = np.asarray(v, dtype=np.float64) / n
    out.setflags(write=False)
    return out


def _require_unit(v: Vec3, name: str, tol: float = ANALYTIC_TOL) -> None:
    if abs(float(np.linalg.norm(v)) - 1.0) > tol:
        raise ValueError(f"{name} must be unit-norm, got |v| = {np.linalg.norm(v)!r}")


@dataclass(frozen=True)
class RigidTransform:
    """Pose of a tool or image frame: x_world = rotation @ x_local + translation.

    Attributes:
        rotation: 3x3 orthonormal matrix with determinant +1 (checked to 1e-9).
        translation: offset in mm.
    """

    rotation: NDArray[np.float64]
    translation: Vec3

    def __post_init__(self):
        r = np.asarray(self.rotation, dtype=np.float64)
        t = as_vec3(self.translation)
        if r.shape != (3, 3):
            raise ValueError(f"rotation must be 3x3, got {r.shape}")
        if not np.allclose(r @ r.T, np.eye(3), atol=1e-9, rtol=0.0):
            raise ValueError("rotation is not orthonormal to 1e-9")
        if abs(float(np.linalg.det(r)) - 1.0) > 1e-9:
            raise ValueError("rotation determinant must be +1 (no reflections)")
        r = r.copy()
        r.setflags(write=False)
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", t)

    @staticmethod
    def identity() -> "RigidTransform":
        return RigidTransform(np.eye(3), np.zeros(3))

    def apply(self, point) -> Vec3:
        """Map a local point into the parent frame."""
        out = self.rotation @ np.asarray(point, dtype=np.float64) + self.translation
        out.setflags(write=False)
        return out

    def apply_direction(self, direction) -> Vec3:
        """Rotate a direction (no translation)."""
        out = self.rotation @ np.asarray(direction, dtype=np.float64)
        out.setflags(write=False)
        return out

    def compose(self, other: "RigidTransform") -> "RigidTransform":
        """self ∘ other: apply ``other`` first, then ``self``."""
        return RigidTransform(
            self.rotation @ other.rotation,
            self.rotation @ other.translation + self.translation,
        )

    def inverse(self) -> "RigidTransform":
        rt = self.rotation.T
        return RigidTransform(rt, -(rt @ self.translation))


@dataclass(frozen=True)
class ImagePlane:
    """Oriented ultrasound image plane.

    {e_x, e_y, normal} form a right-handed orthonormal triad
    (e_x × e_y = normal), checked to 1e-9. ``origin`` is the image
    origin on the plane, in mm.
    """

    origin: Vec3
    normal: Vec3
    e_x: Vec3
    e_y: Vec3

    def __post_init__(self):
        origin = as_vec3(self.origin)
        normal = as_vec3(self.normal)
        e_x = as_vec3(self.e_x)
        e_y = as_vec3(self.e_y)
        _require_unit(normal, "normal")
        _require_unit(e_x, "e_x")
        _require_unit(e_y, "e_y")
        for a, b, na, nb in (
            (e_x, e_y, "e_x", "e_y"),
            (e_x, normal, "e_x", "normal"),
            (e_y, normal, "e_y", "normal"),
        ):
            if abs(float(np.dot(a, b))) > 1e-9:
                raise ValueError(f"{na} and {nb} must be orthogonal to 1e-9")
        if not np.allclose(np.cross(e_x, e_y), normal, atol=1e-9, rtol=0.0):
            raise ValueError("triad must satisfy e_x × e_y = normal")
        object.__setattr__(self, "origin", origin)
        object.__setattr__(self, "normal", normal)
        object.__setattr__(self, "e_x", e_x)
        object.__setattr__(self, "e_y", e_y)

    @staticmethod
    def from_pose(pose: RigidTransform) -> "ImagePlane":
        """Image plane of a pose frame: its local x-y plane at the frame origin."""
        return ImagePlane(
            origin=pose.translation,
            normal=pose.apply_direction(vec3(0.0, 0.0, 1.0)),
            e_x=pose.apply_direction(vec3(1.0, 0.0, 0.0)),
            e_y=pose.apply_direction(vec3(0.0, 1.0, 0.0)),
        )

    def flipped(self) -> "ImagePlane":
        """Same plane with the normal reversed (swaps handedness via e_y)."""
        return ImagePlane(self.origin, -self.normal, self.e_x, -self.e_y)

    def transformed(self, g: RigidTransform) -> "ImagePlane":
        return ImagePlane(
            g.apply(self.origin),
            g.apply_direction(self.normal),
            g.apply_direction(self.e_x),
            g.apply_direction(self.e_y),
        )


@dataclass(frozen=True)
class NeedleState:
    """Biopsy needle as a parameterized ray.

    ``tip`` is the reference point on the shaft and ``direction`` the
    unit feed direction. Guidance projections measure from ``tip``
    directly; evaluation operations (intersection solving, puncture
    errors) treat the business end as ``tip + length * direction``, the
    convention for a tracked tool whose marker center sits ``length`` mm
    behind the physical point.
    """

    tip: Vec3
    direction: Vec3
    length: float = 120.0

    def __post_init__(self):
        tip = as_vec3(self.tip)
        direction = as_vec3(self.direction)
        _require_unit(direction, "direction")
        if not self.length > 0:
            raise ValueError("needle length must be positive")
        object.__setattr__(self, "tip", tip)
        object.__setattr__(self, "direction", direction)

    def transformed(self, g: RigidTransform) -> "NeedleState":
        return NeedleState(g.apply(self.tip), g.apply_direction(self.direction), self.length)


@dataclass(frozen=True)
class BiopsyError:
    """Puncture outcome offsets: directional (>= 0) and signed depth, mm."""

    directional: float
    depth: float

    def __post_init__(self):
        if self.directional < 0:
            raise ValueError("directional offset cannot be negative")


def project_needle_to_plane(needle: NeedleState, plane: ImagePlane) -> Tuple[Vec3, Vec3]:
    """Project the needle onto the image plane, producing its virtual shadow.

    Returns:
        (origin, direction): the projected tip, which lies on the plane,
        and the unit in-plane shadow direction.

    Raises:
        DegenerateProjection: If the needle is perpendicular to the plane,
            leaving the shadow direction undefined.
    """
    n = plane.normal
    origin = needle.tip + float(np.dot(plane.origin - needle.tip, n)) * n
    residual = needle.direction - float(np.dot(needle.direction, n)) * n
    if float(np.linalg.norm(residual)) < ANALYTIC_TOL:
        raise DegenerateProjection(
            "needle is perpendicular to the image plane; shadow direction undefined"
        )
    origin = origin.copy()
    origin.setflags(write=False)
    return origin, normalize(residual)


def plane_distance_and_hit(
    needle: NeedleState, plane: ImagePlane, mode: str = "exact"
) -> Tuple[float, Vec3]:
    """Distance from the needle tip to the image plane and the hitting point.

    ``mode="paper"`` advances the tip by the signed plane distance along the
    feed direction, which lands on the plane only for a perpendicular
    needle. ``mode="exact"`` intersects the needle ray with the plane, so
    the returned point always satisfies ``(P - origin) · normal = 0``.

    Returns:
        (d, P): signed tip-to-plane distance along the normal, and the
        predicted hitting point.

    Raises:
        RayParallelToPlane: In exact mode when |direction · normal| <= 1e-9.
        ValueError: For an unknown mode.
    """
    n = plane.normal
    d = float(np.dot(plane.origin - needle.tip, n))
    if mode == "paper":
        hit = needle.tip + d * needle.direction
    elif mode == "exact":
        along = float(np.dot(needle.direction, n))
        if abs(along) <= ANALYTIC_TOL:
            raise RayParallelToPlane("needle ray is parallel to the image plane")
        hit = needle.tip + (d / along) * needle.direction
    else:
        raise ValueError(f"unknown mode {mode!r}; expected 'paper' or 'exact'")
    hit.setflags(write=False)
    return d, hit


def solve_image_intersection(
    image_pose: RigidTransform, needle: NeedleState, nominal_length: float
) -> Tuple[float, float, float]:
    """Solve for the needle/image intersection in image coordinates.

    Finds (x, y, delta_l) such that

        image_pose @ [x, y, 0] == tip_origin + (nominal_length + delta_l) * direction

    where ``tip_origin`` is the needle ray origin ``needle.tip`` and the
    needle's physical tip sits ``nominal_length`` along the ray. The 3x3
    system is solved in the unknowns (x, y, nominal_length + delta_l).

    Returns:
        (x, y, delta_l) in mm; the intersection residual is < 1e-9.

    Raises:
        SingularSystem: If [e_x | e_y | -direction] has condition
            number above 1e12 (ray parallel to the image plane).
    """
    r = image_pose.rotation
    a = np.column_stack((r[:, 0], r[:, 1], -needle.direction))
    if np.linalg.cond(a) > SINGULAR_COND_LIMIT:
        raise SingularSystem("needle ray is (near-)parallel to the image plane")
    b = needle.tip - image_pose.translation
    x, y, total = np.linalg.solve(a, b)
    return float(x), float(y), float(total - nominal_length)


def biopsy_error(needle: NeedleState, target: Vec3) -> BiopsyError:
    """Directional and depth offsets of a finished puncture against a target.

    directional = ||direction × (target - tip_origin)||
    depth       = (tip_origin + length * direction - target) · direction
    """
    target = as_vec3(target)
    rel = target - needle.tip
    directional = float(np.linalg.norm(np.cross(needle.direction, rel)))
    depth = float(np.dot(needle.tip + needle.length * needle.direction - target, needle.direction))
    return BiopsyError(directional=directional, depth=depth)


def biopsy_success(err: BiopsyError, target_radius: float, rule: str = "both") -> bool:
    """Decide puncture success against a spherical target of radius r.

    Rules:
        "both"      - depth < r and directional < r (default; see module docs)
        "depth"     - depth < r alone
        "direction" - directional < r alone

    The depth comparison is on the signed offset in every rule.
    """
    if not target_radius > 0:
        raise ValueError("target radius must be positive")
    if rule == "both":
        return err.depth < target_radius and err.directional < target_radius
    if rule == "depth":
        return err.depth < target_radius
    if rule == "direction":
        return err.directional < target_radius
    raise ValueError(f"unknown success rule {rule!r}")
