// Minimal pose math for steering: quaternions, vectors, and the orbit
// camera projection. Guidance geometry (distances, offsets, radii) is
// never computed here; those numbers arrive from the service.

import type { Quaternion, Vec3 } from "./protocol.js";

export interface Pose {
  quaternion: Quaternion; // w, x, y, z (unit)
  translation: Vec3; // mm
}

export function identityPose(): Pose {
  return { quaternion: [1, 0, 0, 0], translation: [0, 0, 0] };
}

export function quatMultiply(a: Quaternion, b: Quaternion): Quaternion {
  const [aw, ax, ay, az] = a;
  const [bw, bx, by, bz] = b;
  return [
    aw * bw - ax * bx - ay * by - az * bz,
    aw * bx + ax * bw + ay * bz - az * by,
    aw * by - ax * bz + ay * bw + az * bx,
    aw * bz + ax * by - ay * bx + az * bw,
  ];
}

export function quatFromAxisAngle(axis: Vec3, angle: number): Quaternion {
  const norm = Math.hypot(axis[0], axis[1], axis[2]);
  if (norm === 0) return [1, 0, 0, 0];
  const half = angle / 2;
  const s = Math.sin(half) / norm;
  return [Math.cos(half), axis[0] * s, axis[1] * s, axis[2] * s];
}

export function quatNormalize(q: Quaternion): Quaternion {
  const n = Math.hypot(q[0], q[1], q[2], q[3]);
  return [q[0] / n, q[1] / n, q[2] / n, q[3] / n];
}

export function rotateVec(q: Quaternion, v: Vec3): Vec3 {
  // v' = q * (0, v) * q^-1 for unit q
  const [w, x, y, z] = q;
  const [vx, vy, vz] = v;
  const tx = 2 * (y * vz - z * vy);
  const ty = 2 * (z * vx - x * vz);
  const tz = 2 * (x * vy - y * vx);
  return [
    vx + w * tx + y * tz - z * ty,
    vy + w * ty + z * tx - x * tz,
    vz + w * tz + x * ty - y * tx,
  ];
}

export function applyPose(pose: Pose, point: Vec3): Vec3 {
  const rotated = rotateVec(pose.quaternion, point);
  return [
    rotated[0] + pose.translation[0],
    rotated[1] + pose.translation[1],
    rotated[2] + pose.translation[2],
  ];
}

export function translatePose(pose: Pose, delta: Vec3): Pose {
  return {
    quaternion: pose.quaternion,
    translation: [
      pose.translation[0] + delta[0],
      pose.translation[1] + delta[1],
      pose.translation[2] + delta[2],
    ],
  };
}

export function rotatePose(pose: Pose, axis: Vec3, angle: number): Pose {
  return {
    quaternion: quatNormalize(quatMultiply(quatFromAxisAngle(axis, angle), pose.quaternion)),
    translation: pose.translation,
  };
}

/** Orbit camera around a workspace center; orthographic projection. */
export interface OrbitCamera {
  yaw: number; // radians about +y
  pitch: number; // radians about the camera's x axis
  center: Vec3; // mm
  zoom: number; // px per mm
}

export function defaultCamera(): OrbitCamera {
  return { yaw: 0, pitch: 0, center: [0, 0, 0], zoom: 1 };
}

/** Project a world point to screen px (y grows downward). */
export function project(camera: OrbitCamera, point: Vec3, viewport: [number, number]): [number, number] {
  const cy = Math.cos(camera.yaw);
  const sy = Math.sin(camera.yaw);
  const cp = Math.cos(camera.pitch);
  const sp = Math.sin(camera.pitch);
  const px = point[0] - camera.center[0];
  const py = point[1] - camera.center[1];
  const pz = point[2] - camera.center[2];
  // yaw about y, then pitch about x
  const x1 = cy * px + sy * pz;
  const z1 = -sy * px + cy * pz;
  const y2 = cp * py - sp * z1;
  return [
    viewport[0] / 2 + camera.zoom * x1,
    viewport[1] / 2 - camera.zoom * y2,
  ];
}

export function formatNumber(value: number): string {
  // fixed short form keeps SVG snapshots stable
  const rounded = Math.round(value * 1000) / 1000;
  return Object.is(rounded, -0) ? "0" : String(rounded);
}
