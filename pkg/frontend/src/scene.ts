// Scene state and the SVG renderer.
//
// The dumb-client rule governs this module: every numeric cue value
// (circle radii, widths, colors, alpha, distances) is copied verbatim
// from the latest served cue_state into scene elements. The client only
// does pose/camera math to place those elements on screen.

import {
  applyPose,
  formatNumber,
  identityPose,
  OrbitCamera,
  Pose,
  project,
} from "./math3d.js";
import type { CuePayload, Vec3 } from "./protocol.js";

export interface SceneState {
  probePose: Pose;
  needlePose: Pose;
  needleLengthMm: number; // visual shaft length (tool design, not guidance)
  imageQuad: { widthMm: number; heightMm: number; alpha: number };
  cue: CuePayload | null;
  trackingLost: boolean;
  banner: string | null;
  lastSeq: number;
  mode: string;
  cueConfig: Record<string, number | string> | null;
}

export function createScene(): SceneState {
  return {
    probePose: identityPose(),
    needlePose: identityPose(),
    needleLengthMm: 120,
    imageQuad: { widthMm: 140, heightMm: 200, alpha: 1 },
    cue: null,
    trackingLost: false,
    banner: null,
    lastSeq: 0,
    mode: "out_of_plane",
    cueConfig: null,
  };
}

// Rotation-circle group follows the projected tip at a fixed offset so
// the two concentric groups stay visually separate.
const ROTATION_GROUP_OFFSET_MM = 25;

function svgCircle(
  center: [number, number],
  radiusPx: number,
  stroke: string,
  attrs: string,
): string {
  return (
    `<circle cx="${formatNumber(center[0])}" cy="${formatNumber(center[1])}" ` +
    `r="${formatNumber(radiusPx)}" fill="none" stroke="${stroke}" ${attrs}/>`
  );
}

function svgLine(
  a: [number, number],
  b: [number, number],
  stroke: string,
  widthPx: number,
  attrs: string,
): string {
  return (
    `<line x1="${formatNumber(a[0])}" y1="${formatNumber(a[1])}" ` +
    `x2="${formatNumber(b[0])}" y2="${formatNumber(b[1])}" ` +
    `stroke="${stroke}" stroke-width="${formatNumber(widthPx)}" ${attrs}/>`
  );
}

/**
 * Render the scene to a standalone SVG string.
 *
 * Deterministic for a given (scene, camera, viewport), which makes the
 * output directly snapshot-testable without a browser.
 */
export function renderSceneSvg(
  scene: SceneState,
  camera: OrbitCamera,
  viewport: [number, number] = [800, 600],
): string {
  const parts: string[] = [];
  const p = (point: Vec3) => project(camera, point, viewport);
  parts.push(
    `<svg xmlns="http://www.w3.org/2000/svg" width="${viewport[0]}" ` +
      `height="${viewport[1]}" viewBox="0 0 ${viewport[0]} ${viewport[1]}">`,
  );
  parts.push(`<rect width="100%" height="100%" fill="#10151c"/>`);

  // image-plane quad in the probe frame: x across, y is depth
  const w = scene.imageQuad.widthMm / 2;
  const h = scene.imageQuad.heightMm;
  const corners: Vec3[] = [
    [-w, 0, 0],
    [w, 0, 0],
    [w, h, 0],
    [-w, h, 0],
  ];
  const quadPoints = corners
    .map((c) => p(applyPose(scene.probePose, c)))
    .map(([x, y]) => `${formatNumber(x)},${formatNumber(y)}`)
    .join(" ");
  parts.push(
    `<polygon points="${quadPoints}" fill="#3b6ea5" stroke="#9ec2e8" ` +
      `stroke-width="1" fill-opacity="${scene.imageQuad.alpha}" ` +
      `data-image-alpha="${scene.imageQuad.alpha}"/>`,
  );

  // needle shaft: tool origin to tip (pose math only)
  const shaftBase = p(applyPose(scene.needlePose, [0, 0, 0]));
  const tipWorld = applyPose(scene.needlePose, [0, 0, scene.needleLengthMm]);
  const tip = p(tipWorld);
  parts.push(svgLine(shaftBase, tip, "#d8dee9", 2 * camera.zoom, `data-element="needle-shaft"`));

  const cue = scene.cue;
  if (cue && cue.kind === "in_plane") {
    const [t0, t1] = cue.traversed_segment.map(p);
    const [f0, f1] = cue.future_segment.map(p);
    const widthPx = cue.line_width * camera.zoom;
    parts.push(
      svgLine(t0, t1, cue.trajectory_color, widthPx, `data-element="traversed" data-segment="solid"`),
    );
    parts.push(
      svgLine(
        f0,
        f1,
        cue.trajectory_color,
        widthPx,
        `stroke-dasharray="6 4" data-element="future" data-segment="dashed"`,
      ),
    );
    const shadow = p(cue.shadow_origin);
    const rotationAnchor: Vec3 = [
      cue.shadow_origin[0] + ROTATION_GROUP_OFFSET_MM * cue.shadow_direction[0],
      cue.shadow_origin[1] + ROTATION_GROUP_OFFSET_MM * cue.shadow_direction[1],
      cue.shadow_origin[2] + ROTATION_GROUP_OFFSET_MM * cue.shadow_direction[2],
    ];
    const rotation = p(rotationAnchor);
    parts.push(
      svgCircle(shadow, cue.r1 * camera.zoom, cue.translation_color, `data-element="r1" data-radius="${cue.r1}"`),
    );
    parts.push(
      svgCircle(shadow, cue.r2 * camera.zoom, cue.translation_color, `data-element="r2" data-radius="${cue.r2}"`),
    );
    parts.push(
      svgCircle(rotation, cue.r3 * camera.zoom, cue.rotation_color, `data-element="r3" data-radius="${cue.r3}"`),
    );
    parts.push(
      svgCircle(rotation, cue.r4 * camera.zoom, cue.rotation_color, `data-element="r4" data-radius="${cue.r4}"`),
    );
  } else if (cue && cue.kind === "out_of_plane") {
    const hit = p(cue.hit_point);
    if (cue.display_mode === "far_sphere") {
      parts.push(
        `<circle cx="${formatNumber(hit[0])}" cy="${formatNumber(hit[1])}" ` +
          `r="${formatNumber(cue.sphere_radius * camera.zoom)}" fill="${scene.cueConfig?.color_aligned ?? "#2e7d32"}" ` +
          `data-element="hit-sphere" data-radius="${cue.sphere_radius}"/>`,
      );
    } else if (cue.circles_visible) {
      parts.push(
        svgCircle(hit, cue.outer_radius * camera.zoom, cue.tip_color, `data-element="outer-circle" data-radius="${cue.outer_radius}"`),
      );
      parts.push(
        svgCircle(hit, cue.inner_radius * camera.zoom, cue.tip_color, `data-element="inner-circle" data-radius="${cue.inner_radius}"`),
      );
    }
    parts.push(
      `<circle cx="${formatNumber(tip[0])}" cy="${formatNumber(tip[1])}" ` +
        `r="${formatNumber(cue.tip_radius * camera.zoom)}" fill="${cue.tip_color}" ` +
        `data-element="needle-tip" data-radius="${cue.tip_radius}" data-color="${cue.tip_color}"/>`,
    );
  }

  if (scene.trackingLost) {
    parts.push(
      `<text x="16" y="28" fill="#ffb74d" font-size="16" data-element="tracking-lost">` +
        `tracking lost</text>`,
    );
  }
  if (scene.banner) {
    parts.push(
      `<text x="16" y="52" fill="#ef5350" font-size="16" data-element="banner">` +
        `${scene.banner}</text>`,
    );
  }
  parts.push(`<text x="16" y="${viewport[1] - 14}" fill="#8899aa" font-size="12">mode: ${scene.mode}</text>`);
  parts.push("</svg>");
  return parts.join("\n");
}
