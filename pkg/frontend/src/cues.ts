// Server-message application: maps every served cue field onto exactly
// one scene element, guards sequence freshness, and surfaces schema
// mismatches as a visible banner rather than a silent fallback.

import type { SceneState } from "./scene.js";
import type { CuePayload, ServerMessage } from "./protocol.js";

const IN_PLANE_FIELDS = [
  "shadow_origin",
  "shadow_direction",
  "traversed_segment",
  "future_segment",
  "r1",
  "r2",
  "r3",
  "r4",
  "line_width",
  "translation_color",
  "rotation_color",
  "trajectory_color",
];

const OUT_OF_PLANE_FIELDS = [
  "display_mode",
  "hit_point",
  "distance",
  "outer_radius",
  "inner_radius",
  "tip_radius",
  "tip_color",
  "image_alpha",
  "circles_visible",
  "sphere_radius",
];

function missingFields(state: Record<string, unknown>, fields: string[]): string[] {
  return fields.filter((f) => !(f in state));
}

export interface SessionBinding {
  probeToolId: number;
  needleToolId: number;
}

/**
 * Apply one server message to the scene. Returns true when the message
 * was consumed (fresh and understood); stale sequence numbers are
 * dropped so the displayed seq never decreases.
 */
export function applyServerMessage(
  scene: SceneState,
  binding: SessionBinding,
  message: ServerMessage,
): boolean {
  const seq = typeof message.seq === "number" ? message.seq : null;
  if (seq !== null && seq <= scene.lastSeq) {
    return false;
  }

  switch (message.type) {
    case "session_info":
      scene.mode = message.mode;
      scene.cueConfig = message.cue_config;
      binding.probeToolId = message.probe_tool_id;
      binding.needleToolId = message.needle_tool_id;
      break;
    case "pose_update": {
      const pose = {
        quaternion: message.quaternion,
        translation: message.translation,
      };
      if (message.tool_id === binding.probeToolId) scene.probePose = pose;
      else if (message.tool_id === binding.needleToolId) scene.needlePose = pose;
      break;
    }
    case "cue_state": {
      const state = message.state as Record<string, unknown> & { kind?: string };
      if (state.kind === "in_plane" || state.kind === "out_of_plane") {
        const missing = missingFields(
          state,
          state.kind === "in_plane" ? IN_PLANE_FIELDS : OUT_OF_PLANE_FIELDS,
        );
        if (missing.length) {
          scene.banner = `schema mismatch: cue_state missing ${missing.join(", ")}`;
          break;
        }
        scene.cue = state as unknown as CuePayload;
        scene.trackingLost = false;
        scene.mode = state.kind;
        scene.imageQuad.alpha =
          state.kind === "out_of_plane" ? (state.image_alpha as number) : 1;
      } else if (state.kind === "tracking_lost") {
        scene.trackingLost = true;
      } else {
        scene.banner = `schema mismatch: unknown cue kind ${String(state.kind)}`;
      }
      break;
    }
    case "tracking_lost":
      scene.trackingLost = true;
      break;
    case "error":
      scene.banner = `${message.code ?? "error"}: ${message.message ?? ""}`;
      break;
    default:
      scene.banner = `schema mismatch: unknown message type ${(message as { type?: string }).type}`;
      if (seq !== null) scene.lastSeq = seq;
      return false;
  }
  if (seq !== null) scene.lastSeq = seq;
  return true;
}
