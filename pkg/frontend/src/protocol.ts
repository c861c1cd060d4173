// Wire protocol for the navigation service's client channel:
// u32 little-endian length prefix followed by UTF-8 JSON.

export const IN_PLANE = "in_plane";
export const OUT_OF_PLANE = "out_of_plane";

export type Quaternion = [number, number, number, number]; // w, x, y, z
export type Vec3 = [number, number, number];

export interface SetPoseMessage {
  type: "set_pose";
  session: string;
  tool_id: number;
  timestamp_us: number;
  quaternion: Quaternion;
  translation: Vec3;
}

export interface SetModeMessage {
  type: "set_mode";
  session: string;
  mode: string;
}

export interface SubscribeMessage {
  type: "subscribe";
  session: string;
}

export interface SetCueConfigMessage {
  type: "set_cue_config";
  session: string;
  config: Record<string, unknown>;
}

export type ClientMessage =
  | SetPoseMessage
  | SetModeMessage
  | SubscribeMessage
  | SetCueConfigMessage;

export interface InPlaneCue {
  kind: "in_plane";
  shadow_origin: Vec3;
  shadow_direction: Vec3;
  traversed_segment: [Vec3, Vec3];
  future_segment: [Vec3, Vec3];
  r1: number;
  r2: number;
  r3: number;
  r4: number;
  line_width: number;
  translation_offset: number;
  rotation_angle: number;
  translation_color: string;
  rotation_color: string;
  trajectory_color: string;
}

export interface OutOfPlaneCue {
  kind: "out_of_plane";
  display_mode: "far_sphere" | "near_circles" | "contact";
  hit_point: Vec3;
  distance: number;
  outer_radius: number;
  inner_radius: number;
  tip_radius: number;
  tip_color: string;
  image_alpha: number;
  circles_visible: boolean;
  sphere_radius: number;
}

export type CuePayload = InPlaneCue | OutOfPlaneCue;

export interface ServerMessageBase {
  type: string;
  session?: string;
  seq?: number;
}

export interface CueStateMessage extends ServerMessageBase {
  type: "cue_state";
  seq: number;
  now_us: number;
  state: CuePayload | { kind: "tracking_lost"; stale_tools: string[] };
}

export interface PoseUpdateMessage extends ServerMessageBase {
  type: "pose_update";
  seq: number;
  tool_id: number;
  timestamp_us: number;
  quaternion: Quaternion;
  translation: Vec3;
}

export interface SessionInfoMessage extends ServerMessageBase {
  type: "session_info";
  seq: number;
  mode: string;
  cue_config: Record<string, number | string>;
  probe_tool_id: number;
  needle_tool_id: number;
}

export interface TrackingLostMessage extends ServerMessageBase {
  type: "tracking_lost";
  seq: number;
  stale_tools: string[];
}

export interface ErrorMessage extends ServerMessageBase {
  type: "error";
  code?: string;
  message?: string;
}

export type ServerMessage =
  | CueStateMessage
  | PoseUpdateMessage
  | SessionInfoMessage
  | TrackingLostMessage
  | ErrorMessage;

const encoder = new TextEncoder();
const decoder = new TextDecoder();

export function encodeMessage(message: ClientMessage | ServerMessage): Uint8Array {
  const payload = encoder.encode(JSON.stringify(message));
  const out = new Uint8Array(4 + payload.length);
  new DataView(out.buffer).setUint32(0, payload.length, true);
  out.set(payload, 4);
  return out;
}

/** Reassembles length-prefixed JSON messages from arbitrary byte chunks. */
export class MessageAccumulator {
  private buffer = new Uint8Array(0);

  push(chunk: Uint8Array): unknown[] {
    const merged = new Uint8Array(this.buffer.length + chunk.length);
    merged.set(this.buffer, 0);
    merged.set(chunk, this.buffer.length);
    this.buffer = merged;

    const messages: unknown[] = [];
    for (;;) {
      if (this.buffer.length < 4) break;
      const view = new DataView(this.buffer.buffer, this.buffer.byteOffset);
      const length = view.getUint32(0, true);
      if (this.buffer.length < 4 + length) break;
      const payload = this.buffer.subarray(4, 4 + length);
      messages.push(JSON.parse(decoder.decode(payload)));
      this.buffer = this.buffer.slice(4 + length);
    }
    return messages;
  }
}

/** Byte transport the client runs over (node socket, or a WS bridge). */
export interface Transport {
  send(bytes: Uint8Array): void;
  onData(handler: (chunk: Uint8Array) => void): void;
  onClose(handler: () => void): void;
  close(): void;
}

/** JSON stringify with recursively sorted keys, for comparable logs. */
export function canonicalJson(value: unknown): string {
  return JSON.stringify(sortKeys(value));
}

function sortKeys(value: unknown): unknown {
  if (Array.isArray(value)) return value.map(sortKeys);
  if (value !== null && typeof value === "object") {
    const out: Record<string, unknown> = {};
    for (const key of Object.keys(value as object).sort()) {
      out[key] = sortKeys((value as Record<string, unknown>)[key]);
    }
    return out;
  }
  return value;
}
