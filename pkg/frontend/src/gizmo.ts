// Steering gizmos: drag gestures on the probe/needle update local poses
// and publish set_pose messages with monotone timestamps at a bounded
// rate. Disconnection pauses emission; resuming flushes the latest pose.

import { identityPose, Pose, rotatePose, translatePose } from "./math3d.js";
import { IN_PLANE, OUT_OF_PLANE } from "./protocol.js";
import type { ClientMessage, Vec3 } from "./protocol.js";

export type GestureEvent =
  | { target: "probe" | "needle"; kind: "translate"; delta: Vec3 }
  | { target: "probe" | "needle"; kind: "rotate"; axis: Vec3; angle: number }
  | { kind: "toggle_mode" };

export interface GizmoOptions {
  session: string;
  probeToolId: number;
  needleToolId: number;
  clockUs: () => number;
  maxHz?: number;
}

export class GizmoController {
  readonly poses: { probe: Pose; needle: Pose } = {
    probe: identityPose(),
    needle: identityPose(),
  };
  mode: string = OUT_OF_PLANE;
  connected = true;

  private readonly session: string;
  private readonly toolIds: { probe: number; needle: number };
  private readonly clockUs: () => number;
  private readonly minIntervalUs: number;
  private readonly send: (message: ClientMessage) => void;
  private lastSentUs: { probe: number; needle: number } = { probe: -Infinity, needle: -Infinity };
  private lastTimestampUs = 0;
  private pendingDirty: { probe: boolean; needle: boolean } = { probe: false, needle: false };

  constructor(send: (message: ClientMessage) => void, options: GizmoOptions) {
    this.send = send;
    this.session = options.session;
    this.toolIds = { probe: options.probeToolId, needle: options.needleToolId };
    this.clockUs = options.clockUs;
    this.minIntervalUs = 1_000_000 / (options.maxHz ?? 60);
  }

  handle(event: GestureEvent): void {
    if (event.kind === "toggle_mode") {
      this.mode = this.mode === IN_PLANE ? OUT_OF_PLANE : IN_PLANE;
      if (this.connected) {
        this.send({ type: "set_mode", session: this.session, mode: this.mode });
      }
      return;
    }
    const current = this.poses[event.target];
    this.poses[event.target] =
      event.kind === "translate"
        ? translatePose(current, event.delta)
        : rotatePose(current, event.axis, event.angle);
    this.publish(event.target);
  }

  /** Emission pause while the connection is down; poses keep updating. */
  setConnected(connected: boolean): void {
    const wasDown = !this.connected;
    this.connected = connected;
    if (connected && wasDown) {
      // reconnect: flush the freshest pose of anything moved while away
      for (const target of ["probe", "needle"] as const) {
        if (this.pendingDirty[target]) this.publish(target, true);
      }
    }
  }

  /** Emit any pose coalesced by the rate limit; call from the app loop. */
  tick(): void {
    for (const target of ["probe", "needle"] as const) {
      if (this.pendingDirty[target]) this.publish(target);
    }
  }

  private publish(target: "probe" | "needle", force = false): void {
    if (!this.connected) {
      this.pendingDirty[target] = true;
      return;
    }
    const now = this.clockUs();
    if (!force && now - this.lastSentUs[target] < this.minIntervalUs) {
      this.pendingDirty[target] = true; // coalesce: latest pose wins
      return;
    }
    this.lastSentUs[target] = now;
    this.pendingDirty[target] = false;
    this.lastTimestampUs = Math.max(now, this.lastTimestampUs + 1);
    const pose = this.poses[target];
    this.send({
      type: "set_pose",
      session: this.session,
      tool_id: this.toolIds[target],
      timestamp_us: this.lastTimestampUs,
      quaternion: pose.quaternion,
      translation: pose.translation,
    });
  }
}
