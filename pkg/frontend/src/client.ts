// Steering client: joins the transport, the scene, and the gizmos.

import { applyServerMessage, SessionBinding } from "./cues.js";
import { GizmoController } from "./gizmo.js";
import { createScene, SceneState } from "./scene.js";
import {
  canonicalJson,
  ClientMessage,
  encodeMessage,
  MessageAccumulator,
  ServerMessage,
  Transport,
} from "./protocol.js";

export interface SteeringClientOptions {
  session: string;
  clockUs?: () => number;
  maxHz?: number;
}

export class SteeringClient {
  readonly scene: SceneState;
  readonly gizmos: GizmoController;
  readonly binding: SessionBinding = { probeToolId: 1, needleToolId: 2 };
  /** Canonical JSON log of every consumed cue_state, for replay checks. */
  readonly cueLog: string[] = [];
  /** Every ClientMessage published, in order (the gesture "script"). */
  readonly sentLog: ClientMessage[] = [];

  private transport: Transport | null = null;
  private readonly accumulator = new MessageAccumulator();
  private readonly session: string;
  private waiters: Array<{ predicate: (m: ServerMessage) => boolean; resolve: (m: ServerMessage) => void }> = [];

  constructor(options: SteeringClientOptions) {
    this.session = options.session;
    this.scene = createScene();
    const clock = options.clockUs ?? (() => Math.round(performance.now() * 1000));
    this.gizmos = new GizmoController((message) => this.sendMessage(message), {
      session: options.session,
      probeToolId: this.binding.probeToolId,
      needleToolId: this.binding.needleToolId,
      clockUs: clock,
      maxHz: options.maxHz ?? 60,
    });
  }

  attach(transport: Transport): void {
    this.transport = transport;
    transport.onData((chunk) => {
      for (const raw of this.accumulator.push(chunk)) {
        this.handleServerMessage(raw as ServerMessage);
      }
    });
    transport.onClose(() => {
      this.transport = null;
      this.gizmos.setConnected(false);
      this.scene.banner = "disconnected: reconnecting";
    });
    this.gizmos.setConnected(true);
    this.sendMessage({ type: "subscribe", session: this.session });
  }

  sendMessage(message: ClientMessage): void {
    if (!this.transport) return;
    this.sentLog.push(message);
    this.transport.send(encodeMessage(message));
  }

  private handleServerMessage(message: ServerMessage): void {
    const consumed = applyServerMessage(this.scene, this.binding, message);
    if (consumed && message.type === "cue_state") {
      this.cueLog.push(canonicalJson({ state: message.state, type: message.type }));
    }
    const waiters = this.waiters;
    this.waiters = [];
    for (const waiter of waiters) {
      if (waiter.predicate(message)) waiter.resolve(message);
      else this.waiters.push(waiter);
    }
  }

  waitFor(predicate: (m: ServerMessage) => boolean, timeoutMs = 5000): Promise<ServerMessage> {
    return new Promise((resolve, reject) => {
      const timer = setTimeout(
        () => reject(new Error("timed out waiting for server message")),
        timeoutMs,
      );
      this.waiters.push({
        predicate,
        resolve: (m) => {
          clearTimeout(timer);
          resolve(m);
        },
      });
    });
  }

  close(): void {
    this.transport?.close();
    this.transport = null;
  }
}
