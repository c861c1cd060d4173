// Browser entry point: wires keyboard/pointer steering to the client and
// repaints the SVG scene. Configuration comes from URL parameters
// (?host=...&port=...&session=...); no files are loaded.
//
// Browsers cannot open the service's TCP channel directly; run a
// byte-for-byte WebSocket bridge in front of it and this entry speaks
// the same length-prefixed JSON over the bridge.

import { SteeringClient } from "./client.js";
import { defaultCamera } from "./math3d.js";
import { renderSceneSvg } from "./scene.js";
import type { Transport } from "./protocol.js";

class WebSocketTransport implements Transport {
  private readonly socket: WebSocket;
  private dataHandler: ((chunk: Uint8Array) => void) | null = null;
  private closeHandler: (() => void) | null = null;

  constructor(url: string) {
    this.socket = new WebSocket(url);
    this.socket.binaryType = "arraybuffer";
    this.socket.onmessage = (event) => {
      if (event.data instanceof ArrayBuffer) {
        this.dataHandler?.(new Uint8Array(event.data));
      }
    };
    this.socket.onclose = () => this.closeHandler?.();
  }

  send(bytes: Uint8Array): void {
    this.socket.send(bytes);
  }

  onData(handler: (chunk: Uint8Array) => void): void {
    this.dataHandler = handler;
  }

  onClose(handler: () => void): void {
    this.closeHandler = handler;
  }

  close(): void {
    this.socket.close();
  }
}

function start(): void {
  const params = new URLSearchParams(window.location.search);
  const host = params.get("host") ?? window.location.hostname ?? "127.0.0.1";
  const port = params.get("port") ?? "8765";
  const session = params.get("session") ?? "default";

  const client = new SteeringClient({ session });
  const camera = defaultCamera();
  camera.center = [0, 80, 0];

  const root = document.getElementById("scene");
  if (!root) throw new Error("missing #scene container");

  const repaint = () => {
    root.innerHTML = renderSceneSvg(client.scene, camera, [
      root.clientWidth || 800,
      root.clientHeight || 600,
    ]);
  };

  const socket = new WebSocketTransport(`ws://${host}:${port}/`);
  client.attach(socket);

  // pointer drags steer the needle; shift-drag steers the probe;
  // wheel orbits the camera; "m" toggles the guidance mode
  let dragging = false;
  root.addEventListener("pointerdown", () => (dragging = true));
  window.addEventListener("pointerup", () => (dragging = false));
  root.addEventListener("pointermove", (event: PointerEvent) => {
    if (!dragging) return;
    const target = event.shiftKey ? "probe" : "needle";
    if (event.ctrlKey) {
      client.gizmos.handle({
        target,
        kind: "rotate",
        axis: [0, 1, 0],
        angle: event.movementX * 0.005,
      });
    } else {
      client.gizmos.handle({
        target,
        kind: "translate",
        delta: [event.movementX / camera.zoom, 0, -event.movementY / camera.zoom],
      });
    }
  });
  root.addEventListener("wheel", (event: WheelEvent) => {
    camera.yaw += event.deltaX * 0.002;
    camera.pitch += event.deltaY * 0.002;
  });
  window.addEventListener("keydown", (event: KeyboardEvent) => {
    if (event.key === "m") client.gizmos.handle({ kind: "toggle_mode" });
  });

  const loop = () => {
    client.gizmos.tick();
    repaint();
    window.requestAnimationFrame(loop);
  };
  loop();
}

if (typeof window !== "undefined" && typeof document !== "undefined") {
  window.addEventListener("DOMContentLoaded", start);
}
