// Node TCP transport for the service's length-prefixed JSON channel.
// Browsers cannot open raw TCP sockets; a deployment there puts a
// WebSocket bridge in front of the same byte stream and implements
// Transport over it.

import net from "node:net";

import type { Transport } from "./protocol.js";

export class TcpTransport implements Transport {
  private socket: net.Socket;
  private closed = false;

  private constructor(socket: net.Socket) {
    this.socket = socket;
  }

  static connect(host: string, port: number): Promise<TcpTransport> {
    return new Promise((resolve, reject) => {
      const socket = net.createConnection({ host, port, noDelay: true });
      socket.once("connect", () => resolve(new TcpTransport(socket)));
      socket.once("error", reject);
    });
  }

  send(bytes: Uint8Array): void {
    if (!this.closed) this.socket.write(bytes);
  }

  onData(handler: (chunk: Uint8Array) => void): void {
    this.socket.on("data", (chunk: Buffer) => handler(new Uint8Array(chunk)));
  }

  onClose(handler: () => void): void {
    this.socket.on("close", handler);
    this.socket.on("error", () => undefined);
  }

  close(): void {
    this.closed = true;
    this.socket.destroy();
  }
}
