import { describe, expect, it } from "vitest";

import {
  canonicalJson,
  encodeMessage,
  MessageAccumulator,
} from "../src/protocol.js";

describe("message framing", () => {
  it("round-trips a message through the accumulator", () => {
    const message = { type: "subscribe", session: "default" } as const;
    const acc = new MessageAccumulator();
    const out = acc.push(encodeMessage(message));
    expect(out).toEqual([message]);
  });

  it("reassembles messages split across arbitrary chunks", () => {
    const a = encodeMessage({ type: "subscribe", session: "default" });
    const b = encodeMessage({ type: "set_mode", session: "default", mode: "in_plane" });
    const stream = new Uint8Array(a.length + b.length);
    stream.set(a, 0);
    stream.set(b, a.length);

    for (const cut of [1, 3, 4, 7, a.length, a.length + 5]) {
      const acc = new MessageAccumulator();
      const first = acc.push(stream.subarray(0, cut));
      const second = acc.push(stream.subarray(cut));
      expect([...first, ...second]).toEqual([
        { type: "subscribe", session: "default" },
        { type: "set_mode", session: "default", mode: "in_plane" },
      ]);
    }
  });

  it("handles many messages in one chunk", () => {
    const messages = Array.from({ length: 20 }, (_, i) => ({
      type: "set_mode" as const,
      session: `s${i}`,
      mode: "in_plane",
    }));
    const chunks = messages.map(encodeMessage);
    const total = new Uint8Array(chunks.reduce((n, c) => n + c.length, 0));
    let offset = 0;
    for (const chunk of chunks) {
      total.set(chunk, offset);
      offset += chunk.length;
    }
    const acc = new MessageAccumulator();
    expect(acc.push(total)).toEqual(messages);
  });
});

describe("canonical json", () => {
  it("sorts keys recursively", () => {
    expect(canonicalJson({ b: 1, a: { d: 2, c: [3, { f: 4, e: 5 }] } })).toBe(
      '{"a":{"c":[3,{"e":5,"f":4}],"d":2},"b":1}',
    );
  });
});
