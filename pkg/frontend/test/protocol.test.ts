import { describe, expect, it } from "vitest";

import {
  ControlThrottle,
  FrameGate,
  FrameMessage,
  headControl,
  parseServerMessage,
} from "../src/protocol.js";
import { TopDownCamera } from "../src/unproject.js";

function frame(index: number): FrameMessage {
  return { type: "frame", frame_index: index, characters: {} };
}

describe("FrameGate", () => {
  it("discards out-of-order and duplicate frames", () => {
    const gate = new FrameGate();
    expect(gate.accept(frame(0))).toBe(true);
    expect(gate.accept(frame(1))).toBe(true);
    expect(gate.accept(frame(1))).toBe(false); // duplicate
    expect(gate.accept(frame(0))).toBe(false); // older
    expect(gate.accept(frame(5))).toBe(true); // gaps are fine
    expect(gate.accept(frame(3))).toBe(false); // late arrival
    expect(gate.lastIndex).toBe(5);
  });

  it("reset allows a fresh session to restart at zero", () => {
    const gate = new FrameGate();
    gate.accept(frame(10));
    gate.reset();
    expect(gate.accept(frame(0))).toBe(true);
  });
});

describe("parseServerMessage", () => {
  it("accepts frame and status, rejects junk", () => {
    expect(parseServerMessage(JSON.stringify(frame(2)))?.type).toBe("frame");
    expect(
      parseServerMessage('{"type": "status", "frame_index": -1}')?.type,
    ).toBe("status");
    expect(parseServerMessage("not json")).toBeNull();
    expect(parseServerMessage('{"type": "mystery"}')).toBeNull();
    expect(parseServerMessage("42")).toBeNull();
  });
});

describe("ControlThrottle", () => {
  it("limits to one message per interval, latest wins", () => {
    const throttle = new ControlThrottle(1000 / 60);
    const sent: number[] = [];
    // 10 drag samples 4 ms apart: only every ~17 ms may pass.
    for (let i = 0; i < 10; i++) {
      const msg = headControl([i, 1.6, 0], 0);
      const out = throttle.offer(msg, i * 4);
      if (out) sent.push(out.head_position[0]);
    }
    expect(sent).toEqual([0, 5]); // t=0 and t=20ms
    // The last sample is pending; it flushes once the window elapses.
    expect(throttle.flush(30)).toBeNull();
    const flushed = throttle.flush(40);
    expect(flushed?.head_position[0]).toBe(9);
    expect(throttle.flush(41)).toBeNull(); // nothing left
  });
});

describe("scripted drag path", () => {
  it("produces the expected control-message sequence via unprojection", () => {
    // A user drags across the top-down view; every pointer sample is
    // unprojected to the floor and becomes a head target. The expected
    // messages are computed from the 2-D oracle directly.
    const cam = new TopDownCamera(0, 0, 100, 800, 600);
    const throttle = new ControlThrottle(1000 / 60);
    const path: Array<[number, number, number]> = [
      [400, 300, 0], // center -> (0, 0)
      [500, 300, 20], // 1 m right -> (1, 0)
      [500, 100, 40], // 2 m up-screen -> (1, 2)
      [300, 100, 60],
    ];
    const sent: Array<{ x: number; z: number }> = [];
    for (const [px, py, t] of path) {
      const floor = cam.screenToFloor(px, py);
      const out = throttle.offer(headControl([floor.x, 1.6, floor.z], 0), t);
      if (out) sent.push({ x: out.head_position[0], z: out.head_position[2] });
    }
    expect(sent).toEqual([
      { x: 0, z: 0 },
      { x: 1, z: 0 },
      { x: 1, z: 2 },
      { x: -1, z: 2 },
    ]);
    // Drag to floor point (1, 2) produced head [1, 1.6, 2].
    const msg = headControl([1, 1.6, 2], 0.25);
    expect(msg).toEqual({
      type: "control",
      head_position: [1, 1.6, 2],
      head_yaw: 0.25,
    });
  });
});
