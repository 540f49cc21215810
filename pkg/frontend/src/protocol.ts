// Message types for the duetpoint session protocol, plus the client-side
// ordering and rate-limiting rules.

export type Vec3 = [number, number, number];

export interface CharacterFrame {
  root: [number, number, number, number]; // tx, tz, cos, sin
  positions: Vec3[]; // root-relative joint positions
  rotations: number[][][];
  contacts: number[]; // lheel, ltoe, rheel, rtoe in {0,1}
  divergences: number;
}

export interface FrameMessage {
  type: "frame";
  frame_index: number;
  characters: Record<string, CharacterFrame>;
}

export interface StatusMessage {
  type: "status";
  frame_index: number;
  paused: boolean;
  mode: string;
  event?: string;
  detail?: string;
}

export type ServerMessage = FrameMessage | StatusMessage;

export interface ControlMessage {
  type: "control";
  head_position: Vec3;
  head_yaw: number;
}

export interface CommandMessage {
  type: "command";
  name: "pause" | "resume" | "reset" | "stop";
}

export function parseServerMessage(raw: string): ServerMessage | null {
  let msg: unknown;
  try {
    msg = JSON.parse(raw);
  } catch {
    return null;
  }
  if (typeof msg !== "object" || msg === null) return null;
  const type = (msg as { type?: unknown }).type;
  if (type !== "frame" && type !== "status") return null;
  return msg as ServerMessage;
}

export function headControl(head: Vec3, yaw: number): ControlMessage {
  return { type: "control", head_position: head, head_yaw: yaw };
}

/**
 * Keeps only the newest frame: a frame whose index is not strictly
 * greater than the last accepted one is discarded (out-of-order or
 * duplicate delivery).
 */
export class FrameGate {
  private last = -1;

  accept(frame: FrameMessage): boolean {
    if (frame.frame_index <= this.last) return false;
    this.last = frame.frame_index;
    return true;
  }

  get lastIndex(): number {
    return this.last;
  }

  reset(): void {
    this.last = -1;
  }
}

/**
 * Latest-wins control throttle: at most one message per interval; a
 * message arriving inside the quiet window replaces any pending one.
 * Time is injected so tests are deterministic.
 */
export class ControlThrottle {
  private lastSent = -Infinity;
  private pending: ControlMessage | null = null;

  constructor(private readonly minIntervalMs: number = 1000 / 60) {}

  /** Offer a message; returns the message to send now, or null. */
  offer(msg: ControlMessage, nowMs: number): ControlMessage | null {
    if (nowMs - this.lastSent >= this.minIntervalMs) {
      this.lastSent = nowMs;
      this.pending = null;
      return msg;
    }
    this.pending = msg;
    return null;
  }

  /** Poll for a deferred message once the quiet window has elapsed. */
  flush(nowMs: number): ControlMessage | null {
    if (this.pending !== null && nowMs - this.lastSent >= this.minIntervalMs) {
      const msg = this.pending;
      this.pending = null;
      this.lastSent = nowMs;
      return msg;
    }
    return null;
  }
}
