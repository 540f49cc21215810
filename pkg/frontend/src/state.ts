// Viewer state as a pure reducer: replaying the same event stream from
// the initial state always reproduces the same final state.

import { FrameGate, FrameMessage, ServerMessage, Vec3 } from "./protocol.js";

export type CameraMode = "top-down" | "orbit";

export interface ControlState {
  headTarget: Vec3;
  headYaw: number;
}

export interface ViewerState {
  connection: "disconnected" | "connecting" | "connected";
  latestFrame: FrameMessage | null;
  control: ControlState;
  cameraMode: CameraMode;
  paused: boolean;
  mode: string;
  lastEvent: string;
  latencyMs: number | null;
  droppedFrames: number;
}

export type ViewerEvent =
  | { kind: "connecting" }
  | { kind: "open" }
  | { kind: "close" }
  | { kind: "server"; message: ServerMessage; sentAtMs?: number; nowMs?: number }
  | { kind: "drag"; x: number; z: number }
  | { kind: "yaw"; delta: number }
  | { kind: "camera"; mode: CameraMode };

export const DEFAULT_HEAD_HEIGHT = 1.6;

export function initialState(): ViewerState {
  return {
    connection: "disconnected",
    latestFrame: null,
    control: { headTarget: [0, DEFAULT_HEAD_HEIGHT, 0], headYaw: 0 },
    cameraMode: "top-down",
    paused: false,
    mode: "duet",
    lastEvent: "",
    latencyMs: null,
    droppedFrames: 0,
  };
}

export class ViewerStore {
  state: ViewerState = initialState();
  private gate = new FrameGate();

  apply(event: ViewerEvent): ViewerState {
    const s = this.state;
    switch (event.kind) {
      case "connecting":
        this.state = { ...s, connection: "connecting" };
        break;
      case "open":
        this.state = { ...s, connection: "connected" };
        break;
      case "close":
        this.gate.reset();
        this.state = { ...s, connection: "disconnected", lastEvent: "closed" };
        break;
      case "server": {
        const msg = event.message;
        if (msg.type === "frame") {
          if (this.gate.accept(msg)) {
            const latency =
              event.sentAtMs !== undefined && event.nowMs !== undefined
                ? event.nowMs - event.sentAtMs
                : s.latencyMs;
            this.state = { ...s, latestFrame: msg, latencyMs: latency };
          } else {
            this.state = { ...s, droppedFrames: s.droppedFrames + 1 };
          }
        } else {
          this.state = {
            ...s,
            paused: msg.paused,
            mode: msg.mode,
            lastEvent: msg.event ?? s.lastEvent,
          };
        }
        break;
      }
      case "drag":
        this.state = {
          ...s,
          control: {
            ...s.control,
            headTarget: [event.x, s.control.headTarget[1], event.z],
          },
        };
        break;
      case "yaw":
        this.state = {
          ...s,
          control: { ...s.control, headYaw: s.control.headYaw + event.delta },
        };
        break;
      case "camera":
        this.state = { ...s, cameraMode: event.mode };
        break;
    }
    return this.state;
  }
}
