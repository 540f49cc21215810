// Browser entry point: wires the canvas, pointer input and the session
// WebSocket together. All logic lives in the imported modules; this
// file is deliberately thin DOM glue and is not unit-tested.

import {
  ControlThrottle,
  headControl,
  parseServerMessage,
} from "./protocol.js";
import { buildScene, ROLE_COLORS, SceneGraph, SkeletonManifest } from "./scene.js";
import { OrbitCamera, TopDownCamera } from "./unproject.js";
import { ViewerStore } from "./state.js";

const canvas = document.getElementById("view") as HTMLCanvasElement;
const ctx = canvas.getContext("2d")!;
const hud = document.getElementById("hud") as HTMLElement;

const store = new ViewerStore();
const throttle = new ControlThrottle();
const topDown = new TopDownCamera(0, 0, 80, canvas.width, canvas.height);
const orbit = new OrbitCamera([0, 1, 0], 6, 0.5, 0.7, Math.PI / 4,
  canvas.width, canvas.height);

let manifest: SkeletonManifest | null = null;
let ws: WebSocket | null = null;

function connect(): void {
  store.apply({ kind: "connecting" });
  ws = new WebSocket(`ws://${location.host}/session`);
  ws.onopen = () => store.apply({ kind: "open" });
  ws.onclose = () => {
    store.apply({ kind: "close" });
    setTimeout(connect, 1000);
  };
  ws.onmessage = (ev) => {
    const msg = parseServerMessage(ev.data as string);
    if (msg) store.apply({ kind: "server", message: msg });
  };
}

fetch("/skeleton.json")
  .then((r) => (r.ok ? r.json() : null))
  .then((m) => {
    manifest = m as SkeletonManifest | null;
  })
  .catch(() => {
    manifest = null;
  });

function sendControl(nowMs: number): void {
  if (!ws || ws.readyState !== WebSocket.OPEN) return;
  const { headTarget, headYaw } = store.state.control;
  const msg = throttle.offer(headControl(headTarget, headYaw), nowMs);
  if (msg) ws.send(JSON.stringify(msg));
}

canvas.addEventListener("pointermove", (ev) => {
  if (ev.buttons !== 1) return;
  const rect = canvas.getBoundingClientRect();
  const px = ev.clientX - rect.left;
  const py = ev.clientY - rect.top;
  const floor =
    store.state.cameraMode === "top-down"
      ? topDown.screenToFloor(px, py)
      : orbit.screenToFloor(px, py);
  if (!floor) return;
  store.apply({ kind: "drag", x: floor.x, z: floor.z });
  sendControl(performance.now());
});

canvas.addEventListener("wheel", (ev) => {
  ev.preventDefault();
  store.apply({ kind: "yaw", delta: ev.deltaY * 0.002 });
  sendControl(performance.now());
});

window.addEventListener("keydown", (ev) => {
  if (ev.key === "c") {
    store.apply({
      kind: "camera",
      mode: store.state.cameraMode === "top-down" ? "orbit" : "top-down",
    });
  } else if (ev.key === " " && ws?.readyState === WebSocket.OPEN) {
    const name = store.state.paused ? "resume" : "pause";
    ws.send(JSON.stringify({ type: "command", name }));
  }
});

function drawScene(scene: SceneGraph): void {
  ctx.clearRect(0, 0, canvas.width, canvas.height);
  const project = (p: [number, number, number]): [number, number] | null =>
    store.state.cameraMode === "top-down"
      ? topDown.worldToScreen(p[0], p[2])
      : orbit.worldToScreen(p);
  for (const bone of scene.bones) {
    const a = project(bone.a);
    const b = project(bone.b);
    if (!a || !b) continue;
    ctx.strokeStyle = ROLE_COLORS[bone.role] ?? "#888";
    ctx.lineWidth = 2;
    ctx.beginPath();
    ctx.moveTo(a[0], a[1]);
    ctx.lineTo(b[0], b[1]);
    ctx.stroke();
  }
  for (const mark of scene.contacts) {
    const at = project(mark.at);
    if (!at) continue;
    ctx.fillStyle = "#2ecc40";
    ctx.beginPath();
    ctx.arc(at[0], at[1], 4, 0, 2 * Math.PI);
    ctx.fill();
  }
  for (const point of scene.points) {
    const at = project(point.at);
    if (!at) continue;
    ctx.fillStyle = ROLE_COLORS[point.role] ?? "#888";
    ctx.fillRect(at[0] - 1.5, at[1] - 1.5, 3, 3);
  }
  const target = store.state.control.headTarget;
  const t = project([target[0], 0, target[2]]);
  if (t) {
    ctx.strokeStyle = "#f0ad4e";
    ctx.beginPath();
    ctx.arc(t[0], t[1], 6, 0, 2 * Math.PI);
    ctx.stroke();
  }
}

function tick(nowMs: number): void {
  const deferred = throttle.flush(nowMs);
  if (deferred && ws?.readyState === WebSocket.OPEN) {
    ws.send(JSON.stringify(deferred));
  }
  const s = store.state;
  if (s.latestFrame) {
    drawScene(buildScene(s.latestFrame, manifest));
  }
  hud.textContent =
    `${s.connection} | mode ${s.mode}${s.paused ? " (paused)" : ""}` +
    ` | camera ${s.cameraMode}` +
    ` | frame ${s.latestFrame?.frame_index ?? "-"}` +
    ` | dropped ${s.droppedFrames}` +
    (s.latencyMs !== null ? ` | ${s.latencyMs.toFixed(0)} ms` : "");
  requestAnimationFrame(tick);
}

connect();
requestAnimationFrame(tick);
