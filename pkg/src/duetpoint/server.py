"""WebSocket session service for live two-character synthesis.

Protocol (JSON text messages over /session):

  client -> server
    {"type": "control", "root": [tx, tz, re, im],
     "points": [[x,y,z] x3]}                      full three-point input
    {"type": "control", "head_position": [x,y,z],
     "head_yaw": theta}                           head-only input; hand
                                                  positions are synthesized
    {"type": "command", "name": "pause" | "resume" | "reset" | "stop"}

  server -> client
    {"type": "frame", "frame_index": n, "characters": {role: {...}}}
    {"type": "status", ...}

The service is lockstep: every control message advances the engine by
exactly one tick and is answered by exactly one frame (or a status when
paused). This makes an online session bit-for-bit reproducible from the
same measurement list run offline.
"""

from __future__ import annotations

import json

import numpy as np
from fastapi import FastAPI, WebSocket, WebSocketDisconnect

from .motion import RootFrame, to_global
from .rollout import RolloutBundle, init_state, step

# Hand rest offsets relative to the root frame (meters), used when the
# client supplies only a head pose.
HAND_OFFSETS = {
    "left": np.array([-0.25, -0.45, 0.30]),
    "right": np.array([0.25, -0.45, 0.30]),
}


class ProtocolError(ValueError):
    pass


def control_to_measurement(msg: dict) -> tuple[RootFrame, np.ndarray]:
    """Validate a control message into (root frame, global 3x3 points)."""
    if "root" in msg and "points" in msg:
        root = np.asarray(msg["root"], dtype=np.float64)
        points = np.asarray(msg["points"], dtype=np.float64)
        if root.shape != (4,):
            raise ProtocolError("control.root must have 4 entries (tx, tz, re, im)")
        if points.shape != (3, 3):
            raise ProtocolError("control.points must be 3 points of 3 coordinates")
        frame = RootFrame(root[:2], root[2:4])
        # Renormalize only when the heading is actually off the unit
        # circle: dividing a unit heading by its ~1.0 norm would still
        # perturb the last bits and break offline reproducibility.
        if abs(float(np.linalg.norm(frame.o)) - 1.0) > 1e-9:
            frame = frame.normalized()
    elif "head_position" in msg:
        head = np.asarray(msg["head_position"], dtype=np.float64)
        if head.shape != (3,):
            raise ProtocolError("control.head_position must have 3 entries")
        yaw = float(msg.get("head_yaw", 0.0))
        frame = RootFrame.from_angle(head[[0, 2]], yaw)
        local = np.stack([
            np.array([0.0, head[1], 0.0]),
            np.array([HAND_OFFSETS["left"][0], head[1] + HAND_OFFSETS["left"][1],
                      HAND_OFFSETS["left"][2]]),
            np.array([HAND_OFFSETS["right"][0], head[1] + HAND_OFFSETS["right"][1],
                      HAND_OFFSETS["right"][2]]),
        ])
        points = to_global(frame, local)
    else:
        raise ProtocolError("control needs either root+points or head_position")
    if not (np.all(np.isfinite(frame.t)) and np.all(np.isfinite(frame.o))
            and np.all(np.isfinite(points))):
        raise ProtocolError("control contains non-finite values")
    return frame, points


def frame_message(frame_index: int, characters: dict) -> dict:
    """The canonical per-tick payload; shared by online and offline paths."""
    return {
        "type": "frame",
        "frame_index": frame_index,
        "characters": {
            role: {
                "root": [*char.root.t.tolist(), *char.root.o.tolist()],
                "positions": char.positions.tolist(),
                "rotations": char.rotations.tolist(),
                "contacts": char.contacts.tolist(),
                "divergences": char.divergences,
            }
            for role, char in characters.items()
        },
    }


class SessionEngine:
    """One client's synthesis state; frame indices only ever increase,
    including across resets."""

    def __init__(self, bundle: RolloutBundle, mode: str = "duet",
                 init: dict | None = None):
        self.bundle = bundle
        self.mode = mode
        self._init = init
        self.state = init_state(bundle, mode, init=init)
        self.frame_index = -1
        self.paused = False

    def tick(self, root: RootFrame, points: np.ndarray) -> dict:
        characters = step(self.bundle, self.state, root, points)
        self.frame_index += 1
        return frame_message(self.frame_index, characters)

    def reset(self):
        self.state = init_state(self.bundle, self.mode, init=self._init)
        self.paused = False

    def status(self, **extra) -> dict:
        return {
            "type": "status",
            "frame_index": self.frame_index,
            "paused": self.paused,
            "mode": self.mode,
            **extra,
        }


def offline_frames(engine: SessionEngine, measurements) -> list:
    """Replay (root, points) measurements through the same tick path the
    live session uses; the frames must match a live run bit for bit."""
    return [engine.tick(root, points) for root, points in measurements]


def create_app(engine_factory) -> FastAPI:
    """engine_factory() -> SessionEngine, one per connection."""
    app = FastAPI(title="duetpoint session service")

    @app.get("/health")
    def health():
        return {"ok": True}

    @app.websocket("/session")
    async def session(ws: WebSocket):
        await ws.accept()
        engine: SessionEngine = engine_factory()
        await ws.send_text(json.dumps(engine.status(event="connected")))
        try:
            while True:
                raw = await ws.receive_text()
                try:
                    msg = json.loads(raw)
                except json.JSONDecodeError:
                    await ws.send_text(json.dumps(
                        engine.status(event="error", detail="invalid JSON")))
                    continue
                kind = msg.get("type")
                if kind == "control":
                    try:
                        root, points = control_to_measurement(msg)
                    except ProtocolError as e:
                        await ws.send_text(json.dumps(
                            engine.status(event="error", detail=str(e))))
                        continue
                    if engine.paused:
                        await ws.send_text(json.dumps(engine.status(event="paused")))
                        continue
                    await ws.send_text(json.dumps(engine.tick(root, points)))
                elif kind == "command":
                    name = msg.get("name")
                    if name == "pause":
                        engine.paused = True
                        await ws.send_text(json.dumps(engine.status(event="pause")))
                    elif name == "resume":
                        engine.paused = False
                        await ws.send_text(json.dumps(engine.status(event="resume")))
                    elif name == "reset":
                        engine.reset()
                        await ws.send_text(json.dumps(engine.status(event="reset")))
                    elif name == "stop":
                        await ws.send_text(json.dumps(engine.status(event="stop")))
                        break
                    else:
                        await ws.send_text(json.dumps(
                            engine.status(event="error",
                                          detail=f"unknown command {name!r}")))
                else:
                    await ws.send_text(json.dumps(
                        engine.status(event="error",
                                      detail=f"unknown message type {kind!r}")))
        except WebSocketDisconnect:
            pass
        finally:
            try:
                await ws.close()
            except RuntimeError:
                pass

    return app
