"""Causal frame-by-frame synthesis of both characters from the leader's
measured three-point stream.

Each tick:
  1. the newest leader measurement (root frame + head/hand positions)
     is pushed into a 0.5 s ring buffer;
  2. the mapping network turns that past window into 1 s of future
     root/three-point trajectories for both characters;
  3. per character, those futures are re-anchored to the character's own
     current root frame and fed to the tracking network;
  4. the first of the 30 predicted frames becomes the character's new
     pose, and its root advances by the first predicted relative frame.

Non-finite or physically absurd predictions freeze the character for
that tick (the previous pose is re-emitted) and increment a divergence
counter instead of propagating garbage into the next tick.
"""

from __future__ import annotations

import time
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .dataset import FUTURE, PAST, mapping_input_layout
from .mapping import MappingModel, map_infer
from .motion import (
    MotionSequence,
    RootFrame,
    Skeleton,
    relative_frame,
    to_global,
    to_local,
)
from .tracking import TrackingModel, decode_output, track_infer

ROLLOUT_MODES = (
    "duet",
    "tracking_only",
    "ablate_no_future",
    "ablate_direct_follower",
    "ablate_fullbody_condition",
)

# Divergence guard thresholds.
MAX_JOINT_SPEED = 20.0  # m/s
MAX_POSITION = 100.0  # m from the origin

ROLES = ("leader", "follower")


@dataclass
class MarkerStream:
    """Measured leader input: global root frames + global marker points."""

    roots: RootFrame  # (T,)
    points: np.ndarray  # (T, 3, 3) head / left hand / right hand

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64)
        if len(self.roots) != self.points.shape[0]:
            raise ValueError("marker stream roots and points disagree in length")

    def __len__(self) -> int:
        return self.points.shape[0]

    def transformed(self, G: RootFrame) -> "MarkerStream":
        return MarkerStream(G.compose(self.roots), to_global(G, self.points))


def stream_from_sequence(seq: MotionSequence) -> MarkerStream:
    return MarkerStream(seq.root, seq.three_point_global())


@dataclass
class RolloutBundle:
    """Everything needed to run a session: one tracker per role plus the
    leader-to-duet mapping network."""

    trackers: dict  # role -> TrackingModel
    mapping: MappingModel | None
    skeleton: Skeleton
    frame_rate: float = 30.0

    def __post_init__(self):
        for role, model in self.trackers.items():
            if model.n_joints != self.skeleton.n_joints:
                raise ValueError(
                    f"{role} tracker expects {model.n_joints} joints, "
                    f"skeleton has {self.skeleton.n_joints}"
                )


@dataclass
class CharacterState:
    root: RootFrame  # scalar frame
    positions: np.ndarray  # (J, 3) root-relative
    rotations: np.ndarray  # (J, 3, 3) root-relative
    contacts: np.ndarray  # (4,)
    # Own past (for the no-future ablation): global root frames and
    # own-root-relative marker points, newest last.
    past_roots: deque = field(default_factory=lambda: deque(maxlen=PAST))
    past_points: deque = field(default_factory=lambda: deque(maxlen=PAST))
    divergences: int = 0
    max_joint_speed: float = 0.0


@dataclass
class RolloutState:
    characters: dict  # role -> CharacterState
    mode: str = "duet"
    tick: int = 0
    # Measured leader history, newest last: (RootFrame, (3,3) global points).
    measured_roots: deque = field(default_factory=lambda: deque(maxlen=PAST))
    measured_points: deque = field(default_factory=lambda: deque(maxlen=PAST))


def rest_pose(skeleton: Skeleton) -> tuple[np.ndarray, np.ndarray]:
    """Root-relative rest pose: accumulated offsets, identity rotations."""
    J = skeleton.n_joints
    pos = np.zeros((J, 3))
    for j in range(J):
        p = skeleton.parents[j]
        pos[j] = skeleton.offsets[j] + (pos[p] if p >= 0 else 0.0)
    rot = np.broadcast_to(np.eye(3), (J, 3, 3)).copy()
    return pos, rot


def _character_from_sequence(seq: MotionSequence, index: int) -> CharacterState:
    return CharacterState(
        root=seq.root.index(index),
        positions=seq.positions[index].copy(),
        rotations=seq.rotations[index].copy(),
        contacts=seq.contacts[index].copy(),
    )


def init_from_pair(leader: MotionSequence, follower: MotionSequence | None,
                   index: int = 0) -> dict:
    """Seed both characters from ground-truth frames (for evaluation)."""
    out = {"leader": _character_from_sequence(leader, index)}
    if follower is not None:
        out["follower"] = _character_from_sequence(follower, index)
    return out


def init_state(bundle: RolloutBundle, mode: str = "duet",
               init: dict | None = None,
               first_root: RootFrame | None = None) -> RolloutState:
    """Build the initial state. Without explicit per-role states, both
    characters start in the rest pose at the first measured root."""
    if mode not in ROLLOUT_MODES:
        raise ValueError(f"unknown rollout mode {mode!r}")
    roles = ("leader",) if mode == "tracking_only" else ROLES
    characters = {}
    for role in roles:
        if role not in bundle.trackers:
            raise ValueError(f"bundle has no tracker for role {role!r}")
        if init is not None and role in init:
            # Deep copy: stepping mutates the state, and callers (e.g. a
            # session reset) may reuse the same initial states.
            src = init[role]
            characters[role] = CharacterState(
                root=RootFrame(src.root.t.copy(), src.root.o.copy()),
                positions=src.positions.copy(),
                rotations=src.rotations.copy(),
                contacts=src.contacts.copy(),
            )
        else:
            pos, rot = rest_pose(bundle.skeleton)
            root = first_root if first_root is not None else RootFrame.identity()
            characters[role] = CharacterState(
                root=RootFrame(root.t.copy(), root.o.copy()),
                positions=pos, rotations=rot, contacts=np.zeros(4),
            )
        char = characters[role]
        char.past_roots.append(char.root)
        char.past_points.append(
            char.positions[list(bundle.skeleton.tracker_joints)].copy()
        )
    return RolloutState(characters=characters, mode=mode)


def _stack_frames(frames) -> RootFrame:
    return RootFrame(
        np.stack([f.t for f in frames]), np.stack([f.o for f in frames])
    )


def _padded(ring, n):
    """List of the ring's contents left-padded by repeating the oldest."""
    items = list(ring)
    if not items:
        raise ValueError("empty history ring")
    return [items[0]] * (n - len(items)) + items


def _mapping_window(state: RolloutState) -> tuple[np.ndarray, RootFrame]:
    """Mapping input vector from the measured ring, plus its anchor."""
    roots = _stack_frames(_padded(state.measured_roots, PAST))
    points = np.stack(_padded(state.measured_points, PAST))
    ref = roots.index(0)
    parts = {
        "past_roots": np.concatenate(
            [relative_frame(ref, roots).t, relative_frame(ref, roots).o], axis=-1
        ),
        "past_points": to_local(ref, points),
    }
    return mapping_input_layout().pack(parts), ref


def _reanchor(ref: RootFrame, F0: RootFrame, rel_roots: RootFrame,
              points_ref: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Re-express a predicted future branch (given in the mapping anchor
    frame `ref`) relative to a character's current root F0.

    Returns (future_roots (30,4) relative to F0,
             future_points (30,3,3) relative to each future frame's own root).
    """
    globals_ = ref.compose(rel_roots)  # (30,) global future roots
    rel = relative_frame(F0, globals_)
    vecs = np.concatenate([rel.t, rel.o], axis=-1)
    pts_global = to_global(ref, points_ref)
    pts_own = to_local(globals_, pts_global)
    return vecs, pts_own


def _own_past_window(char: CharacterState) -> tuple[np.ndarray, np.ndarray]:
    """The character's own past, as the no-future tracking variant wants
    it: roots relative to the current root, points own-root-relative."""
    roots = _stack_frames(_padded(char.past_roots, PAST))
    rel = relative_frame(char.root, roots)
    vecs = np.concatenate([rel.t, rel.o], axis=-1)
    return vecs, np.stack(_padded(char.past_points, PAST))


def _measured_future(stream: MarkerStream, tick: int) -> tuple[RootFrame, np.ndarray]:
    """Ground-truth future window (clamped at the stream end)."""
    idx = np.minimum(np.arange(tick + 1, tick + 1 + FUTURE), len(stream) - 1)
    return stream.roots.index(idx), stream.points[idx]


def _guard(char: CharacterState, decoded: dict, frame_rate: float) -> bool:
    """True if the first predicted frame is safe to adopt."""
    if not decoded["valid"][0]:
        return False
    rel0 = decoded["rel_roots"].index(0)
    new_root = char.root.compose(rel0)
    new_global = to_global(new_root, decoded["positions"][0])
    old_global = to_global(char.root, char.positions)
    speed = float(np.max(np.linalg.norm(new_global - old_global, axis=-1))) * frame_rate
    char.max_joint_speed = max(char.max_joint_speed, speed)
    if speed > MAX_JOINT_SPEED:
        return False
    if np.max(np.abs(new_global)) > MAX_POSITION or np.max(np.abs(new_root.t)) > MAX_POSITION:
        return False
    return True


def step(bundle: RolloutBundle, state: RolloutState,
         measured_root: RootFrame, measured_points: np.ndarray,
         measured_future: tuple | None = None) -> dict:
    """Advance one tick. Returns per-role CharacterState references.

    measured_future (only for tracking_only mode) is the ground-truth
    (roots (30,), global points (30,3,3)) window for the leader.
    """
    mode = state.mode
    state.measured_roots.append(measured_root)
    state.measured_points.append(np.asarray(measured_points, dtype=np.float64))

    branches = None
    ref = None
    if mode in ("duet", "ablate_direct_follower", "ablate_fullbody_condition"):
        if bundle.mapping is None:
            raise ValueError(f"mode {mode!r} needs a mapping model in the bundle")
        window, ref = _mapping_window(state)
        branches = map_infer(bundle.mapping, window)

    # Leader first: the fullbody ablation conditions the follower on the
    # leader's pose at the frame being predicted.
    for role in state.characters:
        char = state.characters[role]
        model: TrackingModel = bundle.trackers[role]
        x = {
            "pose_pos": char.positions,
            "pose_rot": char.rotations.reshape(-1, 9),
            "contacts": char.contacts,
        }
        if mode == "ablate_no_future":
            x["past_roots"], x["past_points"] = _own_past_window(char)
        elif mode == "tracking_only":
            if measured_future is None:
                raise ValueError("tracking_only mode needs a measured_future window")
            fut_roots, fut_points = measured_future
            rel = relative_frame(char.root, fut_roots)
            x["future_roots"] = np.concatenate([rel.t, rel.o], axis=-1)
            x["future_points"] = to_local(fut_roots, fut_points)
        else:
            branch = role
            if mode == "ablate_direct_follower" and role == "follower":
                branch = "leader"
            x["future_roots"], x["future_points"] = _reanchor(
                ref, char.root,
                branches[f"{branch}_roots"], branches[f"{branch}_points"],
            )
        if mode == "ablate_fullbody_condition":
            partner = state.characters["follower" if role == "leader" else "leader"]
            x["partner_pos"] = partner.positions
            x["partner_rot"] = partner.rotations.reshape(-1, 9)

        raw = track_infer(model, model.layout_x.pack(x))[0]
        decoded = decode_output(model, raw)

        if _guard(char, decoded, bundle.frame_rate):
            char.root = char.root.compose(decoded["rel_roots"].index(0)).normalized()
            char.positions = decoded["positions"][0]
            char.rotations = decoded["rotations"][0]
            char.contacts = decoded["contacts"][0]
        else:
            char.divergences += 1  # freeze: re-emit the previous pose

        char.past_roots.append(char.root)
        char.past_points.append(
            char.positions[list(bundle.skeleton.tracker_joints)].copy()
        )

    state.tick += 1
    return state.characters


def rollout(bundle: RolloutBundle, stream: MarkerStream, mode: str = "duet",
            init: dict | None = None, max_frames: int | None = None) -> dict:
    """Run a full offline session over a measured stream.

    Returns {"sequences": {role: MotionSequence}, "diagnostics": {...}}.
    """
    n = len(stream) if max_frames is None else min(max_frames, len(stream))
    state = init_state(bundle, mode, init=init, first_root=stream.roots.index(0))
    buffers = {
        role: {"t": [], "o": [], "pos": [], "rot": [], "con": []}
        for role in state.characters
    }
    t0 = time.perf_counter()
    for tick in range(n):
        fut = _measured_future(stream, tick) if mode == "tracking_only" else None
        chars = step(
            bundle, state, stream.roots.index(tick), stream.points[tick],
            measured_future=fut,
        )
        for role, char in chars.items():
            b = buffers[role]
            b["t"].append(char.root.t.copy())
            b["o"].append(char.root.o.copy())
            b["pos"].append(char.positions.copy())
            b["rot"].append(char.rotations.copy())
            b["con"].append(char.contacts.copy())
    wall = time.perf_counter() - t0

    sequences = {}
    for role, b in buffers.items():
        sequences[role] = MotionSequence(
            frame_rate=bundle.frame_rate,
            root=RootFrame(np.stack(b["t"]), np.stack(b["o"])),
            positions=np.stack(b["pos"]),
            rotations=np.stack(b["rot"]),
            contacts=np.stack(b["con"]),
            skeleton=bundle.skeleton,
            name=f"rollout-{role}",
        )
    diagnostics = {
        "mode": mode,
        "frames": n,
        "wall_time_s": wall,
        "ms_per_frame": 1000.0 * wall / max(n, 1),
        "divergences": {r: c.divergences for r, c in state.characters.items()},
        "max_joint_speed": {r: c.max_joint_speed for r, c in state.characters.items()},
    }
    return {"sequences": sequences, "diagnostics": diagnostics}
