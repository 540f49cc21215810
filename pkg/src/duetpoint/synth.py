"""Synthetic paired-dance generator.

Desk-scale ground truth replacing a motion-capture corpus: the leader's
root follows a smooth procedural path with arm swing and speed-driven
leg cycling; the follower is a deterministic function of the leader
(mirrored pose at a fixed facing offset, optionally lagged by a few
frames). Everything is reproducible from the seed.
"""

from __future__ import annotations

import numpy as np
from scipy.spatial.transform import Rotation

from .motion import (
    MotionSequence,
    RootFrame,
    Skeleton,
    label_foot_contacts,
)

STYLES = ("circle", "figure-eight", "random-walk")

# Fixed relative transform from leader root to follower root: the
# follower stands COUPLE_DISTANCE in front of the leader, facing back.
COUPLE_DISTANCE = 0.9

_NAMES = [
    "Hips", "Spine", "Chest", "Neck", "Head",
    "LeftShoulder", "LeftElbow", "LeftHand",
    "RightShoulder", "RightElbow", "RightHand",
    "LeftHip", "LeftKnee", "LeftHeel", "LeftToe",
    "RightHip", "RightKnee", "RightHeel", "RightToe",
]
_PARENTS = [-1, 0, 1, 2, 3, 2, 5, 6, 2, 8, 9, 0, 11, 12, 13, 0, 15, 16, 17]

# Indices of left/right joint pairs, used when mirroring the pose.
_MIRROR = list(range(19))
for _l, _r in [(5, 8), (6, 9), (7, 10), (11, 15), (12, 16), (13, 17), (14, 18)]:
    _MIRROR[_l], _MIRROR[_r] = _r, _l
_MIRROR = np.array(_MIRROR)

_REST = np.array([
    [0.0, 0.95, 0.0],    # Hips (treated as offset from world in rest)
    [0.0, 0.20, 0.0],    # Spine
    [0.0, 0.20, 0.0],    # Chest
    [0.0, 0.15, 0.0],    # Neck
    [0.0, 0.15, 0.0],    # Head
    [-0.20, 0.10, 0.0],  # LeftShoulder (from Chest)
    [-0.05, -0.25, 0.0],  # LeftElbow
    [-0.05, -0.25, 0.0],  # LeftHand
    [0.20, 0.10, 0.0],   # RightShoulder
    [0.05, -0.25, 0.0],  # RightElbow
    [0.05, -0.25, 0.0],  # RightHand
    [-0.10, -0.05, 0.0],  # LeftHip
    [0.0, -0.45, 0.0],   # LeftKnee
    [0.0, -0.42, 0.0],   # LeftHeel
    [0.0, -0.03, 0.12],  # LeftToe
    [0.10, -0.05, 0.0],  # RightHip
    [0.0, -0.45, 0.0],   # RightKnee
    [0.0, -0.42, 0.0],   # RightHeel
    [0.10 - 0.10, -0.03, 0.12],  # RightToe
])


def synth_skeleton() -> Skeleton:
    return Skeleton(
        names=list(_NAMES),
        parents=np.array(_PARENTS),
        offsets=_REST.copy(),
        head=4,
        left_hand=7,
        right_hand=10,
        heels_toes=(13, 14, 17, 18),
        forward_axis=2,
    )


def follower_offset() -> RootFrame:
    """The fixed leader-root -> follower-root transform G."""
    return RootFrame.from_angle(np.array([0.0, COUPLE_DISTANCE]), np.pi)


def _leader_path(style: str, n: int, rate: float, rng) -> tuple[np.ndarray, np.ndarray]:
    """Root translations (n,2) and heading angles (n,) for the leader."""
    dt = 1.0 / rate
    tt = np.arange(n) * dt
    if style == "circle":
        radius, speed = 1.5, 0.6
        omega = speed / radius
        ang = omega * tt
        t = np.stack([radius * np.sin(ang), radius * np.cos(ang)], axis=-1)
        # tangent of (sin, cos)*r is (cos, -sin): heading angle from +Z toward +X
        theta = np.arctan2(np.cos(ang), -np.sin(ang))
    elif style == "figure-eight":
        a, period = 1.6, 14.0
        u = 2 * np.pi * tt / period
        t = np.stack([a * np.sin(u), a * np.sin(u) * np.cos(u)], axis=-1)
        dx = a * np.cos(u)
        dz = a * np.cos(2 * u)
        theta = np.arctan2(dx, dz)
    elif style == "random-walk":
        speed = 0.5
        # Smooth heading: low-pass filtered white noise on angular velocity.
        raw = rng.normal(size=n) * 1.5
        w = np.zeros(n)
        alpha = 0.05
        for i in range(1, n):
            w[i] = (1 - alpha) * w[i - 1] + alpha * raw[i]
        theta = np.cumsum(w) * dt
        heading = np.stack([np.sin(theta), np.cos(theta)], axis=-1)
        t = np.cumsum(heading * speed * dt, axis=0)
    else:
        raise ValueError(f"unknown style {style!r}; choose from {STYLES}")
    return t, theta


def _pose_local(phase: np.ndarray, speed: np.ndarray) -> np.ndarray:
    """Root-relative joint positions (T, 19, 3) from gait phase and speed.

    The root frame sits at the head's floor projection, so the head's
    local (x, z) is pinned to (0, 0) by construction.
    """
    T = phase.shape[0]
    amp = np.clip(speed / 0.5, 0.0, 1.0)  # motion amplitude scales with speed
    p = np.zeros((T, 19, 3))
    bob = 0.02 * amp * np.sin(2 * phase)
    sway = 0.03 * amp * np.sin(phase)

    p[:, 0] = np.stack([sway, 0.95 + bob, -0.05 * np.ones(T)], axis=-1)   # hips
    p[:, 1] = np.stack([sway * 0.7, 1.15 + bob, -0.04 * np.ones(T)], axis=-1)
    p[:, 2] = np.stack([sway * 0.4, 1.35 + bob, -0.02 * np.ones(T)], axis=-1)
    p[:, 3] = np.stack([np.zeros(T), 1.52 + bob * 0.5, np.zeros(T)], axis=-1)
    p[:, 4] = np.stack([np.zeros(T), 1.65 + bob * 0.5, np.zeros(T)], axis=-1)

    swing = 0.30 * amp
    for side, sgn, ph in [((5, 6, 7), -1.0, 0.0), ((8, 9, 10), 1.0, np.pi)]:
        sh, el, ha = side
        s = np.sin(phase + ph)
        p[:, sh] = np.stack([sgn * 0.20 * np.ones(T), 1.45 + bob, np.zeros(T)], axis=-1)
        p[:, el] = np.stack(
            [sgn * 0.26 * np.ones(T), 1.20 + bob, 0.5 * swing * s + 0.05], axis=-1
        )
        p[:, ha] = np.stack(
            [sgn * 0.30 * np.ones(T), 1.05 + bob + 0.05 * s, swing * s + 0.15], axis=-1
        )

    stride = 0.25 * amp
    lift = 0.08 * amp
    for side, sgn, ph in [((11, 12, 13, 14), -1.0, 0.0), ((15, 16, 17, 18), 1.0, np.pi)]:
        hip, knee, heel, toe = side
        s = np.sin(phase + ph)
        up = np.maximum(0.0, np.sin(phase + ph + np.pi / 2))
        p[:, hip] = np.stack([sgn * 0.10 * np.ones(T), 0.90 + bob, np.zeros(T)], axis=-1)
        p[:, knee] = np.stack(
            [sgn * 0.11 * np.ones(T), 0.50 + bob * 0.5, 0.5 * stride * s + 0.02], axis=-1
        )
        p[:, heel] = np.stack(
            [sgn * 0.12 * np.ones(T), 0.03 + lift * up, stride * s - 0.05], axis=-1
        )
        p[:, toe] = p[:, heel] + np.array([0.0, -0.01, 0.12])
        p[:, toe, 1] = np.maximum(p[:, toe, 1], 0.02)
    return p


def _pose_rotations(phase: np.ndarray, speed: np.ndarray) -> np.ndarray:
    """Root-relative joint rotations (T, 19, 3, 3): mild limb articulation."""
    T = phase.shape[0]
    amp = np.clip(speed / 0.5, 0.0, 1.0)
    rot = np.tile(np.eye(3), (T, 19, 1, 1))
    for joints, ph in [((6, 7), 0.0), ((9, 10), np.pi), ((12,), 0.0), ((16,), np.pi)]:
        ang = 0.5 * amp * np.sin(phase + ph)
        m = Rotation.from_euler("x", ang).as_matrix()
        for j in joints:
            rot[:, j] = m
    return rot


def _mirror_pose(pos: np.ndarray, rot: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Reflect a root-relative pose through the local YZ plane."""
    M = np.diag([-1.0, 1.0, 1.0])
    pos_m = pos[:, _MIRROR].copy()
    pos_m[..., 0] *= -1.0
    rot_m = M @ rot[:, _MIRROR] @ M
    return pos_m, rot_m


def synth_duet(
    duration: float = 10.0,
    seed: int = 0,
    style: str = "circle",
    lag: int = 0,
    frame_rate: float = 30.0,
    mirror: bool = True,
    name: str = "",
) -> tuple[MotionSequence, MotionSequence]:
    """Generate a paired (leader, follower) clip of the given duration.

    follower(t) is a fixed deterministic function of leader(t - lag):
    root composed with follower_offset(), pose mirrored (or copied when
    mirror=False). Both sequences have identical length and frame rate.
    """
    if duration < 3.0:
        raise ValueError("duration must be at least 3 seconds")
    rng = np.random.default_rng(seed)
    n = int(round(duration * frame_rate))
    ext = n + lag  # pre-roll so the lagged follower has sources

    t, theta = _leader_path(style, ext, frame_rate, rng)
    root_ext = RootFrame.from_angle(t, theta)

    dt = 1.0 / frame_rate
    step = np.linalg.norm(np.diff(t, axis=0, prepend=t[:1]), axis=-1)
    speed = step / dt
    if ext > 1:
        speed[0] = speed[1]
    # Gait phase advances with arclength: stationary root, frozen gait.
    phase = 2 * np.pi * 1.4 * np.cumsum(step)

    pos_ext = _pose_local(phase, speed)
    rot_ext = _pose_rotations(phase, speed)

    skel = synth_skeleton()
    G = follower_offset()

    leader = MotionSequence(
        frame_rate=frame_rate,
        root=RootFrame(t[lag:].copy(), root_ext.o[lag:].copy()),
        positions=pos_ext[lag:],
        rotations=rot_ext[lag:],
        contacts=np.zeros((n, 4)),
        skeleton=skel,
        name=name or f"{style}-s{seed}-leader",
    )
    leader.contacts = label_foot_contacts(leader)

    f_root = RootFrame(t[:n].copy(), root_ext.o[:n].copy()).compose(
        RootFrame(np.broadcast_to(G.t, (n, 2)), np.broadcast_to(G.o, (n, 2)))
    )
    if mirror:
        f_pos, f_rot = _mirror_pose(pos_ext[:n], rot_ext[:n])
    else:
        f_pos, f_rot = pos_ext[:n].copy(), rot_ext[:n].copy()
    follower = MotionSequence(
        frame_rate=frame_rate,
        root=f_root,
        positions=f_pos,
        rotations=f_rot,
        contacts=np.zeros((n, 4)),
        skeleton=skel,
        name=name or f"{style}-s{seed}-follower",
    )
    follower.contacts = label_foot_contacts(follower)
    return leader, follower
