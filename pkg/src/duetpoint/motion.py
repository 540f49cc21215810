"""Motion representation and floor-plane root-frame algebra.

Conventions (fixed across the project):
  * Y-up, floor = XZ plane.
  * Heading angle theta measured from +Z toward +X (a positive rotation
    about +Y). The heading is stored as a unit complex number
    o = (cos theta, sin theta).
  * A root frame F = (t, o) maps local (x, z) to global via
    world = t + R(theta) @ local, where R(theta) is the yaw rotation.
  * Pose data (joint positions / rotations) is root-relative; the y
    coordinate passes through root transforms unchanged.
"""

from __future__ import annotations

import hashlib
import warnings
from dataclasses import dataclass, field, replace

import numpy as np

# Norm of the floor-projected head forward axis below which the heading
# is considered singular (head looking straight up/down).
SINGULARITY_EPS = 0.2

# Foot contact thresholds: global speed and height above per-sequence floor.
CONTACT_MAX_SPEED = 0.15  # m/s
CONTACT_MAX_HEIGHT = 0.06  # m


def _rotate_planar(o: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Rotate planar vectors v=(x,z) by headings o=(cos,sin).

    Equivalent to applying R_y(theta) to (x, 0, z) and reading back (x, z).
    Shapes broadcast; the last axis of both is 2.
    """
    c, s = o[..., 0], o[..., 1]
    x, z = v[..., 0], v[..., 1]
    return np.stack([c * x + s * z, -s * x + c * z], axis=-1)


@dataclass
class RootFrame:
    """Planar rigid transform: 2-D translation + unit-complex heading.

    t and o may carry leading batch axes (a trajectory is a RootFrame
    whose arrays have shape (T, 2)).
    """

    t: np.ndarray  # (..., 2) translation on the floor plane (x, z)
    o: np.ndarray  # (..., 2) heading as (cos, sin)

    def __post_init__(self):
        self.t = np.asarray(self.t, dtype=np.float64)
        self.o = np.asarray(self.o, dtype=np.float64)

    @staticmethod
    def identity(shape: tuple = ()) -> "RootFrame":
        t = np.zeros(shape + (2,))
        o = np.zeros(shape + (2,))
        o[..., 0] = 1.0
        return RootFrame(t, o)

    @staticmethod
    def from_angle(t: np.ndarray, theta) -> "RootFrame":
        theta = np.asarray(theta, dtype=np.float64)
        o = np.stack([np.cos(theta), np.sin(theta)], axis=-1)
        return RootFrame(np.asarray(t, dtype=np.float64), o)

    @property
    def angle(self) -> np.ndarray:
        return np.arctan2(self.o[..., 1], self.o[..., 0])

    def normalized(self) -> "RootFrame":
        n = np.linalg.norm(self.o, axis=-1, keepdims=True)
        n = np.where(n < 1e-12, 1.0, n)
        return RootFrame(self.t.copy(), self.o / n)

    def compose(self, other: "RootFrame") -> "RootFrame":
        """Group composition: (self o other) applies other first."""
        c1, s1 = self.o[..., 0], self.o[..., 1]
        c2, s2 = other.o[..., 0], other.o[..., 1]
        o = np.stack([c1 * c2 - s1 * s2, c1 * s2 + s1 * c2], axis=-1)
        t = self.t + _rotate_planar(self.o, other.t)
        return RootFrame(t, o)

    def inverse(self) -> "RootFrame":
        o_inv = self.o * np.array([1.0, -1.0])
        t_inv = -_rotate_planar(o_inv, self.t)
        return RootFrame(t_inv, o_inv)

    def yaw_matrix(self) -> np.ndarray:
        """3x3 rotation about +Y for each heading; shape (..., 3, 3)."""
        c, s = self.o[..., 0], self.o[..., 1]
        m = np.zeros(self.o.shape[:-1] + (3, 3))
        m[..., 0, 0] = c
        m[..., 0, 2] = s
        m[..., 1, 1] = 1.0
        m[..., 2, 0] = -s
        m[..., 2, 2] = c
        return m

    def index(self, i) -> "RootFrame":
        return RootFrame(self.t[i], self.o[i])

    def __len__(self) -> int:
        return self.t.shape[0]


def to_global(F: RootFrame, local_points: np.ndarray) -> np.ndarray:
    """Apply F to root-relative points (..., N, 3); y is untouched.

    F's batch axes (if any) broadcast against the points' leading axes.
    """
    p = np.asarray(local_points, dtype=np.float64)
    xz = _rotate_planar(F.o[..., None, :], p[..., [0, 2]]) + F.t[..., None, :]
    out = p.copy()
    out[..., 0] = xz[..., 0]
    out[..., 2] = xz[..., 1]
    return out


def to_local(F: RootFrame, global_points: np.ndarray) -> np.ndarray:
    """Inverse of to_global."""
    return to_global(F.inverse(), global_points)


def rotations_to_global(F: RootFrame, local_rot: np.ndarray) -> np.ndarray:
    """Left-multiply root-relative rotation matrices (..., N, 3, 3) by yaw."""
    return F.yaw_matrix()[..., None, :, :] @ np.asarray(local_rot, dtype=np.float64)


def rotations_to_local(F: RootFrame, global_rot: np.ndarray) -> np.ndarray:
    return F.inverse().yaw_matrix()[..., None, :, :] @ np.asarray(
        global_rot, dtype=np.float64
    )


def relative_frame(F0: RootFrame, F: RootFrame) -> RootFrame:
    """F expressed in F0's coordinates: F0^{-1} o F."""
    return F0.inverse().compose(F)


def root_from_head(
    head_position: np.ndarray,
    head_rotation: np.ndarray,
    previous: RootFrame | None = None,
    forward_axis: int = 2,
    eps: float = SINGULARITY_EPS,
) -> RootFrame:
    """Extract a root frame by projecting the head onto the floor plane.

    The heading is the floor projection of the head's forward axis
    (a column of the rotation matrix, local +Z by default). When the
    projection is near-degenerate (head looking straight up or down)
    the previous heading is kept, or identity if there is none.
    """
    p = np.asarray(head_position, dtype=np.float64)
    R = np.asarray(head_rotation, dtype=np.float64)
    fwd = R[:, forward_axis]
    t = np.array([p[0], p[2]])
    proj = np.array([fwd[2], fwd[0]])  # (cos, sin) ~ (z, x) components
    n = np.linalg.norm(proj)
    if n < eps:
        o = previous.o.copy() if previous is not None else np.array([1.0, 0.0])
    else:
        o = proj / n
    return RootFrame(t, o)


def orthonormalize_rotation(m: np.ndarray) -> np.ndarray:
    """Project an arbitrary 3x3 (or (...,3,3) batch) onto SO(3).

    SVD-based: the nearest rotation in Frobenius norm, with det forced
    to +1. Numerically rank-deficient inputs fall back to identity with
    a warning.
    """
    m = np.asarray(m, dtype=np.float64)
    single = m.ndim == 2
    mb = m.reshape(-1, 3, 3)
    u, s, vt = np.linalg.svd(mb)
    bad = s[:, -1] < 1e-8
    det = np.linalg.det(u @ vt)
    d = np.ones_like(s)
    d[:, -1] = np.sign(det)
    d[d == 0] = 1.0
    r = (u * d[:, None, :]) @ vt
    if bad.any():
        warnings.warn("rank-deficient rotation input; replaced by identity")
        r[bad] = np.eye(3)
    return r[0] if single else r.reshape(m.shape)


@dataclass
class Skeleton:
    """Joint names, parent indices, rest offsets and named marker joints."""

    names: list
    parents: np.ndarray  # (J,) int, -1 for the root
    offsets: np.ndarray  # (J, 3) rest offsets from parent, meters
    head: int = 0
    left_hand: int = 0
    right_hand: int = 0
    heels_toes: tuple = (0, 0, 0, 0)  # (lheel, ltoe, rheel, rtoe)
    forward_axis: int = 2  # column of the head rotation used as forward

    def __post_init__(self):
        self.parents = np.asarray(self.parents, dtype=np.int64)
        self.offsets = np.asarray(self.offsets, dtype=np.float64)

    @property
    def n_joints(self) -> int:
        return len(self.names)

    @property
    def tracker_joints(self) -> list:
        return [self.head, self.left_hand, self.right_hand]

    def hash(self) -> str:
        h = hashlib.sha256()
        h.update("|".join(self.names).encode())
        h.update(self.parents.tobytes())
        h.update(np.round(self.offsets, 6).tobytes())
        return h.hexdigest()[:16]


@dataclass
class MotionSequence:
    """A motion clip: per-frame root frames plus root-relative pose data."""

    frame_rate: float
    root: RootFrame  # arrays of shape (T, 2)
    positions: np.ndarray  # (T, J, 3) root-relative
    rotations: np.ndarray  # (T, J, 3, 3) root-relative
    contacts: np.ndarray  # (T, 4) in {0,1}: lheel, ltoe, rheel, rtoe
    skeleton: Skeleton
    name: str = ""

    def __post_init__(self):
        self.positions = np.asarray(self.positions, dtype=np.float64)
        self.rotations = np.asarray(self.rotations, dtype=np.float64)
        self.contacts = np.asarray(self.contacts, dtype=np.float64)
        if len(self.root) != len(self.positions):
            raise ValueError("root trajectory and pose arrays disagree in length")

    def __len__(self) -> int:
        return self.positions.shape[0]

    def global_positions(self) -> np.ndarray:
        """(T, J, 3) joint positions in world coordinates."""
        return to_global(self.root, self.positions)

    def global_rotations(self) -> np.ndarray:
        return rotations_to_global(self.root, self.rotations)

    def three_point_local(self) -> np.ndarray:
        """(T, 3, 3) head/lhand/rhand positions, root-relative."""
        return self.positions[:, self.skeleton.tracker_joints]

    def three_point_global(self) -> np.ndarray:
        return self.global_positions()[:, self.skeleton.tracker_joints]

    def slice(self, start: int, stop: int) -> "MotionSequence":
        return replace(
            self,
            root=RootFrame(self.root.t[start:stop], self.root.o[start:stop]),
            positions=self.positions[start:stop],
            rotations=self.rotations[start:stop],
            contacts=self.contacts[start:stop],
        )

    def translated(self, offset_xz: np.ndarray) -> "MotionSequence":
        """Copy with the whole sequence rigidly translated on the floor."""
        return self.transformed(RootFrame(np.asarray(offset_xz, float), np.array([1.0, 0.0])))

    def transformed(self, G: RootFrame) -> "MotionSequence":
        """Copy with every root frame left-composed with the rigid motion G."""
        return replace(self, root=G.compose(self.root))


def label_foot_contacts(
    sequence: MotionSequence,
    heel_toe_joints=None,
    max_speed: float = CONTACT_MAX_SPEED,
    max_height: float = CONTACT_MAX_HEIGHT,
) -> np.ndarray:
    """Per-frame 4-bit contact labels from global speed and height.

    contact = 1 iff global joint speed < max_speed and joint height is
    within max_height of the per-sequence floor (5th percentile of heel
    heights). Velocity uses central differences (one-sided at the ends).
    """
    joints = heel_toe_joints if heel_toe_joints is not None else sequence.skeleton.heels_toes
    joints = list(joints)
    J = sequence.skeleton.n_joints
    if any(j < 0 or j >= J for j in joints):
        raise IndexError(f"heel/toe joint index out of range (J={J})")
    pos = sequence.global_positions()[:, joints]  # (T, 4, 3)
    rate = sequence.frame_rate
    vel = np.gradient(pos, 1.0 / rate, axis=0)
    speed = np.linalg.norm(vel, axis=-1)  # (T, 4)
    heel_heights = pos[:, [0, 2], 1]
    floor = np.percentile(heel_heights, 5.0)
    height = pos[..., 1]
    return ((speed < max_speed) & (height < floor + max_height)).astype(np.float64)


def resample(sequence: MotionSequence, target_rate: float) -> MotionSequence:
    """Decimate to target_rate (source must be an integer multiple).

    Contacts are recomputed at the new rate (velocity thresholds depend
    on the frame spacing).
    """
    ratio = sequence.frame_rate / target_rate
    stride = int(round(ratio))
    if abs(ratio - stride) > 1e-4 * max(stride, 1) or stride < 1:
        raise ValueError(
            f"source rate {sequence.frame_rate} is not an integer multiple of {target_rate}"
        )
    if stride == 1:
        if sequence.frame_rate != target_rate:
            sequence = replace(sequence, frame_rate=target_rate)
        return sequence
    out = replace(
        sequence,
        frame_rate=target_rate,
        root=RootFrame(sequence.root.t[::stride], sequence.root.o[::stride]),
        positions=sequence.positions[::stride],
        rotations=sequence.rotations[::stride],
        contacts=sequence.contacts[::stride],
    )
    out.contacts = label_foot_contacts(out)
    return out
