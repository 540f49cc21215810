"""BVH ingestion: hierarchy parsing, forward kinematics, export.

Parsed clips are converted to the project's root-relative representation
by extracting a floor-plane root frame from the designated head joint.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial.transform import Rotation

from .motion import (
    MotionSequence,
    RootFrame,
    Skeleton,
    label_foot_contacts,
    root_from_head,
    rotations_to_local,
    to_local,
)


class BVHError(ValueError):
    """Malformed BVH input; message carries the offending line number."""

    def __init__(self, line: int, message: str):
        super().__init__(f"line {line}: {message}")
        self.line = line


@dataclass
class BVHClip:
    """Raw parse result: hierarchy + per-frame global transforms."""

    names: list
    parents: np.ndarray
    offsets: np.ndarray  # (J, 3)
    frame_time: float
    global_positions: np.ndarray  # (T, J, 3)
    global_rotations: np.ndarray  # (T, J, 3, 3)

    @property
    def frame_rate(self) -> float:
        return 1.0 / self.frame_time


class _Tokens:
    def __init__(self, text: str):
        self.items = []  # (token, line)
        for ln, line in enumerate(text.splitlines(), start=1):
            for tok in line.split():
                self.items.append((tok, ln))
        self.pos = 0

    def peek(self):
        if self.pos >= len(self.items):
            raise BVHError(self.items[-1][1] if self.items else 0, "unexpected end of file")
        return self.items[self.pos]

    def next(self):
        tok = self.peek()
        self.pos += 1
        return tok

    def expect(self, want: str):
        tok, ln = self.next()
        if tok.upper() != want.upper():
            raise BVHError(ln, f"expected {want!r}, got {tok!r}")
        return ln

    def number(self) -> float:
        tok, ln = self.next()
        try:
            return float(tok)
        except ValueError:
            raise BVHError(ln, f"expected a number, got {tok!r}") from None

    @property
    def exhausted(self) -> bool:
        return self.pos >= len(self.items)


_AXES = {"XROTATION": "x", "YROTATION": "y", "ZROTATION": "z"}
_POS = {"XPOSITION": 0, "YPOSITION": 1, "ZPOSITION": 2}


def parse_bvh_clip(text: str, scale: float = 1.0) -> BVHClip:
    """Parse BVH text into global joint transforms via forward kinematics.

    scale converts the file's length unit to meters (e.g. 0.01 for cm).
    """
    tk = _Tokens(text)
    tk.expect("HIERARCHY")

    names, parents, offsets, channels = [], [], [], []

    def parse_joint(parent: int, is_root: bool):
        kw, ln = tk.next()
        kw = kw.upper()
        if is_root and kw != "ROOT":
            raise BVHError(ln, f"expected ROOT, got {kw!r}")
        name, _ = tk.next()
        idx = len(names)
        names.append(name)
        parents.append(parent)
        tk.expect("{")
        tk.expect("OFFSET")
        offsets.append([tk.number() * scale for _ in range(3)])
        tk.expect("CHANNELS")
        tok, ln = tk.next()
        try:
            n_ch = int(tok)
        except ValueError:
            raise BVHError(ln, f"bad channel count {tok!r}") from None
        chs = []
        for _ in range(n_ch):
            ch, ln = tk.next()
            cu = ch.upper()
            if cu not in _AXES and cu not in _POS:
                raise BVHError(ln, f"unknown channel {ch!r}")
            chs.append(cu)
        channels.append(chs)
        while True:
            tok, ln = tk.peek()
            tu = tok.upper()
            if tu == "JOINT":
                tk.next()
                # rewind one token: parse_joint expects to consume the keyword
                tk.pos -= 1
                parse_joint(idx, False)
            elif tu == "END":
                tk.next()
                site, ln2 = tk.next()
                if site.upper() != "SITE":
                    raise BVHError(ln2, f"expected 'Site' after 'End', got {site!r}")
                tk.expect("{")
                tk.expect("OFFSET")
                for _ in range(3):
                    tk.number()
                tk.expect("}")
            elif tu == "}":
                tk.next()
                return
            else:
                raise BVHError(ln, f"unexpected token {tok!r} in joint block")

    # parse_joint expects the ROOT/JOINT keyword still pending
    parse_joint(-1, True)

    tk.expect("MOTION")
    tk.expect("FRAMES:")
    tok, ln = tk.next()
    try:
        n_frames = int(tok)
    except ValueError:
        raise BVHError(ln, f"bad frame count {tok!r}") from None
    tk.expect("FRAME")
    tk.expect("TIME:")
    frame_time = tk.number()
    if frame_time <= 0:
        raise BVHError(ln, "frame time must be positive")

    n_ch_total = sum(len(c) for c in channels)
    values = np.empty((n_frames, n_ch_total))
    for f in range(n_frames):
        for c in range(n_ch_total):
            if tk.exhausted:
                raise BVHError(
                    tk.items[-1][1],
                    f"MOTION block truncated: expected {n_frames} frames "
                    f"({n_ch_total} values each), ran out in frame {f + 1}",
                )
            values[f, c] = tk.number()

    parents = np.asarray(parents)
    offsets = np.asarray(offsets)
    J = len(names)
    T = n_frames

    # Per-joint local transforms from channel data, then FK down the chain.
    local_rot = np.tile(np.eye(3), (T, J, 1, 1))
    local_pos = np.tile(offsets, (T, 1, 1))
    col = 0
    for j in range(J):
        order = ""
        angles = []
        for ch in channels[j]:
            if ch in _POS:
                local_pos[:, j, _POS[ch]] = offsets[j, _POS[ch]] + values[:, col] * scale
            else:
                order += _AXES[ch]
                angles.append(values[:, col])
            col += 1
        if order:
            eul = np.stack(angles, axis=-1)
            local_rot[:, j] = Rotation.from_euler(order, eul, degrees=True).as_matrix()

    gpos = np.empty((T, J, 3))
    grot = np.empty((T, J, 3, 3))
    for j in range(J):
        p = parents[j]
        if p < 0:
            gpos[:, j] = local_pos[:, j]
            grot[:, j] = local_rot[:, j]
        else:
            gpos[:, j] = gpos[:, p] + np.einsum("tab,tb->ta", grot[:, p], local_pos[:, j])
            grot[:, j] = grot[:, p] @ local_rot[:, j]

    return BVHClip(names, parents, offsets, frame_time, gpos, grot)


def _find_joint(names, wanted: str) -> int:
    for i, n in enumerate(names):
        if n == wanted:
            return i
    # fall back to case-insensitive substring match
    low = wanted.lower()
    hits = [i for i, n in enumerate(names) if low in n.lower()]
    if len(hits) == 1:
        return hits[0]
    raise KeyError(f"joint {wanted!r} not found (or ambiguous) in {names}")


def clip_to_sequence(
    clip: BVHClip,
    head: str,
    left_hand: str,
    right_hand: str,
    heels_toes: tuple,
    forward_axis: int = 2,
    name: str = "",
) -> MotionSequence:
    """Convert a parsed clip to the root-relative MotionSequence form."""
    skel = Skeleton(
        names=list(clip.names),
        parents=clip.parents.copy(),
        offsets=clip.offsets.copy(),
        head=_find_joint(clip.names, head),
        left_hand=_find_joint(clip.names, left_hand),
        right_hand=_find_joint(clip.names, right_hand),
        heels_toes=tuple(_find_joint(clip.names, j) for j in heels_toes),
        forward_axis=forward_axis,
    )
    T = clip.global_positions.shape[0]
    t = np.empty((T, 2))
    o = np.empty((T, 2))
    prev = None
    for i in range(T):
        F = root_from_head(
            clip.global_positions[i, skel.head],
            clip.global_rotations[i, skel.head],
            previous=prev,
            forward_axis=forward_axis,
        )
        t[i], o[i] = F.t, F.o
        prev = F
    root = RootFrame(t, o)
    positions = to_local(root, clip.global_positions)
    rotations = rotations_to_local(root, clip.global_rotations)
    seq = MotionSequence(
        frame_rate=clip.frame_rate,
        root=root,
        positions=positions,
        rotations=rotations,
        contacts=np.zeros((T, 4)),
        skeleton=skel,
        name=name,
    )
    seq.contacts = label_foot_contacts(seq)
    return seq


def parse_bvh(
    text: str,
    head: str,
    left_hand: str,
    right_hand: str,
    heels_toes: tuple,
    scale: float = 1.0,
    forward_axis: int = 2,
    name: str = "",
) -> MotionSequence:
    """Parse BVH text directly into a MotionSequence."""
    clip = parse_bvh_clip(text, scale=scale)
    return clip_to_sequence(clip, head, left_hand, right_hand, heels_toes, forward_axis, name)


def write_bvh(sequence: MotionSequence) -> str:
    """Serialize a MotionSequence as BVH with a flat (root-parented) rig.

    Every joint carries 3 position + 3 rotation channels so the
    root-relative representation exports losslessly without assuming a
    consistent kinematic chain in the predicted data.
    """
    skel = sequence.skeleton
    gpos = sequence.global_positions()
    grot = sequence.global_rotations()
    J = skel.n_joints
    lines = ["HIERARCHY"]

    children = [[] for _ in range(J)]
    roots = []
    for j in range(J):
        p = skel.parents[j]
        if p < 0:
            roots.append(j)
        else:
            children[p].append(j)

    def emit(j, depth, keyword):
        pad = "  " * depth
        lines.append(f"{pad}{keyword} {skel.names[j]}")
        lines.append(pad + "{")
        off = skel.offsets[j]
        lines.append(f"{pad}  OFFSET {off[0]:.6f} {off[1]:.6f} {off[2]:.6f}")
        lines.append(
            f"{pad}  CHANNELS 6 Xposition Yposition Zposition "
            "Zrotation Yrotation Xrotation"
        )
        if children[j]:
            for c in children[j]:
                emit(c, depth + 1, "JOINT")
        else:
            lines.append(pad + "  End Site")
            lines.append(pad + "  {")
            lines.append(f"{pad}    OFFSET 0.000000 0.100000 0.000000")
            lines.append(pad + "  }")
        lines.append(pad + "}")

    emit(roots[0], 0, "ROOT")

    # Channel data: positions are global minus the accumulated parent
    # position; rotations are parent-relative.
    T = len(sequence)
    lines.append("MOTION")
    lines.append(f"Frames: {T}")
    lines.append(f"Frame Time: {1.0 / sequence.frame_rate:.8f}")
    order = []

    def walk(j):
        order.append(j)
        for c in children[j]:
            walk(c)

    walk(roots[0])
    for i in range(T):
        row = []
        for j in order:
            p = skel.parents[j]
            if p < 0:
                pos = gpos[i, j]
                rot = grot[i, j]
            else:
                rel = gpos[i, j] - gpos[i, p]
                pos = grot[i, p].T @ rel
                rot = grot[i, p].T @ grot[i, j]
            pos = pos - skel.offsets[j]
            eul = Rotation.from_matrix(rot).as_euler("zyx", degrees=True)
            row.extend([pos[0], pos[1], pos[2], eul[0], eul[1], eul[2]])
        lines.append(" ".join(f"{v:.6f}" for v in row))
    return "\n".join(lines) + "\n"
