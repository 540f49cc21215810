"""Training-window sampling, feature layouts, splits and normalization.

All features are expressed relative to a per-window anchor frame, so
they are invariant to rigid transforms of the source world:

  * tracking windows anchor at the current frame's root F0; the targets
    are the next second of motion in F0 coordinates;
  * mapping windows anchor at the first frame of the 0.5 s past window
    of the leader.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import bvh
from .config import ConfigError, get, read_config, require
from .container import load_container, save_container
from .motion import (
    MotionSequence,
    RootFrame,
    Skeleton,
    relative_frame,
    resample,
    to_local,
)
from .synth import synth_duet

FUTURE = 30  # 1 s of predicted motion at 30 Hz
PAST = 15  # 0.5 s of input history at 30 Hz

TRACKING_VARIANTS = ("duet", "no_future", "fullbody_condition", "direct_follower")


@dataclass(frozen=True)
class FeatureLayout:
    """Named, ordered blocks of a flattened feature vector."""

    fields: tuple  # of (name, shape tuple)

    @property
    def width(self) -> int:
        return sum(int(np.prod(s)) for _, s in self.fields)

    def slices(self) -> dict:
        out = {}
        at = 0
        for name, shape in self.fields:
            n = int(np.prod(shape))
            out[name] = slice(at, at + n)
            at += n
        return out

    def pack(self, parts: dict) -> np.ndarray:
        chunks = []
        for name, shape in self.fields:
            arr = np.asarray(parts[name], dtype=np.float64)
            if arr.shape != tuple(shape):
                raise ValueError(f"field {name}: shape {arr.shape} != {tuple(shape)}")
            chunks.append(arr.reshape(-1))
        return np.concatenate(chunks)

    def unpack(self, vec: np.ndarray) -> dict:
        vec = np.asarray(vec)
        if vec.shape[-1] != self.width:
            raise ValueError(f"vector width {vec.shape[-1]} != layout width {self.width}")
        sl = self.slices()
        return {
            name: vec[..., sl[name]].reshape(vec.shape[:-1] + tuple(shape))
            for name, shape in self.fields
        }

    def hash(self) -> str:
        blob = json.dumps([[n, list(s)] for n, s in self.fields]).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


def tracking_input_layout(n_joints: int, variant: str = "duet") -> FeatureLayout:
    if variant not in TRACKING_VARIANTS:
        raise ValueError(f"unknown tracking variant {variant!r}")
    fields = [
        ("pose_pos", (n_joints, 3)),
        ("pose_rot", (n_joints, 9)),
        ("contacts", (4,)),
    ]
    if variant == "no_future":
        fields += [("past_roots", (PAST, 4)), ("past_points", (PAST, 3, 3))]
    else:
        fields += [("future_roots", (FUTURE, 4)), ("future_points", (FUTURE, 3, 3))]
    if variant == "fullbody_condition":
        fields += [("partner_pos", (n_joints, 3)), ("partner_rot", (n_joints, 9))]
    return FeatureLayout(tuple(fields))


def tracking_output_layout(n_joints: int) -> FeatureLayout:
    return FeatureLayout(
        (
            ("future_roots", (FUTURE, 4)),
            ("future_rot", (FUTURE, n_joints, 9)),
            ("future_pos", (FUTURE, n_joints, 3)),
            ("future_contacts", (FUTURE, 4)),
        )
    )


def mapping_input_layout() -> FeatureLayout:
    return FeatureLayout((("past_roots", (PAST, 4)), ("past_points", (PAST, 3, 3))))


def mapping_output_layout() -> FeatureLayout:
    return FeatureLayout(
        (
            ("leader_roots", (FUTURE, 4)),
            ("leader_points", (FUTURE, 3, 3)),
            ("follower_roots", (FUTURE, 4)),
            ("follower_points", (FUTURE, 3, 3)),
        )
    )


def _frames_as_vec(F: RootFrame) -> np.ndarray:
    """(N, 4) rows of (t_x, t_z, re, im)."""
    return np.concatenate([F.t, F.o], axis=-1)


def vec_as_frames(v: np.ndarray, renormalize: bool = True) -> RootFrame:
    F = RootFrame(v[..., :2], v[..., 2:4])
    return F.normalized() if renormalize else F


def relative_root_vecs(F0: RootFrame, seq: MotionSequence, idx) -> np.ndarray:
    frames = RootFrame(seq.root.t[idx], seq.root.o[idx])
    return _frames_as_vec(relative_frame(F0, frames))


def sample_tracking_window(
    sequence: MotionSequence,
    frame_index: int,
    variant: str = "duet",
    partner: MotionSequence | None = None,
) -> tuple[dict, dict]:
    """Assemble (input, target) parts for one tracking window.

    The window covers frames [frame_index+1, frame_index+FUTURE], all
    relative to F0 = the root at frame_index. Tracker rotations are
    deliberately absent from the input.
    """
    i, T = frame_index, len(sequence)
    if i + FUTURE > T - 1:
        raise IndexError(f"frame {i}: needs {FUTURE} future frames, sequence has {T}")
    if variant == "no_future" and i < PAST - 1:
        raise IndexError(f"frame {i}: no_future variant needs {PAST - 1} past frames")
    if variant in ("fullbody_condition", "direct_follower") and partner is None:
        raise ValueError(f"variant {variant!r} requires a partner sequence")

    F0 = sequence.root.index(i)
    fut = np.arange(i + 1, i + 1 + FUTURE)
    x = {
        "pose_pos": sequence.positions[i],
        "pose_rot": sequence.rotations[i].reshape(-1, 9),
        "contacts": sequence.contacts[i],
    }
    if variant == "no_future":
        past = np.arange(i - PAST + 1, i + 1)
        x["past_roots"] = relative_root_vecs(F0, sequence, past)
        x["past_points"] = sequence.three_point_local()[past]
    elif variant == "direct_follower":
        x["future_roots"] = relative_root_vecs(F0, partner, fut)
        x["future_points"] = partner.three_point_local()[fut]
    else:
        x["future_roots"] = relative_root_vecs(F0, sequence, fut)
        x["future_points"] = sequence.three_point_local()[fut]
    if variant == "fullbody_condition":
        x["partner_pos"] = partner.positions[i + 1]
        x["partner_rot"] = partner.rotations[i + 1].reshape(-1, 9)

    y = {
        "future_roots": relative_root_vecs(F0, sequence, fut),
        "future_rot": sequence.rotations[fut].reshape(FUTURE, -1, 9),
        "future_pos": sequence.positions[fut],
        "future_contacts": sequence.contacts[fut],
    }
    return x, y


def sample_mapping_window(
    leader: MotionSequence, follower: MotionSequence, frame_index: int
) -> tuple[dict, dict]:
    """Assemble one mapping window anchored at the leader's root at the
    start of the 0.5 s past window."""
    i = frame_index
    T = len(leader)
    if follower is None or len(follower) != T:
        raise ValueError("mapping windows require paired sequences of equal length")
    if i < PAST - 1:
        raise IndexError(f"frame {i}: needs {PAST - 1} past frames")
    if i + FUTURE > T - 1:
        raise IndexError(f"frame {i}: needs {FUTURE} future frames, sequence has {T}")
    ref = leader.root.index(i - PAST + 1)
    past = np.arange(i - PAST + 1, i + 1)
    fut = np.arange(i + 1, i + 1 + FUTURE)
    lpts = leader.three_point_global()
    fpts = follower.three_point_global()
    x = {
        "past_roots": relative_root_vecs(ref, leader, past),
        "past_points": to_local(ref, lpts[past]),
    }
    y = {
        "leader_roots": relative_root_vecs(ref, leader, fut),
        "leader_points": to_local(ref, lpts[fut]),
        "follower_roots": relative_root_vecs(ref, follower, fut),
        "follower_points": to_local(ref, fpts[fut]),
    }
    return x, y


@dataclass
class SequencePair:
    leader: MotionSequence
    follower: MotionSequence | None = None
    train_end: int = 0  # frames [0, train_end) are training data

    def __len__(self):
        return len(self.leader)


@dataclass
class Stats:
    """Per-dimension z-score statistics with a floored std."""

    mean: np.ndarray
    std: np.ndarray

    FLOOR = 1e-4

    @staticmethod
    def fit(X: np.ndarray) -> "Stats":
        if X.shape[0] < 2:
            raise ValueError("need at least 2 samples to compute stats")
        return Stats(X.mean(axis=0), np.maximum(X.std(axis=0), Stats.FLOOR))

    def normalize(self, x: np.ndarray) -> np.ndarray:
        return (x - self.mean) / self.std

    def denormalize(self, z: np.ndarray) -> np.ndarray:
        return z * self.std + self.mean

    def hash(self) -> str:
        h = hashlib.sha256()
        h.update(np.round(self.mean, 9).tobytes())
        h.update(np.round(self.std, 9).tobytes())
        return h.hexdigest()[:16]


@dataclass
class Dataset:
    pairs: list
    frame_rate: float = 30.0

    @property
    def skeleton(self):
        return self.pairs[0].leader.skeleton

    def sequences(self, role: str = "both") -> list:
        out = []
        for p in self.pairs:
            if role in ("both", "leader"):
                out.append(p.leader)
            if role in ("both", "follower") and p.follower is not None:
                out.append(p.follower)
        return out


def split_dataset(dataset: Dataset, ratio: float = 0.8, seed: int = 0) -> Dataset:
    """Assign a contiguous tail of each pair as held-out test frames.

    Deterministic for a given seed; sequences shorter than one full
    training window are excluded with a warning.
    """
    import warnings

    min_len = PAST + FUTURE + 2
    kept = []
    for p in dataset.pairs:
        T = len(p)
        if T < min_len:
            warnings.warn(f"sequence {p.leader.name!r}: too short ({T} frames), excluded")
            continue
        p.train_end = int(np.floor(T * ratio))
        kept.append(p)
    if not kept:
        raise ValueError("no usable sequences after split")
    return Dataset(kept, dataset.frame_rate)


def split_frame_counts(dataset: Dataset) -> tuple[int, int]:
    train = sum(p.train_end for p in dataset.pairs)
    test = sum(len(p) - p.train_end for p in dataset.pairs)
    return train, test


def tracking_window_indices(pair: SequencePair, part: str, variant: str = "duet"):
    """Valid window anchors that never straddle the train/test boundary."""
    lo = PAST - 1 if variant == "no_future" else 0
    if part == "train":
        hi = pair.train_end - FUTURE - 1
        return range(lo, hi + 1) if hi >= lo else range(0)
    lo = max(lo, pair.train_end)
    hi = len(pair) - FUTURE - 1
    return range(lo, hi + 1) if hi >= lo else range(0)


def mapping_window_indices(pair: SequencePair, part: str):
    if part == "train":
        lo, hi = PAST - 1, pair.train_end - FUTURE - 1
    else:
        lo, hi = max(PAST - 1, pair.train_end + PAST - 1), len(pair) - FUTURE - 1
    return range(lo, hi + 1) if hi >= lo else range(0)


def assemble_tracking(
    dataset: Dataset,
    part: str,
    variant: str = "duet",
    roles: tuple = ("leader", "follower"),
) -> tuple[np.ndarray, np.ndarray]:
    """Stack all tracking windows into (X, Y) matrices."""
    skel = dataset.skeleton
    lx = tracking_input_layout(skel.n_joints, variant)
    ly = tracking_output_layout(skel.n_joints)
    xs, ys = [], []
    for pair in dataset.pairs:
        combos = []
        if "leader" in roles:
            combos.append((pair.leader, pair.follower))
        if "follower" in roles and pair.follower is not None:
            combos.append((pair.follower, pair.leader))
        for seq, partner in combos:
            for i in tracking_window_indices(pair, part, variant):
                x, y = sample_tracking_window(seq, i, variant, partner)
                xs.append(lx.pack(x))
                ys.append(ly.pack(y))
    if not xs:
        raise ValueError(f"no {part} tracking windows available")
    return np.stack(xs), np.stack(ys)


def assemble_mapping(dataset: Dataset, part: str) -> tuple[np.ndarray, np.ndarray]:
    lx, ly = mapping_input_layout(), mapping_output_layout()
    xs, ys = [], []
    for pair in dataset.pairs:
        if pair.follower is None:
            continue
        for i in mapping_window_indices(pair, part):
            x, y = sample_mapping_window(pair.leader, pair.follower, i)
            xs.append(lx.pack(x))
            ys.append(ly.pack(y))
    if not xs:
        raise ValueError(f"no {part} mapping windows available")
    return np.stack(xs), np.stack(ys)


def synth_dataset(
    duration: float = 60.0,
    test_duration: float = 15.0,
    seed: int = 0,
    style: str = "circle",
    lag: int = 0,
    mirror: bool = True,
) -> Dataset:
    """One synthetic pair with the tail test_duration held out."""
    total = duration + test_duration
    leader, follower = synth_duet(total, seed=seed, style=style, lag=lag, mirror=mirror)
    pair = SequencePair(leader, follower)
    pair.train_end = int(round(duration * leader.frame_rate))
    return Dataset([pair], leader.frame_rate)


def load_manifest(path) -> Dataset:
    """Build a dataset from a plain-text manifest of BVH files.

    Keys: head / left_hand / right_hand / heels_toes (comma separated),
    scale, target_rate, and numbered entries `seq.N.leader` with an
    optional `seq.N.follower`.
    """
    path = Path(path)
    cfg = read_config(path)
    head = require(cfg, "head")
    lh = require(cfg, "left_hand")
    rh = require(cfg, "right_hand")
    ht = tuple(s.strip() for s in require(cfg, "heels_toes").split(","))
    if len(ht) != 4:
        raise ConfigError("heels_toes must list 4 joint names")
    scale = get(cfg, "scale", 1.0)
    target = get(cfg, "target_rate", 30.0)
    base = path.parent

    def load(rel, name):
        seq = bvh.parse_bvh(
            (base / rel).read_text(), head, lh, rh, ht, scale=scale, name=name
        )
        return resample(seq, target)

    pairs = []
    n = 0
    while f"seq.{n}.leader" in cfg:
        leader = load(cfg[f"seq.{n}.leader"], f"seq{n}-leader")
        follower = None
        if f"seq.{n}.follower" in cfg:
            follower = load(cfg[f"seq.{n}.follower"], f"seq{n}-follower")
            if len(follower) != len(leader):
                raise ConfigError(f"seq.{n}: leader/follower lengths differ")
        pairs.append(SequencePair(leader, follower))
        n += 1
    if not pairs:
        raise ConfigError("manifest lists no sequences (seq.0.leader missing)")
    return Dataset(pairs, target)


def save_dataset(path, dataset: Dataset):
    """Persist full sequences (not windows) for later training/eval."""
    skel = dataset.skeleton
    tensors = {
        "skeleton.parents": skel.parents,
        "skeleton.offsets": skel.offsets,
    }
    meta = {
        "kind": "dataset",
        "frame_rate": dataset.frame_rate,
        "skeleton": {
            "names": list(skel.names),
            "head": skel.head,
            "left_hand": skel.left_hand,
            "right_hand": skel.right_hand,
            "heels_toes": list(skel.heels_toes),
            "forward_axis": skel.forward_axis,
        },
        "pairs": [],
    }
    for i, p in enumerate(dataset.pairs):
        roles = [("leader", p.leader)]
        if p.follower is not None:
            roles.append(("follower", p.follower))
        meta["pairs"].append({
            "train_end": p.train_end,
            "has_follower": p.follower is not None,
            "names": {role: seq.name for role, seq in roles},
        })
        for role, seq in roles:
            pre = f"pair{i}.{role}."
            tensors[pre + "root_t"] = seq.root.t
            tensors[pre + "root_o"] = seq.root.o
            tensors[pre + "positions"] = seq.positions
            tensors[pre + "rotations"] = seq.rotations
            tensors[pre + "contacts"] = seq.contacts
    save_container(path, tensors, meta=meta, dtype="f8")


def load_dataset(path) -> Dataset:
    tensors, meta = load_container(path)
    if meta.get("kind") != "dataset":
        raise ValueError(f"{path}: not a dataset file")
    sk = meta["skeleton"]
    skeleton = Skeleton(
        names=sk["names"],
        parents=tensors["skeleton.parents"],
        offsets=tensors["skeleton.offsets"],
        head=sk["head"],
        left_hand=sk["left_hand"],
        right_hand=sk["right_hand"],
        heels_toes=tuple(sk["heels_toes"]),
        forward_axis=sk["forward_axis"],
    )
    pairs = []
    for i, info in enumerate(meta["pairs"]):
        def seq(role):
            pre = f"pair{i}.{role}."
            return MotionSequence(
                frame_rate=meta["frame_rate"],
                root=RootFrame(tensors[pre + "root_t"], tensors[pre + "root_o"]),
                positions=tensors[pre + "positions"],
                rotations=tensors[pre + "rotations"],
                contacts=tensors[pre + "contacts"],
                skeleton=skeleton,
                name=info["names"].get(role, ""),
            )
        pair = SequencePair(
            seq("leader"), seq("follower") if info["has_follower"] else None
        )
        pair.train_end = info["train_end"]
        pairs.append(pair)
    return Dataset(pairs, meta["frame_rate"])


def save_sample_cache(path, X, Y, stats_x: Stats, stats_y: Stats, meta: dict):
    save_container(
        path,
        {
            "X": X,
            "Y": Y,
            "mean_x": stats_x.mean,
            "std_x": stats_x.std,
            "mean_y": stats_y.mean,
            "std_y": stats_y.std,
        },
        meta=meta,
        dtype="f4",
    )


def load_sample_cache(path):
    tensors, meta = load_container(path)
    return (
        tensors["X"],
        tensors["Y"],
        Stats(tensors["mean_x"], tensors["std_x"]),
        Stats(tensors["mean_y"], tensors["std_y"]),
        meta,
    )
