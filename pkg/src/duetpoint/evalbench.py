"""Evaluation bench: error metrics, latency measurement, experiment
driver and report rendering (delimited tables + figures).

All position errors are reported in centimeters in world space, averaged
over frames and joints, matching how motion-tracking quality is usually
quoted.
"""

from __future__ import annotations

import csv
import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .dataset import Dataset, synth_dataset  # noqa: E402
from .mapping import train_mapping  # noqa: E402
from .motion import MotionSequence  # noqa: E402
from .rollout import (  # noqa: E402
    MarkerStream,
    RolloutBundle,
    init_from_pair,
    init_state,
    step,
    stream_from_sequence,
    rollout,
)
from .tracking import train_tracking  # noqa: E402

LATENCY_WARMUP = 30  # frames discarded before timing statistics


def per_frame_error_cm(pred: MotionSequence, ref: MotionSequence,
                       joints=None) -> np.ndarray:
    """(T,) mean world-space joint distance per frame, in centimeters."""
    n = min(len(pred), len(ref))
    a = pred.global_positions()[:n]
    b = ref.global_positions()[:n]
    if joints is not None:
        a, b = a[:, list(joints)], b[:, list(joints)]
    return 100.0 * np.linalg.norm(a - b, axis=-1).mean(axis=1)


def full_body_error_cm(pred: MotionSequence, ref: MotionSequence) -> float:
    """Mean world-space error over all joints and frames, centimeters."""
    return float(per_frame_error_cm(pred, ref).mean())


def tracking_error_cm(pred: MotionSequence, ref: MotionSequence) -> float:
    """Mean world-space error over the head/hand markers, centimeters."""
    joints = ref.skeleton.tracker_joints
    return float(per_frame_error_cm(pred, ref, joints=joints).mean())


def latency_bench(bundle: RolloutBundle, stream: MarkerStream,
                  mode: str = "duet", init: dict | None = None,
                  frames: int | None = None,
                  warmup: int = LATENCY_WARMUP) -> dict:
    """Wall-clock per-tick latency of the full synthesis step.

    One tick updates every character, so per-character cost is the tick
    time divided by the character count. The first `warmup` ticks are
    discarded (cache/allocator warm-up).
    """
    n = len(stream) if frames is None else min(frames, len(stream))
    if n <= warmup:
        raise ValueError(f"need more than {warmup} frames to benchmark")
    state = init_state(bundle, mode, init=init, first_root=stream.roots.index(0))
    n_chars = len(state.characters)
    samples = []
    for tick in range(n):
        t0 = time.perf_counter()
        step(bundle, state, stream.roots.index(tick), stream.points[tick])
        dt = time.perf_counter() - t0
        if tick >= warmup:
            samples.append(1000.0 * dt / n_chars)
    arr = np.asarray(samples)
    return {
        "frames": len(samples),
        "characters": n_chars,
        "mean_ms": float(arr.mean()),
        "p95_ms": float(np.percentile(arr, 95.0)),
        "max_ms": float(arr.max()),
        "samples_ms": arr,
    }


def default_width_bundle(skeleton, frame_rate: float = 30.0,
                         seed: int = 0) -> RolloutBundle:
    """Random-weight models at the production widths (hidden 512, latent
    128x8). Latency is a pure function of the architecture, so the
    benchmark does not require trained weights."""
    from .dataset import (
        Stats,
        mapping_input_layout,
        mapping_output_layout,
        tracking_input_layout,
        tracking_output_layout,
    )
    from .mapping import MappingModel
    from .nn import TrainConfig, make_decoder_stack
    from .tracking import TrackingModel, build_networks

    cfg = TrainConfig(seed=seed)  # library defaults = production widths
    J = skeleton.n_joints

    def unit_stats(width):
        return Stats(np.zeros(width), np.ones(width))

    in_w = tracking_input_layout(J).width
    out_w = tracking_output_layout(J).width
    estimator, encoder, decoder = build_networks(in_w, out_w, cfg, False, "xy")
    tracker = TrackingModel(estimator, encoder, decoder,
                            unit_stats(in_w), unit_stats(out_w), cfg, J)

    m_in, m_out = mapping_input_layout().width, mapping_output_layout().width
    net = make_decoder_stack(m_in, m_out, cfg,
                             np.random.default_rng(seed), "mapping")
    mapping = MappingModel(net, unit_stats(m_in), unit_stats(m_out), cfg)
    return RolloutBundle(
        trackers={"leader": tracker, "follower": tracker},
        mapping=mapping, skeleton=skeleton, frame_rate=frame_rate,
    )


@dataclass
class EvalReport:
    """Rows of named metrics plus run metadata; renders to CSV and JSON."""

    rows: list = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    def add(self, **row):
        self.rows.append(row)

    def to_csv(self, path):
        if not self.rows:
            raise ValueError("report has no rows")
        keys = []
        for row in self.rows:
            keys += [k for k in row if k not in keys]
        with open(path, "w", newline="") as f:
            w = csv.DictWriter(f, fieldnames=keys)
            w.writeheader()
            w.writerows(self.rows)

    def to_json(self, path):
        with open(path, "w") as f:
            json.dump({"meta": self.meta, "rows": self.rows}, f, indent=2)

    @staticmethod
    def from_json(path) -> "EvalReport":
        with open(path) as f:
            blob = json.load(f)
        return EvalReport(rows=blob["rows"], meta=blob["meta"])


def fig_trajectories(sequences: dict, references: dict | None, path):
    """Top-down (x, z) root paths; references drawn dashed."""
    fig, ax = plt.subplots(figsize=(6, 6))
    for role, seq in sequences.items():
        ax.plot(seq.root.t[:, 0], seq.root.t[:, 1], label=f"{role} (synth)")
    if references:
        for role, seq in references.items():
            ax.plot(seq.root.t[:, 0], seq.root.t[:, 1], "--",
                    label=f"{role} (reference)", alpha=0.6)
    ax.set_xlabel("x [m]")
    ax.set_ylabel("z [m]")
    ax.set_aspect("equal")
    ax.legend(fontsize=8)
    ax.set_title("Root trajectories, top-down")
    fig.savefig(path, dpi=120, bbox_inches="tight")
    plt.close(fig)


def fig_loss_curves(history: list, path, title: str = "Training loss"):
    """history: list of dicts with a 'step' key and loss columns."""
    if not history:
        raise ValueError("empty training history")
    fig, ax = plt.subplots(figsize=(6, 4))
    steps = [h["step"] for h in history]
    for key in history[0]:
        if key in ("step", "lr"):
            continue
        ax.plot(steps, [h[key] for h in history], label=key)
    ax.set_yscale("log")
    ax.set_xlabel("step")
    ax.set_ylabel("loss (normalized MSE)")
    ax.legend(fontsize=8)
    ax.set_title(title)
    fig.savefig(path, dpi=120, bbox_inches="tight")
    plt.close(fig)


def fig_latency_hist(samples_ms: np.ndarray, path, budget_ms: float = 33.0):
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.hist(np.asarray(samples_ms), bins=40)
    ax.axvline(budget_ms, color="red", linestyle="--",
               label=f"budget {budget_ms:.0f} ms")
    ax.set_xlabel("per-character frame time [ms]")
    ax.set_ylabel("count")
    ax.legend(fontsize=8)
    ax.set_title("Synthesis latency")
    fig.savefig(path, dpi=120, bbox_inches="tight")
    plt.close(fig)


def fig_error_curve(errors_cm: dict, path):
    """Per-frame error traces, one line per role."""
    fig, ax = plt.subplots(figsize=(6, 4))
    for role, err in errors_cm.items():
        ax.plot(err, label=role)
    ax.set_xlabel("frame")
    ax.set_ylabel("mean joint error [cm]")
    ax.legend(fontsize=8)
    ax.set_title("World-space error over time")
    fig.savefig(path, dpi=120, bbox_inches="tight")
    plt.close(fig)


def _test_slices(dataset: Dataset) -> tuple[MotionSequence, MotionSequence]:
    pair = dataset.pairs[0]
    a = pair.train_end
    return pair.leader.slice(a, len(pair)), pair.follower.slice(a, len(pair))


def swap_roles(dataset: Dataset) -> Dataset:
    """Dataset with leader and follower exchanged in every pair."""
    from dataclasses import replace as dc_replace

    pairs = []
    for p in dataset.pairs:
        if p.follower is None:
            raise ValueError("cannot swap roles on an unpaired sequence")
        q = dc_replace(p, leader=p.follower, follower=p.leader)
        pairs.append(q)
    return Dataset(pairs, dataset.frame_rate)


def run_experiment(
    dataset: Dataset,
    tracking_cfg,
    mapping_cfg,
    mode: str = "duet",
    vanilla: bool = False,
    role_reversal: bool = False,
    max_frames: int | None = None,
    figures_dir=None,
    mapping_model=None,
) -> dict:
    """Train on the dataset's train split, roll out causally over the
    held-out tail, and score both characters against ground truth."""
    variant = {
        "duet": "duet",
        "tracking_only": "duet",
        "ablate_no_future": "no_future",
        "ablate_direct_follower": "direct_follower",
        "ablate_fullbody_condition": "fullbody_condition",
    }[mode]
    if role_reversal:
        dataset = swap_roles(dataset)

    # One tracker per role: the two characters move differently (e.g. the
    # follower travels backward), so a shared network trained on both roles
    # regresses their future root motion toward the role-average and the
    # synthesized characters stall during rollout.
    trackers, t_hist = {}, []
    for role in ("leader", "follower"):
        trackers[role], hist = train_tracking(
            dataset, tracking_cfg, variant=variant, vanilla=vanilla,
            roles=(role,),
        )
        t_hist = hist
    if mapping_model is not None:
        mapping, m_hist = mapping_model, [{"step": 0, "loss": float("nan")}]
    else:
        mapping, m_hist = train_mapping(dataset, mapping_cfg)
    bundle = RolloutBundle(
        trackers=trackers,
        mapping=mapping,
        skeleton=dataset.skeleton,
        frame_rate=dataset.frame_rate,
    )

    ref_leader, ref_follower = _test_slices(dataset)
    stream = stream_from_sequence(ref_leader)
    init = init_from_pair(ref_leader,
                          None if mode == "tracking_only" else ref_follower)
    result = rollout(bundle, stream, mode, init=init, max_frames=max_frames)

    seqs = result["sequences"]
    refs = {"leader": ref_leader, "follower": ref_follower}
    metrics = {"mode": mode, "vanilla": vanilla, "role_reversal": role_reversal}
    for role, seq in seqs.items():
        metrics[f"{role}_3pt_cm"] = tracking_error_cm(seq, refs[role])
        metrics[f"{role}_body_cm"] = full_body_error_cm(seq, refs[role])
    metrics.update(
        divergences=sum(result["diagnostics"]["divergences"].values()),
        frames=result["diagnostics"]["frames"],
        ms_per_frame=result["diagnostics"]["ms_per_frame"],
    )

    if figures_dir is not None:
        figures_dir = Path(figures_dir)
        figures_dir.mkdir(parents=True, exist_ok=True)
        fig_trajectories(seqs, {r: refs[r] for r in seqs}, figures_dir / "trajectories.png")
        fig_loss_curves(t_hist, figures_dir / "tracking_loss.png", "Tracking loss")
        fig_loss_curves(m_hist, figures_dir / "mapping_loss.png", "Mapping loss")
        fig_error_curve(
            {r: per_frame_error_cm(s, refs[r]) for r, s in seqs.items()},
            figures_dir / "error_over_time.png",
        )

    return {
        "bundle": bundle,
        "metrics": metrics,
        "rollout": result,
        "histories": {"tracking": t_hist, "mapping": m_hist},
        "references": refs,
    }


def ablation_sweep(seeds, tracking_cfg, mapping_cfg, duration: float = 30.0,
                   test_duration: float = 10.0, style: str = "circle",
                   max_frames: int | None = None) -> EvalReport:
    """Follower error of the full system vs its ablations over several
    seeded synthetic corpora. One report row per (seed, condition)."""
    from dataclasses import replace as dc_replace

    report = EvalReport(meta={
        "seeds": list(seeds), "duration": duration, "style": style,
    })
    conditions = [
        ("duet", dict(mode="duet")),
        ("ablate_no_future", dict(mode="ablate_no_future")),
        ("ablate_fullbody_condition", dict(mode="ablate_fullbody_condition")),
        ("vanilla", dict(mode="duet", vanilla=True)),
    ]
    for seed in seeds:
        ds = synth_dataset(duration, test_duration, seed=seed, style=style)
        cfg = dc_replace(tracking_cfg, seed=seed)
        mcfg = dc_replace(mapping_cfg, seed=seed)
        # The mapping network is condition-independent: train once per seed.
        mapping, _ = train_mapping(ds, mcfg)
        for name, kw in conditions:
            res = run_experiment(ds, cfg, mcfg, max_frames=max_frames,
                                 mapping_model=mapping, **kw)
            report.add(seed=seed, condition=name, **res["metrics"])
    return report


def condition_mean(report: EvalReport, condition: str, key: str) -> float:
    vals = [r[key] for r in report.rows if r["condition"] == condition]
    if not vals:
        raise KeyError(f"no rows for condition {condition!r}")
    return float(np.mean(vals))
