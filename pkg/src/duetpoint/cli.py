"""Command-line interface: data preparation, training, offline rollout,
evaluation reports (tables + figures), benchmarking, export and the live
WebSocket service."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .bvh import write_bvh
from .config import ConfigError, read_config
from .dataset import (
    Dataset,
    load_dataset,
    load_manifest,
    save_dataset,
    split_dataset,
    split_frame_counts,
    synth_dataset,
)
from .mapping import load_mapping, save_mapping, train_mapping
from .nn import TrainConfig
from .rollout import (
    ROLLOUT_MODES,
    RolloutBundle,
    init_from_pair,
    rollout,
    stream_from_sequence,
)
from .tracking import load_tracking, save_tracking, train_tracking

TRAIN_KEYS = {
    "learning_rate": float,
    "total_steps": int,
    "batch_size": int,
    "seed": int,
    "hidden": int,
    "latent_channels": int,
    "latent_classes": int,
    "dropout": float,
    "noise_sigma": float,
    "clip_norm": float,
}


def train_config(path=None, seed=None) -> TrainConfig:
    """TrainConfig from a key-value file; unknown keys are named errors."""
    kwargs = {}
    if path is not None:
        for key, value in read_config(path).items():
            if key not in TRAIN_KEYS:
                raise ConfigError(
                    f"unknown training config key {key!r} "
                    f"(expected one of: {', '.join(sorted(TRAIN_KEYS))})"
                )
            try:
                kwargs[key] = TRAIN_KEYS[key](value)
            except ValueError:
                raise ConfigError(f"config key {key!r}: cannot parse {value!r}")
    if seed is not None:
        kwargs["seed"] = seed
    return TrainConfig(**kwargs)


def _load_bundle(args) -> tuple[Dataset, RolloutBundle]:
    dataset = load_dataset(args.data)
    tracker = load_tracking(args.tracker)
    follower = (load_tracking(args.tracker_follower)
                if getattr(args, "tracker_follower", None) else tracker)
    mapping = load_mapping(args.mapping) if args.mapping else None
    bundle = RolloutBundle(
        trackers={"leader": tracker, "follower": follower},
        mapping=mapping,
        skeleton=dataset.skeleton,
        frame_rate=dataset.frame_rate,
    )
    return dataset, bundle


def cmd_synth_duet(args) -> int:
    ds = synth_dataset(
        duration=args.duration, test_duration=args.test_duration,
        seed=args.seed, style=args.style, lag=args.lag,
        mirror=not args.no_mirror,
    )
    save_dataset(args.out, ds)
    train, test = split_frame_counts(ds)
    print(f"wrote {args.out}: style={args.style} seed={args.seed} "
          f"train_frames={train} test_frames={test}")
    return 0


def cmd_prepare_data(args) -> int:
    ds = load_manifest(args.manifest)
    ds = split_dataset(ds, ratio=args.ratio)
    save_dataset(args.out, ds)
    train, test = split_frame_counts(ds)
    print(f"wrote {args.out}: pairs={len(ds.pairs)} "
          f"train_frames={train} test_frames={test}")
    return 0


def cmd_train_tracking(args) -> int:
    ds = load_dataset(args.data)
    cfg = train_config(args.config, seed=args.seed)
    roles = tuple(r.strip() for r in args.roles.split(","))
    model, hist = train_tracking(
        ds, cfg, variant=args.variant, vanilla=args.vanilla, roles=roles,
        log_path=args.log,
    )
    save_tracking(model, args.out)
    last = hist[-1]
    print(f"wrote {args.out}: variant={args.variant} vanilla={args.vanilla} "
          f"steps={cfg.total_steps} rec={last['rec']:.6f} "
          f"matching={last['matching']:.6f}")
    return 0


def cmd_train_mapping(args) -> int:
    ds = load_dataset(args.data)
    cfg = train_config(args.config, seed=args.seed)
    model, hist = train_mapping(ds, cfg, log_path=args.log)
    save_mapping(model, args.out)
    print(f"wrote {args.out}: steps={cfg.total_steps} "
          f"loss={hist[-1]['loss']:.6f}")
    return 0


def cmd_rollout(args) -> int:
    dataset, bundle = _load_bundle(args)
    pair = dataset.pairs[args.pair]
    start = pair.train_end if args.from_test else 0
    leader = pair.leader.slice(start, len(pair))
    follower = pair.follower.slice(start, len(pair)) if pair.follower else None
    stream = stream_from_sequence(leader)
    init = init_from_pair(
        leader, None if args.mode == "tracking_only" else follower
    )
    result = rollout(bundle, stream, args.mode, init=init,
                     max_frames=args.frames)

    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    for role, seq in result["sequences"].items():
        (out_dir / f"{role}.bvh").write_text(write_bvh(seq))
    with open(out_dir / "diagnostics.json", "w") as f:
        json.dump(result["diagnostics"], f, indent=2)
    d = result["diagnostics"]
    print(f"wrote {out_dir}: frames={d['frames']} "
          f"divergences={sum(d['divergences'].values())} "
          f"ms_per_frame={d['ms_per_frame']:.2f}")
    return 0


def cmd_eval(args) -> int:
    from .evalbench import EvalReport, ablation_sweep, run_experiment

    report_dir = Path(args.report_dir)
    report_dir.mkdir(parents=True, exist_ok=True)
    tcfg = train_config(args.tracking_config, seed=args.seed)
    mcfg = train_config(args.mapping_config, seed=args.seed)

    if args.ablation:
        seeds = [int(s) for s in args.seeds.split(",")]
        report = ablation_sweep(
            seeds, tcfg, mcfg, duration=args.duration,
            test_duration=args.test_duration, style=args.style,
            max_frames=args.frames,
        )
    else:
        ds = load_dataset(args.data) if args.data else synth_dataset(
            args.duration, args.test_duration, seed=args.seed, style=args.style
        )
        res = run_experiment(
            ds, tcfg, mcfg, mode=args.mode, vanilla=args.vanilla,
            role_reversal=args.role_reversal, max_frames=args.frames,
            figures_dir=report_dir,
        )
        report = EvalReport(meta={"mode": args.mode, "seed": args.seed})
        report.add(**res["metrics"])

    report.to_csv(report_dir / "metrics.csv")
    report.to_json(report_dir / "metrics.json")
    for row in report.rows:
        print(",".join(f"{k}={v}" for k, v in row.items()))
    print(f"wrote {report_dir}/metrics.csv and figures")
    return 0


def cmd_bench(args) -> int:
    from .evalbench import fig_latency_hist, latency_bench

    dataset, bundle = _load_bundle(args)
    pair = dataset.pairs[args.pair]
    stream = stream_from_sequence(pair.leader)
    init = init_from_pair(pair.leader, pair.follower)
    out = latency_bench(bundle, stream, init=init, frames=args.frames,
                        warmup=args.warmup)
    print(f"frames={out['frames']} characters={out['characters']} "
          f"mean_ms={out['mean_ms']:.2f} p95_ms={out['p95_ms']:.2f} "
          f"max_ms={out['max_ms']:.2f}")
    if args.report_dir:
        report_dir = Path(args.report_dir)
        report_dir.mkdir(parents=True, exist_ok=True)
        np.savetxt(report_dir / "latency_ms.csv", out["samples_ms"],
                   header="per_character_ms", comments="")
        fig_latency_hist(out["samples_ms"], report_dir / "latency.png")
        print(f"wrote {report_dir}/latency_ms.csv and latency.png")
    return 0


def cmd_export(args) -> int:
    dataset = load_dataset(args.data)
    pair = dataset.pairs[args.pair]
    seq = pair.leader if args.role == "leader" else pair.follower
    if seq is None:
        raise ConfigError(f"pair {args.pair} has no follower sequence")
    if args.format == "bvh":
        Path(args.out).write_text(write_bvh(seq))
    else:
        skel = seq.skeleton
        gpos = seq.global_positions()
        cols = ["frame", "root_tx", "root_tz", "root_re", "root_im"]
        for n in skel.names:
            cols += [f"{n}_x", f"{n}_y", f"{n}_z"]
        lines = [",".join(cols)]
        for t in range(len(seq)):
            row = [str(t), *(repr(float(v)) for v in seq.root.t[t]),
                   *(repr(float(v)) for v in seq.root.o[t]),
                   *(repr(float(v)) for v in gpos[t].reshape(-1))]
            lines.append(",".join(row))
        Path(args.out).write_text("\n".join(lines) + "\n")
    print(f"wrote {args.out}: {args.role} of pair {args.pair}, "
          f"{len(seq)} frames as {args.format}")
    return 0


def cmd_serve(args) -> int:
    import uvicorn

    from .server import SessionEngine, create_app

    dataset, bundle = _load_bundle(args)
    app = create_app(lambda: SessionEngine(bundle, mode=args.mode))
    print(f"serving on {args.host}:{args.port} (mode={args.mode})")
    uvicorn.run(app, host=args.host, port=args.port, log_level="warning")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="duetpoint",
        description="Real-time two-character motion synthesis from "
                    "three-point input.",
    )
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth-duet", help="generate a synthetic duet dataset")
    s.add_argument("--out", required=True)
    s.add_argument("--duration", type=float, default=60.0)
    s.add_argument("--test-duration", type=float, default=15.0)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--style", default="circle",
                   choices=["circle", "figure-eight", "random-walk"])
    s.add_argument("--lag", type=int, default=0)
    s.add_argument("--no-mirror", action="store_true")
    s.set_defaults(func=cmd_synth_duet)

    s = sub.add_parser("prepare-data", help="build a dataset from a BVH manifest")
    s.add_argument("--manifest", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--ratio", type=float, default=0.8)
    s.set_defaults(func=cmd_prepare_data)

    s = sub.add_parser("train-tracking", help="train the tracking network")
    s.add_argument("--data", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--config", default=None)
    s.add_argument("--seed", type=int, default=None)
    s.add_argument("--variant", default="duet",
                   choices=["duet", "no_future", "fullbody_condition",
                            "direct_follower"])
    s.add_argument("--vanilla", action="store_true",
                   help="plain MLP ablation (no latent matching)")
    s.add_argument("--roles", default="leader,follower")
    s.add_argument("--log", default=None, help="CSV training-history path")
    s.set_defaults(func=cmd_train_tracking)

    s = sub.add_parser("train-mapping", help="train the duet mapping network")
    s.add_argument("--data", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--config", default=None)
    s.add_argument("--seed", type=int, default=None)
    s.add_argument("--log", default=None)
    s.set_defaults(func=cmd_train_mapping)

    s = sub.add_parser("rollout", help="offline causal synthesis over a dataset")
    s.add_argument("--data", required=True)
    s.add_argument("--tracker", required=True)
    s.add_argument("--tracker-follower", default=None,
                   help="separate tracker for the follower (defaults to --tracker)")
    s.add_argument("--mapping", default=None)
    s.add_argument("--mode", default="duet", choices=list(ROLLOUT_MODES))
    s.add_argument("--pair", type=int, default=0)
    s.add_argument("--frames", type=int, default=None)
    s.add_argument("--from-test", action="store_true",
                   help="start at the train/test boundary")
    s.add_argument("--out-dir", required=True)
    s.set_defaults(func=cmd_rollout)

    s = sub.add_parser("eval", help="train + roll out + score; writes a report")
    s.add_argument("--data", default=None,
                   help="dataset file (default: synthesize one)")
    s.add_argument("--report-dir", required=True)
    s.add_argument("--tracking-config", default=None)
    s.add_argument("--mapping-config", default=None)
    s.add_argument("--mode", default="duet", choices=list(ROLLOUT_MODES))
    s.add_argument("--vanilla", action="store_true")
    s.add_argument("--role-reversal", action="store_true")
    s.add_argument("--ablation", action="store_true",
                   help="sweep full system vs ablations over --seeds")
    s.add_argument("--seeds", default="0,1,2,3,4")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--duration", type=float, default=30.0)
    s.add_argument("--test-duration", type=float, default=10.0)
    s.add_argument("--style", default="circle")
    s.add_argument("--frames", type=int, default=None)
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("bench", help="per-frame synthesis latency")
    s.add_argument("--data", required=True)
    s.add_argument("--tracker", required=True)
    s.add_argument("--tracker-follower", default=None,
                   help="separate tracker for the follower (defaults to --tracker)")
    s.add_argument("--mapping", required=True)
    s.add_argument("--pair", type=int, default=0)
    s.add_argument("--frames", type=int, default=300)
    s.add_argument("--warmup", type=int, default=30)
    s.add_argument("--report-dir", default=None)
    s.set_defaults(func=cmd_bench)

    s = sub.add_parser("export", help="export a sequence as BVH or CSV")
    s.add_argument("--data", required=True)
    s.add_argument("--pair", type=int, default=0)
    s.add_argument("--role", default="leader", choices=["leader", "follower"])
    s.add_argument("--format", default="bvh", choices=["bvh", "csv"])
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_export)

    s = sub.add_parser("serve", help="run the live WebSocket session service")
    s.add_argument("--data", required=True,
                   help="dataset file providing the skeleton")
    s.add_argument("--tracker", required=True)
    s.add_argument("--tracker-follower", default=None,
                   help="separate tracker for the follower (defaults to --tracker)")
    s.add_argument("--mapping", required=True)
    s.add_argument("--mode", default="duet", choices=list(ROLLOUT_MODES))
    s.add_argument("--host", default="127.0.0.1")
    s.add_argument("--port", type=int, default=8701)
    s.set_defaults(func=cmd_serve)

    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, FileNotFoundError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
