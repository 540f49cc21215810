"""Acceptance gates for the primary deliverable.

Each test pins a user-facing guarantee: math-kernel exactness, gradient
correctness, trainability (micro-overfit), end-to-end synthesis quality
on the synthetic duet corpus, ablation orderings, role-reversal symmetry,
per-frame latency, and online/offline replay equivalence. Runtime budgets
are asserted alongside the quality thresholds.
"""

import json
import time

import numpy as np
import pytest

from duetpoint.dataset import (
    Stats,
    assemble_mapping,
    assemble_tracking,
    mapping_output_layout,
    synth_dataset,
)
from duetpoint.evalbench import (
    ablation_sweep,
    condition_mean,
    default_width_bundle,
    latency_bench,
    run_experiment,
)
from duetpoint.motion import (
    RootFrame,
    relative_frame,
    to_global,
    to_local,
)
from duetpoint.nn import (
    TrainConfig,
    grad_check,
    make_decoder_stack,
    make_encoder_stack,
)
from duetpoint.rollout import init_from_pair, stream_from_sequence
from duetpoint.server import SessionEngine, create_app, offline_frames
from duetpoint.tracking import train_tracking
from duetpoint.mapping import train_mapping

N_CASES = 10_000
ATOL = 1e-9


def random_frames(rng, n) -> RootFrame:
    return RootFrame.from_angle(
        rng.normal(scale=5.0, size=(n, 2)),
        rng.uniform(-np.pi, np.pi, size=n),
    )


class TestMathKernel:
    """Planar-frame group laws and point-transform round trips:
    1e-9 over 10^4 random cases, in under ten seconds."""

    def test_kernel_properties_fast_and_exact(self):
        t0 = time.monotonic()
        rng = np.random.default_rng(20260824)
        A = random_frames(rng, N_CASES)
        B = random_frames(rng, N_CASES)
        C = random_frames(rng, N_CASES)
        pts = rng.normal(scale=3.0, size=(N_CASES, 5, 3))

        # Group laws: associativity, identity, inverses.
        ab_c = A.compose(B).compose(C)
        a_bc = A.compose(B.compose(C))
        assert np.allclose(ab_c.t, a_bc.t, atol=ATOL)
        assert np.allclose(ab_c.o, a_bc.o, atol=ATOL)
        ident = RootFrame.identity((N_CASES,))
        ai = A.compose(A.inverse())
        assert np.allclose(ai.t, ident.t, atol=ATOL)
        assert np.allclose(ai.o, ident.o, atol=ATOL)
        ia = A.inverse().compose(A)
        assert np.allclose(ia.t, ident.t, atol=ATOL)
        assert np.allclose(ia.o, ident.o, atol=ATOL)

        # Headings stay on the unit circle under composition.
        assert np.allclose(
            np.linalg.norm(A.compose(B).o, axis=-1), 1.0, atol=ATOL
        )

        # Local/global round trips, and heights never change.
        glob = to_global(A, pts)
        assert np.allclose(to_local(A, glob), pts, atol=ATOL)
        assert np.array_equal(glob[..., 1], pts[..., 1])

        # Transforming points is a group action: (A o B) p == A (B p).
        assert np.allclose(
            to_global(A.compose(B), pts),
            to_global(A, to_global(B, pts)),
            atol=ATOL,
        )

        # relative_frame is the left-division: A o rel(A, B) == B.
        rel = relative_frame(A, B)
        back = A.compose(rel)
        assert np.allclose(back.t, B.t, atol=ATOL)
        assert np.allclose(back.o, B.o, atol=ATOL)
        selfrel = relative_frame(A, A)
        assert np.allclose(selfrel.t, 0.0, atol=ATOL)
        assert np.allclose(selfrel.o, ident.o, atol=ATOL)

        # Yaw matrices are orthonormal with unit determinant.
        m = A.yaw_matrix()
        eye = np.broadcast_to(np.eye(3), m.shape)
        assert np.allclose(m @ np.swapaxes(m, -1, -2), eye, atol=ATOL)
        assert np.allclose(np.linalg.det(m), 1.0, atol=ATOL)

        assert time.monotonic() - t0 < 10.0


class TestGradients:
    """Analytic gradients match central finite differences on every
    parameter of the estimator/encoder/decoder/mapping stacks, eval
    mode, five seeds, in under two minutes."""

    def test_all_stacks_five_seeds(self):
        t0 = time.monotonic()
        cfg = TrainConfig(hidden=16, latent_channels=4, latent_classes=3)
        for seed in range(5):
            rng = np.random.default_rng(seed)
            data_rng = np.random.default_rng(1000 + seed)
            stacks = [
                make_encoder_stack(7, cfg, rng, "estimator"),
                make_encoder_stack(7 + 9, cfg, rng, "encoder"),
                make_decoder_stack(
                    cfg.latent_channels * cfg.latent_classes, 9, cfg, rng,
                    "decoder",
                ),
                make_decoder_stack(11, 13, cfg, rng, "mapping"),
            ]
            for net in stacks:
                x = data_rng.normal(size=(3, net.in_dim))
                t = data_rng.normal(size=(3, net.out_dim))
                assert grad_check(net, x, t) < 1e-3, (seed, net.name)
        assert time.monotonic() - t0 < 120.0


class TestMicroOverfit:
    """The triplet memorizes a 10-window fixture (rec < 1e-2,
    matching < 5e-2 within 5000 steps) and the vanilla stack reaches a
    comparable one-step reconstruction loss; under ten minutes."""

    def test_triplet_and_vanilla_overfit(self):
        t0 = time.monotonic()
        ds = synth_dataset(duration=8.0, test_duration=4.0, seed=0)
        X, Y = assemble_tracking(ds, "train", roles=("leader",))
        X, Y = X[:10], Y[:10]
        cfg = TrainConfig(
            learning_rate=1e-3, total_steps=2000, batch_size=10, seed=0,
            hidden=192, latent_channels=32, latent_classes=8,
        )
        assert cfg.total_steps <= 5000

        triplet, _ = train_tracking((X, Y), cfg)
        losses = triplet.eval_losses(X, Y)
        assert losses["rec"] < 1e-2
        assert losses["matching"] < 5e-2

        vanilla, _ = train_tracking((X, Y), cfg, vanilla=True)
        v_rec = vanilla.eval_losses(X, Y)["rec"]
        assert v_rec < 1e-2  # comparable one-step reconstruction

        assert time.monotonic() - t0 < 600.0


@pytest.fixture(scope="module")
def e2e():
    """Shared 60 s train / 15 s test mirror corpus with production-style
    (reduced-width) trained models; reused by the end-to-end and
    role-reversal gates."""
    ds = synth_dataset(duration=60.0, test_duration=15.0, seed=0)
    tcfg = TrainConfig(
        learning_rate=1e-3, total_steps=2500, batch_size=32, seed=0,
        hidden=192, latent_channels=32, latent_classes=8,
    )
    mcfg = TrainConfig(
        learning_rate=1e-3, total_steps=3000, batch_size=32, seed=0,
        hidden=192,
    )
    t0 = time.monotonic()
    result = run_experiment(ds, tcfg, mcfg, mode="duet")
    return ds, tcfg, mcfg, result, time.monotonic() - t0


class TestSyntheticEndToEnd:
    def test_mapping_heldout_follower_under_2cm(self, e2e):
        ds, _, _, result, _ = e2e
        mapping = result["bundle"].mapping
        X, Y = assemble_mapping(ds, "test")
        pred = mapping.infer(X)
        sl = mapping_output_layout().slices()["follower_points"]
        diff = (pred[:, sl] - Y[:, sl]).reshape(X.shape[0], -1, 3)
        err_cm = float(np.linalg.norm(diff, axis=-1).mean()) * 100.0
        assert err_cm < 2.0

    def test_duet_rollout_30s_no_divergence_leader_under_5cm(self, e2e):
        # The held-out tail is 15 s, so the 30 s rollout starts 15 s
        # before the train/test boundary; the leader markers are
        # measured input either way, and only the second half was ever
        # seen by the training losses.
        from duetpoint.evalbench import tracking_error_cm
        from duetpoint.rollout import rollout

        ds, _, _, result, elapsed = e2e
        pair = ds.pairs[0]
        a, b = pair.train_end - 450, pair.train_end + 450
        leader = pair.leader.slice(a, b)
        follower = pair.follower.slice(a, b)
        stream = stream_from_sequence(leader)
        init = init_from_pair(leader, follower)
        out = rollout(result["bundle"], stream, "duet", init=init)
        d = out["diagnostics"]
        assert d["frames"] == 900  # 30 s at 30 Hz
        assert sum(d["divergences"].values()) == 0
        assert tracking_error_cm(out["sequences"]["leader"], leader) < 5.0
        assert elapsed < 1800.0  # training + evaluation within 30 min


class TestRoleReversal:
    """Swapping who leads must not change the difficulty of the task by
    more than 15% on the mirror corpus."""

    def test_reversed_errors_within_15_percent(self, e2e):
        ds, tcfg, mcfg, orig, _ = e2e
        rev = run_experiment(ds, tcfg, mcfg, mode="duet", role_reversal=True)
        a = orig["metrics"]["leader_3pt_cm"]
        b = rev["metrics"]["leader_3pt_cm"]
        assert abs(b - a) <= 0.15 * max(a, b)
        a = orig["metrics"]["follower_body_cm"]
        b = rev["metrics"]["follower_body_cm"]
        assert abs(b - a) <= 0.15 * max(a, b)


class TestAblationOrderings:
    """Comparative claims over a 5-seed sweep: the full system is never
    worse than its ablations, and the vanilla stack diverges more. The
    report is written before any assertion so a red run still leaves
    evidence on disk."""

    def test_orderings_over_five_seeds(self, tmp_path):
        tcfg = TrainConfig(
            learning_rate=1e-3, total_steps=800, batch_size=32, seed=0,
            hidden=96, latent_channels=16, latent_classes=8,
        )
        mcfg = TrainConfig(
            learning_rate=1e-3, total_steps=2000, batch_size=32, seed=0,
            hidden=128,
        )
        report = ablation_sweep(range(5), tcfg, mcfg, duration=24.0,
                                test_duration=20.0)
        report.to_csv(tmp_path / "ablation.csv")
        report.to_json(tmp_path / "ablation.json")
        assert (tmp_path / "ablation.csv").exists()

        err = {c: condition_mean(report, c, "follower_3pt_cm")
               for c in ("duet", "ablate_no_future",
                         "ablate_fullbody_condition")}
        div = {c: condition_mean(report, c, "divergences")
               for c in ("duet", "ablate_no_future",
                         "ablate_fullbody_condition", "vanilla")}
        # Error orderings are comparisons of noisy seed-means; the
        # effects being guarded against are multiples (the no-future
        # ablation is ~5x worse), so a 10% allowance reads a statistical
        # tie as "not worse" instead of flipping on seed noise.
        assert err["duet"] <= 1.10 * err["ablate_no_future"]
        assert err["duet"] <= 1.10 * err["ablate_fullbody_condition"]
        assert div["duet"] <= div["ablate_no_future"]
        assert div["duet"] <= div["ablate_fullbody_condition"]
        # Known red: on this synthetic corpus no condition ever trips
        # the divergence guard (bounded simplex latents keep joint
        # speeds well under the implausibility thresholds across every
        # style, budget, and horizon probed), so the strict inequality
        # cannot be satisfied here. It is asserted regardless; see the
        # report written above for the measured rates.
        assert div["vanilla"] > div["duet"], (
            f"vanilla divergence rate {div['vanilla']} is not strictly "
            f"greater than the full system's {div['duet']}: the "
            f"long-rollout instability of the plain MLP does not "
            f"manifest on the smooth synthetic corpus"
        )


class TestLatency:
    """Per-frame, per-character synthesis cost at the production widths
    (hidden 512, 128x8 latent): mean <= 33 ms, p95 <= 40 ms."""

    def test_latency_budget_at_default_widths(self):
        ds = synth_dataset(duration=12.0, test_duration=4.0, seed=0)
        bundle = default_width_bundle(ds.skeleton, ds.frame_rate)
        pair = ds.pairs[0]
        stream = stream_from_sequence(pair.leader)
        init = init_from_pair(pair.leader, pair.follower)
        out = latency_bench(bundle, stream, init=init, frames=240, warmup=30)
        assert out["mean_ms"] <= 33.0
        assert out["p95_ms"] <= 40.0


class TestOnlineOfflineEquivalence:
    """A scripted control trace pushed through the live WebSocket service
    and through the offline replay produces bitwise-identical frames."""

    def test_bitwise_equal_frame_streams(self):
        from starlette.testclient import TestClient
        from duetpoint.rollout import RolloutBundle

        ds = synth_dataset(duration=8.0, test_duration=4.0, seed=0)
        cfg = TrainConfig(
            learning_rate=1e-3, total_steps=80, batch_size=16, seed=0,
            hidden=48, latent_channels=8, latent_classes=4,
        )
        tracker, _ = train_tracking(ds, cfg, roles=("leader",))
        f_tracker, _ = train_tracking(ds, cfg, roles=("follower",))
        mapping, _ = train_mapping(ds, cfg)
        bundle = RolloutBundle(
            {"leader": tracker, "follower": f_tracker},
            mapping, ds.skeleton, ds.frame_rate,
        )
        pair = ds.pairs[0]
        stream = stream_from_sequence(pair.leader)
        init = init_from_pair(pair.leader, pair.follower)

        msgs = []
        for i in range(40):
            root = stream.roots.index(i)
            msgs.append({
                "type": "control",
                "root": [*root.t.tolist(), *root.o.tolist()],
                "points": stream.points[i].tolist(),
            })

        app = create_app(lambda: SessionEngine(bundle, "duet", init))
        online = []
        with TestClient(app) as client:
            with client.websocket_connect("/session") as ws:
                greeting = ws.receive_json()
                assert greeting["type"] == "status"
                for msg in msgs:
                    ws.send_text(json.dumps(msg))
                    online.append(json.dumps(ws.receive_json()))

        engine = SessionEngine(bundle, "duet", init)
        measurements = [(stream.roots.index(i), stream.points[i])
                        for i in range(40)]
        offline = [json.dumps(f) for f in offline_frames(engine, measurements)]
        assert online == offline
