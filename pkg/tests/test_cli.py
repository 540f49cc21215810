import json

import numpy as np
import pytest

from duetpoint.cli import main, train_config
from duetpoint.config import ConfigError
from duetpoint.dataset import load_dataset


TINY_CFG = """\
# small-but-real training budget for CLI tests
learning_rate = 1e-3
total_steps = 60
batch_size = 16
hidden = 48
latent_channels = 8
latent_classes = 4
"""


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    """A prepared pipeline: dataset + trained tracker + mapping."""
    root = tmp_path_factory.mktemp("cli")
    cfg = root / "train.cfg"
    cfg.write_text(TINY_CFG)
    data = root / "data.dptn"
    assert main(["synth-duet", "--out", str(data), "--duration", "8",
                 "--test-duration", "4", "--seed", "0"]) == 0
    tracker = root / "tracker.dptn"
    mapping = root / "mapping.dptn"
    assert main(["train-tracking", "--data", str(data), "--out", str(tracker),
                 "--config", str(cfg)]) == 0
    assert main(["train-mapping", "--data", str(data), "--out", str(mapping),
                 "--config", str(cfg)]) == 0
    return {"root": root, "data": data, "tracker": tracker,
            "mapping": mapping, "cfg": cfg}


class TestTrainConfig:
    def test_defaults_without_file(self):
        cfg = train_config(None)
        assert cfg.hidden == 512

    def test_unknown_key_named(self, tmp_path):
        p = tmp_path / "bad.cfg"
        p.write_text("learning_rate = 1e-3\nwarp_factor = 9\n")
        with pytest.raises(ConfigError, match="warp_factor"):
            train_config(p)

    def test_bad_value_named(self, tmp_path):
        p = tmp_path / "bad.cfg"
        p.write_text("total_steps = soon\n")
        with pytest.raises(ConfigError, match="total_steps"):
            train_config(p)

    def test_seed_override(self, tmp_path):
        p = tmp_path / "c.cfg"
        p.write_text("seed = 3\n")
        assert train_config(p).seed == 3
        assert train_config(p, seed=9).seed == 9


class TestSynthDuet:
    def test_deterministic_bytes(self, tmp_path):
        a, b = tmp_path / "a.dptn", tmp_path / "b.dptn"
        args = ["synth-duet", "--duration", "4", "--test-duration", "3",
                "--seed", "7", "--style", "figure-eight"]
        assert main(args + ["--out", str(a)]) == 0
        assert main(args + ["--out", str(b)]) == 0
        assert a.read_bytes() == b.read_bytes()

    def test_roundtrips_through_dataset_io(self, workspace):
        ds = load_dataset(workspace["data"])
        assert len(ds.pairs) == 1
        assert ds.pairs[0].train_end == 8 * 30
        assert len(ds.pairs[0]) == 12 * 30
        assert ds.pairs[0].follower is not None


class TestTrainingCommands:
    def test_logs_written(self, workspace, tmp_path):
        log = tmp_path / "hist.csv"
        out = tmp_path / "t.dptn"
        assert main(["train-tracking", "--data", str(workspace["data"]),
                     "--out", str(out), "--config", str(workspace["cfg"]),
                     "--log", str(log)]) == 0
        lines = log.read_text().splitlines()
        assert lines[0].startswith("step,")
        assert len(lines) > 2

    def test_seed_changes_weights(self, workspace, tmp_path):
        a, b = tmp_path / "a.dptn", tmp_path / "b.dptn"
        base = ["train-mapping", "--data", str(workspace["data"]),
                "--config", str(workspace["cfg"])]
        assert main(base + ["--out", str(a), "--seed", "1"]) == 0
        assert main(base + ["--out", str(b), "--seed", "2"]) == 0
        assert a.read_bytes() != b.read_bytes()

    def test_unknown_config_key_is_exit_2(self, workspace, tmp_path, capsys):
        bad = tmp_path / "bad.cfg"
        bad.write_text("flux = 1\n")
        rc = main(["train-tracking", "--data", str(workspace["data"]),
                   "--out", str(tmp_path / "x.dptn"), "--config", str(bad)])
        assert rc == 2
        assert "flux" in capsys.readouterr().err


class TestRolloutCommand:
    def test_writes_bvh_and_diagnostics(self, workspace, tmp_path):
        out = tmp_path / "roll"
        assert main(["rollout", "--data", str(workspace["data"]),
                     "--tracker", str(workspace["tracker"]),
                     "--mapping", str(workspace["mapping"]),
                     "--frames", "20", "--out-dir", str(out)]) == 0
        assert (out / "leader.bvh").read_text().startswith("HIERARCHY")
        assert (out / "follower.bvh").exists()
        diag = json.loads((out / "diagnostics.json").read_text())
        assert diag["frames"] == 20 and diag["mode"] == "duet"

    def test_missing_model_is_exit_2(self, workspace, tmp_path, capsys):
        rc = main(["rollout", "--data", str(workspace["data"]),
                   "--tracker", str(tmp_path / "nope.dptn"),
                   "--mapping", str(workspace["mapping"]),
                   "--out-dir", str(tmp_path / "r")])
        assert rc == 2
        assert "error:" in capsys.readouterr().err


class TestBenchCommand:
    def test_prints_stats_and_writes_report(self, workspace, tmp_path, capsys):
        rep = tmp_path / "bench"
        assert main(["bench", "--data", str(workspace["data"]),
                     "--tracker", str(workspace["tracker"]),
                     "--mapping", str(workspace["mapping"]),
                     "--frames", "50", "--warmup", "10",
                     "--report-dir", str(rep)]) == 0
        out = capsys.readouterr().out
        assert "mean_ms=" in out and "p95_ms=" in out
        assert (rep / "latency.png").exists()
        samples = (rep / "latency_ms.csv").read_text().splitlines()
        assert samples[0] == "per_character_ms" and len(samples) == 41


class TestExportCommand:
    def test_bvh(self, workspace, tmp_path):
        out = tmp_path / "leader.bvh"
        assert main(["export", "--data", str(workspace["data"]),
                     "--role", "leader", "--format", "bvh",
                     "--out", str(out)]) == 0
        text = out.read_text()
        assert text.startswith("HIERARCHY") and "MOTION" in text

    def test_csv_matches_sequence(self, workspace, tmp_path):
        out = tmp_path / "leader.csv"
        assert main(["export", "--data", str(workspace["data"]),
                     "--role", "leader", "--format", "csv",
                     "--out", str(out)]) == 0
        lines = out.read_text().splitlines()
        ds = load_dataset(workspace["data"])
        seq = ds.pairs[0].leader
        assert len(lines) == len(seq) + 1
        header = lines[0].split(",")
        assert header[:5] == ["frame", "root_tx", "root_tz", "root_re", "root_im"]
        row = lines[1].split(",")
        assert float(row[1]) == seq.root.t[0, 0]
        gpos = seq.global_positions()
        assert float(row[5]) == gpos[0, 0, 0]


class TestEvalCommand:
    def test_report_files_and_figures(self, workspace, tmp_path, capsys):
        rep = tmp_path / "report"
        assert main(["eval", "--data", str(workspace["data"]),
                     "--report-dir", str(rep),
                     "--tracking-config", str(workspace["cfg"]),
                     "--mapping-config", str(workspace["cfg"]),
                     "--frames", "15"]) == 0
        assert (rep / "metrics.csv").exists()
        blob = json.loads((rep / "metrics.json").read_text())
        assert np.isfinite(blob["rows"][0]["follower_3pt_cm"])
        for fig in ("trajectories.png", "tracking_loss.png",
                    "mapping_loss.png", "error_over_time.png"):
            assert (rep / fig).exists()
        assert "follower_3pt_cm=" in capsys.readouterr().out
