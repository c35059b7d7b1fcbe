import json
import os
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from dualreal.config import ConfigError, RunConfig, load_config


TINY_CONFIG = {
    "frames": 4, "height": 32, "width": 32, "patch_t": 2, "patch_s": 8,
    "model_dim": 8, "heads": 2, "depth": 2, "mlp_ratio": 2, "t_dim": 8,
    "timesteps": 10, "identity_vocab": 16, "motion_vocab": 16,
    "adapter_dim": 2, "cond_dim": 32, "groups": 2,
    "pretrain_steps": 30, "customize_steps": 8, "sample_steps": 4, "seed": 0,
}


class TestRunConfig:
    def test_defaults_validate(self):
        RunConfig().validate()

    def test_groups_must_not_exceed_depth(self):
        with pytest.raises(ConfigError, match="groups"):
            RunConfig(groups=9).validate()

    def test_unknown_mode_rejected(self):
        with pytest.raises(ConfigError, match="mode"):
            RunConfig(mode="half-joint").validate()

    def test_file_with_overrides(self, tmp_path):
        p = tmp_path / "c.json"
        p.write_text(json.dumps({"depth": 4, "groups": 2}))
        cfg = load_config(str(p), {"groups": 4})
        assert cfg.depth == 4 and cfg.groups == 4

    def test_json_error_is_line_anchored(self, tmp_path):
        p = tmp_path / "bad.json"
        p.write_text('{\n  "depth": 4,\n  broken\n}')
        with pytest.raises(ConfigError, match=r"bad\.json:3:"):
            load_config(str(p))

    def test_unknown_field_named(self, tmp_path):
        p = tmp_path / "c.json"
        p.write_text(json.dumps({"depht": 4}))
        with pytest.raises(ConfigError, match="depht"):
            load_config(str(p))

    def test_env_seed_overrides(self, tmp_path, monkeypatch):
        p = tmp_path / "c.json"
        p.write_text(json.dumps({"seed": 3}))
        monkeypatch.setenv("DUALREAL_SEED", "99")
        assert load_config(str(p), {"seed": 5}).seed == 99
        monkeypatch.setenv("DUALREAL_SEED", "zebra")
        with pytest.raises(ConfigError, match="DUALREAL_SEED"):
            load_config(str(p))


def run_cli(args, cwd):
    return subprocess.run([sys.executable, "-m", "dualreal.cli", *args],
                          capture_output=True, text=True, cwd=cwd)


@pytest.fixture(scope="module")
def cli_workspace(tmp_path_factory):
    """Corpus + tiny pretrained backbone shared by the CLI tests."""
    root = tmp_path_factory.mktemp("cliws")
    cfg_path = root / "tiny.json"
    cfg_path.write_text(json.dumps(TINY_CONFIG))
    r = run_cli(["gen-corpus", "--config", str(cfg_path), "--out", str(root / "corpus"),
                 "--identities", "2", "--motions", "2"], root)
    assert r.returncode == 0, r.stderr
    r = run_cli(["pretrain", "--config", str(cfg_path), "--out", str(root / "pre")], root)
    assert r.returncode == 0, r.stderr
    return root, cfg_path


class TestCli:
    def test_missing_config_file_exits_2(self, tmp_path):
        r = run_cli(["pretrain", "--config", str(tmp_path / "nope.json"), "--out", str(tmp_path / "o")], tmp_path)
        assert r.returncode == 2
        assert "config error" in r.stderr

    def test_invalid_json_exits_2_with_location(self, tmp_path):
        bad = tmp_path / "bad.json"
        bad.write_text("{ nope }")
        r = run_cli(["pretrain", "--config", str(bad), "--out", str(tmp_path / "o")], tmp_path)
        assert r.returncode == 2
        assert "bad.json:1" in r.stderr

    def test_runtime_error_exits_3(self, tmp_path):
        cfg = tmp_path / "c.json"
        cfg.write_text(json.dumps(TINY_CONFIG))
        r = run_cli(["customize", "--config", str(cfg), "--corpus", str(tmp_path / "missing"),
                     "--backbone", str(tmp_path / "missing.drck"), "--out", str(tmp_path / "o")], tmp_path)
        assert r.returncode == 3

    def test_gen_corpus_writes_manifest_and_clips(self, cli_workspace):
        root, _ = cli_workspace
        manifest = json.loads((root / "corpus" / "manifest.json").read_text())
        assert len(manifest["clips"]) == 4
        assert (root / "corpus" / "identity_crimson-circle_ref.ppm").exists()

    def test_pretrain_artifacts(self, cli_workspace):
        root, _ = cli_workspace
        assert (root / "pre" / "backbone.drck").exists()
        log = (root / "pre" / "pretrain_log.csv").read_text().splitlines()
        assert log[0] == "step,phase,loss"
        assert len(log) == TINY_CONFIG["pretrain_steps"] + 1
        assert (root / "pre" / "config.json").exists()

    def test_customize_then_sample_and_viz(self, cli_workspace):
        root, cfg_path = cli_workspace
        r = run_cli(["customize", "--config", str(cfg_path), "--corpus", str(root / "corpus"),
                     "--backbone", str(root / "pre" / "backbone.drck"),
                     "--identity", "crimson-circle", "--motion", "bounce",
                     "--out", str(root / "cust")], root)
        assert r.returncode == 0, r.stderr
        ckpt = root / "cust" / "customized.drck"
        assert ckpt.exists()
        log = (root / "cust" / "train_log.csv").read_text().splitlines()
        assert len(log) == TINY_CONFIG["customize_steps"] + 1
        assert set(line.split(",")[1] for line in log[1:]) <= {"identity", "motion"}

        r = run_cli(["sample", "--config", str(cfg_path), "--corpus", str(root / "corpus"),
                     "--ckpt", str(ckpt), "--identity", "crimson-circle", "--motion", "bounce",
                     "--seed", "7", "--out", str(root / "samp1")], root)
        assert r.returncode == 0, r.stderr
        assert (root / "samp1" / "sample.drv1").exists()
        frames = list((root / "samp1").glob("frame_*.ppm"))
        assert len(frames) == TINY_CONFIG["frames"]

        # determinism: same seed, fresh out dir, bit-identical video
        r = run_cli(["sample", "--config", str(cfg_path), "--corpus", str(root / "corpus"),
                     "--ckpt", str(ckpt), "--identity", "crimson-circle", "--motion", "bounce",
                     "--seed", "7", "--out", str(root / "samp2")], root)
        assert r.returncode == 0, r.stderr
        assert (root / "samp1" / "sample.drv1").read_bytes() == (root / "samp2" / "sample.drv1").read_bytes()

        r = run_cli(["viz-controller", "--config", str(cfg_path), "--corpus", str(root / "corpus"),
                     "--ckpt", str(ckpt), "--identity", "crimson-circle", "--motion", "bounce",
                     "--out", str(root / "viz")], root)
        assert r.returncode == 0, r.stderr
        rows = (root / "viz" / "controller.csv").read_text().strip().splitlines()
        assert rows[0] == "step,group_0,group_1"
        assert len(rows) == TINY_CONFIG["sample_steps"] + 1
        for row in rows[1:]:
            vals = [float(v) for v in row.split(",")[1:]]
            assert all(0.0 < v < 1.0 for v in vals)
        assert (root / "viz" / "controller.svg").read_text().startswith("<svg")

    def test_eval_report(self, cli_workspace):
        root, cfg_path = cli_workspace
        video = root / "corpus" / "motion_bounce.drv1"
        r = run_cli(["eval", "--config", str(cfg_path), "--corpus", str(root / "corpus"),
                     "--identity", "crimson-circle", "--videos", str(video),
                     "--out", str(root / "eval")], root)
        assert r.returncode == 0, r.stderr
        lines = (root / "eval" / "report.csv").read_text().strip().splitlines()
        assert lines[0].startswith("clip_id,identity_sim")
        assert len(lines) == 2

    def test_zero_step_customize_reproduces_backbone_samples(self, cli_workspace):
        root, cfg_path = cli_workspace
        r = run_cli(["customize", "--config", str(cfg_path), "--corpus", str(root / "corpus"),
                     "--backbone", str(root / "pre" / "backbone.drck"), "--steps", "0",
                     "--out", str(root / "cust0")], root)
        assert r.returncode == 0, r.stderr
        for tag, ckpt in (("bb", root / "pre" / "backbone.drck"),
                          ("c0", root / "cust0" / "customized.drck")):
            r = run_cli(["sample", "--config", str(cfg_path), "--corpus", str(root / "corpus"),
                         "--ckpt", str(ckpt), "--seed", "11", "--out", str(root / f"tr_{tag}")], root)
            assert r.returncode == 0, r.stderr
        assert ((root / "tr_bb" / "sample.drv1").read_bytes()
                == (root / "tr_c0" / "sample.drv1").read_bytes())

    def test_ablate_tables(self, cli_workspace):
        root, cfg_path = cli_workspace
        r = run_cli(["ablate", "--config", str(cfg_path), "--corpus", str(root / "corpus"),
                     "--backbone", str(root / "pre" / "backbone.drck"),
                     "--steps", "6", "--pairs", "1", "--out", str(root / "abl")], root)
        assert r.returncode == 0, r.stderr
        modes = (root / "abl" / "ablation_modes.csv").read_text().strip().splitlines()
        assert len(modes) == 5  # header + 4 modes
        assert [row.split(",")[0] for row in modes[1:]] == ["full", "no-joint", "no-controller", "no-groups"]
        assert len(modes[1].split(",")) == 7  # mode + 6 metric columns
        groups = (root / "abl" / "ablation_groups.csv").read_text().strip().splitlines()
        assert [row.split(",")[0] for row in groups[1:]] == ["n=1", "n=2"]
