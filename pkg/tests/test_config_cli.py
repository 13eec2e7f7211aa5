import json
import os
import subprocess
import sys

import numpy as np
import pytest

from routetree.cli import main
from routetree.config import (
    build_model_config,
    build_synth_spec,
    build_train_config,
    load_config,
    validate_config,
)
from routetree.errors import ConfigInvalid


def base_config(**sections):
    doc = {
        "io": {"synth": {"clusters": 4, "dim": 6, "contexts_per_cluster": 10,
                         "query_noise": 0.1, "seed": 0}},
        "model": {"split": "linear", "propagation": "product", "depth": 2,
                  "dim": 6, "token_dim": 6},
        "train": {"batch_size": 4, "learning_rate": 1e-2, "total_steps": 10,
                  "warmup_steps": 2, "scheduler": "constant", "seed": 0},
        "eval": {"levels": [2], "k": [1, 5], "metric": "ntvd"},
    }
    doc.update(sections)
    return doc


class TestConfigValidation:
    def test_valid_passes(self):
        validate_config(base_config())

    def test_unknown_top_level_key_named(self):
        with pytest.raises(ConfigInvalid) as err:
            validate_config({**base_config(), "bogus": 1})
        assert "bogus" in str(err.value)

    def test_unknown_nested_key_named(self):
        doc = base_config()
        doc["train"]["momentum"] = 0.9
        with pytest.raises(ConfigInvalid) as err:
            validate_config(doc)
        assert "momentum" in str(err.value)

    def test_bad_enum(self):
        doc = base_config()
        doc["model"]["split"] = "quantum"
        with pytest.raises(ConfigInvalid):
            validate_config(doc)

    def test_builders(self):
        doc = base_config()
        model_cfg = build_model_config(doc)
        assert model_cfg.depth == 2
        assert model_cfg.split.variant == "linear"
        train_cfg = build_train_config(doc)
        assert train_cfg.total_steps == 10
        spec = build_synth_spec(doc)
        assert spec.clusters == 4

    def test_load_rejects_bad_json(self, tmp_path):
        path = tmp_path / "c.json"
        path.write_text("{not json")
        with pytest.raises(ConfigInvalid):
            load_config(path)


@pytest.fixture
def run_env(tmp_path):
    cfg_path = tmp_path / "config.json"
    cfg_path.write_text(json.dumps(base_config()))
    return tmp_path, cfg_path


def run_cli(args, tmp_path):
    return main([*map(str, args), "--runs", str(tmp_path / "runs"),
                 "--name", "t"])


class TestCli:
    def test_train_then_eval(self, run_env):
        tmp_path, cfg = run_env
        assert run_cli(["train", cfg], tmp_path) == 0
        run = tmp_path / "runs" / "t"
        assert (run / "config.json").exists()
        assert (run / "metrics.jsonl").exists()
        assert (run / "checkpoints" / "final.rtck").exists()
        assert run_cli(["eval", cfg], tmp_path) == 0
        report = json.loads((run / "reports" / "eval.json").read_text())
        assert "recall" in report["2"]

    def test_index_and_search(self, run_env):
        tmp_path, cfg = run_env
        assert run_cli(["train", cfg], tmp_path) == 0
        assert run_cli(["index", cfg, "--level", "2"], tmp_path) == 0
        run = tmp_path / "runs" / "t"
        assert (run / "reports" / "index_L2.rtrv").exists()
        assert run_cli(["search", cfg, "--level", "2", "--k", "3"],
                       tmp_path) == 0
        lines = (run / "results.jsonl").read_text().splitlines()
        assert lines and len(json.loads(lines[0])["ranked"]) == 3

    def test_baseline(self, run_env):
        tmp_path, cfg = run_env
        doc = base_config(baseline={"kind": "kmeans", "depth": 2, "seed": 0})
        cfg.write_text(json.dumps(doc))
        assert run_cli(["baseline", cfg], tmp_path) == 0
        out = tmp_path / "runs" / "t" / "reports" / "baseline_kmeans.json"
        assert "recall" in json.loads(out.read_text())

    def test_export_tree_and_inspect(self, run_env):
        tmp_path, cfg = run_env
        assert run_cli(["train", cfg], tmp_path) == 0
        assert run_cli(["export-tree", cfg, "--format", "dot"],
                       tmp_path) == 0
        dot = (tmp_path / "runs" / "t" / "reports" / "tree.dot").read_text()
        assert dot.count("->") == 6
        doc = base_config(inspect={"modes": ["lca", "keywords"],
                                   "k": 3, "sample_size": 500})
        cfg.write_text(json.dumps(doc))
        assert run_cli(["inspect", cfg], tmp_path) == 0
        report = json.loads(
            (tmp_path / "runs" / "t" / "reports" / "inspect.json")
            .read_text())
        assert "lca" in report and "keywords" in report

    def test_unknown_key_exits_2(self, run_env):
        tmp_path, cfg = run_env
        cfg.write_text(json.dumps({**base_config(), "oops": {}}))
        assert run_cli(["train", cfg], tmp_path) == 2

    def test_missing_file_exits_3(self, run_env):
        tmp_path, cfg = run_env
        doc = base_config()
        doc["io"] = {"contexts": "/nonexistent.rtrv",
                     "queries": "/nonexistent.rtrv",
                     "pairs": "/nonexistent.jsonl"}
        cfg.write_text(json.dumps(doc))
        assert run_cli(["train", cfg], tmp_path) == 3

    def test_console_entry_point(self, run_env):
        tmp_path, cfg = run_env
        out = subprocess.run(
            [sys.executable, "-m", "routetree.cli", "train", str(cfg),
             "--runs", str(tmp_path / "runs"), "--name", "sp"],
            capture_output=True, text=True,
            env=dict(os.environ, RTRV_LOG="error"))
        assert out.returncode == 0, out.stderr

    def test_bad_log_level_exits_2(self, run_env, monkeypatch):
        tmp_path, cfg = run_env
        monkeypatch.setenv("RTRV_LOG", "verbose")
        assert run_cli(["train", cfg], tmp_path) == 2

    def test_seed_override_changes_artifacts(self, run_env):
        tmp_path, cfg = run_env
        assert run_cli(["train", cfg, "--seed", "1"], tmp_path) == 0
        m1 = (tmp_path / "runs" / "t" / "metrics.jsonl").read_text()
        assert m1
