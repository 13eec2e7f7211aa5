import json
from pathlib import Path

import numpy as np
import pytest

from embed_export import (
    CorpusParseError,
    EncoderLoadError,
    ExportJob,
    export,
    load_encoder,
)
from embed_export.cli import main


def toy_corpus(tmp_path, n=10) -> Path:
    path = tmp_path / "corpus.jsonl"
    with open(path, "w", encoding="utf-8") as fh:
        for i in range(n):
            split = "train" if i < 8 else "test"
            fh.write(json.dumps({
                "query": f"what is topic {i} about",
                "context": f"topic {i} is about subject number {i}",
                "split": split,
            }) + "\n")
    return path


class TestHashingEncoder:
    def test_deterministic(self):
        enc = load_encoder("hash-16")
        v1, m1, _ = enc.encode("hello world", 512)
        v2, m2, _ = enc.encode("hello world", 512)
        np.testing.assert_array_equal(v1, v2)
        np.testing.assert_array_equal(m1, m2)
        assert m1.shape == (2, 16)

    def test_truncation_flagged(self):
        enc = load_encoder("hash-4")
        _, matrix, truncated = enc.encode("a b c d e", 3)
        assert truncated and matrix.shape[0] == 3

    def test_bad_ids(self):
        with pytest.raises(EncoderLoadError):
            load_encoder("hash-x")
        with pytest.raises(EncoderLoadError):
            load_encoder("hash-0")


class TestExport:
    def test_round_trip_readable_by_primary(self, tmp_path):
        from routetree.io import read_manifest, read_pairs, read_store

        corpus = toy_corpus(tmp_path)
        out = tmp_path / "out"
        summary = export(ExportJob("hash-8", str(corpus), str(out),
                                   with_tokens=True))
        assert summary["count"] == 10
        queries = read_store(out / "queries.rtrv")
        contexts = read_store(out / "contexts.rtrv")
        queries.validate()
        contexts.validate()
        assert queries.count == contexts.count == 10
        assert queries.dim == 8
        assert len(contexts.token_matrices) == 10
        manifest = read_manifest(out / "manifest.jsonl")
        assert len(manifest.rows) == 10
        pairs = read_pairs(out / "pairs.jsonl")
        assert len(pairs.split_pairs("train")) == 8

    def test_rerun_identical_checksums(self, tmp_path):
        corpus = toy_corpus(tmp_path)
        a, b = tmp_path / "a", tmp_path / "b"
        export(ExportJob("hash-8", str(corpus), str(a), with_tokens=True))
        export(ExportJob("hash-8", str(corpus), str(b), with_tokens=True))
        strip = lambda p: (p / "checksums.sha256").read_text()
        assert strip(a) == strip(b)

    def test_truncation_warnings_file(self, tmp_path):
        corpus = toy_corpus(tmp_path)
        out = tmp_path / "out"
        export(ExportJob("hash-8", str(corpus), str(out), max_len=3))
        lines = (out / "warnings.jsonl").read_text().splitlines()
        assert lines
        assert "truncated" in json.loads(lines[0])["warning"]

    def test_meta_records_pooling(self, tmp_path):
        corpus = toy_corpus(tmp_path)
        out = tmp_path / "out"
        export(ExportJob("hash-8", str(corpus), str(out)))
        meta = json.loads((out / "meta.json").read_text())
        assert meta["pooling"] == "mean"
        assert meta["encoder"] == "hash-8"

    def test_bad_corpus(self, tmp_path):
        bad = tmp_path / "bad.jsonl"
        bad.write_text('{"query": "q"}\n')
        with pytest.raises(CorpusParseError):
            export(ExportJob("hash-8", str(bad), str(tmp_path / "o")))
        empty = tmp_path / "empty.jsonl"
        empty.write_text("")
        with pytest.raises(CorpusParseError):
            export(ExportJob("hash-8", str(empty), str(tmp_path / "o2")))


class TestCliAndPrimaryPipeline:
    def test_exit_codes(self, tmp_path):
        corpus = toy_corpus(tmp_path)
        assert main(["export", "--encoder", "hash-8", "--corpus",
                     str(corpus), "--out", str(tmp_path / "o")]) == 0
        assert main(["export", "--encoder", "hash-zz", "--corpus",
                     str(corpus), "--out", str(tmp_path / "o")]) == 2
        assert main(["export", "--encoder", "hash-8", "--corpus",
                     str(tmp_path / "missing"), "--out",
                     str(tmp_path / "o")]) == 3

    def test_feeds_primary_train_eval_unmodified(self, tmp_path):
        """Exported files drive a full train -> eval run of the primary CLI."""
        from routetree.cli import main as primary

        corpus = toy_corpus(tmp_path)
        out = tmp_path / "export"
        assert main(["export", "--encoder", "hash-6", "--corpus",
                     str(corpus), "--out", str(out), "--tokens"]) == 0
        config = {
            "io": {
                "contexts": str(out / "contexts.rtrv"),
                "queries": str(out / "queries.rtrv"),
                "pairs": str(out / "pairs.jsonl"),
                "manifest": str(out / "manifest.jsonl"),
            },
            "model": {"split": "linear", "propagation": "product",
                      "depth": 2, "dim": 6, "token_dim": 6},
            "train": {"batch_size": 4, "learning_rate": 1e-2,
                      "total_steps": 12, "warmup_steps": 2,
                      "scheduler": "constant", "seed": 0},
            "eval": {"levels": [2], "k": [1, 2], "metric": "ntvd"},
        }
        cfg = tmp_path / "run.json"
        cfg.write_text(json.dumps(config))
        runs = ["--runs", str(tmp_path / "runs"), "--name", "exp"]
        assert primary(["train", str(cfg), *runs]) == 0
        assert primary(["eval", str(cfg), *runs]) == 0
        report = json.loads(
            (tmp_path / "runs" / "exp" / "reports" / "eval.json").read_text())
        assert "recall" in report["2"]
