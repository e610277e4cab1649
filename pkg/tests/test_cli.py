import json
import os
import subprocess
import sys

import numpy as np
import pytest

from ccfpse import tensor as T
from ccfpse.cli import main
from ccfpse.data import read_image_ppm, write_image_ppm


def run(*argv):
    return main([str(a) for a in argv])


def sets(overrides):
    out = []
    for o in overrides:
        out += ["--set", o]
    return out


@pytest.fixture
def dataset(tmp_path):
    assert run("make-data", "--count", 4, "--out", tmp_path / "data") == 0
    return tmp_path / "data" / "manifest.json"


class TestMakeData:
    def test_writes_count_pairs(self, dataset):
        entries = json.loads(dataset.read_text())
        assert len(entries) == 4
        assert all((dataset.parent / a).exists() and (dataset.parent / b).exists() for a, b in entries)

    def test_zero_count_is_usage_error(self, tmp_path):
        assert run("make-data", "--count", 0, "--out", tmp_path) == 2

    def test_seed_changes_content(self, tmp_path):
        run("make-data", "--count", 1, "--seed", 1, "--out", tmp_path / "a")
        run("make-data", "--count", 1, "--seed", 2, "--out", tmp_path / "b")
        assert (tmp_path / "a" / "label_00000.pgm").read_bytes() != (tmp_path / "b" / "label_00000.pgm").read_bytes()


class TestEval:
    def test_ground_truth_scores_one(self, dataset, tmp_path, capsys):
        assert run("eval", dataset, "--min-miou", 1.0, "--out", tmp_path / "ev") == 0
        text = (tmp_path / "ev" / "metrics.csv").read_text()
        assert "miou,1.0" in text and "accuracy,1.0" in text

    def test_threshold_failure(self, dataset, tmp_path):
        # a white image matches no palette colour well, so segmentation degrades
        entries = json.loads(dataset.read_text())
        write_image_ppm(dataset.parent / entries[0][1], np.full((3, 32, 32), 1.0))
        assert run("eval", dataset, "--min-miou", 0.999) == 1

    def test_missing_manifest(self, tmp_path):
        assert run("eval", tmp_path / "none.json") == 2


class TestTrainGenerate:
    def test_train_then_generate(self, dataset, tmp_path, tiny_overrides):
        args = sets(tiny_overrides + ["train.steps=2"])
        out = tmp_path / "run"
        assert run("train", "--data", dataset, "--eval-data", dataset, "--out", out, *args) == 0
        lines = (out / "train_log.csv").read_text().splitlines()
        assert lines[0] == "step,loss_d,loss_g,adv,perc,fm" and len(lines) == 3
        summary = json.loads((out / "summary.json").read_text())
        assert summary["steps"] == 2 and 0 <= summary["eval"]["miou"] <= 1

        for d in ("g1", "g2"):
            assert run("generate", "--checkpoint", out / "latest.ccfp", dataset, "--seed", 3,
                       "--out", tmp_path / d) == 0
        a, b = tmp_path / "g1" / "fake_00000.ppm", tmp_path / "g2" / "fake_00000.ppm"
        assert a.read_bytes() == b.read_bytes()
        assert read_image_ppm(a).shape == (3, 32, 32)
        assert (tmp_path / "g1" / "contact_sheet.ppm").exists()

        assert run("train", "--data", dataset, "--resume", out / "latest.ccfp", "--out", out,
                   "--set", "train.steps=3") == 0
        assert len((out / "train_log.csv").read_text().splitlines()) == 4

    def test_min_miou_gate(self, dataset, tmp_path, tiny_overrides):
        args = sets(tiny_overrides + ["train.steps=1"])
        assert run("train", "--data", dataset, "--out", tmp_path, "--min-miou", 1.01, *args) == 1

    def test_corrupt_checkpoint(self, dataset, tmp_path):
        bad = tmp_path / "bad.ccfp"
        bad.write_bytes(b"NOPE" + b"\0" * 32)
        assert run("generate", "--checkpoint", bad, dataset) == 2

    def test_unknown_config_key(self, tmp_path):
        cfg = tmp_path / "c.json"
        cfg.write_text(json.dumps({"train": {"learning_rate": 1}}))
        assert run("train", "--config", cfg, "--out", tmp_path) == 2


class TestGradcheckBench:
    def test_gradcheck_scope(self, tmp_path):
        assert run("gradcheck", "--scope", "ccops", "--out", tmp_path) == 0
        assert (tmp_path / "gradcheck.csv").read_text().startswith("name,rel_error")

    def test_broken_rule_exits_one(self, monkeypatch):
        monkeypatch.setattr(T.Tanh, "backward", lambda self, g: (g * 0.5,))
        assert run("gradcheck", "--scope", "primitives") == 1

    def test_bench_counts(self, tmp_path):
        assert run("bench", "--shape", "4,8,3,8,8", "--no-timing", "--out", tmp_path) == 0
        header, row = (tmp_path / "bench.csv").read_text().splitlines()
        rec = dict(zip(header.split(","), row.split(",")))
        assert int(rec["naive_macs"]) == 8 * int(rec["depthwise_macs"])

    def test_bad_shape(self):
        assert run("bench", "--shape", "4,8,3") == 2


class TestProcess:
    def _run(self, *args, env=None):
        full_env = dict(os.environ, **(env or {}))
        return subprocess.run([sys.executable, "-m", "ccfpse", *args], capture_output=True, text=True, env=full_env)

    def test_module_entry_and_thread_env(self):
        proc = self._run("bench", "--no-timing", "--shape", "2,2,3,4,4", env={"CCFPSE_THREADS": "1"})
        assert proc.returncode == 0 and proc.stdout.startswith("C,D,k,H,W")

    def test_bad_thread_env(self):
        assert self._run("bench", "--no-timing", env={"CCFPSE_THREADS": "zero"}).returncode == 2

    def test_usage_error(self):
        assert self._run("fly").returncode == 2
