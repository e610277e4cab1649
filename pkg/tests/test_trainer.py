import json
import struct

import numpy as np
import pytest

from ccfpse import trainer
from ccfpse.data import generate_dataset
from ccfpse.errors import ArgumentError, FormatError, TrainingDivergedError


@pytest.fixture
def data(tiny_config):
    return generate_dataset(tiny_config.task, 6, 0)


def params(state):
    return {f"{k}/{n}": t.data.copy() for k, s in state.stores.items() for n, t in s.items()}


def changed(before, after, prefix):
    return any(not np.array_equal(before[n], after[n]) for n in before if n.startswith(prefix))


class TestTrainStep:
    def test_zero_lr_leaves_params(self, tiny_config, data):
        cfg = tiny_config.with_overrides(["train.lr_g=0", "train.lr_d=0"])
        state = trainer.build_state(cfg)
        before = params(state)
        losses = trainer.train_step(state, *trainer.sample_batch(state, data))
        after = params(state)
        assert all(np.array_equal(before[n], after[n]) for n in before)
        assert all(np.isfinite(v) for v in losses.values())
        assert set(losses) == {"loss_d", "loss_g", "adv", "perc", "fm"}

    def test_every_network_moves(self, tiny_config, data):
        state = trainer.build_state(tiny_config)
        before = params(state)
        trainer.train_step(state, *trainer.sample_batch(state, data))
        after = params(state)
        assert changed(before, after, "G/") and changed(before, after, "W/") and changed(before, after, "D/")

    @pytest.mark.parametrize("frozen,lr", [("D/", "train.lr_d=0"), ("G/", "train.lr_g=0")])
    def test_alternation(self, tiny_config, data, frozen, lr):
        state = trainer.build_state(tiny_config.with_overrides([lr]))
        before = params(state)
        trainer.train_step(state, *trainer.sample_batch(state, data))
        after = params(state)
        assert not changed(before, after, frozen)
        if frozen == "G/":
            assert not changed(before, after, "W/") and changed(before, after, "D/")
        else:
            assert changed(before, after, "G/")

    def test_gradients_cleared_after_step(self, tiny_config, data):
        state = trainer.build_state(tiny_config)
        trainer.train_step(state, *trainer.sample_batch(state, data))
        for store in state.stores.values():
            assert all(not t.grad.any() for t in store.tensors())

    @pytest.mark.parametrize("arm", [["train.predictor=local"], ["train.embeddings=off"],
                                     ["train.discriminator=ms-patch"], ["train.generator=spade"]])
    def test_ablation_arms_run(self, tiny_config, data, arm):
        state = trainer.build_state(tiny_config.with_overrides(arm))
        losses = trainer.train_step(state, *trainer.sample_batch(state, data))
        assert all(np.isfinite(v) for v in losses.values())

    def test_divergence_aborts_with_diagnostics(self, tiny_config, data, tmp_path, monkeypatch):
        real = trainer.perceptual_loss
        monkeypatch.setattr(trainer, "perceptual_loss", lambda *a: real(*a) * float("nan"))
        with pytest.raises(TrainingDivergedError) as info:
            trainer.run_training(tiny_config, data, tmp_path)
        diag = info.value.diagnostics
        assert diag["step"] == 0 and set(diag["grad_norms"]) == {"G", "W", "D"}
        assert json.loads((tmp_path / "diverged.json").read_text())["step"] == 0

    def test_mismatched_image_size(self, tiny_config):
        with pytest.raises(ArgumentError):
            trainer.build_state(tiny_config.with_overrides(["generator.widths=[4,4,4]"]))


class TestRunTraining:
    def test_log_and_artifacts(self, tiny_config, data, tmp_path):
        summary = trainer.run_training(tiny_config, data, tmp_path, eval_set=data[:2])
        lines = (tmp_path / "train_log.csv").read_text().splitlines()
        assert lines[0] == "step,loss_d,loss_g,adv,perc,fm" and len(lines) == 4
        assert [int(l.split(",")[0]) for l in lines[1:]] == [1, 2, 3]
        names = sorted(p.name for p in tmp_path.iterdir())
        assert {"checkpoint_000000.ccfp", "checkpoint_000002.ccfp", "latest.ccfp", "config.json"} <= set(names)
        assert (tmp_path / "samples" / "step_000002.ppm").exists()
        assert 0 <= summary["eval"]["miou"] <= 1

    def test_identical_seeds_identical_logs(self, tiny_config, data, tmp_path):
        trainer.run_training(tiny_config, data, tmp_path / "a")
        trainer.run_training(tiny_config, data, tmp_path / "b")
        assert (tmp_path / "a" / "train_log.csv").read_bytes() == (tmp_path / "b" / "train_log.csv").read_bytes()

    def test_different_seeds_differ(self, tiny_config, data):
        a = trainer.run_training(tiny_config, data)["log"]
        b = trainer.run_training(tiny_config.with_overrides(["train.seed=1"]), data)["log"]
        assert a != b

    def test_zero_steps(self, tiny_config, data, tmp_path):
        summary = trainer.run_training(tiny_config.with_overrides(["train.steps=0"]), data, tmp_path)
        assert summary["log"] == [] and (tmp_path / "checkpoint_000000.ccfp").exists()

    def test_empty_dataset(self, tiny_config):
        with pytest.raises(ArgumentError):
            trainer.run_training(tiny_config, [])


class TestCheckpoint:
    def test_save_load_save_is_byte_identical(self, tiny_config, data, tmp_path):
        state = trainer.run_training(tiny_config, data)["state"]
        trainer.save_checkpoint(state, tmp_path / "a.ccfp")
        trainer.save_checkpoint(trainer.load_checkpoint(tmp_path / "a.ccfp"), tmp_path / "b.ccfp")
        assert (tmp_path / "a.ccfp").read_bytes() == (tmp_path / "b.ccfp").read_bytes()

    def test_header_layout(self, tiny_config, tmp_path):
        trainer.save_checkpoint(trainer.build_state(tiny_config), tmp_path / "a.ccfp")
        blob = (tmp_path / "a.ccfp").read_bytes()
        assert blob[:4] == b"CCFP" and struct.unpack("<I", blob[4:8])[0] == 1
        n = struct.unpack("<Q", blob[8:16])[0]
        meta = json.loads(blob[16:16 + n].decode("utf-8"))
        total = sum(int(np.prod(t["shape"])) * 4 for t in meta["tensors"].values())
        assert len(blob) == 16 + n + total

    def test_resume_matches_uninterrupted(self, tiny_config, data, tmp_path):
        cfg = tiny_config.with_overrides(["train.steps=4"])
        full = trainer.run_training(cfg, data, tmp_path / "full")
        trainer.run_training(cfg.with_overrides(["train.steps=2"]), data, tmp_path / "part")
        state = trainer.load_checkpoint(tmp_path / "part" / "latest.ccfp")
        state.config = cfg
        resumed = trainer.run_training(cfg, data, tmp_path / "part", state=state)
        assert resumed["log"] == full["log"][2:]
        assert (tmp_path / "part" / "train_log.csv").read_bytes() == (tmp_path / "full" / "train_log.csv").read_bytes()

    @pytest.mark.parametrize("mutate,error", [
        (lambda b: b"XXXX" + b[4:], FormatError),
        (lambda b: b[:4] + struct.pack("<I", 99) + b[8:], FormatError),
        (lambda b: b[:16] + b"!" + b[17:], FormatError),
        (lambda b: b[:10], OSError),
        (lambda b: b[:-8], OSError),
    ])
    def test_corruption(self, tiny_config, tmp_path, mutate, error):
        path = tmp_path / "a.ccfp"
        trainer.save_checkpoint(trainer.build_state(tiny_config), path)
        path.write_bytes(mutate(path.read_bytes()))
        with pytest.raises(error):
            trainer.load_checkpoint(path)

    def test_missing_file(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            trainer.load_checkpoint(tmp_path / "none.ccfp")


class TestInference:
    def test_generate_is_seeded_and_leaves_rng(self, tiny_config, data):
        state = trainer.build_state(tiny_config)
        labels = np.stack([s.label for s in data[:3]])
        rng_before = state.rng.bit_generator.state
        a = trainer.generate_images(state, labels, seed=5)
        b = trainer.generate_images(state, labels, seed=5)
        assert a.shape == (3, 3, 32, 32) and np.array_equal(a, b)
        assert state.rng.bit_generator.state == rng_before

    def test_evaluate_range(self, tiny_config, data):
        m = trainer.evaluate(trainer.build_state(tiny_config), data[:2])
        assert 0 <= m.miou <= 1 and 0 <= m.accuracy <= 1
