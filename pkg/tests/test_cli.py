"""Workflow orchestration and the command-line surface."""

import hashlib
import json

import numpy as np
import pytest

from kanpaint.cli import main
from kanpaint.config import RunConfig
from kanpaint.data import SliceRecord, load_dataset
from kanpaint.errors import DataError, IncompatibilityError
from kanpaint.io import read_tensor, write_tensor
from kanpaint.workflows import (load_records, run_evaluate, run_gen_data,
                                run_inpaint, run_train)

from conftest import tiny_config


def write_config(path, cfg: RunConfig) -> str:
    path.write_text(cfg.to_text())
    return str(path)


class TestTrainWorkflow:
    def test_checkpoint_and_curve_exist(self, tmp_path):
        cfg = tiny_config()
        result = run_train(cfg, tmp_path / "run")
        assert (result.checkpoint_dir / "model" / "manifest.txt").exists()
        assert (result.checkpoint_dir / "ema" / "manifest.txt").exists()
        assert (result.checkpoint_dir / "config.txt").exists()
        assert result.loss_curve_path.exists()
        assert len(result.losses) == cfg.train.steps

    def test_same_seed_gives_identical_loss_curves(self, tmp_path):
        cfg = tiny_config()
        r1 = run_train(cfg, tmp_path / "a")
        r2 = run_train(tiny_config(), tmp_path / "b")
        assert r1.loss_curve_path.read_bytes() == r2.loss_curve_path.read_bytes()

    def test_different_seed_changes_curve(self, tmp_path):
        r1 = run_train(tiny_config(), tmp_path / "a")
        r2 = run_train(tiny_config(seed=5), tmp_path / "b")
        assert r1.losses != r2.losses

    def test_indivisible_image_size_fails_before_training(self, tmp_path):
        cfg = tiny_config(**{"model.arch": "CCCCC"})  # 16 not divisible by 32
        from kanpaint.errors import ConfigError
        with pytest.raises(ConfigError, match="divisible"):
            run_train(cfg, tmp_path / "run")


class TestInpaintWorkflow:
    def test_outputs_and_reruns_are_checksum_stable(self, tmp_path):
        cfg = tiny_config()
        result = run_train(cfg, tmp_path / "run")
        records = load_records(cfg)

        def digest():
            out = tmp_path / f"inp{np.random.randint(1 << 31)}"
            run_inpaint(cfg, result.checkpoint_dir, records, out)
            h = hashlib.sha256()
            for f in sorted(out.glob("*.dkt1")):
                h.update(f.read_bytes())
            return h.hexdigest(), out

        d1, out1 = digest()
        d2, out2 = digest()
        assert d1 == d2
        stems = sorted(p.stem for p in out1.glob("*.dkt1"))
        assert len(stems) == len(records)
        for stem in stems:
            assert (out1 / f"{stem}.png").exists()
            assert (out1 / f"{stem}.json").exists()

    def test_zero_mask_task_returns_input(self, tmp_path):
        cfg = tiny_config()
        result = run_train(cfg, tmp_path / "run")
        base = load_records(cfg)[0]
        record = SliceRecord(base.image, base.tumor_mask,
                             np.zeros_like(base.healthy_mask),
                             "zeromask", 0)
        out = tmp_path / "inp"
        entries = run_inpaint(cfg, result.checkpoint_dir, [record], out)
        produced = read_tensor(out / "zeromask_s000.dkt1")
        np.testing.assert_allclose(produced, base.image[0], atol=1e-7)
        assert entries[0]["metrics"]["masked_mse"] is None

    def test_incompatible_config_rejected(self, tmp_path):
        cfg = tiny_config()
        result = run_train(cfg, tmp_path / "run")
        other = tiny_config()
        other.set_key("model.base_channels", "8")
        other.explicit_keys = frozenset({"model.base_channels"})
        with pytest.raises(IncompatibilityError, match="base_channels"):
            run_inpaint(other, result.checkpoint_dir, load_records(cfg),
                        tmp_path / "x")


class TestEvaluateWorkflow:
    def test_identical_sets_score_perfectly(self, tmp_path, rng):
        pred = tmp_path / "pred"
        pred.mkdir()
        for i in range(3):
            write_tensor(pred / f"im{i}.dkt1", rng.random((16, 16)))
        report = run_evaluate(pred, pred, tmp_path / "eval")
        assert report.mean_psnr == float("inf")
        assert report.mean_ssim == pytest.approx(1.0)
        assert report.mean_mse == 0.0
        assert (tmp_path / "eval" / "report.csv").exists()
        assert (tmp_path / "eval" / "summary.txt").exists()

    def test_constant_offset_matches_analytic(self, tmp_path, rng):
        pred = tmp_path / "pred"
        ref = tmp_path / "ref"
        pred.mkdir(), ref.mkdir()
        a = rng.random((16, 16)) * 0.8
        write_tensor(ref / "x.dkt1", a)
        write_tensor(pred / "x.dkt1", a + 0.1)
        report = run_evaluate(pred, ref, tmp_path / "eval")
        assert report.mean_mse == pytest.approx(0.01, abs=1e-9)
        assert report.mean_psnr == pytest.approx(20.0, abs=1e-5)

    def test_aggregate_equals_mean_of_rows(self, tmp_path, rng):
        pred = tmp_path / "pred"
        ref = tmp_path / "ref"
        pred.mkdir(), ref.mkdir()
        for i in range(4):
            a = rng.random((16, 16))
            write_tensor(ref / f"i{i}.dkt1", a)
            write_tensor(pred / f"i{i}.dkt1",
                         np.clip(a + 0.03 * rng.standard_normal((16, 16)),
                                 0, 1))
        report = run_evaluate(pred, ref, tmp_path / "eval")
        assert abs(report.mean_mse
                   - np.mean([r.mse for r in report.rows])) < 1e-12

    def test_unmatched_ids_listed_and_aborted(self, tmp_path, rng):
        pred = tmp_path / "pred"
        ref = tmp_path / "ref"
        pred.mkdir(), ref.mkdir()
        write_tensor(pred / "a.dkt1", rng.random((16, 16)))
        write_tensor(ref / "b.dkt1", rng.random((16, 16)))
        with pytest.raises(DataError, match="a, b"):
            run_evaluate(pred, ref, tmp_path / "eval")


class TestCliSurface:
    def test_full_pipeline_via_argv(self, tmp_path):
        cfg_path = write_config(tmp_path / "c.cfg", tiny_config())
        out = tmp_path / "out"
        assert main(["gen-data", "--config", cfg_path, "--out", str(out)]) == 0
        dataset = out / "dataset"
        assert len(load_dataset(dataset)) == 3
        assert main(["train", "--config", cfg_path, "--out", str(out)]) == 0
        assert main(["inpaint", "--config", cfg_path,
                     "--checkpoint", str(out / "checkpoint"),
                     "--data", str(dataset), "--out", str(out)]) == 0
        produced = sorted((out / "inpainted").glob("*.dkt1"))
        assert len(produced) == 3
        refs = tmp_path / "refs"
        refs.mkdir()
        for rec in load_dataset(dataset):
            stem = f"{rec.subject_id}_s{rec.slice_index:03d}"
            write_tensor(refs / f"{stem}.dkt1", rec.image[0])
        assert main(["evaluate", "--pred", str(out / "inpainted"),
                     "--ref", str(refs), "--out", str(out / "eval"),
                     "--paper-reference"]) == 0
        summary = (out / "eval" / "summary.txt").read_text()
        assert "reference (not reproduced)" in summary

    def test_invalid_arch_exits_2(self, tmp_path):
        bad = tmp_path / "bad.cfg"
        bad.write_text("model.arch = CXK\n")
        assert main(["train", "--config", str(bad)]) == 2

    def test_missing_checkpoint_exits_3(self, tmp_path):
        cfg_path = write_config(tmp_path / "c.cfg", tiny_config())
        code = main(["inpaint", "--config", cfg_path,
                     "--checkpoint", str(tmp_path / "none"),
                     "--out", str(tmp_path)])
        assert code == 3

    def test_incompatible_checkpoint_exits_4(self, tmp_path):
        cfg = tiny_config()
        result = run_train(cfg, tmp_path / "run")
        conflicting = tiny_config()
        conflicting.model.base_channels = 8
        text = conflicting.to_text()
        cfg_path = tmp_path / "c.cfg"
        cfg_path.write_text(text)
        code = main(["inpaint", "--config", str(cfg_path),
                     "--checkpoint", str(result.checkpoint_dir),
                     "--out", str(tmp_path / "o")])
        assert code == 4

    def test_gen_data_determinism(self, tmp_path):
        cfg_path = write_config(tmp_path / "c.cfg", tiny_config())
        for name in ("a", "b"):
            assert main(["gen-data", "--config", cfg_path,
                         "--out", str(tmp_path / name)]) == 0
        a = sorted((tmp_path / "a" / "dataset").rglob("*.dkt1"))
        b = sorted((tmp_path / "b" / "dataset").rglob("*.dkt1"))
        for fa, fb in zip(a, b):
            assert fa.read_bytes() == fb.read_bytes()
