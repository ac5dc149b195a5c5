"""End-to-end command behavior: exit codes, stdout contract, files on disk."""

import numpy as np
import pytest

from conftest import synthetic_shapes
from edgenet import evalkit
from edgenet.backbone import NetworkConfig, build, load, save
from edgenet.cli import main
from edgenet.config import load_config
from edgenet.datapipe import load_dataset, load_gt, load_probability, save_image_png
from edgenet.errors import ConfigError

TINY_NET = """
channels = 4,4,4,4,4
subblocks = 1,1,1,1,1
downsample = 1,2,4,8,16
heads = 2
window_radius = 1
"""


def write_pairs(tmp_path, n=2, size=24):
    rng = np.random.default_rng(5)
    lines = []
    for i in range(n):
        img = rng.random((3, size, size)).astype(np.float32)
        gt = (rng.random((size, size)) < 0.2).astype(np.float32)
        save_image_png(img, tmp_path / f"img{i}.png")
        save_image_png(gt, tmp_path / f"img{i}.gt.png")
        lines.append(f"img{i}.png\timg{i}.gt.png")
    manifest = tmp_path / "manifest.txt"
    manifest.write_text("\n".join(lines) + "\n")
    return manifest


class TestAugment:
    def test_single_entry_emits_108_samples(self, tmp_path, capsys):
        manifest = write_pairs(tmp_path, n=1)
        cfg = tmp_path / "cfg.txt"
        cfg.write_text("crop_size = 10\n")
        out_dir = tmp_path / "aug"
        rc = main(["augment", "--manifest", str(manifest), "--out-dir", str(out_dir),
                   "--config", str(cfg)])
        assert rc == 0
        out = capsys.readouterr().out
        assert "emitted 108" in out
        written = load_dataset(out_dir / "manifest.txt")
        assert len(written) == 108

    def test_empty_manifest_fails(self, tmp_path, capsys):
        manifest = tmp_path / "manifest.txt"
        manifest.write_text("")
        rc = main(["augment", "--manifest", str(manifest), "--out-dir", str(tmp_path / "o")])
        assert rc == 1
        assert "error" in capsys.readouterr().err

    def test_mismatched_pair_fails(self, tmp_path, capsys):
        rng = np.random.default_rng(0)
        save_image_png(rng.random((3, 20, 20)).astype(np.float32), tmp_path / "a.png")
        save_image_png((rng.random((10, 10)) < 0.5).astype(np.float32), tmp_path / "a.gt.png")
        manifest = tmp_path / "manifest.txt"
        manifest.write_text("a.png\ta.gt.png\n")
        rc = main(["augment", "--manifest", str(manifest), "--out-dir", str(tmp_path / "o")])
        assert rc == 1


class TestTrain:
    def _train_cfg(self, tmp_path, steps=6, extra=""):
        cfg = tmp_path / "train.cfg"
        cfg.write_text(TINY_NET + f"steps = {steps}\nbatch_size = 2\nlr = 0.01\n" + extra)
        return cfg

    def _data(self, tmp_path):
        rng = np.random.default_rng(9)
        lines = []
        for i in range(2):
            img = rng.random((3, 16, 16)).astype(np.float32)
            gt = (rng.random((16, 16)) < 0.25).astype(np.float32)
            save_image_png(img, tmp_path / f"t{i}.png")
            save_image_png(gt, tmp_path / f"t{i}.gt.png")
            lines.append(f"t{i}.png\tt{i}.gt.png")
        manifest = tmp_path / "manifest.txt"
        manifest.write_text("\n".join(lines) + "\n")
        return manifest

    def test_train_writes_checkpoint_and_log(self, tmp_path, capsys):
        cfg = self._train_cfg(tmp_path)
        manifest = self._data(tmp_path)
        ckpt = tmp_path / "net.ckpt"
        rc = main(["train", "--config", str(cfg), "--data", str(manifest),
                   "--checkpoint-out", str(ckpt)])
        assert rc == 0
        out = capsys.readouterr().out
        assert "steps 6" in out
        assert ckpt.exists()
        log = ckpt.with_suffix(ckpt.suffix + ".loss.csv")
        assert log.exists()
        header = log.read_text().splitlines()[0]
        assert header.startswith("step,total,s1")
        assert load(ckpt).step_count == 6

    def test_resume_continues_step_counter(self, tmp_path):
        manifest = self._data(tmp_path)
        ckpt = tmp_path / "net.ckpt"
        rc = main(["train", "--config", str(self._train_cfg(tmp_path, steps=3)),
                   "--data", str(manifest), "--checkpoint-out", str(ckpt)])
        assert rc == 0
        cfg2 = self._train_cfg(tmp_path, steps=2, extra=f"resume = {ckpt}\n")
        rc = main(["train", "--config", str(cfg2), "--data", str(manifest),
                   "--checkpoint-out", str(ckpt)])
        assert rc == 0
        assert load(ckpt).step_count == 5

    def test_invalid_config_key_rejected(self, tmp_path, capsys):
        cfg = tmp_path / "bad.cfg"
        cfg.write_text("learning_rate_typo = 3\n")
        rc = main(["train", "--config", str(cfg), "--data", str(tmp_path),
                   "--checkpoint-out", str(tmp_path / "x.ckpt")])
        assert rc == 1
        assert "unknown config key" in capsys.readouterr().err

    def test_unknown_key_raises_config_error_directly(self, tmp_path):
        cfg = tmp_path / "bad.cfg"
        cfg.write_text("nonsense = 1\n")
        with pytest.raises(ConfigError):
            load_config(cfg)


class TestInfer:
    def _checkpoint(self, tmp_path):
        cfg = NetworkConfig(channels=(4, 4, 4, 4, 4), subblocks=(1, 1, 1, 1, 1),
                            downsample=(1, 2, 4, 8, 16), heads=2, window_radius=1)
        net = build(cfg, seed=1)
        path = tmp_path / "net.ckpt"
        save(net, path)
        return path

    def test_single_image_single_png(self, tmp_path):
        ckpt = self._checkpoint(tmp_path)
        rng = np.random.default_rng(1)
        save_image_png(rng.random((3, 64, 64)).astype(np.float32), tmp_path / "in.png")
        out_dir = tmp_path / "pred"
        rc = main(["infer", "--checkpoint", str(ckpt), "--out-dir", str(out_dir),
                   str(tmp_path / "in.png")])
        assert rc == 0
        files = sorted(p.name for p in out_dir.glob("*.png"))
        assert files == ["in_fused.png"]
        assert load_probability(out_dir / "in_fused.png").shape == (64, 64)

    def test_side_maps_flag_writes_seven(self, tmp_path):
        ckpt = self._checkpoint(tmp_path)
        rng = np.random.default_rng(2)
        save_image_png(rng.random((3, 32, 32)).astype(np.float32), tmp_path / "in.png")
        out_dir = tmp_path / "pred"
        rc = main(["infer", "--checkpoint", str(ckpt), "--out-dir", str(out_dir),
                   "--side-maps", str(tmp_path / "in.png")])
        assert rc == 0
        names = sorted(p.name for p in out_dir.glob("*.png"))
        assert names == ["in_fused.png"] + [f"in_s{i}.png" for i in range(1, 7)]

    def test_indivisible_resolution_padded_and_cropped(self, tmp_path, capsys):
        ckpt = self._checkpoint(tmp_path)
        rng = np.random.default_rng(3)
        save_image_png(rng.random((3, 65, 65)).astype(np.float32), tmp_path / "odd.png")
        out_dir = tmp_path / "pred"
        rc = main(["infer", "--checkpoint", str(ckpt), "--out-dir", str(out_dir),
                   str(tmp_path / "odd.png")])
        assert rc == 0
        assert "padding" in capsys.readouterr().err
        assert load_probability(out_dir / "odd_fused.png").shape == (65, 65)

    def test_missing_checkpoint_fails(self, tmp_path):
        rc = main(["infer", "--checkpoint", str(tmp_path / "no.ckpt"),
                   "--out-dir", str(tmp_path), "img.png"])
        assert rc == 1


class TestEval:
    def _toy_dirs(self, tmp_path, perfect=False):
        rng = np.random.default_rng(4)
        pred_dir = tmp_path / "pred"
        gt_dir = tmp_path / "gt"
        pred_dir.mkdir()
        gt_dir.mkdir()
        for i in range(3):
            gt = (rng.random((8, 8)) < 0.25).astype(np.float32)
            prob = gt if perfect else rng.random((8, 8)).astype(np.float32)
            save_image_png(prob, pred_dir / f"im{i}_fused.png")
            save_image_png(gt, gt_dir / f"im{i}.png")
        return pred_dir, gt_dir

    def test_perfect_predictions_score_one(self, tmp_path, capsys):
        pred_dir, gt_dir = self._toy_dirs(tmp_path, perfect=True)
        rc = main(["eval", "--pred-dir", str(pred_dir), "--gt-dir", str(gt_dir)])
        assert rc == 0
        out = dict(line.split() for line in capsys.readouterr().out.strip().splitlines())
        assert float(out["ods"]) == pytest.approx(1.0)
        assert float(out["ois"]) == pytest.approx(1.0)
        assert float(out["ap"]) == pytest.approx(1.0)

    def test_printed_values_match_library_evaluate(self, tmp_path, capsys):
        pred_dir, gt_dir = self._toy_dirs(tmp_path)
        rc = main(["eval", "--pred-dir", str(pred_dir), "--gt-dir", str(gt_dir),
                   "--report", str(tmp_path / "pr.csv")])
        assert rc == 0
        out = dict(line.split() for line in capsys.readouterr().out.strip().splitlines())
        preds = [load_probability(p) for p in sorted(pred_dir.glob("*.png"))]
        gts = [load_gt(p) for p in sorted(gt_dir.glob("*.png"))]
        report = evalkit.evaluate(preds, gts, load_config(None).eval_config())
        assert float(out["ods"]) == pytest.approx(report.ods, abs=1e-6)
        assert float(out["ois"]) == pytest.approx(report.ois, abs=1e-6)
        assert float(out["ap"]) == pytest.approx(report.ap, abs=1e-6)
        assert (tmp_path / "pr.csv").exists()

    def test_missing_gt_named_in_error(self, tmp_path, capsys):
        pred_dir, gt_dir = self._toy_dirs(tmp_path)
        (gt_dir / "im1.png").unlink()
        rc = main(["eval", "--pred-dir", str(pred_dir), "--gt-dir", str(gt_dir)])
        assert rc == 1
        assert "im1" in capsys.readouterr().err


class TestShapesFixture:
    def test_synthetic_scenes_are_valid_training_data(self, shape_dataset):
        assert len(shape_dataset) == 4
        for img, gt in shape_dataset:
            assert img.shape == (3, 64, 64) and gt.shape == (64, 64)
            assert set(np.unique(gt)).issubset({0.0, 1.0})
            assert 20 < gt.sum() < 64 * 64 * 0.5
