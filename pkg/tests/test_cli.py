import json
from pathlib import Path

import numpy as np
import pytest
from click.testing import CliRunner

from tcd.cli import main
from tcd.datagen import render_word, save_image

TINY = """
model.channels = 4,4,8
model.blocks_per_stage = 1,1,1
model.decoder_channels = 4
model.win2 = 1,1
model.win3 = 0,1
train.epochs = 2
train.batch_size = 4
train.lr = 0.001
train.samples_per_epoch = 8
train.val_samples = 8
train.seed = 3
data.word_min_len = 3
data.word_max_len = 4
eval.min_pixels = 5
"""


@pytest.fixture(scope="module")
def tiny_config(tmp_path_factory):
    p = tmp_path_factory.mktemp("cfg") / "tiny"
    p.write_text(TINY)
    return str(p)


@pytest.fixture(scope="module")
def trained(tiny_config, tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    res = CliRunner().invoke(main, ["train", "--config", tiny_config,
                                    "--out", str(out)])
    assert res.exit_code == 0, res.output
    json_line = next(l for l in res.output.splitlines() if l.startswith("{"))
    return out, json.loads(json_line)


class TestGenData:
    def test_writes_dataset(self, tiny_config, tmp_path):
        res = CliRunner().invoke(main, ["gen-data", "--config", tiny_config,
                                        "--out", str(tmp_path / "d"), "--count", "6"])
        assert res.exit_code == 0, res.output
        info = json.loads(res.output)
        assert info["count"] == 6
        manifest = json.loads((tmp_path / "d" / "manifest.json").read_text())
        labels = [e["label"] for e in manifest["entries"]]
        assert labels.count("identical") == 3

    def test_manifest_hash_reproducible(self, tiny_config, tmp_path):
        runner = CliRunner()
        hashes = []
        for sub in ("a", "b"):
            res = runner.invoke(main, ["gen-data", "--config", tiny_config,
                                       "--out", str(tmp_path / sub), "--count", "4"])
            assert res.exit_code == 0
            hashes.append(json.loads(res.output)["hash"])
        assert hashes[0] == hashes[1]

    def test_count_zero(self, tiny_config, tmp_path):
        res = CliRunner().invoke(main, ["gen-data", "--config", tiny_config,
                                        "--out", str(tmp_path / "e"), "--count", "0"])
        assert res.exit_code == 0
        manifest = json.loads((tmp_path / "e" / "manifest.json").read_text())
        assert manifest["entries"] == []

    def test_bad_config_path(self, tmp_path):
        res = CliRunner().invoke(main, ["gen-data", "--config",
                                        str(tmp_path / "missing"), "--out", "x"])
        assert res.exit_code != 0


class TestTrain:
    def test_outputs(self, trained):
        out, summary = trained
        assert (out / "best.ckpt").exists()
        assert (out / "last.ckpt").exists()
        assert (out / "train_curves.png").exists()
        log = (out / "train_log.csv").read_text().splitlines()
        assert log[0].startswith("epoch,")
        assert len(log) == 3  # header + 2 epochs
        assert summary["best_epoch"] in (1, 2)

    def test_deterministic_logs(self, tiny_config, tmp_path):
        runner = CliRunner()
        logs = []
        for sub in ("r1", "r2"):
            res = runner.invoke(main, ["train", "--config", tiny_config,
                                       "--out", str(tmp_path / sub)])
            assert res.exit_code == 0, res.output
            text = (tmp_path / sub / "train_log.csv").read_text()
            # drop wall-clock column
            logs.append([",".join(l.split(",")[:-1]) for l in text.splitlines()])
        assert logs[0] == logs[1]

    def test_ablation_flag_changes_model(self, tiny_config, tmp_path):
        res = CliRunner().invoke(main, ["train", "--config", tiny_config,
                                        "--out", str(tmp_path / "ab"), "--no-cm"])
        assert res.exit_code == 0, res.output
        from tcd import checkpoint as ckpt
        text, weights = ckpt.read(tmp_path / "ab" / "best.ckpt")
        assert "model.no_cm = true" in text
        assert any(".cm2." in n for n in weights)


class TestEval:
    def test_report(self, trained, tiny_config, tmp_path):
        out, _ = trained
        runner = CliRunner()
        res = runner.invoke(main, ["gen-data", "--config", tiny_config,
                                   "--out", str(tmp_path / "d"), "--count", "4"])
        assert res.exit_code == 0
        res = runner.invoke(main, ["eval", "--checkpoint", str(out / "best.ckpt"),
                                   "--data", str(tmp_path / "d"),
                                   "--out", str(tmp_path / "rep")])
        assert res.exit_code == 0, res.output
        report = json.loads(res.output)
        assert report["pairs"] == 4
        assert set(report["pixel"]) == {"precision", "recall", "f1", "iou", "oa"}
        assert set(report["classification"]) == {"precision", "recall", "f1", "accuracy"}
        assert (tmp_path / "rep" / "metrics.json").exists()
        assert (tmp_path / "rep" / "metrics.png").exists()

    def test_missing_manifest(self, trained, tmp_path):
        out, _ = trained
        res = CliRunner().invoke(main, ["eval", "--checkpoint", str(out / "best.ckpt"),
                                        "--data", str(tmp_path)])
        assert res.exit_code != 0
        assert "manifest" in res.output

    def test_corrupt_checkpoint(self, trained, tiny_config, tmp_path):
        out, _ = trained
        bad = tmp_path / "bad.ckpt"
        bad.write_bytes((out / "best.ckpt").read_bytes()[:-10])
        res = CliRunner().invoke(main, ["eval", "--checkpoint", str(bad),
                                        "--data", str(tmp_path)])
        assert res.exit_code != 0


class TestCompare:
    def test_verdict_and_maps(self, trained, tmp_path):
        out, _ = trained
        img = tmp_path / "word.png"
        save_image(img, render_word("abc").image)
        res = CliRunner().invoke(main, ["compare", "--checkpoint",
                                        str(out / "best.ckpt"), str(img), str(img),
                                        "--out", str(tmp_path / "cmp")])
        assert res.exit_code == 0, res.output
        verdict = json.loads(res.output)
        assert verdict["verdict"] in ("identical", "different")
        assert verdict["changed_pixels"] >= 0
        for name in ("s_st.png", "s_ts.png", "fused.png"):
            assert (tmp_path / "cmp" / name).exists()

    def test_fused_is_pixel_max(self, trained, tmp_path):
        out, _ = trained
        a = tmp_path / "a.png"
        b = tmp_path / "b.png"
        save_image(a, render_word("abcd").image)
        save_image(b, render_word("abed").image)
        res = CliRunner().invoke(main, ["compare", "--checkpoint",
                                        str(out / "best.ckpt"), str(a), str(b),
                                        "--out", str(tmp_path / "cmp2")])
        assert res.exit_code == 0, res.output
        from PIL import Image
        maps = {n: np.asarray(Image.open(tmp_path / "cmp2" / f"{n}.png"))
                for n in ("s_st", "s_ts", "fused")}
        np.testing.assert_array_equal(maps["fused"],
                                      np.maximum(maps["s_st"], maps["s_ts"]))

    def test_deterministic(self, trained, tmp_path):
        out, _ = trained
        img = tmp_path / "w.png"
        save_image(img, render_word("xyz").image)
        runner = CliRunner()
        outs = []
        for sub in ("c1", "c2"):
            res = runner.invoke(main, ["compare", "--checkpoint",
                                       str(out / "best.ckpt"), str(img), str(img),
                                       "--out", str(tmp_path / sub)])
            assert res.exit_code == 0
            outs.append(res.output)
        assert outs[0] == outs[1]
        assert (tmp_path / "c1" / "fused.png").read_bytes() == \
            (tmp_path / "c2" / "fused.png").read_bytes()

    def test_unreadable_image(self, trained, tmp_path):
        out, _ = trained
        bad = tmp_path / "bad.png"
        bad.write_text("not a png")
        res = CliRunner().invoke(main, ["compare", "--checkpoint",
                                        str(out / "best.ckpt"), str(bad), str(bad),
                                        "--out", str(tmp_path / "c3")])
        assert res.exit_code != 0
