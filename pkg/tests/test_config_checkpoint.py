import numpy as np
import pytest

from tcd import checkpoint as ckpt
from tcd.backbone import BackboneConfig
from tcd.config import (ENV_VAR, RunConfig, load_config, parse_config_text)
from tcd.correlation import WindowSpec
from tcd.model import ModelConfig, TCDModel


class TestConfigParsing:
    def test_defaults_match_reference_scale(self):
        cfg = RunConfig()
        assert cfg.model.win2 == (2, 4)
        assert cfg.model.win3 == (1, 2)
        assert cfg.train.w_d == 10.0
        assert cfg.train.batch_size == 8
        assert cfg.train.epochs == 200
        assert cfg.train.lr == pytest.approx(1e-4)
        assert cfg.eval.threshold == 0.5
        assert cfg.eval.min_pixels == 0

    def test_parse_overrides(self):
        cfg = parse_config_text(
            "# toy settings\n"
            "model.channels = 16,16,64\n"
            "train.epochs = 20\n"
            "model.no_cm = true\n"
            "eval.min_pixels = 5\n")
        assert cfg.model.channels == (16, 16, 64)
        assert cfg.train.epochs == 20
        assert cfg.model.no_cm is True
        assert cfg.eval.min_pixels == 5
        # untouched sections keep defaults
        assert cfg.train.batch_size == 8

    def test_comments_and_blank_lines(self):
        cfg = parse_config_text("\n# only comments\n   \ntrain.seed = 7 # inline\n")
        assert cfg.train.seed == 7

    def test_unknown_key_rejected(self):
        with pytest.raises(ValueError, match="unknown config key"):
            parse_config_text("train.epoch = 5\n")

    def test_unknown_section_rejected(self):
        with pytest.raises(ValueError, match="section"):
            parse_config_text("optim.lr = 1\n")

    def test_missing_equals(self):
        with pytest.raises(ValueError, match="key = value"):
            parse_config_text("train.epochs 5\n")

    def test_bad_bool(self):
        with pytest.raises(ValueError, match="true/false"):
            parse_config_text("model.no_fa = yes\n")

    def test_round_trip_via_dumps(self):
        cfg = parse_config_text("model.channels = 8,8,32\nmodel.one_way = true\n"
                                "train.lr = 0.001\n")
        again = parse_config_text(cfg.dumps())
        assert again == cfg

    def test_env_var_fallback(self, tmp_path, monkeypatch):
        p = tmp_path / "conf"
        p.write_text("train.epochs = 3\n")
        monkeypatch.setenv(ENV_VAR, str(p))
        assert load_config().train.epochs == 3
        monkeypatch.delenv(ENV_VAR)
        assert load_config().train.epochs == 200

    def test_model_config_bridge(self):
        cfg = parse_config_text("model.channels = 8,8,16\nmodel.win2 = 1,2\n"
                                "model.win3 = 1,1\nmodel.no_ca = true\n")
        mc = cfg.model_config()
        assert mc.backbone.channels == (8, 8, 16)
        assert mc.win2 == WindowSpec(1, 2)
        assert mc.win3 == WindowSpec(1, 1)
        assert mc.no_ca is True


def tiny_model(seed=0, **kw):
    mc = ModelConfig(backbone=BackboneConfig(channels=(4, 4, 8), blocks_per_stage=(1, 1, 1)),
                     win2=WindowSpec(1, 1), win3=WindowSpec(0, 1), decoder_channels=4, **kw)
    return TCDModel(mc, np.random.default_rng(seed))


class TestCheckpoint:
    def test_round_trip_bit_exact(self, tmp_path):
        m = tiny_model()
        path = tmp_path / "m.ckpt"
        ckpt.save(path, m, "train.seed = 1\n")
        before = {p.name: p.data.copy() for p in m.parameters()}
        for p in m.parameters():
            p.data = np.zeros_like(p.data)
        cfg_text = ckpt.load(path, m)
        assert cfg_text == "train.seed = 1\n"
        for p in m.parameters():
            np.testing.assert_array_equal(p.data, before[p.name])

    def test_save_load_save_byte_identical(self, tmp_path):
        m = tiny_model()
        a, b = tmp_path / "a.ckpt", tmp_path / "b.ckpt"
        ckpt.save(a, m, "x.y = 1\n")
        ckpt.load(a, m)
        ckpt.save(b, m, "x.y = 1\n")
        assert a.read_bytes() == b.read_bytes()

    def test_truncated_file(self, tmp_path):
        m = tiny_model()
        path = tmp_path / "m.ckpt"
        ckpt.save(path, m, "")
        raw = path.read_bytes()
        path.write_bytes(raw[:-40])
        with pytest.raises(ckpt.ChecksumMismatch, match="corrupt or truncated"):
            ckpt.load(path, m)

    def test_flipped_byte(self, tmp_path):
        m = tiny_model()
        path = tmp_path / "m.ckpt"
        ckpt.save(path, m, "")
        raw = bytearray(path.read_bytes())
        raw[len(raw) // 2] ^= 0xFF
        path.write_bytes(bytes(raw))
        with pytest.raises(ckpt.ChecksumMismatch):
            ckpt.read(path)

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "not.ckpt"
        path.write_bytes(b"PK\x03\x04" + b"\x00" * 64)
        with pytest.raises(ckpt.BadMagic, match="magic"):
            ckpt.read(path)

    def test_shape_mismatch_names_parameter(self, tmp_path):
        small = tiny_model()
        path = tmp_path / "small.ckpt"
        ckpt.save(path, small, "")
        big = TCDModel(ModelConfig(
            backbone=BackboneConfig(channels=(8, 8, 16), blocks_per_stage=(1, 1, 1)),
            win2=WindowSpec(1, 1), win3=WindowSpec(0, 1), decoder_channels=4),
            np.random.default_rng(1))
        before = {p.name: p.data.copy() for p in big.parameters()}
        with pytest.raises(ckpt.ShapeMismatch, match="does not match"):
            ckpt.load(path, big)
        # nothing was applied
        for p in big.parameters():
            np.testing.assert_array_equal(p.data, before[p.name])

    def test_config_echo_round_trip(self, tmp_path):
        cfg = parse_config_text("model.channels = 4,4,8\nmodel.win2 = 1,1\n"
                                "model.win3 = 0,1\nmodel.decoder_channels = 4\n")
        m = TCDModel(cfg.model_config(), np.random.default_rng(2))
        path = tmp_path / "m.ckpt"
        ckpt.save(path, m, cfg.dumps())
        text, _ = ckpt.read(path)
        assert parse_config_text(text) == cfg
