"""DKT1 files, state directories, checkpoints, and config parsing."""

import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from kanpaint.config import RunConfig
from kanpaint.errors import ConfigError, DataError
from kanpaint.io import (MAGIC, load_checkpoint_state, load_state,
                         read_tensor, save_checkpoint, save_state,
                         write_tensor)


class TestDkt1:
    def test_header_layout(self, tmp_path):
        arr = np.arange(6, dtype=np.float64).reshape(2, 3)
        write_tensor(tmp_path / "t.dkt1", arr)
        raw = (tmp_path / "t.dkt1").read_bytes()
        assert raw[:4] == MAGIC == b"DKT1"
        assert struct.unpack_from("<I", raw, 4)[0] == 2
        assert struct.unpack_from("<Q", raw, 8)[0] == 2
        assert struct.unpack_from("<Q", raw, 16)[0] == 3
        assert len(raw) == 4 + 4 + 16 + 6 * 4

    @settings(max_examples=30, deadline=None)
    @given(st.lists(st.integers(1, 5), min_size=0, max_size=4))
    def test_roundtrip_at_float32_precision(self, shape):
        rng = np.random.default_rng(0)
        arr = rng.standard_normal(shape) if shape else np.array(1.25)
        import tempfile
        with tempfile.TemporaryDirectory() as td:
            write_tensor(td + "/x.dkt1", arr)
            back = read_tensor(td + "/x.dkt1")
        assert back.shape == tuple(shape)
        np.testing.assert_array_equal(back, arr.astype(np.float32)
                                      .astype(np.float64))

    def test_bad_magic(self, tmp_path):
        (tmp_path / "bad.dkt1").write_bytes(b"NOPE" + b"\x00" * 16)
        with pytest.raises(DataError, match="magic"):
            read_tensor(tmp_path / "bad.dkt1")

    def test_missing_file(self, tmp_path):
        with pytest.raises(DataError, match="not found"):
            read_tensor(tmp_path / "none.dkt1")

    def test_truncated_payload(self, tmp_path):
        arr = np.ones((4, 4))
        write_tensor(tmp_path / "t.dkt1", arr)
        raw = (tmp_path / "t.dkt1").read_bytes()
        (tmp_path / "t.dkt1").write_bytes(raw[:-8])
        with pytest.raises(DataError, match="truncated"):
            read_tensor(tmp_path / "t.dkt1")


class TestStateDirs:
    def test_manifest_preserves_order_and_shapes(self, tmp_path):
        state = {"b.weight": np.ones((2, 3)), "a.bias": np.zeros(4),
                 "scalar": np.array(2.0)}
        save_state(tmp_path / "s", state)
        manifest = (tmp_path / "s" / "manifest.txt").read_text().splitlines()
        assert [line.split("\t")[0] for line in manifest] \
            == ["b.weight", "a.bias", "scalar"]
        loaded = load_state(tmp_path / "s")
        assert list(loaded) == list(state)
        for k in state:
            np.testing.assert_array_equal(loaded[k], state[k])

    def test_checkpoint_roundtrip(self, tmp_path):
        model = {"w": np.full((2, 2), 0.5)}
        ema = {"w": np.full((2, 2), 0.25)}
        save_checkpoint(tmp_path / "ck", model, ema, "seed = 7\n")
        m, e, text = load_checkpoint_state(tmp_path / "ck")
        np.testing.assert_array_equal(m["w"], model["w"])
        np.testing.assert_array_equal(e["w"], ema["w"])
        assert text == "seed = 7\n"

    def test_missing_checkpoint(self, tmp_path):
        with pytest.raises(DataError, match="not found"):
            load_checkpoint_state(tmp_path / "missing")


class TestRunConfig:
    def test_defaults_match_reference_constants(self):
        cfg = RunConfig()
        assert cfg.schedule.timesteps == 1000
        assert cfg.train.learning_rate == 1e-4
        assert cfg.train.batch_size == 2
        assert cfg.train.ema_rate == 0.995
        assert cfg.model.arch == "CCKKK"
        assert cfg.model.spline_grid_size == 5
        assert cfg.model.spline_order == 3
        cfg.validate()

    def test_text_roundtrip(self):
        cfg = RunConfig()
        cfg.model.arch = "CK"
        cfg.train.steps = 123
        cfg.seed = 9
        clone = RunConfig.from_text(cfg.to_text())
        assert clone.model.arch == "CK"
        assert clone.train.steps == 123
        assert clone.seed == 9
        assert clone.to_text() == cfg.to_text()

    def test_parse_with_comments_and_spacing(self):
        text = """
        # a comment
        seed = 5
        model.arch = CCK   # trailing comment
        train.steps=17
        sample.noise_free_replacement = true
        """
        cfg = RunConfig.from_text(text)
        assert cfg.seed == 5
        assert cfg.model.arch == "CCK"
        assert cfg.train.steps == 17
        assert cfg.sample.noise_free_replacement is True
        assert "model.arch" in cfg.explicit_keys

    def test_unknown_key_rejected(self):
        with pytest.raises(ConfigError, match="unknown config key"):
            RunConfig.from_text("model.depth = 3")
        with pytest.raises(ConfigError, match="unknown config section"):
            RunConfig.from_text("nope.x = 3")

    def test_bad_value_rejected(self):
        with pytest.raises(ConfigError, match="cannot parse"):
            RunConfig.from_text("train.steps = soon")

    def test_validation_catches_bad_fields(self):
        cfg = RunConfig()
        cfg.model.arch = "CXK"
        with pytest.raises(ConfigError):
            cfg.validate()
        cfg = RunConfig()
        cfg.train.target_mode = "paper"
        with pytest.raises(ConfigError):
            cfg.validate()
        cfg = RunConfig()
        cfg.schedule.beta_start = 0.5
        cfg.schedule.beta_end = 0.1
        with pytest.raises(ConfigError):
            cfg.validate()

    def test_ablate_arch_list(self):
        cfg = RunConfig()
        assert cfg.ablate_archs() == ["CCCCK", "CCCKK", "CCKKK", "CKKKK"]

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError, match="not found"):
            RunConfig.from_file(tmp_path / "none.cfg")
