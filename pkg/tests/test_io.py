import json

import numpy as np
import pytest

from speclip import checkpoint as ckpt
from speclip import config as cfgmod
from speclip import mtx, training
from speclip.errors import CorruptCheckpoint, VersionMismatch


class TestMtxLite:
    def test_round_trip_exact(self, tmp_path):
        w = np.random.default_rng(0).standard_normal((5, 3)) * 1e-7
        path = tmp_path / "w.mtx"
        mtx.write_mtx(path, w)
        assert np.array_equal(mtx.read_mtx(path), w)

    def test_header_and_count_validation(self, tmp_path):
        p = tmp_path / "bad.mtx"
        p.write_text("2 2\n1 2 3\n")
        with pytest.raises(ValueError, match="expected 4 values"):
            mtx.read_mtx(p)
        p.write_text("x 2\n1 2\n")
        with pytest.raises(ValueError, match="header"):
            mtx.read_mtx(p)
        p.write_text("2 2\n1 2 3 nan\n")
        with pytest.raises(ValueError, match="finite"):
            mtx.read_mtx(p)

    def test_reads_any_whitespace_layout(self, tmp_path):
        p = tmp_path / "w.mtx"
        p.write_text("2 3\n1 2\n3 4 5 6\n")
        assert np.array_equal(mtx.read_mtx(p), [[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]])


class TestCheckpoint:
    @pytest.fixture()
    def run(self):
        cfg = training.TrainConfig(task="clusters", optimizer="muon",
                                   method="spectral_soft_cap", sigma_max=2.0,
                                   lr=0.2, steps=24, seed=3, batch_size=16)
        return training.train(cfg)

    def test_round_trip_weights_bit_identical(self, run, tmp_path):
        path = tmp_path / "run.splc"
        ckpt.save_checkpoint(path, run)
        cfg, resume = ckpt.load_checkpoint(path)
        assert cfg.to_dict() == run.config.to_dict()
        assert resume.step == 24
        for key, w in run.params.items():
            assert np.array_equal(resume.params[key], w)
        for key, m in run.opt_state.m.items():
            assert np.array_equal(resume.opt_state.m[key], m)

    def test_save_load_save_byte_identical(self, run, tmp_path):
        a, b = tmp_path / "a.splc", tmp_path / "b.splc"
        ckpt.save_checkpoint(a, run)
        cfg, resume = ckpt.load_checkpoint(a)
        replica = training.TrainResult(
            config=cfg, model_spec=cfg.model_spec(), params=resume.params,
            opt_state=resume.opt_state, logs=[], summary={"step": resume.step})
        ckpt.save_checkpoint(b, replica)
        assert a.read_bytes() == b.read_bytes()

    def test_truncated_file_rejected(self, run, tmp_path):
        path = tmp_path / "run.splc"
        ckpt.save_checkpoint(path, run)
        blob = path.read_bytes()
        path.write_bytes(blob[:len(blob) - 40])
        with pytest.raises(CorruptCheckpoint):
            ckpt.load_checkpoint(path)

    def test_bad_magic_rejected(self, run, tmp_path):
        path = tmp_path / "run.splc"
        ckpt.save_checkpoint(path, run)
        blob = bytearray(path.read_bytes())
        blob[:4] = b"NOPE"
        path.write_bytes(bytes(blob))
        with pytest.raises(CorruptCheckpoint):
            ckpt.load_checkpoint(path)

    def test_version_mismatch_hard_error(self, run, tmp_path):
        path = tmp_path / "run.splc"
        ckpt.save_checkpoint(path, run)
        blob = bytearray(path.read_bytes())
        blob[4] = 99
        path.write_bytes(bytes(blob))
        with pytest.raises(VersionMismatch):
            ckpt.load_checkpoint(path)

    def test_resume_equals_uninterrupted_run(self, tmp_path):
        cfg = training.TrainConfig(task="clusters", optimizer="muon",
                                   method="spectral_soft_cap", sigma_max=2.0,
                                   lr=0.2, steps=30, seed=4, batch_size=16)
        full = training.train(cfg)
        partial = training.train(cfg, stop_after=15)
        path = tmp_path / "half.splc"
        ckpt.save_checkpoint(path, partial)
        loaded_cfg, resume = ckpt.load_checkpoint(path)
        resumed = training.train(loaded_cfg, resume=resume)
        assert abs(resumed.summary["final_loss"]
                   - full.summary["final_loss"]) <= 1e-12

    def test_adamw_buffers_round_trip(self, tmp_path):
        cfg = training.TrainConfig(task="clusters", optimizer="adamw",
                                   method="weight_decay", lam=0.1, lr=0.05,
                                   steps=6, seed=5, batch_size=16)
        run = training.train(cfg)
        path = tmp_path / "adam.splc"
        ckpt.save_checkpoint(path, run)
        _, resume = ckpt.load_checkpoint(path)
        for key, v in run.opt_state.v.items():
            assert np.array_equal(resume.opt_state.v[key], v)


class TestRunConfig:
    def test_round_trip(self):
        cfg = training.TrainConfig(task="charlm", lr=0.5, sigma_max=3.0)
        doc = json.loads(cfgmod.dump_config(cfg))
        assert cfgmod.config_from_dict(doc) == cfg

    def test_unknown_fields_rejected(self):
        with pytest.raises(ValueError, match="unknown config fields"):
            cfgmod.config_from_dict({"task": "clusters", "dropout": 0.5})

    def test_defaults_recorded_explicitly(self):
        doc = json.loads(cfgmod.dump_config(training.TrainConfig()))
        assert doc["schedule"] == "linear"
        assert doc["update_norm_premise"] == "inflated"
        assert set(doc) == {f.name for f in
                            __import__("dataclasses").fields(training.TrainConfig)}
