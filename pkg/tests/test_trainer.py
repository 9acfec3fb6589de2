import struct

import numpy as np
import pytest

from monosep import checkpoint, trainer
from monosep.data import make_example, speaker_pools
from monosep.trainer import DivergenceError, TrainConfig

TINY = {"n_basis": 8, "bottleneck": 6, "hidden": 8, "dilations": [1, 2]}


def examples(counts=(2, 2), duration=0.5):
    pools = speaker_pools({"train": 6, "valid": 4, "test": 4})
    out = []
    for c, n in zip((2, 3), counts):
        for i in range(n):
            mix, srcs, _, _ = make_example(0, 0, i, c, pools["train"], duration)
            out.append((f"c{c}_{i}", mix.astype(np.float32), srcs.astype(np.float32)))
    return out


def quiet(_):
    pass


def cfg(**kw):
    return TrainConfig(**{"epochs": 2, "batch_size": 2, "model": dict(TINY), **kw})


class TestCheckpointFormat:
    def test_round_trip(self, tmp_path, rng):
        tensors = {"a": rng.standard_normal((2, 3)).astype(np.float32),
                   "b": np.arange(4, dtype=np.int64), "c": np.float64(2.5) * np.ones(())}
        checkpoint.save(tmp_path / "x.ckpt", tensors, {"k": [1, 2]})
        got, meta = checkpoint.load(tmp_path / "x.ckpt")
        assert meta == {"k": [1, 2]}
        for k, v in tensors.items():
            assert got[k].dtype == v.dtype and np.array_equal(got[k], v)

    def test_bad_magic(self, tmp_path):
        (tmp_path / "x").write_bytes(b"NOTACKPT" + b"\0" * 20)
        with pytest.raises(checkpoint.CheckpointError, match="magic"):
            checkpoint.load(tmp_path / "x")

    def test_version(self, tmp_path):
        (tmp_path / "x").write_bytes(checkpoint.MAGIC + struct.pack("<I", 99))
        with pytest.raises(checkpoint.CheckpointError, match="version 99"):
            checkpoint.load(tmp_path / "x")

    def test_truncated(self, tmp_path, rng):
        checkpoint.save(tmp_path / "x", {"a": rng.standard_normal(10)}, {})
        data = (tmp_path / "x").read_bytes()
        (tmp_path / "y").write_bytes(data[:30])
        with pytest.raises(checkpoint.CheckpointError, match="truncated"):
            checkpoint.load(tmp_path / "y")

    def test_missing_file(self, tmp_path):
        with pytest.raises(checkpoint.CheckpointError, match="cannot read"):
            checkpoint.load(tmp_path / "nope")

    def test_unsupported_dtype(self, tmp_path):
        with pytest.raises(checkpoint.CheckpointError):
            checkpoint.save(tmp_path / "x", {"a": np.zeros(2, np.complex64)}, {})


class TestTraining:
    def test_zero_epochs_is_init(self, tmp_path):
        c = cfg(epochs=0)
        trainer.train(c, examples(), out_dir=tmp_path, log=quiet)
        model, meta, _ = trainer.load_checkpoint(tmp_path / "best.ckpt")
        init = trainer.init_model(c)
        assert meta["epoch"] == 0
        for k, p in init.params().items():
            assert np.array_equal(p, model.params()[k])

    def test_deterministic(self, tmp_path):
        data = examples()
        for d in ("a", "b"):
            trainer.train(cfg(), data, data[:1], out_dir=tmp_path / d, log=quiet)
        for f in ("best.ckpt", "last.ckpt", "loss.csv"):
            assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()

    def test_round_trip_forward_bitwise(self, tmp_path):
        model, _, _ = trainer.train(cfg(epochs=1), examples(), out_dir=tmp_path, log=quiet)
        x = examples()[0][1]
        before = model.forward(x, 2)
        loaded, meta, tensors = trainer.load_checkpoint(tmp_path / "last.ckpt")
        assert np.array_equal(loaded.forward(x, 2), before)
        assert meta["train"]["regime"] == "two" and meta["rng"] is not None
        assert int(tensors["adam.step"][0]) == 1  # regime "two" keeps 2 examples: one batch

    def test_step_changes_parameters(self):
        c = cfg(epochs=1, batch_size=8)
        before = {k: p.copy() for k, p in trainer.init_model(c).params().items()}
        model, _, _ = trainer.train(c, examples(), log=quiet)
        assert any(not np.array_equal(before[k], p) for k, p in model.params().items())

    def test_history_and_log(self):
        lines = []
        _, _, hist = trainer.train(cfg(), examples(), examples()[:1], log=lines.append)
        assert [h["epoch"] for h in hist] == [1, 2]
        assert len(lines) == 2 and "train" in lines[0] and "valid" in lines[0]

    def test_divergence_reports_position(self):
        c = cfg()
        model = trainer.init_model(c)
        model.decoder.params["basis"][...] = np.nan
        with pytest.raises(DivergenceError, match="epoch 1, batch 0"):
            trainer.train(c, examples(), model=model, log=quiet)

    def test_empty_regime(self):
        with pytest.raises(ValueError, match="regime"):
            trainer.train(cfg(regime="three"), examples((2, 0)), log=quiet)

    def test_unknown_regime(self):
        with pytest.raises(ValueError):
            TrainConfig(regime="four")

    def test_unified_interleaves(self):
        data = examples((3, 3))
        order = trainer.epoch_order(data, "two-and-three", np.random.default_rng(0))
        counts = [data[i][2].shape[0] for i in order]
        assert counts == [2, 3] * 3
        assert sorted(order) == list(range(6))

    def test_checkpoint_shape_mismatch(self, tmp_path):
        trainer.train(cfg(epochs=0), examples(), out_dir=tmp_path, log=quiet)
        tensors, meta = checkpoint.load(tmp_path / "last.ckpt")
        tensors["decoder.basis"] = np.zeros((3, 3), np.float32)
        checkpoint.save(tmp_path / "bad.ckpt", tensors, meta)
        with pytest.raises(checkpoint.CheckpointError, match="decoder.basis"):
            trainer.load_checkpoint(tmp_path / "bad.ckpt")


class TestEvaluate:
    def test_oracle(self):
        model = trainer.init_model(cfg())
        recs, counts = trainer.evaluate(model, examples())
        assert counts == [(2, 2), (2, 2), (3, 3), (3, 3)]
        assert all(len(r.si_snri) == r.n_true for r in recs)

    def test_rank_mode(self):
        model = trainer.init_model(cfg())
        recs, counts = trainer.evaluate(model, examples(), count_mode="rank")
        assert len(recs) == 4 and all(n >= 1 for _, n in counts)

    def test_empty(self):
        with pytest.raises(ValueError, match="empty"):
            trainer.evaluate(trainer.init_model(cfg()), [])

    def test_count_examples(self):
        rows = trainer.count_examples(trainer.init_model(cfg()), examples())
        assert [r[0] for r in rows] == [2, 2, 3, 3]
        assert all(0 <= g <= 19 and 1 <= r <= 20 for _, g, r in rows)


def test_sub_rng_independent():
    a = trainer.sub_rng(0, "init").random(4)
    b = trainer.sub_rng(0, "shuffle").random(4)
    assert not np.allclose(a, b)
    assert np.array_equal(a, trainer.sub_rng(0, "init").random(4))
