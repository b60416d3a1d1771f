import math
import struct
from dataclasses import replace

import numpy as np
import pytest

from simtrans.data import ParallelCorpus
from simtrans.errors import FormatError, NumericError, ShapeError
from simtrans.model import TransformerConfig, init_params
from simtrans.subword import EOS_ID, build_vocab
from simtrans.tasks import copy_corpus
from simtrans.training import (
    CheckpointMeta,
    TrainConfig,
    TrainingAborted,
    config_hash,
    config_payload,
    load_checkpoint,
    read_train_log,
    save_checkpoint,
    train,
    validate,
)

SMALL = TransformerConfig(vocab_size=24, num_layers=1, num_heads=2, d_model=16, max_positions=32)
QUICK = TrainConfig(max_steps=6, validate_every=2, lr=1e-3, warmup=2, dropout=0.1, max_tokens=40, seed=3)


@pytest.fixture(scope="module")
def copy_data():
    corpus = copy_corpus(40, 20, seed=0)
    vocab = build_vocab([corpus.sources, corpus.targets])
    dev = ParallelCorpus(corpus.pairs[:5], "xx", "xx")
    return corpus, dev, vocab


def test_defaults_follow_reported_configuration():
    c = TrainConfig()
    assert (c.beta1, c.beta2, c.lr, c.warmup, c.weight_decay) == (0.9, 0.98, 5e-4, 4000, 1e-4)
    assert (c.label_smoothing, c.dropout, c.clip_norm, c.max_tokens, c.valid_beam) == (0.1, 0.3, 0.0, 4096, 5)


class TestCheckpoint:
    def meta(self):
        return CheckpointMeta(7, 12.5, config_hash(config_payload(SMALL)))

    def test_roundtrip_bit_exact(self, tmp_path):
        params = init_params(SMALL, 1)
        save_checkpoint(params, self.meta(), tmp_path / "c.bin", config_payload(SMALL))
        loaded, meta, cfg = load_checkpoint(tmp_path / "c.bin", SMALL)
        assert list(loaded) == list(params)
        assert all(loaded[k].tobytes() == params[k].tobytes() for k in params)
        assert (meta.step, meta.dev_bleu, meta.config_hash) == (7, 12.5, self.meta().config_hash)
        assert cfg["model"]["d_model"] == 16

    def test_header(self, tmp_path):
        save_checkpoint(init_params(SMALL, 1), self.meta(), tmp_path / "c.bin")
        data = (tmp_path / "c.bin").read_bytes()
        assert data[:8] == b"SMTRCKPT"
        assert struct.unpack("<I", data[8:12]) == (1,)
        assert data[12:44].hex() == self.meta().config_hash

    @pytest.mark.parametrize("cut", [5, 40, 200, -1])
    def test_truncated(self, tmp_path, cut):
        save_checkpoint(init_params(SMALL, 1), self.meta(), tmp_path / "c.bin")
        data = (tmp_path / "c.bin").read_bytes()
        (tmp_path / "t.bin").write_bytes(data[:cut])
        with pytest.raises(FormatError):
            load_checkpoint(tmp_path / "t.bin")

    def test_trailing_bytes(self, tmp_path):
        save_checkpoint(init_params(SMALL, 1), self.meta(), tmp_path / "c.bin")
        with open(tmp_path / "c.bin", "ab") as fh:
            fh.write(b"\0")
        with pytest.raises(FormatError):
            load_checkpoint(tmp_path / "c.bin")

    def test_version_mismatch(self, tmp_path):
        save_checkpoint(init_params(SMALL, 1), self.meta(), tmp_path / "c.bin")
        data = bytearray((tmp_path / "c.bin").read_bytes())
        data[8:12] = struct.pack("<I", 99)
        (tmp_path / "c.bin").write_bytes(bytes(data))
        with pytest.raises(FormatError, match="version 99"):
            load_checkpoint(tmp_path / "c.bin")

    def test_not_a_checkpoint(self, tmp_path):
        (tmp_path / "c.bin").write_bytes(b"hello world" * 10)
        with pytest.raises(FormatError):
            load_checkpoint(tmp_path / "c.bin")

    def test_vocab_size_mismatch_names_tensor(self, tmp_path):
        save_checkpoint(init_params(SMALL, 1), self.meta(), tmp_path / "c.bin")
        with pytest.raises(ShapeError, match="'embed'"):
            load_checkpoint(tmp_path / "c.bin", replace(SMALL, vocab_size=30))


class TestTrain:
    def test_fake_scores_pick_argmax(self, tmp_path, copy_data):
        corpus, dev, vocab = copy_data
        scores = iter([10.0, 30.0, 20.0])
        cfg = replace(QUICK, max_steps=3, validate_every=1)
        best = train(corpus, dev, vocab, SMALL, cfg, tmp_path, validate_fn=lambda p, s: next(scores))
        assert best.step == 2 and best.dev_bleu == 30.0
        assert (tmp_path / "checkpoint_best.bin").read_bytes() == (tmp_path / "checkpoint_2.bin").read_bytes()

    def test_ties_keep_earliest(self, tmp_path, copy_data):
        corpus, dev, vocab = copy_data
        cfg = replace(QUICK, max_steps=4, validate_every=1)
        best = train(corpus, dev, vocab, SMALL, cfg, tmp_path, validate_fn=lambda p, s: 5.0)
        assert best.step == 1

    def test_zero_steps(self, tmp_path, copy_data):
        corpus, dev, vocab = copy_data
        cfg = replace(QUICK, max_steps=0, valid_beam=1)
        best = train(corpus, dev, vocab, SMALL, cfg, tmp_path)
        assert best.step == 0
        params, meta, _ = load_checkpoint(best.path)
        expected = init_params(replace(SMALL, dropout_rate=cfg.dropout), cfg.seed)
        assert all(np.array_equal(params[k], expected[k]) for k in expected)
        assert meta.dev_bleu == pytest.approx(validate(params, SMALL, dev, vocab, 1))

    def test_deterministic(self, tmp_path, copy_data):
        corpus, dev, vocab = copy_data
        a = train(corpus, dev, vocab, SMALL, QUICK, tmp_path / "a", validate_fn=lambda p, s: float(s))
        b = train(corpus, dev, vocab, SMALL, QUICK, tmp_path / "b", validate_fn=lambda p, s: float(s))
        assert (tmp_path / "a" / "train.log").read_text() == (tmp_path / "b" / "train.log").read_text()
        assert (tmp_path / "a" / "checkpoint_best.bin").read_bytes() == \
            (tmp_path / "b" / "checkpoint_best.bin").read_bytes()
        assert a.step == b.step == 6

    def test_seed_changes_run(self, tmp_path, copy_data):
        corpus, dev, vocab = copy_data
        train(corpus, dev, vocab, SMALL, QUICK, tmp_path / "a", validate_fn=lambda p, s: 0.0)
        train(corpus, dev, vocab, SMALL, replace(QUICK, seed=4), tmp_path / "b", validate_fn=lambda p, s: 0.0)
        assert (tmp_path / "a" / "train.log").read_text() != (tmp_path / "b" / "train.log").read_text()

    def test_log(self, tmp_path, copy_data):
        corpus, dev, vocab = copy_data
        train(corpus, dev, vocab, SMALL, QUICK, tmp_path, validate_fn=lambda p, s: s * 1.5)
        lines = (tmp_path / "train.log").read_text().splitlines()
        assert lines[0] == "step\tloss\tlr\tdevBLEU"
        rows = read_train_log(tmp_path / "train.log")
        assert [r[0] for r in rows] == [1, 2, 3, 4, 5, 6]
        assert [r[3] for r in rows] == [None, 3.0, None, 6.0, None, 9.0]
        assert rows[0][2] == pytest.approx(QUICK.lr / QUICK.warmup)
        assert all(math.isfinite(r[1]) for r in rows)
        assert sorted(p.name for p in tmp_path.glob("checkpoint_*.bin")) == [
            "checkpoint_2.bin", "checkpoint_4.bin", "checkpoint_6.bin", "checkpoint_best.bin"]

    def test_config_hash_tracks_run(self, tmp_path, copy_data):
        corpus, dev, vocab = copy_data
        a = train(corpus, dev, vocab, SMALL, replace(QUICK, max_steps=1), tmp_path / "a", lambda p, s: 0.0)
        b = train(corpus, dev, vocab, SMALL, replace(QUICK, max_steps=1, lr=2e-3), tmp_path / "b", lambda p, s: 0.0)
        assert a.config_hash != b.config_hash
        _, meta, cfg = load_checkpoint(a.path)
        assert config_hash(cfg) == meta.config_hash


def test_validate_empty_output_model_scores_zero(copy_data):
    corpus, dev, vocab = copy_data
    params = init_params(SMALL, 0)
    # the last decoder norm emits a constant vector aligned with the eos embedding only
    params["embed"] = np.zeros_like(params["embed"])
    params["embed"][EOS_ID, 0] = 50.0
    params["dec.0.ln3.gain"] = np.zeros(16)
    params["dec.0.ln3.bias"] = np.eye(16)[0] * 50.0
    assert validate(params, SMALL, dev, vocab, 2) == 0.0


def test_non_finite_loss_aborts_with_best_retained(tmp_path, copy_data, monkeypatch):
    import simtrans.training as training_module

    corpus, dev, vocab = copy_data
    real = training_module.forward_backward
    calls = {"n": 0}

    def failing(*args, **kwargs):
        calls["n"] += 1
        if calls["n"] == 5:
            raise NumericError("non-finite activations in decoder layer 0")
        return real(*args, **kwargs)

    monkeypatch.setattr(training_module, "forward_backward", failing)
    with pytest.raises(TrainingAborted, match="step 5") as info:
        train(corpus, dev, vocab, SMALL, QUICK, tmp_path, validate_fn=lambda p, s: float(s))
    assert info.value.best.step == 4
    assert (tmp_path / "checkpoint_best.bin").read_bytes() == (tmp_path / "checkpoint_4.bin").read_bytes()
    assert len(read_train_log(tmp_path / "train.log")) == 4
