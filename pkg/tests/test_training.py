import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from appreply.corpus import EOS_ID
from appreply.model import Example, ModelConfig, ResponseModel, make_batch
from appreply.numcore import tensor as T
from appreply.numcore.optim import adam_step
from appreply.training import (
    Dataset,
    TrainConfig,
    TrainingDiverged,
    load_model,
    mean_loss,
    nll_loss,
    save_model,
    scheduled_decode_train,
    train,
)


def toy(seed=0, V=12, **kw):
    base = dict(vocab_size=V, d=4, E=4, dropout=0.0, init_scale=0.3, seed=seed)
    base.update(kw)
    return ResponseModel(ModelConfig(**base))


def examples(n, seed=0, V=12):
    rng = np.random.default_rng(seed)
    return [Example(review=rng.integers(4, V, int(rng.integers(2, 6))), rating=int(rng.integers(1, 6)),
                    snippets=[rng.integers(4, V, 3)], category=rng.integers(4, V, 1),
                    target=np.append(rng.integers(4, V, int(rng.integers(1, 5))), EOS_ID))
            for _ in range(n)]


class TestConfig:
    def test_defaults(self):
        c = TrainConfig()
        assert (c.batch_size, c.epochs, c.lr, c.tf_probability, c.clip_norm) == (128, 25, 0.01, 0.5, 5.0)
        assert ModelConfig(vocab_size=10).dropout == 0.2

    @pytest.mark.parametrize("kw", [{"tf_probability": 1.5}, {"lr": 0}, {"batch_size": 0}, {"max_steps": 0}])
    def test_invalid(self, kw):
        with pytest.raises(ValueError):
            TrainConfig(**kw)


class TestNll:
    def test_one_hot(self):
        p = np.eye(5)[[1, 3]]
        assert nll_loss(p, [1, 3]) == 0.0

    def test_uniform(self):
        assert nll_loss(np.full((3, 7), 1 / 7), [0, 4, 6]) == pytest.approx(math.log(7), abs=1e-15)

    def test_two_step_hand(self):
        p = np.array([[0.5, 0.25, 0.25], [0.1, 0.6, 0.3]])
        assert nll_loss(p, [1, 2]) == pytest.approx((math.log(4) - math.log(0.3)) / 2, abs=1e-15)

    def test_mask_excludes_padding(self):
        p = np.array([[[0.5, 0.5], [1e-30, 1.0]]])
        assert nll_loss(p, [[0, 0]], mask=[[True, False]]) == pytest.approx(math.log(2))

    def test_floor(self, caplog):
        val = nll_loss(np.array([[0.0, 1.0]]), [0])
        assert val == pytest.approx(-math.log(1e-12))
        assert "floored" in caplog.text

    def test_model_loss_matches(self):
        m = toy()
        b = make_batch(examples(3))
        logits, _ = m.forward(b)
        dist = np.stack([T.softmax(lg).data for lg in logits], axis=1)
        assert m.sequence_nll(b).item() == pytest.approx(nll_loss(dist, b.target_ids, b.target_mask), rel=1e-12)


class TestScheduled:
    def test_full_teacher_forcing(self):
        m = toy()
        b = make_batch(examples(4))
        a = scheduled_decode_train(m, b, np.random.default_rng(0), 1.0, training=False).item()
        assert a == m.sequence_nll(b).item()

    def test_self_feeding(self):
        m = toy()
        b = make_batch(examples(4))
        logits, fed = m.forward(b, p_tf=0.0)
        for i in range(1, fed.shape[1]):
            assert np.array_equal(fed[:, i], np.argmax(logits[i - 1].data, axis=1))
        # loss is still scored against the ground truth
        tf_loss = scheduled_decode_train(m, b, None, 0.0, training=False).item()
        assert tf_loss != m.sequence_nll(b).item()

    def test_mixed_is_reproducible(self):
        m = toy(dropout=0.2)
        b = make_batch(examples(6))
        a = scheduled_decode_train(m, b, np.random.default_rng(3), 0.5).item()
        assert a == scheduled_decode_train(m, b, np.random.default_rng(3), 0.5).item()

    @settings(max_examples=25, deadline=None)
    @given(st.integers(0, 10_000), st.floats(0, 1))
    def test_loss_finite_nonnegative(self, seed, p):
        m = toy(seed=seed % 7)
        loss = scheduled_decode_train(m, make_batch(examples(3, seed)), np.random.default_rng(seed), p).item()
        assert math.isfinite(loss) and loss >= 0.0


def test_single_example_loss_decreases():
    m = toy(seed=1)
    b = make_batch(examples(1, seed=5))
    losses = []
    for _ in range(11):
        loss = m.sequence_nll(b)
        losses.append(loss.item())
        T.backward(loss)
        m.params.clip_grad_norm(5.0)
        adam_step(m.params, 0.01)
    assert all(b < a for a, b in zip(losses, losses[1:]))


def test_checkpoint_round_trip(tmp_path):
    m = toy(seed=2)
    valid = examples(5, seed=9)
    tr = examples(8, seed=1)
    train(Dataset(tr, valid), m, TrainConfig(batch_size=4, epochs=1, seed=0))
    save_model(tmp_path / "m.ckpt", m, {"note": "x"})
    m2, meta = load_model(tmp_path / "m.ckpt")
    assert meta["note"] == "x" and m2.config == m.config
    assert abs(mean_loss(m2, valid) - mean_loss(m, valid)) <= 1e-12


class TestTrain:
    def run(self, tmp_path, tag, **kw):
        cfg = TrainConfig(batch_size=3, epochs=3, seed=4, **kw)
        m = toy(seed=3)
        rep = train(Dataset(examples(10, 1), examples(4, 2)), m, cfg,
                    checkpoint_path=tmp_path / f"{tag}.ckpt", log_path=tmp_path / f"{tag}.jsonl")
        return m, rep

    def test_deterministic(self, tmp_path):
        _, a = self.run(tmp_path, "a")
        _, b = self.run(tmp_path, "b")
        assert a.epoch_losses == b.epoch_losses and a.val_bleu == b.val_bleu
        assert (tmp_path / "a.ckpt").read_bytes() != b"" and \
            load_model(tmp_path / "a.ckpt")[1]["val_bleu"] == load_model(tmp_path / "b.ckpt")[1]["val_bleu"]

    def test_report_and_log(self, tmp_path):
        m, rep = self.run(tmp_path, "r")
        assert len(rep.epoch_losses) == 3 and rep.steps == 3 * 4
        assert rep.val_bleu[rep.best_epoch] == max(rep.val_bleu)
        lines = [json.loads(x) for x in (tmp_path / "r.jsonl").read_text().splitlines()]
        assert [x["epoch"] for x in lines] == [0, 1, 2]
        assert set(lines[0]) >= {"epoch", "loss", "val_bleu"}
        saved, meta = load_model(tmp_path / "r.ckpt")
        assert meta["epoch"] == rep.best_epoch
        for (_, a), (_, b) in zip(saved.params, m.params):
            assert np.array_equal(a.data, b.data)

    def test_max_steps(self, tmp_path):
        _, rep = self.run(tmp_path, "s", max_steps=5)
        assert rep.steps == 5

    def test_divergence_aborts(self):
        m = toy()
        m.params["out.b"].data[0] = np.nan
        with pytest.raises(TrainingDiverged):
            train(Dataset(examples(4), examples(2)), m, TrainConfig(batch_size=2, epochs=1))

    def test_empty_split(self):
        with pytest.raises(ValueError):
            train(Dataset([], examples(2)), toy(), TrainConfig())
