"""Tests for the adversarial training loop."""

import numpy as np
import pytest

from kgat.counterfactual import SwapLexicon
from kgat.data import Record, SynthConfig, generate_biased, link_dataset, load_demo_graph
from kgat.model import build_vocab, forward, init_model_params
from kgat.trainer import (
    EvalResult,
    TrainerConfig,
    TrainingError,
    combined_loss,
    evaluate,
    load_model,
    make_config,
    save_model,
    train,
    write_history_csv,
)


def separable_dataset(n=2000, dim=4, seed=0):
    """Feature records that a linear rule classifies perfectly with margin."""
    rng = np.random.default_rng(seed)
    w_true = rng.normal(size=dim)
    records = []
    while len(records) < n:
        x = rng.normal(size=dim)
        score = float(x @ w_true)
        if abs(score) < 0.3:
            continue
        records.append(Record(id=f"t{len(records)}", label=int(score > 0),
                              attribute="g0" if rng.random() < 0.5 else "g1",
                              features=x))
    return records


def logistic_regression_accuracy(records, epochs=200, lr=0.5):
    """Plain batch-GD logistic regression, used as an independent oracle."""
    x = np.stack([r.features for r in records])
    y = np.array([r.label for r in records])
    w = np.zeros(x.shape[1])
    b = 0.0
    for _ in range(epochs):
        p = 1.0 / (1.0 + np.exp(-(x @ w + b)))
        grad_w = x.T @ (p - y) / len(y)
        grad_b = float(np.mean(p - y))
        w -= lr * grad_w
        b -= lr * grad_b
    return float(np.mean((x @ w + b > 0).astype(int) == y))


def hist_tuple(history):
    return [(s.epoch, s.loss_primary, s.loss_adversary, s.loss_combined,
             s.train_accuracy, s.parity_gap) for s in history]


class TestCombinedLoss:
    def test_lambda_zero(self):
        assert combined_loss(1.0, 0.5, 0.0) == 1.0

    def test_arithmetic(self):
        assert combined_loss(1.0, 0.5, 2.0) == 0.0

    def test_cancellation(self):
        assert combined_loss(0.7, 0.7, 1.0) == 0.0

    def test_rejects_non_finite(self):
        with pytest.raises(ValueError):
            combined_loss(float("nan"), 0.0, 1.0)


class TestConfig:
    def test_defaults_from_documented_recipe(self):
        cfg = TrainerConfig()
        assert cfg.learning_rate == 3e-5
        assert cfg.batch_size == 32
        assert cfg.epochs == 10
        assert cfg.lam == 1.0
        assert cfg.adversary_hidden == 16

    def test_validation(self):
        with pytest.raises(ValueError):
            TrainerConfig(learning_rate=0.0)
        with pytest.raises(ValueError):
            TrainerConfig(batch_size=0)
        with pytest.raises(ValueError):
            TrainerConfig(epochs=-1)
        with pytest.raises(ValueError):
            TrainerConfig(lam=-0.1)

    def test_config_file_parsing(self, tmp_path):
        p = tmp_path / "train.cfg"
        p.write_text("# demo config\nlearning_rate = 0.01\nepochs = 3\n"
                     "lambda = 0.5\nadversary_enabled = false\n"
                     "flip.f = m\nflip.m = f\n")
        cfg = make_config(p)
        assert cfg.learning_rate == 0.01
        assert cfg.epochs == 3
        assert cfg.lam == 0.5
        assert cfg.adversary_enabled is False
        assert cfg.attribute_flips == {"f": "m", "m": "f"}

    def test_overrides_beat_file(self, tmp_path):
        p = tmp_path / "train.cfg"
        p.write_text("epochs = 3\n")
        assert make_config(p, epochs=7).epochs == 7
        assert make_config(p, epochs=None).epochs == 3

    def test_unknown_key_rejected(self, tmp_path):
        p = tmp_path / "train.cfg"
        p.write_text("learning_rte = 0.1\n")
        with pytest.raises(ValueError, match="unknown config key"):
            make_config(p)


class TestTrainBasics:
    def test_empty_dataset_rejected(self):
        with pytest.raises(TrainingError, match="empty"):
            train([], None, TrainerConfig(epochs=0))

    def test_mixed_payloads_rejected(self):
        records = [Record(id="a", label=0, attribute="g", tokens=["x"]),
                   Record(id="b", label=1, attribute="g", features=np.ones(2))]
        with pytest.raises(TrainingError, match="mixes"):
            train(records, None, TrainerConfig(epochs=0))

    def test_zero_epochs_returns_initialization(self):
        records = separable_dataset(n=50, seed=1)
        cfg = TrainerConfig(epochs=0, seed=3)
        model, history = train(records, None, cfg)
        assert history == []

        # replicate the seeded init stream to confirm params are untouched
        seed_root = np.random.SeedSequence(cfg.seed)
        rng_model = np.random.default_rng(seed_root.spawn(3)[0])
        expected = init_model_params(
            rng_model, vocab=None, text_dim=4, graph_feature_dim=0,
            gcn_hidden=cfg.gcn_hidden, kg_dim=cfg.kg_dim, d_k=cfg.d_k,
            num_heads=cfg.num_heads, with_graph=False)
        assert np.array_equal(model.params.w_cls, expected.w_cls)
        assert np.array_equal(model.params.w_q, expected.w_q)

    def test_non_finite_loss_reports_location(self):
        records = separable_dataset(n=80, seed=2)
        cfg = TrainerConfig(learning_rate=1e155, epochs=1, seed=0)
        with np.errstate(all="ignore"):
            with pytest.raises(TrainingError, match=r"epoch 0, batch \d+"):
                train(records, None, cfg)

    def test_history_combined_loss_identity(self):
        records = separable_dataset(n=120, seed=3)
        cfg = TrainerConfig(learning_rate=0.01, epochs=3, lam=0.7, seed=1)
        _, history = train(records, None, cfg)
        assert len(history) == 3
        for s in history:
            assert abs(s.loss_combined
                       - (s.loss_primary - 0.7 * s.loss_adversary)) < 1e-9
            assert np.isfinite(s.loss_primary) and np.isfinite(s.loss_adversary)


class TestTrainLearning:
    def test_lambda_zero_learns_separable_data(self):
        records = separable_dataset(n=2000, seed=4)
        oracle_acc = logistic_regression_accuracy(records)
        assert oracle_acc >= 0.99  # the data really is separable
        cfg = TrainerConfig(learning_rate=0.05, epochs=10, lam=0.0, seed=0)
        _, history = train(records, None, cfg)
        assert history[-1].train_accuracy >= 0.95

    def test_determinism_bitwise(self):
        records = generate_biased(SynthConfig(n=300, beta=0.5, seed=11))
        g = load_demo_graph()
        linked = link_dataset(records, g)
        cfg = TrainerConfig(learning_rate=0.01, epochs=2, seed=7)
        model_a, hist_a = train(linked, g, cfg)
        model_b, hist_b = train(linked, g, cfg)
        assert hist_tuple(hist_a) == hist_tuple(hist_b)
        assert model_a.params.w_cls.tobytes() == model_b.params.w_cls.tobytes()
        assert model_a.node_embeddings.tobytes() == model_b.node_embeddings.tobytes()

    def test_lambda_zero_theta_ignores_adversary_existence(self):
        records = generate_biased(SynthConfig(n=240, beta=0.5, seed=12))
        cfg_on = TrainerConfig(learning_rate=0.01, epochs=2, lam=0.0, seed=5,
                               adversary_enabled=True)
        cfg_off = TrainerConfig(learning_rate=0.01, epochs=2, lam=0.0, seed=5,
                                adversary_enabled=False)
        model_on, _ = train(records, None, cfg_on)
        model_off, _ = train(records, None, cfg_off)
        assert model_on.params.w_cls.tobytes() == model_off.params.w_cls.tobytes()
        assert model_on.params.token_emb.tobytes() == model_off.params.token_emb.tobytes()
        assert model_on.adversary is not None and model_off.adversary is None

    def test_adversary_reduces_holdout_parity_gap(self):
        g = load_demo_graph()
        data = link_dataset(generate_biased(SynthConfig(n=1200, beta=0.8, seed=13)), g)
        base_cfg = dict(learning_rate=0.01, epochs=6, seed=2)
        _, hist_plain = train(data, g, TrainerConfig(lam=0.0, **base_cfg))
        _, hist_adv = train(data, g, TrainerConfig(lam=1.0, **base_cfg))
        assert hist_adv[-1].parity_gap < hist_plain[-1].parity_gap

    def test_augmentation_extends_vocabulary(self):
        records = [Record(id=f"r{i}", label=i % 2, attribute="m",
                          tokens=["he", "works"]) for i in range(40)]
        lexicon = SwapLexicon(pairs=[(("he",), ("she",))])
        cfg = TrainerConfig(learning_rate=0.01, epochs=1, seed=0,
                            attribute_flips={"m": "f", "f": "m"})
        model, _ = train(records, None, cfg, lexicon=lexicon)
        assert "she" in model.params.vocab

        no_aug, _ = train(records, None, cfg)
        assert "she" not in no_aug.params.vocab


class TestEvaluate:
    def _model(self, records, **kw):
        cfg = TrainerConfig(learning_rate=0.01, epochs=1, seed=0, **kw)
        model, _ = train(records, None, cfg)
        return model

    def test_empty_dataset(self):
        model = self._model(separable_dataset(n=40, seed=5))
        assert evaluate(model, []) == []

    def test_single_record(self):
        records = separable_dataset(n=40, seed=6)
        model = self._model(records)
        assert len(evaluate(model, records[:1])) == 1

    def test_matches_per_record_forward(self):
        records = separable_dataset(n=60, seed=7)
        model = self._model(records)
        results = evaluate(model, records[:10])
        for r, res in zip(records[:10], results):
            pred, _ = forward(r, None, model.node_embeddings, model.params)
            assert res.y_pred == pred.label
            assert res.p_positive == float(pred.probabilities[0, 1])
            assert res.y_true == r.label and res.attribute == r.attribute

    def test_checkpoint_round_trip_preserves_predictions(self, tmp_path):
        g = load_demo_graph()
        records = link_dataset(generate_biased(SynthConfig(n=200, beta=0.5, seed=14)), g)
        cfg = TrainerConfig(learning_rate=0.01, epochs=2, seed=1)
        model, _ = train(records, g, cfg)
        path = tmp_path / "m.kgat"
        save_model(path, model)
        reloaded = load_model(path)
        got = evaluate(reloaded, records[:25])
        want = evaluate(model, records[:25])
        assert [(r.y_pred, r.p_positive) for r in got] == \
            [(r.y_pred, r.p_positive) for r in want]


def test_history_csv_format(tmp_path):
    records = separable_dataset(n=60, seed=8)
    _, history = train(records, None,
                       TrainerConfig(learning_rate=0.01, epochs=2, seed=0))
    path = tmp_path / "h.csv"
    write_history_csv(history, path)
    lines = path.read_text().strip().splitlines()
    assert lines[0] == "epoch,loss_primary,loss_adversary,loss_combined," \
        "train_accuracy,parity_gap"
    assert len(lines) == 3
