"""Training-loop tests: sign-correct gradients end to end, determinism,
selection, resume equivalence, and failure reporting."""

import numpy as np
import pytest

from hallmarks.data import generate_synthetic, split
from hallmarks.errors import ConfigError, NumericError
from hallmarks.model import EncoderWeights, ModelConfig, forward
from hallmarks.optim import AdamState, batch_bce_loss
from hallmarks.tokenization import build_vocab, tokenize
from hallmarks.training import (
    TrainSettings,
    evaluate_split,
    predict_probs,
    train,
    validation_stats,
)


def tiny_setup(n_records=36, seed=0, n_labels=4):
    records = generate_synthetic(n_records, n_labels=n_labels, seed=seed,
                                 words_per_label=4, n_background=10)
    splits = split(records, (0.7, 0.15, 0.15), seed=seed)
    vocab = build_vocab([r.text for r in splits.train], 400)
    config = ModelConfig(vocab_size=len(vocab), n_layers=1, hidden_size=16,
                         n_heads=2, ffn_size=32, max_len=48, n_labels=n_labels,
                         dropout=0.0)
    return splits, vocab, config


class TestLossDecreases:
    def test_first_ten_steps_on_fixed_batch(self):
        splits, vocab, config = tiny_setup()
        weights = EncoderWeights.initialize(config, seed=0)
        state = AdamState(weights.trainable(), weight_decay=0.0)
        batch = splits.train[:6]
        seqs = [tokenize(r.text, vocab, config.max_len) for r in batch]
        labels = np.array([r.labels for r in batch], dtype=np.float32)

        from hallmarks.optim import adam_step

        losses = []
        for _ in range(10):
            weights.zero_grads()
            rows = [forward(s, weights, config, training=False) for s in seqs]
            loss = batch_bce_loss(rows, labels)
            losses.append(loss.item())
            loss.backward()
            adam_step(weights.trainable(), state, lr=1e-3)
        assert all(b < a for a, b in zip(losses, losses[1:])), losses


class TestDeterminism:
    def test_identical_seeds_identical_losses(self):
        splits, vocab, config = tiny_setup()
        settings = TrainSettings(batch_size=6, epochs=2, max_lr=1e-3)

        def run():
            result = train(splits.train, splits.validation, vocab, config, settings)
            return [h.mean_loss for h in result.history]

        assert run() == run()

    def test_different_dropout_seed_changes_losses(self):
        records = generate_synthetic(36, n_labels=4, seed=0,
                                     words_per_label=4, n_background=10)
        splits = split(records, (0.7, 0.15, 0.15), seed=0)
        vocab = build_vocab([r.text for r in splits.train], 400)
        config = ModelConfig(vocab_size=len(vocab), n_layers=1, hidden_size=16,
                             n_heads=2, ffn_size=32, max_len=48, n_labels=4,
                             dropout=0.3)
        a = train(splits.train, [], vocab, config,
                  TrainSettings(batch_size=6, epochs=1, max_lr=1e-3, dropout_seed=0))
        b = train(splits.train, [], vocab, config,
                  TrainSettings(batch_size=6, epochs=1, max_lr=1e-3, dropout_seed=1))
        assert a.history[0].mean_loss != b.history[0].mean_loss


class TestSelection:
    def test_accuracy_selection_metric(self):
        splits, vocab, config = tiny_setup(48)
        settings = TrainSettings(batch_size=6, epochs=3, max_lr=2e-3,
                                 selection_metric="accuracy")
        result = train(splits.train, splits.validation, vocab, config, settings)
        assert result.best_metric == max(h.val_accuracy for h in result.history)

    def test_unknown_selection_metric_rejected(self):
        with pytest.raises(ConfigError, match="selection_metric"):
            TrainSettings(selection_metric="auc")

    def test_softmax_pairs_head_trains(self):
        splits, vocab, config = tiny_setup()
        cfg = ModelConfig(**{**config.to_dict(), "head_mode": "softmax_pairs"})
        settings = TrainSettings(batch_size=6, epochs=2, max_lr=2e-3)
        result = train(splits.train, splits.validation, vocab, cfg, settings)
        assert result.history[-1].mean_loss < result.history[0].mean_loss
        probs = predict_probs([splits.test[0].text], result.weights, vocab, cfg)
        assert probs.shape == (1, cfg.n_labels)
        assert np.all((probs > 0) & (probs < 1))

    def test_best_metric_non_decreasing_at_saves(self):
        splits, vocab, config = tiny_setup(48)
        settings = TrainSettings(batch_size=6, epochs=4, max_lr=2e-3)
        saved = []

        def on_epoch(stats, weights, state):
            if stats.is_best:
                saved.append(stats.val_macro_f1)

        train(splits.train, splits.validation, vocab, config, settings,
              on_epoch=on_epoch)
        assert saved, "at least the first validated epoch must be best"
        assert all(b > a for a, b in zip(saved, saved[1:]))


class TestResume:
    def test_resume_matches_uninterrupted(self):
        splits, vocab, config = tiny_setup()
        settings = TrainSettings(batch_size=6, epochs=4, max_lr=1e-3)

        full = train(splits.train, splits.validation, vocab, config, settings)

        first = train(splits.train, splits.validation, vocab, config,
                      TrainSettings(batch_size=6, epochs=4, max_lr=1e-3))
        # Stop after 2 epochs by re-running: train 2 with same schedule length
        # is not equivalent, so actually resume from epoch 2 of a fresh run.
        half = train(splits.train, splits.validation, vocab, config, settings)
        # emulate an interruption: rebuild from the states after epoch 2
        partial_losses = []
        snap = {}

        def on_epoch(stats, weights, state):
            partial_losses.append(stats.mean_loss)
            if stats.epoch == 2:
                from hallmarks import checkpoint as ckpt_io
                snap["ckpt"] = ckpt_io.from_model(weights, vocab, state,
                                                  {"best": stats.val_macro_f1})

        interrupted = train(splits.train, splits.validation, vocab, config,
                            settings, on_epoch=on_epoch)
        del interrupted

        from hallmarks import checkpoint as ckpt_io
        weights, state = ckpt_io.to_model(snap["ckpt"])
        resumed = train(splits.train, splits.validation, vocab, config, settings,
                        start_epoch=2, initial=(weights, state))
        resumed_losses = partial_losses[:2] + [h.mean_loss for h in resumed.history]
        assert resumed_losses == [h.mean_loss for h in full.history]
        for name, t in full.weights.tensors.items():
            np.testing.assert_array_equal(t.data, resumed.weights.tensors[name].data)


@pytest.fixture(scope="module")
def trained_model():
    """One midsize model shared by the prediction-quality tests."""
    records = generate_synthetic(100, seed=12)
    splits = split(records, (0.8, 0.1, 0.1), seed=12)
    vocab = build_vocab([r.text for r in splits.train], 1500)
    config = ModelConfig(vocab_size=len(vocab), n_layers=1, hidden_size=48,
                         n_heads=4, ffn_size=96, max_len=96,
                         positional="learned", dropout=0.0)
    settings = TrainSettings(batch_size=4, epochs=14, max_lr=4e-3,
                             weight_decay=0.0, data_seed=12, init_seed=12)
    result = train(splits.train, [], vocab, config, settings)
    return result.weights, vocab, config, splits


class TestTrainedPredictions:
    def test_signature_stuffed_text_scores_high(self, trained_model):
        weights, vocab, config, _ = trained_model
        stuffed = " ".join(f"hall3sig{j}" for j in range(6)) * 2
        probs = predict_probs([stuffed], weights, vocab, config)[0]
        assert probs[3] >= 0.9

    def test_train_split_memorized(self, trained_model):
        weights, vocab, config, splits = trained_model
        probs = predict_probs([r.text for r in splits.train], weights, vocab, config)
        labels = np.array([r.labels for r in splits.train])
        assert (((probs >= 0.5).astype(int) == labels).mean()) >= 0.9


class TestErrors:
    def test_zero_epochs_rejected(self):
        with pytest.raises(ConfigError, match="nothing to train"):
            TrainSettings(epochs=0)

    def test_empty_train_split(self):
        _, vocab, config = tiny_setup()
        with pytest.raises(ConfigError, match="empty"):
            train([], [], vocab, config, TrainSettings(epochs=1))

    def test_non_finite_loss_names_step(self):
        splits, vocab, config = tiny_setup()
        weights = EncoderWeights.initialize(config, seed=0)
        weights["tok_emb"].data[:] = np.float32(1e38)
        state = AdamState(weights.trainable())
        with np.errstate(all="ignore"), pytest.raises(NumericError, match="step 0"):
            train(splits.train, [], vocab, config,
                  TrainSettings(batch_size=6, epochs=1),
                  initial=(weights, state))


class TestEvaluation:
    def test_predict_probs_shape_and_range(self):
        splits, vocab, config = tiny_setup()
        weights = EncoderWeights.initialize(config, seed=1)
        probs = predict_probs([r.text for r in splits.test], weights, vocab, config)
        assert probs.shape == (len(splits.test), config.n_labels)
        assert np.all((probs > 0) & (probs < 1))

    def test_validation_stats_perfect_predictions(self):
        labels = np.array([[1, 0], [0, 1], [1, 1]])
        probs = labels.astype(float) * 0.8 + 0.1
        f1, acc = validation_stats(probs, labels)
        assert f1 == 1.0 and acc == 1.0

    def test_evaluate_split_report_shape(self):
        records = generate_synthetic(60, seed=2)
        splits = split(records, (0.6, 0.2, 0.2), seed=2)
        vocab = build_vocab([r.text for r in splits.train], 600)
        config = ModelConfig(vocab_size=len(vocab), n_layers=1, hidden_size=16,
                             n_heads=2, ffn_size=32, max_len=64)
        weights = EncoderWeights.initialize(config, seed=3)
        report = evaluate_split(splits.test, weights, vocab, config)
        assert len(report.rows) == 10
        assert report.average.name == "Average"
        for row in report.rows:
            for v in row.values():
                assert 0.0 <= v <= 1.0

    def test_small_overfit(self):
        # Fast miniature of the acceptance overfit: separable data, enough
        # epochs to memorize the training split.
        records = generate_synthetic(64, n_labels=4, seed=4,
                                     words_per_label=4, n_background=10)
        splits = split(records, (0.7, 0.15, 0.15), seed=4)
        vocab = build_vocab([r.text for r in splits.train], 400)
        config = ModelConfig(vocab_size=len(vocab), n_layers=1, hidden_size=16,
                             n_heads=2, ffn_size=32, max_len=48, n_labels=4,
                             dropout=0.0, positional="learned")
        settings = TrainSettings(batch_size=3, epochs=16, max_lr=5e-3,
                                 weight_decay=0.0)
        result = train(splits.train, [], vocab, config, settings)
        probs = predict_probs([r.text for r in splits.train], result.weights,
                              vocab, config)
        labels = np.array([r.labels for r in splits.train])
        acc = ((probs >= 0.5).astype(int) == labels).mean()
        assert acc >= 0.9
        assert result.history[-1].mean_loss < result.history[0].mean_loss / 2
