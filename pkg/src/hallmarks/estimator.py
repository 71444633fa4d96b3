"""scikit-learn style wrappers so the tokenizer and classifier compose with
the wider ecosystem (pipelines, cloning, grid search).

``WordPieceTokenizer`` is a fit/transform component over raw strings;
``HallmarkClassifier`` is a fit/predict multi-label estimator that owns a
tokenizer, an encoder, and the training loop end to end.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, TransformerMixin
from sklearn.exceptions import NotFittedError

from . import tokenization
from .data import HallmarkRecord, N_HALLMARKS
from .model import EncoderWeights, ModelConfig
from .training import TrainSettings, predict_probs, train


def check_texts(X) -> list[str]:
    """Validate a collection of input documents."""
    if isinstance(X, str):
        raise TypeError("X must be a sequence of documents, not a single string")
    texts = list(X)
    if not texts:
        raise ValueError("X is empty")
    for i, t in enumerate(texts):
        if not isinstance(t, str):
            raise TypeError(f"X[{i}] is {type(t).__name__}, expected str")
    return texts


def check_labels(y, n_samples: int, n_labels: int) -> np.ndarray:
    """Validate a binary label matrix aligned with the documents."""
    arr = np.asarray(y)
    if arr.ndim != 2 or arr.shape != (n_samples, n_labels):
        raise ValueError(f"y must have shape ({n_samples}, {n_labels}), got {arr.shape}")
    if not np.isin(arr, (0, 1)).all():
        raise ValueError("y must contain only 0 and 1")
    return arr.astype(int)


class WordPieceTokenizer(TransformerMixin, BaseEstimator):
    """Learn a subword vocabulary from training text, then map documents to
    fixed-length id sequences with attention masks."""

    def __init__(self, vocab_size: int = 2000, casing: str = "uncased", max_len: int = 128):
        self.vocab_size = vocab_size
        self.casing = casing
        self.max_len = max_len

    def fit(self, X, y=None):
        texts = check_texts(X)
        self.vocab_ = tokenization.build_vocab(texts, self.vocab_size, self.casing)
        return self

    def transform(self, X) -> list[tokenization.TokenSequence]:
        if not hasattr(self, "vocab_"):
            raise NotFittedError("WordPieceTokenizer must be fitted before transform")
        return [tokenization.tokenize(t, self.vocab_, self.max_len) for t in check_texts(X)]


class HallmarkClassifier(ClassifierMixin, BaseEstimator):
    """Multi-label text classifier over a small trainable encoder.

    ``fit`` builds a vocabulary from the training documents, initializes the
    encoder, and runs the one-cycle fine-tuning loop; ``predict_proba``
    returns one independent probability per hallmark.
    """

    def __init__(
        self,
        n_labels: int = N_HALLMARKS,
        n_layers: int = 2,
        hidden_size: int = 64,
        n_heads: int = 4,
        ffn_size: int = 256,
        max_len: int = 128,
        vocab_size: int = 2000,
        dropout: float = 0.1,
        casing: str = "uncased",
        positional: str = "sinusoidal",
        activation: str = "gelu",
        head_mode: str = "sigmoid",
        batch_size: int = 6,
        epochs: int = 20,
        max_lr: float = 1e-3,
        weight_decay: float = 0.01,
        clip_norm: float | None = 1.0,
        validation_fraction: float = 0.0,
        random_state: int = 0,
    ):
        self.n_labels = n_labels
        self.n_layers = n_layers
        self.hidden_size = hidden_size
        self.n_heads = n_heads
        self.ffn_size = ffn_size
        self.max_len = max_len
        self.vocab_size = vocab_size
        self.dropout = dropout
        self.casing = casing
        self.positional = positional
        self.activation = activation
        self.head_mode = head_mode
        self.batch_size = batch_size
        self.epochs = epochs
        self.max_lr = max_lr
        self.weight_decay = weight_decay
        self.clip_norm = clip_norm
        self.validation_fraction = validation_fraction
        self.random_state = random_state

    def fit(self, X, y):
        texts = check_texts(X)
        labels = check_labels(y, len(texts), self.n_labels)
        self.vocab_ = tokenization.build_vocab(texts, self.vocab_size, self.casing)
        self.config_ = ModelConfig(
            vocab_size=len(self.vocab_),
            n_layers=self.n_layers,
            hidden_size=self.hidden_size,
            n_heads=self.n_heads,
            ffn_size=self.ffn_size,
            max_len=self.max_len,
            n_labels=self.n_labels,
            dropout=self.dropout,
            positional=self.positional,
            activation=self.activation,
            head_mode=self.head_mode,
        )
        records = [
            HallmarkRecord(id=f"x{i}", text=t, labels=list(row))
            for i, (t, row) in enumerate(zip(texts, labels))
        ]
        rng = np.random.default_rng(self.random_state & 0xFFFFFFFF)
        n_val = int(round(self.validation_fraction * len(records)))
        if n_val:
            order = rng.permutation(len(records))
            val = [records[i] for i in order[:n_val]]
            tr = [records[i] for i in order[n_val:]]
        else:
            val, tr = [], records
        settings = TrainSettings(
            batch_size=self.batch_size,
            epochs=self.epochs,
            max_lr=self.max_lr,
            weight_decay=self.weight_decay,
            clip_norm=self.clip_norm,
            data_seed=self.random_state,
            init_seed=self.random_state,
            dropout_seed=self.random_state,
        )
        result = train(tr, val, self.vocab_, self.config_, settings)
        self.weights_ = result.weights
        self.history_ = result.history
        if val and result.best_epoch:
            # Final weights are kept; selection metadata is informational
            # here. The CLI trainer persists the actual best checkpoint.
            self.best_epoch_ = result.best_epoch
        return self

    def _check_fitted(self) -> EncoderWeights:
        if not hasattr(self, "weights_"):
            raise NotFittedError("HallmarkClassifier must be fitted before predicting")
        return self.weights_

    def predict_proba(self, X) -> np.ndarray:
        weights = self._check_fitted()
        return predict_probs(check_texts(X), weights, self.vocab_, self.config_)

    def predict(self, X) -> np.ndarray:
        return (self.predict_proba(X) >= 0.5).astype(int)
