"""The fine-tuning loop: batched forward/loss/backward under the one-cycle
schedule, per-epoch validation, and best-checkpoint selection.

All randomness is derived statelessly from (seed, epoch, step) keys, so a
run is fully determined by its configuration and seeds, and resuming from
a checkpoint reproduces the uninterrupted trajectory exactly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .data import HALLMARKS, HallmarkRecord, batch_iter
from .errors import ConfigError, NumericError
from .metrics import MetricsReport, build_report, score_row, binary_macro_prf, confusion, accuracy
from .model import EncoderWeights, ModelConfig, forward
from .optim import AdamState, OneCycleConfig, adam_step, batch_bce_loss, clip_grad_norm, one_cycle
from .tokenization import TokenSequence, Vocab, tokenize


@dataclass
class TrainSettings:
    """Loop and optimizer hyperparameters; defaults follow the reference
    recipe (batch 6, 20 epochs, peak learning rate 1e-5)."""

    batch_size: int = 6
    epochs: int = 20
    max_lr: float = 1e-5
    warm_fraction: float = 0.3
    div_factor: float = 25.0
    final_div_factor: float = 1e4
    momentum_high: float = 0.95
    momentum_low: float = 0.85
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.01
    clip_norm: float | None = 1.0
    data_seed: int = 0
    init_seed: int = 0
    dropout_seed: int = 0
    dtype: str = "float32"
    selection_metric: str = "macro_f1"

    def __post_init__(self):
        if self.epochs < 1:
            raise ConfigError(f"nothing to train: epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.dtype not in ("float32", "float64"):
            raise ConfigError(f"dtype must be float32 or float64, got {self.dtype!r}")
        if self.selection_metric not in ("macro_f1", "accuracy"):
            raise ConfigError(
                f"selection_metric must be macro_f1 or accuracy, got {self.selection_metric!r}"
            )

    def np_dtype(self):
        return np.float32 if self.dtype == "float32" else np.float64


@dataclass
class EpochStats:
    epoch: int
    mean_loss: float
    lr: float
    val_macro_f1: float
    val_accuracy: float
    is_best: bool
    selection_value: float = float("nan")


@dataclass
class TrainResult:
    weights: EncoderWeights
    state: AdamState
    history: list[EpochStats] = field(default_factory=list)
    best_metric: float = -math.inf
    best_epoch: int = 0
    global_step: int = 0


def _dropout_rng(settings: TrainSettings, epoch: int, step: int) -> np.random.Generator:
    return np.random.default_rng(
        [settings.dropout_seed & 0xFFFFFFFF, epoch & 0xFFFFFFFF, step & 0xFFFFFFFF]
    )


def _trim(seqs: list[TokenSequence]) -> list[TokenSequence]:
    # Padding invariance lets us drop all-pad columns shared by a batch.
    n = max(s.n_real for s in seqs)
    return [TokenSequence(ids=s.ids[:n], mask=s.mask[:n], n_real=s.n_real) for s in seqs]


def predict_probs(
    texts: list[str],
    weights: EncoderWeights,
    vocab: Vocab,
    config: ModelConfig,
) -> np.ndarray:
    """Per-hallmark probabilities for each text, eval mode (no dropout)."""
    rows = []
    for text in texts:
        seq = tokenize(text, vocab, config.max_len)
        (seq,) = _trim([seq])
        rows.append(forward(seq, weights, config).data[0])
    return np.array(rows, dtype=np.float64)


def validation_stats(probs: np.ndarray, labels: np.ndarray) -> tuple[float, float]:
    """(mean macro-F1, mean accuracy) over hallmarks at threshold 0.5.

    AUC is deliberately left out: tiny validation splits may lack one class
    for a rare hallmark, and selection must not fail on that.
    """
    f1s, accs = [], []
    for k in range(labels.shape[1]):
        c = confusion(probs[:, k], labels[:, k])
        f1s.append(binary_macro_prf(c)[2])
        accs.append(accuracy(c))
    return float(np.mean(f1s)), float(np.mean(accs))


def evaluate_split(
    records: list[HallmarkRecord],
    weights: EncoderWeights,
    vocab: Vocab,
    config: ModelConfig,
) -> MetricsReport:
    """Full per-hallmark report (including AUC) over a record list."""
    probs = predict_probs([r.text for r in records], weights, vocab, config)
    labels = np.array([r.labels for r in records])
    rows = [
        score_row(HALLMARKS[k][1], probs[:, k], labels[:, k])
        for k in range(config.n_labels)
    ]
    return build_report(rows)


def train(
    train_records: list[HallmarkRecord],
    val_records: list[HallmarkRecord],
    vocab: Vocab,
    config: ModelConfig,
    settings: TrainSettings,
    on_epoch: Callable[[EpochStats, EncoderWeights, AdamState], None] | None = None,
    start_epoch: int = 0,
    initial: tuple[EncoderWeights, AdamState] | None = None,
    best_metric: float = -math.inf,
    best_epoch: int = 0,
) -> TrainResult:
    """Run the fine-tuning loop.

    ``start_epoch``/``initial``/``best_metric`` support resuming from a
    checkpoint: the schedule is still laid out over the full planned run,
    so a resumed run walks the identical step sequence.
    """
    if not train_records:
        raise ConfigError("training split is empty")
    n_batches = math.ceil(len(train_records) / settings.batch_size)
    schedule = OneCycleConfig(
        max_lr=settings.max_lr,
        total_steps=settings.epochs * n_batches,
        warm_fraction=settings.warm_fraction,
        div_factor=settings.div_factor,
        final_div_factor=settings.final_div_factor,
        momentum_high=settings.momentum_high,
        momentum_low=settings.momentum_low,
    )
    if initial is not None:
        weights, state = initial
    else:
        weights = EncoderWeights.initialize(config, seed=settings.init_seed,
                                            dtype=settings.np_dtype())
        state = AdamState(weights.trainable(), beta2=settings.beta2, eps=settings.eps,
                          weight_decay=settings.weight_decay)
    result = TrainResult(weights=weights, state=state, best_metric=best_metric,
                         best_epoch=best_epoch)
    params = weights.trainable()
    val_texts = [r.text for r in val_records]
    val_labels = np.array([r.labels for r in val_records]) if val_records else None

    def tok(text: str) -> TokenSequence:
        return tokenize(text, vocab, config.max_len)

    global_step = start_epoch * n_batches
    for epoch in range(start_epoch, settings.epochs):
        losses = []
        lr = schedule.max_lr
        for seqs, labels in batch_iter(train_records, settings.batch_size,
                                       settings.data_seed, epoch, tokenize=tok):
            seqs = _trim(seqs)
            rng = _dropout_rng(settings, epoch, global_step)
            weights.zero_grads()
            rows = [forward(s, weights, config, training=True, rng=rng) for s in seqs]
            loss = batch_bce_loss(rows, labels.astype(rows[0].data.dtype))
            loss_val = loss.item()
            if not math.isfinite(loss_val):
                raise NumericError(f"non-finite loss at step {global_step}")
            loss.backward()
            if settings.clip_norm is not None:
                clip_grad_norm(params, settings.clip_norm)
            lr, momentum = one_cycle(global_step, schedule)
            adam_step(params, state, lr, momentum)
            losses.append(loss_val)
            global_step += 1

        if val_records:
            probs = predict_probs(val_texts, weights, vocab, config)
            val_f1, val_acc = validation_stats(probs, val_labels)
        else:
            val_f1, val_acc = float("nan"), float("nan")
        selected = val_f1 if settings.selection_metric == "macro_f1" else val_acc
        is_best = val_records and selected > result.best_metric
        if is_best:
            result.best_metric = selected
            result.best_epoch = epoch + 1
        stats = EpochStats(
            epoch=epoch + 1, mean_loss=float(np.mean(losses)), lr=lr,
            val_macro_f1=val_f1, val_accuracy=val_acc, is_best=bool(is_best),
            selection_value=selected,
        )
        result.history.append(stats)
        result.global_step = global_step
        if on_epoch is not None:
            on_epoch(stats, weights, state)
    return result
