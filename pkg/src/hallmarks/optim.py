"""Loss, optimizer, and the one-cycle learning-rate/momentum schedule.

The schedule rises from ``max_lr / div_factor`` to ``max_lr`` over the warm
phase, then anneals to ``max_lr / final_div_factor``; momentum moves
inversely over the same two phases. Both phases interpolate with a cosine,
so the learning rate is continuous and attains its maximum exactly once.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor, concat_rows
from .errors import ConfigError, NumericError, ShapeError

PROB_CLAMP = 1e-7


def bce_loss(probs: Tensor, labels) -> Tensor:
    """Mean binary cross-entropy over every (example, label) cell.

    ``probs`` holds probabilities in (0, 1); rows are examples. They are
    clamped away from 0 and 1 before the logs.
    """
    y = np.asarray(labels, dtype=probs.data.dtype)
    if y.shape != probs.shape:
        raise ShapeError(f"labels shape {y.shape} != probs shape {probs.shape}")
    p = probs.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP)
    ll = Tensor(y) * p.log() + Tensor(1.0 - y) * (1.0 - p).log()
    return -ll.mean()


def batch_bce_loss(prob_rows: list[Tensor], labels) -> Tensor:
    """BCE over a batch given one [1, n_labels] probability row per example."""
    return bce_loss(concat_rows(prob_rows), labels)


@dataclass
class OneCycleConfig:
    """Endpoints and shape of the one-cycle schedule."""

    max_lr: float = 1e-5
    total_steps: int = 1
    warm_fraction: float = 0.3
    div_factor: float = 25.0
    final_div_factor: float = 1e4
    momentum_high: float = 0.95
    momentum_low: float = 0.85

    def __post_init__(self):
        if self.max_lr <= 0:
            raise ConfigError(f"max_lr must be positive, got {self.max_lr}")
        if self.total_steps < 1:
            raise ConfigError(f"total_steps must be >= 1, got {self.total_steps}")
        if not 0.0 < self.warm_fraction < 1.0:
            raise ConfigError(f"warm_fraction must lie in (0, 1), got {self.warm_fraction}")
        if self.div_factor <= 1 or self.final_div_factor <= 1:
            raise ConfigError("div_factor and final_div_factor must exceed 1")
        if not 0.0 <= self.momentum_low <= self.momentum_high < 1.0:
            raise ConfigError("need 0 <= momentum_low <= momentum_high < 1")

    @property
    def peak_step(self) -> int:
        return int(math.floor(self.warm_fraction * self.total_steps))


def _cosine(a: float, b: float, t: float) -> float:
    """Interpolate from a (t=0) to b (t=1) along a half cosine."""
    return b + (a - b) * (1.0 + math.cos(math.pi * t)) / 2.0


def one_cycle(step: int, cfg: OneCycleConfig) -> tuple[float, float]:
    """Learning rate and momentum at ``step``; raises if out of range."""
    if not 0 <= step < cfg.total_steps:
        raise ConfigError(f"step {step} outside [0, {cfg.total_steps})")
    peak = cfg.peak_step
    start_lr = cfg.max_lr / cfg.div_factor
    final_lr = cfg.max_lr / cfg.final_div_factor
    if step <= peak:
        t = step / peak if peak > 0 else 1.0
        return _cosine(start_lr, cfg.max_lr, t), _cosine(cfg.momentum_high, cfg.momentum_low, t)
    span = cfg.total_steps - 1 - peak
    t = (step - peak) / span if span > 0 else 1.0
    return _cosine(cfg.max_lr, final_lr, t), _cosine(cfg.momentum_low, cfg.momentum_high, t)


class AdamState:
    """First/second moment buffers plus running bias-correction products.

    ``beta1`` varies per step when driven by the schedule's momentum signal,
    so bias correction tracks the running product of the betas actually
    used.
    """

    def __init__(
        self,
        params: dict[str, Tensor],
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
        weight_decay: float = 0.01,
    ):
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.weight_decay = weight_decay
        self.step_count = 0
        self.beta1_product = 1.0
        self.beta2_product = 1.0
        self.m = {k: np.zeros_like(t.data) for k, t in params.items()}
        self.v = {k: np.zeros_like(t.data) for k, t in params.items()}


def clip_grad_norm(params: dict[str, Tensor], max_norm: float) -> float:
    """Scale all gradients so their global L2 norm is at most ``max_norm``.

    Returns the pre-clip norm.
    """
    total = 0.0
    for t in params.values():
        if t.grad is not None:
            total += float((t.grad.astype(np.float64) ** 2).sum())
    norm = math.sqrt(total)
    if norm > max_norm and norm > 0:
        scale = max_norm / norm
        for t in params.values():
            if t.grad is not None:
                t.grad *= scale
    return norm


def adam_step(
    params: dict[str, Tensor],
    state: AdamState,
    lr: float,
    momentum: float | None = None,
) -> None:
    """One Adam update with decoupled weight decay.

    ``momentum`` overrides the constant beta1 for this step. Decay is
    applied directly to the weights before the adaptive step. Parameters
    with no gradient are skipped entirely.
    """
    beta1 = state.beta1 if momentum is None else momentum
    beta2 = state.beta2
    # Validate everything before touching any weight, so a failed step
    # leaves weights and state untouched.
    for name, t in params.items():
        g = t.grad
        if g is None:
            continue
        if g.shape != t.data.shape:
            raise ShapeError(f"gradient shape {g.shape} != weight shape {t.data.shape} for {name!r}")
        if not np.isfinite(g).all():
            raise NumericError(f"non-finite gradient in {name!r} at step {state.step_count + 1}")
    state.step_count += 1
    state.beta1_product *= beta1
    state.beta2_product *= beta2
    for name, t in params.items():
        g = t.grad
        if g is None:
            continue
        if state.weight_decay:
            t.data -= lr * state.weight_decay * t.data
        m = state.m[name]
        v = state.v[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        m_hat = m / (1.0 - state.beta1_product)
        v_hat = v / (1.0 - state.beta2_product)
        t.data -= (lr * m_hat / (np.sqrt(v_hat) + state.eps)).astype(t.data.dtype)
