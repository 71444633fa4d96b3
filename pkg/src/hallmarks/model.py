"""The encoder classifier: embeddings with positional encoding, stacked
self-attention blocks, and a CLS-pooled multi-label head.

All forward functions operate on autodiff tensors, so one ``backward()``
call on the loss differentiates the whole stack. Evaluation mode is pure
and deterministic; training mode applies dropout driven by an explicit
numpy Generator.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, asdict

import numpy as np

from .autodiff import (
    Tensor,
    concat_cols,
    gather_rows,
    gelu,
    layer_norm,
    matmul,
    softmax,
)
from .errors import ConfigError, DataError, ShapeError, VocabError
from .tokenization import TokenSequence

MASKED_SCORE_BIAS = -1e9


@dataclass
class ModelConfig:
    """Architecture hyperparameters.

    ``hidden_size`` must divide evenly into ``n_heads``; each head then
    attends over ``hidden_size // n_heads`` dimensions.
    """

    vocab_size: int
    n_layers: int = 2
    hidden_size: int = 64
    n_heads: int = 4
    ffn_size: int = 256
    max_len: int = 128
    n_labels: int = 10
    dropout: float = 0.1
    positional: str = "sinusoidal"  # or "learned"
    activation: str = "gelu"  # or "relu"
    head_mode: str = "sigmoid"  # or "softmax_pairs"
    norm_eps: float = 1e-12

    def __post_init__(self):
        if self.n_layers < 1:
            raise ConfigError(f"n_layers must be >= 1, got {self.n_layers}")
        if self.hidden_size % self.n_heads != 0:
            raise ConfigError(
                f"hidden_size {self.hidden_size} not divisible by n_heads {self.n_heads}"
            )
        if self.hidden_size % 2 != 0:
            raise ConfigError(f"hidden_size must be even, got {self.hidden_size}")
        if self.max_len < 3:
            raise ConfigError(f"max_len must be >= 3, got {self.max_len}")
        if self.n_labels < 1:
            raise ConfigError(f"n_labels must be >= 1, got {self.n_labels}")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"dropout must be in [0, 1), got {self.dropout}")
        if self.vocab_size < 5:
            raise ConfigError(f"vocab_size must cover the specials, got {self.vocab_size}")
        if self.positional not in ("sinusoidal", "learned"):
            raise ConfigError(f"unknown positional mode {self.positional!r}")
        if self.activation not in ("gelu", "relu"):
            raise ConfigError(f"unknown activation {self.activation!r}")
        if self.head_mode not in ("sigmoid", "softmax_pairs"):
            raise ConfigError(f"unknown head_mode {self.head_mode!r}")

    @property
    def d_k(self) -> int:
        return self.hidden_size // self.n_heads

    @property
    def head_out(self) -> int:
        return self.n_labels if self.head_mode == "sigmoid" else 2 * self.n_labels

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def paper_scale(cls, vocab_size: int, **overrides) -> "ModelConfig":
        """The full-size reference architecture (12 layers, 768 wide, 12 heads)."""
        kwargs = dict(
            vocab_size=vocab_size, n_layers=12, hidden_size=768, n_heads=12,
            ffn_size=3072, max_len=512,
        )
        kwargs.update(overrides)
        return cls(**kwargs)


def positional_encoding(pos: int, d_model: int) -> np.ndarray:
    """Sinusoidal position vector: entry 2i is sin(pos / 10000^(2i/d)),
    entry 2i+1 the matching cos."""
    if d_model % 2 != 0:
        raise ConfigError(f"d_model must be even, got {d_model}")
    out = np.empty(d_model, dtype=np.float64)
    for i in range(d_model // 2):
        angle = pos / 10000.0 ** (2 * i / d_model)
        out[2 * i] = math.sin(angle)
        out[2 * i + 1] = math.cos(angle)
    return out


def positional_table(max_len: int, d_model: int) -> np.ndarray:
    i = np.arange(d_model // 2, dtype=np.float64)
    pos = np.arange(max_len, dtype=np.float64)[:, None]
    angles = pos / 10000.0 ** (2 * i / d_model)
    table = np.empty((max_len, d_model), dtype=np.float64)
    table[:, 0::2] = np.sin(angles)
    table[:, 1::2] = np.cos(angles)
    return table


def _truncated_normal(rng: np.random.Generator, shape, std: float) -> np.ndarray:
    # Redraw anything beyond two standard deviations.
    out = rng.normal(0.0, std, size=shape)
    bad = np.abs(out) > 2 * std
    while bad.any():
        out[bad] = rng.normal(0.0, std, size=int(bad.sum()))
        bad = np.abs(out) > 2 * std
    return out


class EncoderWeights:
    """All learnable tensors of the encoder plus the classification head.

    Tensor names are stable and shape-derivable from the config, which the
    checkpoint module relies on.
    """

    INIT_STD = 0.02

    def __init__(self, config: ModelConfig, tensors: dict[str, Tensor]):
        self.config = config
        self.tensors = tensors
        expected = expected_shapes(config)
        for name, shape in expected.items():
            if name not in tensors:
                raise ConfigError(f"missing weight tensor {name!r}")
            if tensors[name].shape != shape:
                raise ShapeError(
                    f"tensor {name!r} has shape {tensors[name].shape}, expected {shape}"
                )

    @classmethod
    def initialize(cls, config: ModelConfig, seed: int = 0, dtype=np.float32) -> "EncoderWeights":
        rng = np.random.default_rng(seed)
        std = cls.INIT_STD
        t: dict[str, Tensor] = {}

        def param(name, shape, values=None):
            data = _truncated_normal(rng, shape, std) if values is None else values
            t[name] = Tensor(np.asarray(data, dtype=dtype), requires_grad=True)

        param("tok_emb", (config.vocab_size, config.hidden_size))
        if config.positional == "learned":
            param("pos_emb", (config.max_len, config.hidden_size))
        else:
            t["pos_emb"] = Tensor(
                positional_table(config.max_len, config.hidden_size).astype(dtype)
            )
        h, f = config.hidden_size, config.ffn_size
        for i in range(config.n_layers):
            for w in ("wq", "wk", "wv", "wo"):
                param(f"layer{i}.{w}", (h, h))
            for norm in ("ln1", "ln2"):
                param(f"layer{i}.{norm}.gamma", (h,), np.ones(h))
                param(f"layer{i}.{norm}.beta", (h,), np.zeros(h))
            param(f"layer{i}.ffn.w1", (h, f))
            param(f"layer{i}.ffn.b1", (f,), np.zeros(f))
            param(f"layer{i}.ffn.w2", (f, h))
            param(f"layer{i}.ffn.b2", (h,), np.zeros(h))
        param("head.w", (h, config.head_out))
        param("head.b", (config.head_out,), np.zeros(config.head_out))
        return cls(config, t)

    def __getitem__(self, name: str) -> Tensor:
        return self.tensors[name]

    def layer(self, i: int) -> dict[str, Tensor]:
        prefix = f"layer{i}."
        return {k[len(prefix):]: v for k, v in self.tensors.items() if k.startswith(prefix)}

    def trainable(self) -> dict[str, Tensor]:
        return {k: v for k, v in self.tensors.items() if v.requires_grad}

    def parameter_count(self) -> int:
        return sum(t.data.size for t in self.trainable().values())

    def zero_grads(self) -> None:
        for t in self.tensors.values():
            t.zero_grad()


def expected_shapes(config: ModelConfig) -> dict[str, tuple[int, ...]]:
    h, f = config.hidden_size, config.ffn_size
    shapes = {
        "tok_emb": (config.vocab_size, h),
        "pos_emb": (config.max_len, h),
        "head.w": (h, config.head_out),
        "head.b": (config.head_out,),
    }
    for i in range(config.n_layers):
        for w in ("wq", "wk", "wv", "wo"):
            shapes[f"layer{i}.{w}"] = (h, h)
        for norm in ("ln1", "ln2"):
            shapes[f"layer{i}.{norm}.gamma"] = (h,)
            shapes[f"layer{i}.{norm}.beta"] = (h,)
        shapes[f"layer{i}.ffn.w1"] = (h, f)
        shapes[f"layer{i}.ffn.b1"] = (f,)
        shapes[f"layer{i}.ffn.w2"] = (f, h)
        shapes[f"layer{i}.ffn.b2"] = (h,)
    return shapes


def parameter_count(config: ModelConfig) -> int:
    """Closed-form count of trainable parameters."""
    h, f = config.hidden_size, config.ffn_size
    per_layer = 4 * h * h + 4 * h + (h * f + f) + (f * h + h)
    total = config.vocab_size * h + config.n_layers * per_layer
    total += h * config.head_out + config.head_out
    if config.positional == "learned":
        total += config.max_len * h
    return total


def _dropout(x: Tensor, rate: float, rng: np.random.Generator) -> Tensor:
    if rate <= 0.0:
        return x
    keep = (rng.random(x.shape) >= rate).astype(x.data.dtype) / (1.0 - rate)
    return x * Tensor(keep)


def embed(
    seq: TokenSequence,
    weights: EncoderWeights,
    config: ModelConfig,
    training: bool = False,
    rng: np.random.Generator | None = None,
) -> Tensor:
    """Token embedding plus positional row for each position."""
    n = len(seq.ids)
    if n > config.max_len:
        raise ShapeError(f"sequence of {n} exceeds model max_len {config.max_len}")
    if any(not 0 <= i < config.vocab_size for i in seq.ids):
        raise VocabError(f"token id out of range for vocab of {config.vocab_size}")
    x = gather_rows(weights["tok_emb"], seq.ids) + weights["pos_emb"].slice_rows(0, n)
    if training:
        x = _dropout(x, config.dropout, rng)
    return x


def attention(
    q: Tensor,
    k: Tensor,
    v: Tensor,
    mask,
    return_weights: bool = False,
):
    """Scaled dot-product attention with additive key masking.

    Masked-out key columns receive a large negative score before the row
    softmax, so each output row is a convex mix of unmasked value rows.
    """
    mask = np.asarray(mask)
    n, d_k = q.shape
    if k.shape != (n, d_k) or v.shape != (n, d_k):
        raise ShapeError(f"q/k/v shapes differ: {q.shape}, {k.shape}, {v.shape}")
    if mask.shape != (n,):
        raise ShapeError(f"mask length {mask.shape} does not match n={n}")
    if not mask.any():
        raise DataError("attention mask excludes every key")
    scores = matmul(q, k.transpose()) * (1.0 / math.sqrt(d_k))
    bias = np.where(mask != 0, 0.0, MASKED_SCORE_BIAS).astype(scores.data.dtype)
    probs = softmax(scores + Tensor(bias), axis=-1)
    out = matmul(probs, v)
    if return_weights:
        return out, probs
    return out


def multi_head(
    x: Tensor,
    layer_weights: dict[str, Tensor],
    mask,
    n_heads: int,
    collect_weights: list | None = None,
) -> Tensor:
    """Per-head attention over hidden-size slices, concatenated and projected."""
    n, h = x.shape
    if h % n_heads != 0:
        raise ShapeError(f"hidden size {h} not divisible by {n_heads} heads")
    d_k = h // n_heads
    q_all = matmul(x, layer_weights["wq"])
    k_all = matmul(x, layer_weights["wk"])
    v_all = matmul(x, layer_weights["wv"])
    heads = []
    for i in range(n_heads):
        lo, hi = i * d_k, (i + 1) * d_k
        out, probs = attention(
            q_all.slice_cols(lo, hi),
            k_all.slice_cols(lo, hi),
            v_all.slice_cols(lo, hi),
            mask,
            return_weights=True,
        )
        if collect_weights is not None:
            collect_weights.append(probs.data.copy())
        heads.append(out)
    return matmul(concat_cols(heads), layer_weights["wo"])


def encoder_block(
    x: Tensor,
    layer_weights: dict[str, Tensor],
    mask,
    config: ModelConfig,
    training: bool = False,
    rng: np.random.Generator | None = None,
    collect_weights: list | None = None,
) -> Tensor:
    """Self-attention then feed-forward, each behind residual + normalize."""
    attn = multi_head(x, layer_weights, mask, config.n_heads, collect_weights)
    if training:
        attn = _dropout(attn, config.dropout, rng)
    z1 = layer_norm(x + attn, layer_weights["ln1.gamma"], layer_weights["ln1.beta"],
                    config.norm_eps)
    inner = matmul(z1, layer_weights["ffn.w1"]) + layer_weights["ffn.b1"]
    inner = gelu(inner) if config.activation == "gelu" else inner.relu()
    ffn = matmul(inner, layer_weights["ffn.w2"]) + layer_weights["ffn.b2"]
    if training:
        ffn = _dropout(ffn, config.dropout, rng)
    return layer_norm(z1 + ffn, layer_weights["ln2.gamma"], layer_weights["ln2.beta"],
                      config.norm_eps)


def encode(
    seq: TokenSequence,
    weights: EncoderWeights,
    config: ModelConfig,
    training: bool = False,
    rng: np.random.Generator | None = None,
    collect_weights: list | None = None,
) -> Tensor:
    """Embed then apply every encoder block; the padding mask is respected
    in each attention layer."""
    x = embed(seq, weights, config, training, rng)
    for i in range(config.n_layers):
        x = encoder_block(x, weights.layer(i), seq.mask, config, training, rng,
                          collect_weights)
    return x


def classify(hidden: Tensor, weights: EncoderWeights, config: ModelConfig) -> Tensor:
    """Map the CLS row to independent per-label probabilities in (0, 1)."""
    cls = hidden.slice_rows(0, 1)
    logits = matmul(cls, weights["head.w"]) + weights["head.b"]
    if config.head_mode == "sigmoid":
        return logits.sigmoid()
    pairs = []
    for k in range(config.n_labels):
        pair = softmax(logits.slice_cols(2 * k, 2 * k + 2), axis=-1)
        pairs.append(pair.slice_cols(1, 2))
    return concat_cols(pairs)


def forward(
    seq: TokenSequence,
    weights: EncoderWeights,
    config: ModelConfig,
    training: bool = False,
    rng: np.random.Generator | None = None,
) -> Tensor:
    """Full pipeline: encode then classify. Returns a [1, n_labels] tensor."""
    return classify(encode(seq, weights, config, training, rng), weights, config)
