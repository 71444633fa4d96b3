"""A small trainable transformer encoder for multi-label tagging of
biomedical abstracts with the ten hallmarks of cancer.

The public surface mirrors scikit-learn (``HallmarkClassifier``,
``WordPieceTokenizer``); the submodules expose the underlying pieces:
autodiff tensors, the encoder, the one-cycle trainer, metrics, corpus
handling, and checkpointing.
"""

from .autodiff import Tensor, gelu, layer_norm, matmul, softmax
from .data import HALLMARKS, HallmarkRecord, generate_synthetic, load_corpus, split
from .errors import HallmarksError
from .estimator import HallmarkClassifier, WordPieceTokenizer
from .metrics import build_report, roc_auc
from .model import EncoderWeights, ModelConfig
from .optim import AdamState, OneCycleConfig, adam_step, bce_loss, one_cycle
from .tokenization import Vocab, build_vocab, detokenize, normalize, tokenize
from .training import TrainSettings, evaluate_split, predict_probs, train

__version__ = "0.1.0"

__all__ = [
    "AdamState",
    "EncoderWeights",
    "HALLMARKS",
    "HallmarkClassifier",
    "HallmarkRecord",
    "HallmarksError",
    "ModelConfig",
    "OneCycleConfig",
    "Tensor",
    "TrainSettings",
    "Vocab",
    "WordPieceTokenizer",
    "adam_step",
    "bce_loss",
    "build_report",
    "build_vocab",
    "detokenize",
    "evaluate_split",
    "gelu",
    "generate_synthetic",
    "layer_norm",
    "load_corpus",
    "matmul",
    "normalize",
    "one_cycle",
    "predict_probs",
    "roc_auc",
    "softmax",
    "split",
    "tokenize",
    "train",
]
