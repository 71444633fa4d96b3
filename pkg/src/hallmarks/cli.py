"""Command-line interface: build-vocab, train, evaluate, predict.

Configuration comes from an INI-style file (key = value under sections)
with command-line flags taking precedence. A training run owns its output
directory exclusively via a lock file and emits one structured key=value
log line per epoch.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numeric
failure.
"""

from __future__ import annotations

import argparse
import configparser
import datetime
import math
import os
import sys
from dataclasses import dataclass, fields
from pathlib import Path


from . import checkpoint as ckpt_io
from .data import (
    DEFAULT_PROPORTIONS,
    HALLMARKS,
    load_corpus,
    load_manifest,
    split,
    split_by_manifest,
)
from .errors import (
    CheckpointError,
    ConfigError,
    DataError,
    HallmarksError,
    NumericError,
    VocabError,
)
from .metrics import render_text, render_tsv
from .model import ModelConfig
from .tokenization import Vocab, build_vocab
from .training import TrainSettings, evaluate_split, predict_probs, train

EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4

LOCK_NAME = ".lock"

# The reference fine-tuning recipe: full-size architecture, 512-token
# window, batch 6, 20 epochs, peak learning rate 1e-5.
PRESETS = {
    "paper": dict(
        n_layers=12, hidden_size=768, n_heads=12, ffn_size=3072, max_len=512,
        batch_size=6, epochs=20, max_lr=1e-5,
    ),
    "desk": dict(
        n_layers=2, hidden_size=64, n_heads=4, ffn_size=256, max_len=128,
        batch_size=6, epochs=20, max_lr=3e-3, positional="learned",
    ),
}


@dataclass
class RunConfig:
    """Everything a training run needs; defaults follow the reference recipe."""

    corpus: str = ""
    split_manifest: str = ""
    vocab: str = ""
    output_dir: str = ""
    # model
    n_layers: int = 2
    hidden_size: int = 64
    n_heads: int = 4
    ffn_size: int = 256
    max_len: int = 128
    n_labels: int = 10
    dropout: float = 0.1
    positional: str = "sinusoidal"
    activation: str = "gelu"
    head_mode: str = "sigmoid"
    vocab_size: int = 2000
    casing: str = "uncased"
    # schedule
    max_lr: float = 1e-5
    warm_fraction: float = 0.3
    div_factor: float = 25.0
    final_div_factor: float = 1e4
    momentum_high: float = 0.95
    momentum_low: float = 0.85
    # optimizer
    weight_decay: float = 0.01
    beta2: float = 0.999
    eps: float = 1e-8
    clip_norm: float = 1.0
    # training
    batch_size: int = 6
    epochs: int = 20
    data_seed: int = 0
    init_seed: int = 0
    dropout_seed: int = 0
    dtype: str = "float32"
    selection_metric: str = "macro_f1"
    train_proportion: float = DEFAULT_PROPORTIONS[0]
    validation_proportion: float = DEFAULT_PROPORTIONS[1]
    test_proportion: float = DEFAULT_PROPORTIONS[2]

    def model_config(self, vocab_len: int) -> ModelConfig:
        return ModelConfig(
            vocab_size=vocab_len, n_layers=self.n_layers, hidden_size=self.hidden_size,
            n_heads=self.n_heads, ffn_size=self.ffn_size, max_len=self.max_len,
            n_labels=self.n_labels, dropout=self.dropout, positional=self.positional,
            activation=self.activation, head_mode=self.head_mode,
        )

    def settings(self) -> TrainSettings:
        return TrainSettings(
            batch_size=self.batch_size, epochs=self.epochs, max_lr=self.max_lr,
            warm_fraction=self.warm_fraction, div_factor=self.div_factor,
            final_div_factor=self.final_div_factor, momentum_high=self.momentum_high,
            momentum_low=self.momentum_low, beta2=self.beta2, eps=self.eps,
            weight_decay=self.weight_decay, clip_norm=self.clip_norm,
            data_seed=self.data_seed, init_seed=self.init_seed,
            dropout_seed=self.dropout_seed, dtype=self.dtype,
            selection_metric=self.selection_metric,
        )

    def proportions(self) -> tuple[float, float, float]:
        return (self.train_proportion, self.validation_proportion, self.test_proportion)


_SECTIONS = {
    "paths": ("corpus", "split_manifest", "vocab", "output_dir"),
    "model": ("n_layers", "hidden_size", "n_heads", "ffn_size", "max_len", "n_labels",
              "dropout", "positional", "activation", "head_mode", "vocab_size", "casing"),
    "schedule": ("max_lr", "warm_fraction", "div_factor", "final_div_factor",
                 "momentum_high", "momentum_low"),
    "optimizer": ("weight_decay", "beta2", "eps", "clip_norm"),
    "training": ("batch_size", "epochs", "data_seed", "init_seed", "dropout_seed",
                 "dtype", "selection_metric", "train_proportion",
                 "validation_proportion", "test_proportion"),
}


def load_run_config(path) -> RunConfig:
    """Parse an INI config file into a RunConfig."""
    parser = configparser.ConfigParser()
    read = parser.read(path)
    if not read:
        raise ConfigError(f"config file not found: {path}")
    types = {f.name: f.type for f in fields(RunConfig)}
    values: dict = {}
    known = {k: sec for sec, keys in _SECTIONS.items() for k in keys}
    for section in parser.sections():
        if section not in _SECTIONS:
            raise ConfigError(f"unknown config section [{section}]")
        for key, raw in parser.items(section):
            if key not in _SECTIONS[section]:
                hint = f" (belongs in [{known[key]}])" if key in known else ""
                raise ConfigError(f"unknown key {key!r} in section [{section}]{hint}")
            values[key] = _coerce(raw, types[key], key)
    return RunConfig(**values)


def _coerce(raw: str, type_name: str, key: str):
    try:
        if type_name == "int":
            return int(raw)
        if type_name == "float":
            return float(raw)
        return raw
    except ValueError:
        raise ConfigError(f"config key {key!r}: cannot parse {raw!r} as {type_name}") from None


def _apply_overrides(cfg: RunConfig, args: argparse.Namespace) -> RunConfig:
    if args.preset:
        if args.preset not in PRESETS:
            raise ConfigError(f"unknown preset {args.preset!r}; choose from {sorted(PRESETS)}")
        for key, value in PRESETS[args.preset].items():
            setattr(cfg, key, value)
    direct = ("corpus", "split_manifest", "vocab", "output_dir", "epochs",
              "batch_size", "max_lr", "max_len", "casing", "vocab_size", "head_mode")
    for key in direct:
        value = getattr(args, key, None)
        if value is not None:
            setattr(cfg, key, value)
    if getattr(args, "seed", None) is not None:
        cfg.data_seed = cfg.init_seed = cfg.dropout_seed = args.seed
    return cfg


def _utc_now() -> str:
    return datetime.datetime.now(datetime.timezone.utc).isoformat(timespec="seconds")


class _OutputLock:
    def __init__(self, out_dir: Path):
        self.path = out_dir / LOCK_NAME

    def __enter__(self):
        try:
            fd = os.open(self.path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
        except FileExistsError:
            raise ConfigError(
                f"output directory is locked by another run: {self.path} "
                "(delete the lock file if that run is dead)"
            ) from None
        os.close(fd)
        return self

    def __exit__(self, *exc):
        if self.path.exists():
            self.path.unlink()
        return False


def _resolve_splits(cfg: RunConfig, records):
    if cfg.split_manifest:
        return split_by_manifest(records, load_manifest(cfg.split_manifest))
    return split(records, cfg.proportions(), seed=cfg.data_seed)


def _resolve_vocab(cfg: RunConfig, train_texts, out_dir: Path) -> Vocab:
    if cfg.vocab:
        return Vocab.load(cfg.vocab, casing="auto")
    vocab = build_vocab(train_texts, cfg.vocab_size, cfg.casing)
    vocab.save(out_dir / "vocab.txt")
    return vocab


def cmd_train(args) -> int:
    cfg = load_run_config(args.config) if args.config else RunConfig()
    cfg = _apply_overrides(cfg, args)
    if not cfg.corpus:
        raise ConfigError("no corpus given (--corpus or [paths] corpus)")
    if not cfg.output_dir:
        raise ConfigError("no output directory given (--output-dir)")
    if args.preset == "paper" and not args.allow_large:
        raise ConfigError(
            "the paper preset builds a 110M-parameter model; pass --allow-large "
            "to confirm you want that on this machine"
        )
    out_dir = Path(cfg.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    records = load_corpus(cfg.corpus, n_labels=cfg.n_labels)
    if args.preset == "paper" and len(records) != 1852:
        print(f"warning: corpus has {len(records)} records; "
              "the reference corpus has 1852", file=sys.stderr)
    splits = _resolve_splits(cfg, records)

    with _OutputLock(out_dir):
        vocab = _resolve_vocab(cfg, (r.text for r in splits.train), out_dir)
        model_cfg = cfg.model_config(len(vocab))
        settings = cfg.settings()

        start_epoch = 0
        initial = None
        best_metric = -math.inf
        best_epoch = 0
        if args.resume:
            loaded = ckpt_io.load(args.resume)
            weights, state = ckpt_io.to_model(loaded)
            if state is None:
                raise ConfigError(f"{args.resume} has no optimizer state; cannot resume")
            vocab = loaded.vocab
            model_cfg = loaded.config
            start_epoch = int(loaded.metadata["epoch"])
            best_metric = float(loaded.metadata["best_metric"])
            best_epoch = int(loaded.metadata.get("best_epoch", 0))
            initial = (weights, state)

        log_path = out_dir / "train.log"
        log_mode = "a" if args.resume else "w"
        log = open(log_path, log_mode, encoding="utf-8")
        log.write(f"# {'resumed' if args.resume else 'started'} {_utc_now()}\n")

        def on_epoch(stats, weights, state):
            if stats.is_best:
                result_best[0] = stats.selection_value
                result_best[1] = stats.epoch
            meta = {
                "epoch": stats.epoch,
                "step": stats.epoch * math.ceil(len(splits.train) / settings.batch_size),
                "best_metric": result_best[0],
                "best_epoch": result_best[1],
                "seeds": {"data": settings.data_seed, "init": settings.init_seed,
                          "dropout": settings.dropout_seed},
            }
            if stats.is_best:
                ckpt_io.save(ckpt_io.from_model(weights, vocab, state, meta),
                             out_dir / "best.ckpt")
            ckpt_io.save(ckpt_io.from_model(weights, vocab, state, meta),
                         out_dir / "last.ckpt")
            line = (
                f"epoch={stats.epoch} loss={stats.mean_loss:.6f} lr={stats.lr:.3e} "
                f"val_macro_f1={stats.val_macro_f1:.4f} "
                f"val_accuracy={stats.val_accuracy:.4f} best={int(stats.is_best)}"
            )
            log.write(line + "\n")
            log.flush()
            print(line)

        result_best = [best_metric, best_epoch]
        try:
            result = train(
                splits.train, splits.validation, vocab, model_cfg, settings,
                on_epoch=on_epoch, start_epoch=start_epoch, initial=initial,
                best_metric=best_metric, best_epoch=best_epoch,
            )
            log.write(_history_table(result.history))
        finally:
            log.close()
    if result.best_epoch:
        print(f"done: best validation {settings.selection_metric} "
              f"{result.best_metric:.4f} at epoch {result.best_epoch}")
    else:
        print(f"done: trained {settings.epochs} epochs (no validation selection)")
    return 0


def _history_table(history) -> str:
    lines = ["", f"{'epoch':>5}  {'loss':>10}  {'lr':>10}  {'val_f1':>7}  {'val_acc':>7}"]
    for h in history:
        lines.append(
            f"{h.epoch:>5}  {h.mean_loss:>10.6f}  {h.lr:>10.3e}  "
            f"{h.val_macro_f1:>7.4f}  {h.val_accuracy:>7.4f}"
        )
    return "\n".join(lines) + "\n"


def cmd_evaluate(args) -> int:
    loaded = ckpt_io.load(args.checkpoint)
    weights, _ = ckpt_io.to_model(loaded)
    records = load_corpus(args.corpus, n_labels=loaded.config.n_labels)
    if args.split_manifest:
        splits = split_by_manifest(records, load_manifest(args.split_manifest))
    else:
        splits = split(records, seed=args.seed if args.seed is not None else 0)
    subset = splits.named(args.split)
    if not subset:
        raise DataError(f"split {args.split!r} is empty")
    report = evaluate_split(subset, weights, loaded.vocab, loaded.config)
    text = render_text(report)
    print(text, end="")
    if args.output_dir:
        out_dir = Path(args.output_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / "report.txt").write_text(text, encoding="utf-8")
        (out_dir / "report.tsv").write_text(render_tsv(report), encoding="utf-8")
    return 0


def cmd_predict(args) -> int:
    loaded = ckpt_io.load(args.checkpoint)
    weights, _ = ckpt_io.to_model(loaded)
    if args.text is not None:
        texts = [("text0", args.text)]
    else:
        lines = Path(args.file).read_text(encoding="utf-8").splitlines()
        texts = [(f"text{i}", line) for i, line in enumerate(lines)]
    if not texts or any(not t.strip() for _, t in texts):
        raise DataError("empty input text")
    probs = predict_probs([t for _, t in texts], weights, loaded.vocab, loaded.config)
    for (name, _), row in zip(texts, probs):
        picked = [HALLMARKS[k][0] for k in range(len(row)) if row[k] >= 0.5]
        cells = " ".join(f"{p:.4f}" for p in row)
        print(f"{name}\t{cells}\t{','.join(picked) if picked else '-'}")
    return 0


def cmd_build_vocab(args) -> int:
    records = load_corpus(args.corpus)
    vocab = build_vocab((r.text for r in records), args.size, args.casing)
    vocab.save(args.out)
    print(f"wrote {len(vocab)} tokens to {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hallmarks",
        description="Train and run a small transformer text classifier "
                    "for the ten hallmarks of cancer.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("build-vocab", help="build a subword vocabulary from a corpus")
    p.add_argument("--corpus", required=True)
    p.add_argument("--size", type=int, required=True)
    p.add_argument("--casing", choices=("cased", "uncased"), default="uncased")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_build_vocab)

    p = sub.add_parser("train", help="fine-tune a model on a labeled corpus")
    p.add_argument("--config", help="INI config file; flags override it")
    p.add_argument("--corpus")
    p.add_argument("--split-manifest", dest="split_manifest")
    p.add_argument("--vocab")
    p.add_argument("--output-dir", dest="output_dir")
    p.add_argument("--preset", choices=sorted(PRESETS))
    p.add_argument("--allow-large", action="store_true")
    p.add_argument("--seed", type=int, help="sets the data, init, and dropout seeds")
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--max-lr", dest="max_lr", type=float)
    p.add_argument("--max-len", dest="max_len", type=int)
    p.add_argument("--casing", choices=("cased", "uncased"))
    p.add_argument("--vocab-size", dest="vocab_size", type=int)
    p.add_argument("--head-mode", dest="head_mode", choices=("sigmoid", "softmax_pairs"))
    p.add_argument("--resume", help="checkpoint to continue training from")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="per-hallmark metrics report on a split")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--split", choices=("train", "validation", "test"), default="test")
    p.add_argument("--split-manifest", dest="split_manifest")
    p.add_argument("--seed", type=int, help="seed of the random split to reproduce")
    p.add_argument("--output-dir", dest="output_dir")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("predict", help="per-hallmark probabilities for raw text")
    p.add_argument("--checkpoint", required=True)
    group = p.add_mutually_exclusive_group(required=True)
    group.add_argument("--text")
    group.add_argument("--file")
    p.set_defaults(func=cmd_predict)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, VocabError) as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, CheckpointError, OSError) as e:
        print(f"data error: {e}", file=sys.stderr)
        return EXIT_DATA
    except NumericError as e:
        print(f"numeric failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except HallmarksError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
