"""Corpus ingestion, splitting, batching, and a synthetic separable corpus
for desk-scale end-to-end runs.

The record file format is one record per line: id, label bitstring, text,
tab-separated with LF endings and no header. Hallmark order is fixed and
frozen in HALLMARKS.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterator

import numpy as np

from .errors import ConfigError, DataError
from .tokenization import TokenSequence

HALLMARKS = (
    ("PS", "Sustaining proliferative signaling"),
    ("GS", "Evading growth suppressors"),
    ("CD", "Resisting cell death"),
    ("RI", "Enabling replicative immortality"),
    ("A", "Inducing angiogenesis"),
    ("IM", "Activating invasion and metastasis"),
    ("GI", "Genomic instability and mutation"),
    ("TPI", "Tumor promoting inflammation"),
    ("CE", "Cellular energetics"),
    ("ID", "Avoiding immune destruction"),
)
N_HALLMARKS = len(HALLMARKS)

# Table-1 split proportions of the source corpus.
DEFAULT_PROPORTIONS = (0.7036, 0.0988, 0.1976)


@dataclass
class HallmarkRecord:
    """One abstract with its per-hallmark boolean label vector."""

    id: str
    text: str
    labels: list[int]

    def __post_init__(self):
        if not self.text:
            raise DataError(f"record {self.id!r} has empty text")
        if any(l not in (0, 1) for l in self.labels):
            raise DataError(f"record {self.id!r} has non-binary labels")


@dataclass
class SplitSet:
    train: list[HallmarkRecord]
    validation: list[HallmarkRecord]
    test: list[HallmarkRecord]
    seed: int | None = None

    def named(self, name: str) -> list[HallmarkRecord]:
        try:
            return {"train": self.train, "validation": self.validation,
                    "test": self.test}[name]
        except KeyError:
            raise ConfigError(f"unknown split {name!r}") from None


def parse_record(line: str, lineno: int, n_labels: int = N_HALLMARKS) -> HallmarkRecord:
    parts = line.split("\t", 2)
    if len(parts) != 3:
        raise DataError(f"line {lineno}: expected id<TAB>labels<TAB>text, got {len(parts)} fields")
    rid, bits, text = parts
    if len(bits) != n_labels:
        raise DataError(f"line {lineno}: label string has {len(bits)} entries, expected {n_labels}")
    if any(b not in "01" for b in bits):
        raise DataError(f"line {lineno}: label string must be 0/1, got {bits!r}")
    if not text:
        raise DataError(f"line {lineno}: empty text")
    return HallmarkRecord(id=rid, text=text, labels=[int(b) for b in bits])


def load_corpus(path, n_labels: int = N_HALLMARKS) -> list[HallmarkRecord]:
    """Parse a record file, preserving file order; duplicate ids are rejected."""
    records: list[HallmarkRecord] = []
    seen: set[str] = set()
    raw = Path(path).read_text(encoding="utf-8")
    for lineno, line in enumerate(raw.splitlines(), start=1):
        if not line:
            continue
        rec = parse_record(line, lineno, n_labels)
        if rec.id in seen:
            raise DataError(f"line {lineno}: duplicate record id {rec.id!r}")
        seen.add(rec.id)
        records.append(rec)
    return records


def save_corpus(records: list[HallmarkRecord], path) -> None:
    """Canonical serialization; loading the result reproduces the input."""
    lines = []
    for rec in records:
        if "\t" in rec.text or "\n" in rec.text:
            raise DataError(f"record {rec.id!r} text contains a tab or newline")
        lines.append(f"{rec.id}\t{''.join(str(l) for l in rec.labels)}\t{rec.text}")
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""), encoding="utf-8")


def split(
    records: list[HallmarkRecord],
    proportions: tuple[float, float, float] = DEFAULT_PROPORTIONS,
    seed: int = 0,
) -> SplitSet:
    """Seeded shuffle, then contiguous partition at the cumulative
    proportion boundaries (floor), so later splits absorb rounding slack."""
    if abs(sum(proportions) - 1.0) > 1e-6:
        raise ConfigError(f"proportions must sum to 1, got {sum(proportions)}")
    order = np.random.default_rng(_entropy(seed)).permutation(len(records))
    shuffled = [records[i] for i in order]
    n = len(records)
    b1 = int(np.floor(n * proportions[0]))
    b2 = int(np.floor(n * (proportions[0] + proportions[1])))
    return SplitSet(
        train=shuffled[:b1], validation=shuffled[b1:b2], test=shuffled[b2:], seed=seed,
    )


def _entropy(*parts: int) -> list[int]:
    return [p & 0xFFFFFFFF for p in parts]


def split_by_manifest(records: list[HallmarkRecord], manifest: dict[str, list[str]]) -> SplitSet:
    """Reproduce a fixed split from explicit id lists."""
    by_id = {r.id: r for r in records}
    assigned: set[str] = set()
    out: dict[str, list[HallmarkRecord]] = {}
    for name in ("train", "validation", "test"):
        ids = manifest.get(name, [])
        rows = []
        for rid in ids:
            if rid not in by_id:
                raise DataError(f"manifest id {rid!r} not present in corpus")
            if rid in assigned:
                raise DataError(f"manifest assigns id {rid!r} to two splits")
            assigned.add(rid)
            rows.append(by_id[rid])
        out[name] = rows
    missing = set(by_id) - assigned
    if missing:
        raise DataError(f"manifest leaves {len(missing)} records unassigned, e.g. {sorted(missing)[:3]}")
    return SplitSet(train=out["train"], validation=out["validation"], test=out["test"])


def load_manifest(path) -> dict[str, list[str]]:
    """Three sections of ids headed by #train / #validation / #test."""
    sections: dict[str, list[str]] = {"train": [], "validation": [], "test": []}
    current: str | None = None
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = line.strip()
        if not line:
            continue
        if line.startswith("#"):
            name = line[1:].strip()
            if name not in sections:
                raise DataError(f"line {lineno}: unknown manifest section {line!r}")
            current = name
        elif current is None:
            raise DataError(f"line {lineno}: id before any section header")
        else:
            sections[current].append(line)
    return sections


def save_manifest(splits: SplitSet, path) -> None:
    chunks = []
    for name in ("train", "validation", "test"):
        chunks.append(f"#{name}")
        chunks.extend(r.id for r in splits.named(name))
    Path(path).write_text("\n".join(chunks) + "\n", encoding="utf-8")


def label_stats(records: list[HallmarkRecord]) -> list[tuple[int, int]]:
    """Per hallmark: (records with the label, records without)."""
    n = len(records)
    pos = [0] * N_HALLMARKS
    for rec in records:
        if len(rec.labels) != N_HALLMARKS:
            raise DataError(f"record {rec.id!r} has {len(rec.labels)} labels")
        for k, l in enumerate(rec.labels):
            pos[k] += l
    return [(p, n - p) for p in pos]


def batch_iter(
    records: list[HallmarkRecord],
    batch_size: int,
    seed: int = 0,
    epoch: int = 0,
    tokenize: Callable[[str], TokenSequence] | None = None,
) -> Iterator:
    """Yield shuffled batches; order is keyed by (seed, epoch) so every
    epoch reshuffles reproducibly. The final short batch is emitted.

    With ``tokenize`` given, each batch is (list of TokenSequence, label
    matrix); otherwise it is a list of records.
    """
    if batch_size < 1:
        raise ConfigError(f"batch_size must be >= 1, got {batch_size}")
    order = np.random.default_rng(_entropy(seed, epoch)).permutation(len(records))
    for start in range(0, len(records), batch_size):
        chunk = [records[i] for i in order[start : start + batch_size]]
        if tokenize is None:
            yield chunk
        else:
            seqs = [tokenize(r.text) for r in chunk]
            labels = np.array([r.labels for r in chunk], dtype=np.float64)
            yield seqs, labels


def generate_synthetic(
    n_records: int,
    n_labels: int = N_HALLMARKS,
    seed: int = 0,
    words_per_label: int = 6,
    n_background: int = 30,
    positive_rate: float = 0.3,
) -> list[HallmarkRecord]:
    """Build a linearly separable corpus: each label owns a disjoint set of
    signature words, and a record positive for a label contains at least
    three of them mixed with background words. Deterministic by seed."""
    if n_records < 10:
        raise ConfigError(f"need at least 10 records, got {n_records}")
    rng = np.random.default_rng(_entropy(seed))
    signatures = [
        [f"hall{k}sig{j}" for j in range(words_per_label)] for k in range(n_labels)
    ]
    background = [f"filler{j}" for j in range(n_background)]

    labels = (rng.random((n_records, n_labels)) < positive_rate).astype(int)
    # Guarantee both classes for every label in any reasonable split.
    min_pos = max(3, n_records // 12)
    max_pos = n_records - max(3, n_records // 12)
    for k in range(n_labels):
        col = labels[:, k]
        short = min_pos - int(col.sum())
        if short > 0:
            col[rng.choice(np.flatnonzero(col == 0), size=short, replace=False)] = 1
        excess = int(col.sum()) - max_pos
        if excess > 0:
            col[rng.choice(np.flatnonzero(col == 1), size=excess, replace=False)] = 0

    records = []
    for i in range(n_records):
        words: list[str] = []
        for k in range(n_labels):
            if labels[i, k]:
                count = 4 + int(rng.integers(0, 4))
                words.extend(rng.choice(signatures[k], size=count, replace=True))
        words.extend(rng.choice(background, size=5 + int(rng.integers(0, 4)), replace=True))
        rng.shuffle(words)
        records.append(
            HallmarkRecord(id=f"synth{i:05d}", text=" ".join(words),
                           labels=[int(x) for x in labels[i]])
        )
    return records
