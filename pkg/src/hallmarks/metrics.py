"""Per-hallmark evaluation: confusion counts, class-macro precision /
recall / F1, accuracy, ROC-AUC, and the report table with its Average row.

Macro averaging here is over the positive and negative classes of each
binary task, not over hallmarks; the hallmark-level mean appears only in
the report's Average row. All functions are pure.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DegenerateLabelsError, ShapeError

DECISION_THRESHOLD = 0.5

REPORT_COLUMNS = ("Accuracy", "Macro-Precision", "Macro-Recall", "Macro-F1", "AUC")


@dataclass
class ConfusionCounts:
    tp: int = 0
    fp: int = 0
    fn: int = 0
    tn: int = 0

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn


def confusion(scores, labels, threshold: float = DECISION_THRESHOLD) -> ConfusionCounts:
    """Count the four confusion cells, predicting positive at score >= threshold."""
    s = np.asarray(scores, dtype=float)
    y = np.asarray(labels)
    if s.shape != y.shape:
        raise ShapeError(f"scores shape {s.shape} != labels shape {y.shape}")
    pred = s >= threshold
    truth = y == 1
    return ConfusionCounts(
        tp=int((pred & truth).sum()),
        fp=int((pred & ~truth).sum()),
        fn=int((~pred & truth).sum()),
        tn=int((~pred & ~truth).sum()),
    )


def _ratio(num: int, den: int) -> float:
    return num / den if den else 0.0


def _f1(p: float, r: float) -> float:
    return 2 * p * r / (p + r) if p + r else 0.0


def binary_macro_prf(c: ConfusionCounts) -> tuple[float, float, float]:
    """Precision/recall/F1 macro-averaged over the positive and negative
    classes of one binary task. 0/0 ratios count as 0."""
    if c.total == 0:
        raise ConfigError("cannot compute metrics over zero examples")
    pos_p = _ratio(c.tp, c.tp + c.fp)
    pos_r = _ratio(c.tp, c.tp + c.fn)
    neg_p = _ratio(c.tn, c.tn + c.fn)
    neg_r = _ratio(c.tn, c.tn + c.fp)
    macro_p = (pos_p + neg_p) / 2
    macro_r = (pos_r + neg_r) / 2
    macro_f1 = (_f1(pos_p, pos_r) + _f1(neg_p, neg_r)) / 2
    return macro_p, macro_r, macro_f1


def accuracy(c: ConfusionCounts) -> float:
    if c.total == 0:
        raise ConfigError("cannot compute accuracy over zero examples")
    return (c.tp + c.tn) / c.total


def roc_auc(scores, labels) -> float:
    """Probability that a random positive outscores a random negative,
    ties counted one half (Mann-Whitney via tied ranks)."""
    s = np.asarray(scores, dtype=float)
    y = np.asarray(labels)
    if s.shape != y.shape:
        raise ShapeError(f"scores shape {s.shape} != labels shape {y.shape}")
    n_pos = int((y == 1).sum())
    n_neg = int(y.size - n_pos)
    if n_pos == 0:
        raise DegenerateLabelsError(0)
    if n_neg == 0:
        raise DegenerateLabelsError(1)
    order = np.argsort(s, kind="mergesort")
    ranks = np.empty(s.size, dtype=float)
    sorted_scores = s[order]
    i = 0
    while i < s.size:
        j = i
        while j + 1 < s.size and sorted_scores[j + 1] == sorted_scores[i]:
            j += 1
        ranks[order[i : j + 1]] = (i + j) / 2.0 + 1.0  # mean of 1-based ranks
        i = j + 1
    rank_sum = float(ranks[y == 1].sum())
    u = rank_sum - n_pos * (n_pos + 1) / 2.0
    return u / (n_pos * n_neg)


@dataclass
class MetricsRow:
    """One hallmark's metrics as fractions in [0, 1]."""

    name: str
    accuracy: float
    macro_precision: float
    macro_recall: float
    macro_f1: float
    auc: float

    def values(self) -> tuple[float, ...]:
        return (self.accuracy, self.macro_precision, self.macro_recall,
                self.macro_f1, self.auc)


@dataclass
class MetricsReport:
    rows: list[MetricsRow]
    average: MetricsRow


def score_row(name: str, scores, labels, threshold: float = DECISION_THRESHOLD) -> MetricsRow:
    """Compute one hallmark's full metrics row from scores and labels."""
    c = confusion(scores, labels, threshold)
    macro_p, macro_r, macro_f1 = binary_macro_prf(c)
    return MetricsRow(
        name=name,
        accuracy=accuracy(c),
        macro_precision=macro_p,
        macro_recall=macro_r,
        macro_f1=macro_f1,
        auc=roc_auc(scores, labels),
    )


def build_report(rows: list[MetricsRow]) -> MetricsReport:
    """Append the Average row: the unweighted column mean over hallmarks."""
    if not rows:
        raise ConfigError("report needs at least one hallmark row")
    cols = list(zip(*(r.values() for r in rows)))
    means = [sum(c) / len(c) for c in cols]
    return MetricsReport(rows=list(rows), average=MetricsRow("Average", *means))


def _pct(x: float) -> str:
    return f"{100.0 * x:.2f}"


def render_text(report: MetricsReport) -> str:
    """Aligned plain-text table, percentages to two decimals."""
    all_rows = report.rows + [report.average]
    name_w = max(len("Hallmark"), max(len(r.name) for r in all_rows))
    col_ws = [max(len(c), 6) for c in REPORT_COLUMNS]
    lines = [
        "  ".join(["Hallmark".ljust(name_w)] + [c.rjust(w) for c, w in zip(REPORT_COLUMNS, col_ws)])
    ]
    for r in all_rows:
        cells = [_pct(v).rjust(w) for v, w in zip(r.values(), col_ws)]
        lines.append("  ".join([r.name.ljust(name_w)] + cells))
    return "\n".join(lines) + "\n"


def render_tsv(report: MetricsReport) -> str:
    """Tab-separated rendering with a header row."""
    lines = ["\t".join(("Hallmark",) + REPORT_COLUMNS)]
    for r in report.rows + [report.average]:
        lines.append("\t".join([r.name] + [_pct(v) for v in r.values()]))
    return "\n".join(lines) + "\n"
