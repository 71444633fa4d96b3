"""Metric tests: brute-force recount oracles, the pairwise AUC oracle, and
the report fixture re-averaging published per-hallmark rows."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hallmarks.errors import ConfigError, DegenerateLabelsError, ShapeError
from hallmarks.metrics import (
    ConfusionCounts,
    MetricsRow,
    accuracy,
    binary_macro_prf,
    build_report,
    confusion,
    render_text,
    render_tsv,
    roc_auc,
    score_row,
)


def recount(scores, labels, threshold=0.5):
    c = ConfusionCounts()
    for s, y in zip(scores, labels):
        pred = s >= threshold
        if pred and y == 1:
            c.tp += 1
        elif pred and y == 0:
            c.fp += 1
        elif not pred and y == 1:
            c.fn += 1
        else:
            c.tn += 1
    return c


def pairwise_auc(scores, labels):
    pos = [s for s, y in zip(scores, labels) if y == 1]
    neg = [s for s, y in zip(scores, labels) if y == 0]
    total = 0.0
    for p in pos:
        for n in neg:
            if p > n:
                total += 1.0
            elif p == n:
                total += 0.5
    return total / (len(pos) * len(neg))


def prf_oracle(c):
    def safe(n, d):
        return n / d if d else 0.0

    pp, pr = safe(c.tp, c.tp + c.fp), safe(c.tp, c.tp + c.fn)
    np_, nr = safe(c.tn, c.tn + c.fn), safe(c.tn, c.tn + c.fp)
    f1 = lambda p, r: safe(2 * p * r, p + r)
    return (pp + np_) / 2, (pr + nr) / 2, (f1(pp, pr) + f1(np_, nr)) / 2


class TestConfusion:
    def test_basic(self):
        c = confusion([0.9, 0.1], [1, 0])
        assert (c.tp, c.fp, c.fn, c.tn) == (1, 0, 0, 1)

    def test_boundary_score_counts_positive(self):
        c = confusion([0.5], [0])
        assert c.fp == 1

    def test_brute_force_recount(self):
        rng = np.random.default_rng(5)
        scores = rng.random(1000)
        labels = rng.integers(0, 2, size=1000)
        a = confusion(scores, labels)
        b = recount(scores, labels)
        assert (a.tp, a.fp, a.fn, a.tn) == (b.tp, b.fp, b.fn, b.tn)
        assert a.total == 1000

    def test_length_mismatch(self):
        with pytest.raises(ShapeError):
            confusion([0.5, 0.5], [1])


class TestMacroPrf:
    def test_worked_fixture(self):
        c = ConfusionCounts(tp=8, fp=2, fn=1, tn=9)
        p, r, f1 = binary_macro_prf(c)
        assert p == pytest.approx(0.85, abs=1e-4)
        assert r == pytest.approx(0.8535, abs=1e-4)
        assert f1 == pytest.approx(0.8496, abs=1e-4)

    def test_perfect(self):
        p, r, f1 = binary_macro_prf(ConfusionCounts(tp=5, tn=7))
        assert (p, r, f1) == (1.0, 1.0, 1.0)

    def test_all_predicted_positive(self):
        p, r, f1 = binary_macro_prf(ConfusionCounts(tp=3, fp=2))
        # negative class collapses to 0 by the 0/0 rule
        assert p == pytest.approx((0.6 + 0.0) / 2)
        assert r == pytest.approx((1.0 + 0.0) / 2)

    def test_empty_rejected(self):
        with pytest.raises(ConfigError):
            binary_macro_prf(ConfusionCounts())

    @given(st.tuples(*(st.integers(0, 40) for _ in range(4))))
    @settings(max_examples=200, deadline=None)
    def test_matches_recount_oracle(self, cells):
        tp, fp, fn, tn = cells
        if tp + fp + fn + tn == 0:
            return
        c = ConfusionCounts(tp=tp, fp=fp, fn=fn, tn=tn)
        assert binary_macro_prf(c) == pytest.approx(prf_oracle(c))


class TestAccuracy:
    def test_worked_fixture(self):
        assert accuracy(ConfusionCounts(tp=8, fp=2, fn=1, tn=9)) == pytest.approx(0.85)

    def test_perfect(self):
        assert accuracy(ConfusionCounts(tp=3, tn=2)) == 1.0

    def test_all_wrong(self):
        assert accuracy(ConfusionCounts(fp=3, fn=2)) == 0.0

    def test_empty_rejected(self):
        with pytest.raises(ConfigError):
            accuracy(ConfusionCounts())


class TestRocAuc:
    def test_perfect_ranking(self):
        assert roc_auc([0.9, 0.8, 0.3, 0.1], [1, 1, 0, 0]) == 1.0

    def test_pairwise_fixture(self):
        assert roc_auc([0.9, 0.6, 0.4, 0.1], [1, 0, 1, 0]) == pytest.approx(0.75)

    def test_all_ties(self):
        assert roc_auc([0.3, 0.3, 0.3, 0.3], [1, 0, 1, 0]) == pytest.approx(0.5)

    def test_single_class_errors_name_the_class(self):
        with pytest.raises(DegenerateLabelsError) as e:
            roc_auc([0.1, 0.2], [1, 1])
        assert e.value.present_class == 1
        with pytest.raises(DegenerateLabelsError) as e:
            roc_auc([0.1, 0.2], [0, 0])
        assert e.value.present_class == 0

    def test_pairwise_oracle_exact_on_500_instances(self):
        rng = np.random.default_rng(7)
        for _ in range(500):
            n = int(rng.integers(2, 51))
            labels = rng.integers(0, 2, size=n)
            if labels.sum() in (0, n):
                labels[0], labels[-1] = 0, 1
            # quantized scores force plenty of ties
            scores = rng.integers(0, 6, size=n) / 4.0
            assert roc_auc(scores, labels) == pairwise_auc(scores, labels)

    def test_negation_symmetry_tie_free(self):
        rng = np.random.default_rng(9)
        scores = rng.permutation(20) / 20.0
        labels = rng.integers(0, 2, size=20)
        labels[0], labels[1] = 0, 1
        assert roc_auc(scores, labels) + roc_auc(-scores, labels) == pytest.approx(1.0)

    def test_invariant_under_monotone_transform(self):
        rng = np.random.default_rng(11)
        scores = rng.standard_normal(31)
        labels = rng.integers(0, 2, size=31)
        labels[0], labels[1] = 0, 1
        a = roc_auc(scores, labels)
        assert roc_auc(np.exp(scores), labels) == pytest.approx(a, abs=1e-12)
        assert roc_auc(3 * scores + 7, labels) == pytest.approx(a, abs=1e-12)


def pct_row(name, *vals):
    return MetricsRow(name, *(v / 100.0 for v in vals))


# Per-hallmark results of the cased reference model, used as a
# re-averaging fixture for the report builder.
CASED_ROWS = [
    pct_row("Sustaining proliferative signaling", 93.44, 85.36, 91.56, 88.04, 96.97),
    pct_row("Evading growth suppressors", 98.09, 91.92, 90.04, 90.96, 98.87),
    pct_row("Resisting cell death", 99.18, 93.75, 99.57, 96.45, 99.82),
    pct_row("Enabling replicative immortality", 99.18, 95.69, 97.53, 96.59, 98.44),
    pct_row("Inducing angiogenesis", 90.98, 79.57, 79.02, 79.29, 89.36),
    pct_row("Activating invasion and metastasis", 92.62, 87.96, 87.52, 87.74, 95.96),
    pct_row("Genomic instability and mutation", 96.17, 85.88, 92.06, 88.65, 96.02),
    pct_row("Tumor promoting inflammation", 94.81, 91.77, 94.12, 92.87, 97.01),
    pct_row("Cellular energetics", 83.61, 78.00, 81.00, 79.23, 88.29),
    pct_row("Avoiding immune destruction", 96.45, 91.76, 92.52, 92.14, 96.05),
]
CASED_AVERAGE = (94.45, 88.17, 90.49, 89.20, 95.68)


class TestBuildReport:
    def test_single_row_average_is_identity(self):
        row = pct_row("Only", 90.0, 80.0, 70.0, 75.0, 85.0)
        report = build_report([row])
        assert report.average.values() == pytest.approx(row.values())

    def test_two_row_mean(self):
        rows = [pct_row("A", 90, 90, 90, 90, 90), pct_row("B", 100, 100, 100, 100, 100)]
        assert build_report(rows).average.accuracy == pytest.approx(0.95)

    def test_reference_table_reaverages_to_printed_row(self):
        report = build_report(CASED_ROWS)
        got = [100 * v for v in report.average.values()]
        for value, printed in zip(got, CASED_AVERAGE):
            assert abs(value - printed) < 0.01

    def test_empty_rejected(self):
        with pytest.raises(ConfigError):
            build_report([])


class TestRendering:
    def test_tsv_header_and_row_count(self):
        report = build_report(CASED_ROWS)
        lines = render_tsv(report).splitlines()
        assert lines[0] == "Hallmark\tAccuracy\tMacro-Precision\tMacro-Recall\tMacro-F1\tAUC"
        assert len(lines) == 1 + 10 + 1
        assert lines[-1].startswith("Average\t94.45\t88.17\t90.49\t89.20\t95.68")

    def test_text_percentages_in_range(self):
        report = build_report(CASED_ROWS)
        text = render_text(report)
        for line in text.splitlines()[1:]:
            for cell in line.split()[-5:]:
                assert 0.0 <= float(cell) <= 100.0

    def test_score_row_composes_everything(self):
        rng = np.random.default_rng(13)
        scores = rng.random(40)
        labels = rng.integers(0, 2, size=40)
        labels[0], labels[1] = 0, 1
        row = score_row("X", scores, labels)
        c = recount(scores, labels)
        assert row.accuracy == pytest.approx(accuracy(c))
        assert row.auc == pytest.approx(pairwise_auc(scores, labels))
