import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pedfusion.metrics import MetricsReport, UndefinedMetricError, confusion, evaluate, f1, roc_auc


def pairwise_auc(s, y):
    pos = [a for a, l in zip(s, y) if l == 1]
    neg = [b for b, l in zip(s, y) if l == 0]
    wins = sum(1.0 if a > b else 0.5 if a == b else 0.0 for a in pos for b in neg)
    return wins / (len(pos) * len(neg))


@pytest.mark.parametrize(
    "scores,labels,want",
    [
        ([0.9, 0.8, 0.4, 0.3], [1, 1, 0, 0], 1.0),
        ([0.3, 0.7], [1, 0], 0.0),
        ([0.5] * 6, [1, 0, 1, 0, 1, 0], 0.5),
    ],
)
def test_auc_examples(scores, labels, want):
    assert roc_auc(scores, labels) == want


def test_auc_single_class():
    with pytest.raises(UndefinedMetricError):
        roc_auc([0.1, 0.2], [1, 1])


def test_input_validation():
    with pytest.raises(ValueError):
        roc_auc([0.1], [1, 0])
    with pytest.raises(ValueError):
        f1([0.1, 0.2], [1, 2])


def test_f1_examples():
    assert f1([0.9, 0.1], [1, 0]) == 1.0
    # everything predicted positive on a balanced set
    assert f1([0.6] * 4, [1, 0, 1, 0]) == pytest.approx(2 / 3)
    assert f1([0.1, 0.2], [1, 1]) == 0.0


def test_threshold_is_inclusive():
    assert confusion([0.5], [1]) == (1, 0, 0, 0)


@settings(max_examples=60, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 6), st.integers(0, 1)), min_size=2, max_size=60))
def test_auc_matches_pairs_with_ties(rows):
    s = [a / 6 for a, _ in rows]
    y = [b for _, b in rows]
    if len(set(y)) < 2:
        return
    assert roc_auc(s, y) == pytest.approx(pairwise_auc(s, y), abs=1e-12)


def test_auc_invariant_under_monotone_transform(rng):
    s = rng.uniform(0, 1, 200)
    y = rng.integers(0, 2, 200)
    assert roc_auc(s**3, y) == pytest.approx(roc_auc(s, y), abs=1e-15)


def test_auc_antisymmetry(rng):
    s = rng.normal(size=150)
    y = rng.integers(0, 2, 150)
    assert roc_auc(s, y) + roc_auc(-s, y) == pytest.approx(1.0, abs=1e-12)


def test_adding_correct_positive_never_lowers_recall(rng):
    s = rng.uniform(0, 1, 50)
    y = rng.integers(0, 2, 50)
    before = evaluate(s, y).recall
    after = evaluate(np.append(s, 0.9), np.append(y, 1)).recall
    assert after >= before


def test_report_consistency(rng):
    s = rng.uniform(0, 1, 100)
    y = rng.integers(0, 2, 100)
    r = evaluate(s, y)
    assert r.tp + r.fp + r.tn + r.fn == 100
    assert r.f1 == pytest.approx(2 * r.precision * r.recall / (r.precision + r.recall))


def test_report_record_round_trip(rng):
    r = evaluate(rng.uniform(0, 1, 30), rng.integers(0, 2, 30))
    line = r.to_record()
    assert line.split()[0].startswith("auc=")
    back = MetricsReport.from_record(line)
    assert back.tp == r.tp and back.auc == pytest.approx(r.auc, abs=1e-6)


def test_report_single_class_has_nan_auc():
    r = evaluate([0.2, 0.7], [0, 0])
    assert r.auc is None
    assert "auc=nan" in r.to_record()
    assert MetricsReport.from_record(r.to_record()).auc is None
