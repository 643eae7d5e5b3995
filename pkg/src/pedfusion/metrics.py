"""ROC-AUC, F1 and confusion counts for per-sample crossing scores."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
from scipy.stats import rankdata


class UndefinedMetricError(ValueError):
    pass


def _check(scores, labels):
    s = np.asarray(scores, dtype=np.float64).reshape(-1)
    y = np.asarray(labels).reshape(-1)
    if s.shape != y.shape:
        raise ValueError(f"{s.size} scores but {y.size} labels")
    if not np.isin(y, (0, 1)).all():
        raise ValueError("labels must be 0 or 1")
    if not np.isfinite(s).all():
        raise ValueError("scores must be finite")
    return s, y.astype(np.int64)


def roc_auc(scores, labels) -> float:
    """Probability that a random positive outranks a random negative (ties count 1/2).

    Mann-Whitney form: average ranks handle ties exactly.
    """
    s, y = _check(scores, labels)
    n_pos = int(y.sum())
    n_neg = y.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetricError("AUC is undefined unless both classes are present")
    ranks = rankdata(s)
    return float((ranks[y == 1].sum() - n_pos * (n_pos + 1) / 2) / (n_pos * n_neg))


def confusion(scores, labels, threshold=0.5):
    """(tp, fp, tn, fn) with score >= threshold predicted positive."""
    s, y = _check(scores, labels)
    pred = s >= threshold
    tp = int((pred & (y == 1)).sum())
    fp = int((pred & (y == 0)).sum())
    tn = int((~pred & (y == 0)).sum())
    fn = int((~pred & (y == 1)).sum())
    return tp, fp, tn, fn


def f1(scores, labels, threshold=0.5) -> float:
    tp, fp, _, fn = confusion(scores, labels, threshold)
    return 2 * tp / (2 * tp + fp + fn) if tp else 0.0


@dataclass
class MetricsReport:
    auc: float | None
    f1: float
    precision: float
    recall: float
    accuracy: float
    tp: int
    fp: int
    tn: int
    fn: int
    threshold: float = 0.5

    def to_record(self) -> str:
        """Flat ``key=value`` fields in a fixed order."""
        parts = []
        for k, v in asdict(self).items():
            if v is None:
                parts.append(f"{k}=nan")
            elif isinstance(v, float):
                parts.append(f"{k}={v:.6f}")
            else:
                parts.append(f"{k}={v}")
        return " ".join(parts)

    @classmethod
    def from_record(cls, line: str) -> "MetricsReport":
        d = dict(kv.split("=", 1) for kv in line.split())
        ints = {"tp", "fp", "tn", "fn"}
        return cls(**{k: (int(v) if k in ints else (None if v == "nan" else float(v))) for k, v in d.items()})


def evaluate(scores, labels, threshold=0.5) -> MetricsReport:
    """Full report; AUC is None when only one class is present."""
    tp, fp, tn, fn = confusion(scores, labels, threshold)
    try:
        auc = roc_auc(scores, labels)
    except UndefinedMetricError:
        auc = None
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    total = tp + fp + tn + fn
    return MetricsReport(
        auc=auc,
        f1=f1(scores, labels, threshold),
        precision=precision,
        recall=recall,
        accuracy=(tp + tn) / total if total else 0.0,
        tp=tp,
        fp=fp,
        tn=tn,
        fn=fn,
        threshold=threshold,
    )
