"""Pair-counting clustering scores that tolerate unclustered items.

Pairs involving an unclustered item never count as "same cluster": they are
excluded from the true/false positives and land in FN or TN according to
the ground truth.
"""
from __future__ import annotations

import csv
import os
from dataclasses import asdict, dataclass
from math import comb

import numpy as np


@dataclass(frozen=True)
class PairCounts:
    tp_bar: int
    fp_bar: int
    tn: int
    fn: int

    @property
    def total(self) -> int:
        return self.tp_bar + self.fp_bar + self.tn + self.fn


@dataclass(frozen=True)
class MetricsReport:
    precision: float
    recall: float
    f_measure: float
    ri: float
    ari: float
    lp_over_lg: float
    num_predicted: int
    num_truth: int
    unclustered: int

    def as_dict(self) -> dict:
        return asdict(self)

    def to_text(self) -> str:
        return "\n".join(f"{k}={v:.6f}" if isinstance(v, float) else f"{k}={v}"
                         for k, v in self.as_dict().items())


def _encode(labels):
    """Map arbitrary hashables to 0..k-1; ``None``/negative ints become -1."""
    out = np.empty(len(labels), dtype=np.int64)
    table = {}
    for i, lab in enumerate(labels):
        if lab is None or (isinstance(lab, (int, np.integer)) and lab < 0):
            out[i] = -1
        else:
            out[i] = table.setdefault(lab, len(table))
    return out


def _pred_labels(pred):
    return np.asarray(pred.labels if hasattr(pred, "labels") else pred)


def _contingency(pred, truth):
    """Contingency table of truth x predicted cluster over clustered items."""
    keep = pred >= 0
    p, t = pred[keep], truth[keep]
    if p.size == 0:
        return np.zeros((0, 0), dtype=np.int64)
    table = np.zeros((truth.max() + 1, p.max() + 1), dtype=np.int64)
    np.add.at(table, (t, p), 1)
    return table


def _pairs(x):
    x = np.asarray(x, dtype=np.int64)
    return int(np.sum(x * (x - 1) // 2))


def _prepare(pred, truth):
    p = _encode(list(_pred_labels(pred)))
    t = _encode(list(truth))
    if p.shape != t.shape:
        raise ValueError("prediction and truth lengths differ")
    if np.any(t < 0):
        raise ValueError("ground truth must label every item")
    return p, t


def pair_counts(pred, truth) -> PairCounts:
    """Classify all unordered item pairs.

    ``pred`` is a ClusteringResult or a label sequence using -1 for
    unclustered; ``truth`` is any sequence of hashable class labels aligned
    with it.
    """
    p, t = _prepare(pred, truth)
    n = p.size
    table = _contingency(p, t)
    tp = _pairs(table)
    same_pred = _pairs(table.sum(axis=0))
    same_truth = _pairs(np.bincount(t)) if n else 0
    fp = same_pred - tp
    fn = same_truth - tp
    tn = comb(n, 2) - tp - fp - fn
    return PairCounts(tp, fp, tn, fn)


def _ratio(a, b):
    return a / b if b else 0.0


def f_measure(c: PairCounts) -> tuple[float, float, float]:
    """(precision, recall, F) with 0/0 read as 0."""
    precision = _ratio(c.tp_bar, c.tp_bar + c.fp_bar)
    recall = _ratio(c.tp_bar, c.tp_bar + c.fn)
    return precision, recall, _ratio(2 * precision * recall, precision + recall)


def adjusted_rand(c: PairCounts, pred, truth) -> tuple[float, float]:
    """Rand index and its chance-adjusted version.

    The expectation of TP under the permutation model is taken over the
    clustered items only; pairs touching unclustered items keep their fixed
    FN/TN classification.
    """
    p, t = _prepare(pred, truth)
    total = c.total
    if total == 0:
        return 0.0, 0.0
    ri = (c.tp_bar + c.tn) / total

    table = _contingency(p, t)
    m = int(table.sum())
    pairs_m = comb(m, 2)
    sum_a = _pairs(table.sum(axis=1))
    sum_b = _pairs(table.sum(axis=0))
    e_tp = sum_a * sum_b / pairs_m if pairs_m else 0.0
    # TN among clustered pairs depends on TP; the rest is fixed
    tn_inside = pairs_m - sum_a - sum_b + _pairs(table)
    tn_outside = c.tn - tn_inside
    e_tn = (pairs_m - sum_a - sum_b + e_tp) + tn_outside
    e_ri = (e_tp + e_tn) / total
    if 1.0 - e_ri < 1e-12:
        return ri, 0.0
    return ri, (ri - e_ri) / (1.0 - e_ri)


def cluster_ratio(pred, truth) -> float:
    """Number of predicted clusters over number of ground-truth classes."""
    p = _pred_labels(pred)
    lp = len({int(x) for x in p if x >= 0})
    lg = len(set(truth))
    if lg == 0:
        raise ValueError("ground truth has no classes")
    return lp / lg


def evaluate(pred, truth) -> MetricsReport:
    c = pair_counts(pred, truth)
    precision, recall, f = f_measure(c)
    ri, ari = adjusted_rand(c, pred, truth)
    p = _pred_labels(pred)
    return MetricsReport(
        precision=precision,
        recall=recall,
        f_measure=f,
        ri=ri,
        ari=ari,
        lp_over_lg=cluster_ratio(pred, truth),
        num_predicted=len({int(x) for x in p if x >= 0}),
        num_truth=len(set(truth)),
        unclustered=int(np.sum(p < 0)),
    )


CSV_FIELDS = ("run", "precision", "recall", "f_measure", "ri", "ari", "lp_over_lg")


def append_metrics_csv(path, run: str, report: MetricsReport) -> None:
    """Append one row per run; the header is written on first use."""
    new = not os.path.exists(path) or os.path.getsize(path) == 0
    with open(path, "a", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        if new:
            w.writerow(CSV_FIELDS)
        row = report.as_dict()
        w.writerow([run] + [f"{row[k]:.6f}" for k in CSV_FIELDS[1:]])
