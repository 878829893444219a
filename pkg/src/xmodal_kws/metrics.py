"""Detection metrics and the evaluation report.

All metrics are on a 0-100 scale. AUC is the rank statistic (probability a
positive outscores a negative, ties counted half). EER comes from an
exhaustive sweep of the decision rule `score >= t -> positive` over every
achievable operating point; between grid points we take the threshold
minimizing |FAR - FRR|, breaking ties toward the smaller FAR + FRR, and
report 100 * (FAR + FRR) / 2 there.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .data import PairExample
from .errors import InvalidArgumentError

WORD_LENGTH_CELLS = ("1", "2", "3", "4")


@dataclass(frozen=True)
class ScoredPair:
    pair: PairExample
    score: float


def _split(labels, scores):
    labels = np.asarray(labels)
    scores = np.asarray(scores, dtype=np.float64)
    if labels.shape != scores.shape or labels.ndim != 1:
        raise InvalidArgumentError(
            "labels and scores must be equal-length 1-D, got %r and %r"
            % (labels.shape, scores.shape)
        )
    if not np.all((labels == 0) | (labels == 1)):
        raise InvalidArgumentError("labels must be 0 or 1")
    if np.any(np.isnan(scores)):
        raise InvalidArgumentError("scores contain NaN")
    return labels.astype(bool), scores


def _average_ranks(x: np.ndarray) -> np.ndarray:
    """1-based ranks, tied values sharing the mean of their rank block."""
    order = np.argsort(x, kind="mergesort")
    ranks = np.empty(x.shape[0])
    i = 0
    while i < x.shape[0]:
        j = i
        while j + 1 < x.shape[0] and x[order[j + 1]] == x[order[i]]:
            j += 1
        ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def auc(labels, scores) -> float:
    pos, scores = _split(labels, scores)
    n_pos = int(pos.sum())
    n_neg = int((~pos).sum())
    if n_pos < 1 or n_neg < 1:
        raise InvalidArgumentError(
            "AUC needs both classes, got %d positive / %d negative" % (n_pos, n_neg)
        )
    ranks = _average_ranks(scores)
    u = float(ranks[pos].sum()) - n_pos * (n_pos + 1) / 2.0
    return 100.0 * u / (n_pos * n_neg)


def roc_points(labels, scores):
    """(threshold, FAR, FRR) for every distinct operating point.

    Thresholds are the unique scores ascending plus a sentinel above the
    maximum (the reject-everything point). FAR is non-increasing and FRR
    non-decreasing along the list.
    """
    pos, scores = _split(labels, scores)
    n_pos = int(pos.sum())
    n_neg = int((~pos).sum())
    if n_pos < 1 or n_neg < 1:
        raise InvalidArgumentError(
            "ROC needs both classes, got %d positive / %d negative" % (n_pos, n_neg)
        )
    thresholds = np.unique(scores)
    thresholds = np.append(thresholds, thresholds[-1] + 1.0)
    points = []
    for t in thresholds:
        pred = scores >= t
        far = float(np.sum(pred & ~pos)) / n_neg
        frr = float(np.sum(~pred & pos)) / n_pos
        points.append((float(t), far, frr))
    return points


def eer(labels, scores) -> float:
    best = None
    for _, far, frr in roc_points(labels, scores):
        key = (abs(far - frr), far + frr)
        if best is None or key < best:
            best = key
    return 100.0 * best[1] / 2.0


def f1(labels, scores, threshold: float = 0.5) -> float:
    pos, scores = _split(labels, scores)
    pred = scores >= threshold
    tp = float(np.sum(pred & pos))
    fp = float(np.sum(pred & ~pos))
    fn = float(np.sum(~pred & pos))
    denom = 2.0 * tp + fp + fn
    if denom == 0.0:
        return 0.0
    return 100.0 * 2.0 * tp / denom


# ---- Report ----


def _cell(scored) -> dict:
    labels = [sp.pair.label for sp in scored]
    scores = [sp.score for sp in scored]
    n_pos = sum(labels)
    n_neg = len(labels) - n_pos
    cell = {"n_pos": int(n_pos), "n_neg": int(n_neg),
            "auc": None, "eer": None, "f1": None}
    if n_pos >= 2 and n_neg >= 2:
        cell["auc"] = auc(labels, scores)
        cell["eer"] = eer(labels, scores)
        cell["f1"] = f1(labels, scores)
    return cell


def build_report(scored_pairs) -> dict:
    """Overall plus word-length and vocabulary breakdown cells.

    A cell with fewer than 2 positives or 2 negatives keeps its counts but
    leaves the metrics undefined (null in JSON, NA in CSV).
    """
    scored = list(scored_pairs)
    if not scored:
        raise InvalidArgumentError("no scored pairs to report on")
    report = {"overall": _cell(scored), "by_word_length": {}, "by_vocabulary": {}}
    for wl in WORD_LENGTH_CELLS:
        subset = [sp for sp in scored if str(sp.pair.word_length) == wl]
        report["by_word_length"][wl] = _cell(subset) if subset else None
    for name, flag in (("in_vocab", False), ("oov", True)):
        subset = [sp for sp in scored if sp.pair.oov == flag]
        report["by_vocabulary"][name] = _cell(subset) if subset else None
    return report


def _rounded(obj):
    if isinstance(obj, float):
        return round(obj, 2)
    if isinstance(obj, dict):
        return {k: _rounded(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_rounded(v) for v in obj]
    return obj


def serialize_report(report: dict) -> str:
    """Canonical JSON: sorted keys, 2-decimal metrics, trailing newline."""
    return json.dumps(_rounded(report), indent=2, sort_keys=True) + "\n"


def report_to_csv(report: dict) -> str:
    """Flat one-row-per-cell mirror of the JSON report."""
    def fmt(v):
        return "NA" if v is None else "%.2f" % (v,)

    lines = ["cell,n_pos,n_neg,auc,eer,f1"]
    cells = [("overall", report["overall"])]
    cells += [("word_length_%s" % k, v) for k, v in sorted(report["by_word_length"].items())]
    cells += [(k, v) for k, v in sorted(report["by_vocabulary"].items())]
    for name, cell in cells:
        if cell is None:
            lines.append("%s,0,0,NA,NA,NA" % (name,))
        else:
            lines.append("%s,%d,%d,%s,%s,%s" % (
                name, cell["n_pos"], cell["n_neg"],
                fmt(cell["auc"]), fmt(cell["eer"]), fmt(cell["f1"]),
            ))
    return "\n".join(lines) + "\n"
