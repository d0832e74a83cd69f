"""ROC curves, AUC, TPR at a fixed FPR, and multi-method comparison reports."""

import csv
from dataclasses import dataclass

import numpy as np

from .errors import ContractError

FPR_TARGET = 0.15
_FPR_SLACK = 1e-12


@dataclass
class ScoredSet:
    method: str
    scores: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        self.scores = np.asarray(self.scores, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=int)
        if self.scores.shape != self.labels.shape:
            raise ContractError(f"{self.method}: {len(self.scores)} scores for {len(self.labels)} labels")


@dataclass
class RocCurve:
    thresholds: np.ndarray
    fpr: np.ndarray
    tpr: np.ndarray
    auc: float

    def points(self):
        return list(zip(self.thresholds.tolist(), self.fpr.tolist(), self.tpr.tolist()))


def roc(scored):
    """ROC with one point per distinct score (ties grouped), from (0,0) to (1,1).

    The first point carries the sentinel threshold ``+inf``. A score of
    ``-inf`` is an ordinary (lowest) tie group.
    """
    scores, labels = scored.scores, scored.labels
    if np.isnan(scores).any() or np.isposinf(scores).any():
        raise ContractError(f"{scored.method}: scores must be finite or -inf")
    if not np.isin(labels, (0, 1)).all():
        raise ContractError(f"{scored.method}: labels must be 0 or 1")
    P = int(labels.sum())
    N = len(labels) - P
    if P == 0 or N == 0:
        raise ContractError(f"{scored.method}: ROC needs both classes, got {P} positive / {N} negative")
    distinct, inverse = np.unique(scores, return_inverse=True)
    tp = np.bincount(inverse, weights=labels, minlength=len(distinct))[::-1]
    fp = np.bincount(inverse, weights=1 - labels, minlength=len(distinct))[::-1]
    tpr = np.concatenate([[0.0], np.cumsum(tp) / P])
    fpr = np.concatenate([[0.0], np.cumsum(fp) / N])
    thresholds = np.concatenate([[np.inf], distinct[::-1]])
    auc = float(np.sum(np.diff(fpr) * (tpr[1:] + tpr[:-1]) / 2))
    return RocCurve(thresholds, fpr, tpr, auc)


def tpr_at_fpr(curve, fpr_target=FPR_TARGET):
    """TPR of the last point whose FPR does not exceed the target (no interpolation)."""
    if not 0 <= fpr_target <= 1:
        raise ContractError(f"fpr_target must be in [0, 1], got {fpr_target}")
    ok = curve.fpr <= fpr_target + _FPR_SLACK
    return float(curve.tpr[ok][-1])


@dataclass
class ReportRow:
    method: str
    auc: float
    tpr: float


@dataclass
class Report:
    rows: list
    curves: dict
    fpr_target: float

    def ordering(self):
        """Methods from worst to best TPR at the target FPR."""
        ranked = sorted(self.rows, key=lambda r: (r.tpr, r.auc))
        return [r.method for r in ranked]

    def text(self):
        width = max(len("method"), *(len(r.method) for r in self.rows))
        pct = f"TPR@{self.fpr_target:.0%} FPR"
        lines = [f"{'method':<{width}}  {'AUC':>7}  {pct:>13}"]
        lines.append("-" * len(lines[0]))
        for r in self.rows:
            lines.append(f"{r.method:<{width}}  {r.auc:7.4f}  {r.tpr:13.2%}")
        lines.append("")
        lines.append("ordering (worst -> best): " + " < ".join(self.ordering()))
        return "\n".join(lines) + "\n"


def compare(methods, fpr_target=FPR_TARGET):
    """AUC and TPR@``fpr_target`` for methods scored on the same test set."""
    if len(methods) < 2:
        raise ContractError("compare needs at least two methods")
    sizes = {len(m.labels) for m in methods}
    if len(sizes) != 1:
        raise ContractError(f"methods were scored on different numbers of samples: {sorted(sizes)}")
    first = methods[0].labels
    for m in methods[1:]:
        if not np.array_equal(m.labels, first):
            raise ContractError(f"{m.method}: labels differ from {methods[0].method}; not the same test set")
    rows, curves = [], {}
    for m in methods:
        curve = roc(m)
        curves[m.method] = curve
        rows.append(ReportRow(m.method, curve.auc, tpr_at_fpr(curve, fpr_target)))
    return Report(rows, curves, fpr_target)


def _fmt(x):
    return repr(float(x))


def write_roc_csv(path, curve):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["threshold", "fpr", "tpr"])
        for t, f, p in curve.points():
            w.writerow([_fmt(t), _fmt(f), _fmt(p)])


def read_roc_csv(path):
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    arr = np.array([[float(r["threshold"]), float(r["fpr"]), float(r["tpr"])] for r in rows])
    fpr, tpr = arr[:, 1], arr[:, 2]
    auc = float(np.sum(np.diff(fpr) * (tpr[1:] + tpr[:-1]) / 2))
    return RocCurve(arr[:, 0], fpr, tpr, auc)


def write_report_csv(path, report):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["method", "auc", "tpr_at_015"])
        for r in report.rows:
            w.writerow([r.method, _fmt(r.auc), _fmt(r.tpr)])


def read_report_csv(path):
    with open(path, newline="") as fh:
        return [ReportRow(r["method"], float(r["auc"]), float(r["tpr_at_015"])) for r in csv.DictReader(fh)]


def write_scores_csv(path, scored):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["index", "score", "label"])
        for i, (s, y) in enumerate(zip(scored.scores, scored.labels)):
            w.writerow([i, _fmt(s), int(y)])


def read_scores_csv(path, method):
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return ScoredSet(method, [float(r["score"]) for r in rows], [int(r["label"]) for r in rows])
