"""Binary classification metrics, ROC/AUC and stratified k-fold cross-validation.

Class 1 (TB) is the positive class throughout.
"""

from dataclasses import asdict, dataclass, field
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np


@dataclass(frozen=True)
class ConfusionMatrix:
    tp: int = 0
    tn: int = 0
    fp: int = 0
    fn: int = 0

    def __post_init__(self):
        if min(self.tp, self.tn, self.fp, self.fn) < 0:
            raise ValueError("confusion counts must be non-negative")

    @property
    def total(self) -> int:
        return self.tp + self.tn + self.fp + self.fn

    def __add__(self, other: "ConfusionMatrix") -> "ConfusionMatrix":
        return ConfusionMatrix(self.tp + other.tp, self.tn + other.tn, self.fp + other.fp, self.fn + other.fn)


@dataclass(frozen=True)
class MetricsReport:
    accuracy: float
    precision: float
    recall: float
    specificity: float
    npv: float
    f1: float
    auc: Optional[float] = None
    # metrics whose denominator was zero and were therefore reported as 0
    undefined: Tuple[str, ...] = ()

    def as_dict(self):
        return asdict(self)


def _check_labels(labels: Sequence[int], what: str) -> np.ndarray:
    arr = np.asarray(labels)
    if arr.ndim != 1:
        raise ValueError(f"{what} must be a flat list")
    if not np.isin(arr, (0, 1)).all():
        raise ValueError(f"{what} must be 0 or 1")
    return arr.astype(np.int64)


def confusion(preds: Sequence[int], truths: Sequence[int]) -> ConfusionMatrix:
    if len(preds) != len(truths):
        raise ValueError(f"{len(preds)} predictions for {len(truths)} labels")
    if len(preds) == 0:
        raise ValueError("no predictions")
    p, t = _check_labels(preds, "predictions"), _check_labels(truths, "labels")
    return ConfusionMatrix(
        tp=int(np.sum((p == 1) & (t == 1))),
        tn=int(np.sum((p == 0) & (t == 0))),
        fp=int(np.sum((p == 1) & (t == 0))),
        fn=int(np.sum((p == 0) & (t == 1))),
    )


def metrics(cm: ConfusionMatrix, auc_value: Optional[float] = None) -> MetricsReport:
    """Accuracy, precision, recall, specificity, NPV and F1; a zero denominator yields 0."""
    if cm.total < 1:
        raise ValueError("empty confusion matrix")
    undefined = []

    def ratio(name, num, den):
        if den == 0:
            undefined.append(name)
            return 0.0
        return num / den

    precision = ratio("precision", cm.tp, cm.tp + cm.fp)
    recall = ratio("recall", cm.tp, cm.tp + cm.fn)
    specificity = ratio("specificity", cm.tn, cm.tn + cm.fp)
    npv = ratio("npv", cm.tn, cm.tn + cm.fn)
    f1 = ratio("f1", 2 * precision * recall, precision + recall)
    return MetricsReport(
        accuracy=(cm.tp + cm.tn) / cm.total,
        precision=precision,
        recall=recall,
        specificity=specificity,
        npv=npv,
        f1=f1,
        auc=auc_value,
        undefined=tuple(undefined),
    )


def _split_scores(scores, truths):
    s = np.asarray(scores, dtype=np.float64)
    t = _check_labels(truths, "labels")
    if s.shape != t.shape:
        raise ValueError("scores and labels differ in length")
    pos, neg = s[t == 1], s[t == 0]
    if pos.size == 0 or neg.size == 0:
        raise ValueError("AUC needs at least one positive and one negative")
    return pos, neg


def auc(scores: Sequence[float], truths: Sequence[int]) -> float:
    """Mann-Whitney estimate: P(pos > neg) + 0.5 P(pos == neg), from midranks."""
    pos, neg = _split_scores(scores, truths)
    allscores = np.concatenate([pos, neg])
    order = np.argsort(allscores, kind="mergesort")
    sorted_s = allscores[order]
    ranks = np.empty(allscores.size, dtype=np.float64)
    i = 0
    while i < sorted_s.size:
        j = i
        while j + 1 < sorted_s.size and sorted_s[j + 1] == sorted_s[i]:
            j += 1
        ranks[order[i:j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    # rank sums of integers and half-integers are exact in float64 at these sizes
    u = ranks[:pos.size].sum() - pos.size * (pos.size + 1) / 2.0
    return float(u / (pos.size * neg.size))


def roc_points(scores: Sequence[float], truths: Sequence[int]) -> List[Tuple[float, float]]:
    """(FPR, TPR) at every distinct threshold, from (0, 0) to (1, 1)."""
    pos, neg = _split_scores(scores, truths)
    thresholds = np.unique(np.concatenate([pos, neg]))[::-1]
    points = [(0.0, 0.0)]
    for th in thresholds:
        points.append((float(np.sum(neg >= th) / neg.size), float(np.sum(pos >= th) / pos.size)))
    return points


def trapezoid_area(points: Sequence[Tuple[float, float]]) -> float:
    area = 0.0
    for (x0, y0), (x1, y1) in zip(points, points[1:]):
        area += (x1 - x0) * (y0 + y1) / 2.0
    return area


# -- cross-validation -------------------------------------------------------

def stratified_kfold(truths: Sequence[int], k: int = 10, seed: int = 0) -> np.ndarray:
    """Per-sample fold index in ``[0, k)``.

    Each class is shuffled with a seeded generator and dealt round-robin; the
    deal continues across classes, so fold sizes differ by at most one.
    """
    t = np.asarray(truths)
    if k < 1:
        raise ValueError("k must be positive")
    rng = np.random.default_rng(seed)
    folds = np.empty(t.size, dtype=np.int64)
    cursor = 0
    for label in np.unique(t):
        members = np.flatnonzero(t == label)
        if members.size < k:
            raise ValueError(f"class {label} has {members.size} samples, fewer than k={k}")
        members = rng.permutation(members)
        folds[members] = (cursor + np.arange(members.size)) % k
        cursor = (cursor + members.size) % k
    return folds


@dataclass
class FoldResult:
    fold: int
    indices: np.ndarray
    preds: np.ndarray
    scores: np.ndarray
    truths: np.ndarray
    confusion: ConfusionMatrix
    report: MetricsReport


@dataclass
class CrossValResult:
    pooled: MetricsReport
    pooled_confusion: ConfusionMatrix
    folds: List[FoldResult] = field(default_factory=list)
    scores: Optional[np.ndarray] = None
    preds: Optional[np.ndarray] = None
    assignment: Optional[np.ndarray] = None


def _safe_auc(scores, truths):
    try:
        return auc(scores, truths)
    except ValueError:
        return None


def cross_validate(
    dataset: Sequence[Tuple[np.ndarray, int]],
    fit: Callable[[list, int], object],
    predict: Callable[[object, np.ndarray], Tuple[int, float]],
    k: int = 10,
    seed: int = 0,
) -> CrossValResult:
    """Train on k-1 folds, predict the held-out fold, pool the predictions.

    ``fit(train_samples, fold_index)`` returns a fitted model and
    ``predict(model, x)`` returns ``(label, tb score)``.
    """
    if k < 2:
        raise ValueError("cross-validation needs at least two folds")
    truths = np.array([y for _, y in dataset], dtype=np.int64)
    assignment = stratified_kfold(truths, k, seed)
    preds = np.full(truths.size, -1, dtype=np.int64)
    scores = np.full(truths.size, np.nan)
    folds = []
    for f in range(k):
        test_idx = np.flatnonzero(assignment == f)
        train = [dataset[i] for i in np.flatnonzero(assignment != f)]
        model = fit(train, f)
        for i in test_idx:
            preds[i], scores[i] = predict(model, dataset[i][0])
        cm = confusion(preds[test_idx], truths[test_idx])
        folds.append(FoldResult(f, test_idx, preds[test_idx], scores[test_idx], truths[test_idx], cm,
                                metrics(cm, _safe_auc(scores[test_idx], truths[test_idx]))))
    pooled_cm = confusion(preds, truths)
    return CrossValResult(metrics(pooled_cm, _safe_auc(scores, truths)), pooled_cm, folds, scores, preds, assignment)
