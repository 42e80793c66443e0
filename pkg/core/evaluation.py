"""
Scoring of holdout predictions, boxplot summaries over repeated runs, the
repeated train/holdout protocol, and the intra-expert flip test.
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np
import pandas as pd
from joblib import Parallel, delayed
from sklearn.metrics import confusion_matrix

from core.dataset import draw_split, materialize, run_seeds
from core.exceptions import InsufficientParticipantsError
from core.features import FeatureMatrix, Standardizer
from core.ingest import ClassLabel
from core.svm import KernelSpec, cv_ensemble_train, ensemble_predict_many, ordered_classes

logger = logging.getLogger(__name__)


@dataclass
class ConfusionMatrix:
    """Rows are true classes, columns predicted classes."""

    classes: List[str]
    counts: np.ndarray

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    @property
    def row_sums(self) -> np.ndarray:
        return self.counts.sum(axis=1)

    def to_dict(self) -> dict:
        return {"classes": list(self.classes), "counts": self.counts.astype(int).tolist()}


@dataclass
class RunScore:
    confusion: ConfusionMatrix
    accuracy: float
    recall: Dict[str, float]
    miss_rate: Dict[str, float]
    macro_recall: float
    macro_miss_rate: float
    positive: Optional[str] = None
    fnr: Optional[float] = None
    fpr: Optional[float] = None

    def to_dict(self) -> dict:
        return {
            "confusion": self.confusion.to_dict(),
            "accuracy": self.accuracy,
            "recall": self.recall,
            "miss_rate": self.miss_rate,
            "macro_recall": self.macro_recall,
            "macro_miss_rate": self.macro_miss_rate,
            "positive": self.positive,
            "fnr": self.fnr,
            "fpr": self.fpr,
        }


def score(preds: Sequence[str], truths: Sequence[str], classes: Optional[Sequence[str]] = None,
          positive: Optional[str] = None) -> RunScore:
    """Accuracy, per-class recall and miss rate (1 - recall), plus FNR/FPR for two classes.

    A class without true samples gets NaN recall and miss rate and is left out
    of the macro averages. In the two-class case the positive class defaults to
    the later class in expertise order (Expert against Intermediate).
    """
    preds = np.asarray(preds).astype(str)
    truths = np.asarray(truths).astype(str)
    if len(preds) != len(truths) or len(preds) == 0:
        raise ValueError("preds and truths must be equal-length and nonempty")
    classes = [str(getattr(c, "value", c)) for c in classes] if classes else ordered_classes(np.concatenate([truths, preds]))

    counts = confusion_matrix(truths, preds, labels=classes)
    cm = ConfusionMatrix(list(classes), counts)
    rows = cm.row_sums
    with np.errstate(invalid="ignore", divide="ignore"):
        recall_arr = np.where(rows > 0, np.diag(counts) / rows, np.nan)
    recall = {c: float(r) for c, r in zip(classes, recall_arr)}
    miss_rate = {c: float(1.0 - r) for c, r in zip(classes, recall_arr)}
    defined = recall_arr[~np.isnan(recall_arr)]

    result = RunScore(
        confusion=cm,
        accuracy=float(np.trace(counts) / cm.total),
        recall=recall,
        miss_rate=miss_rate,
        macro_recall=float(defined.mean()) if len(defined) else float("nan"),
        macro_miss_rate=float(1.0 - defined.mean()) if len(defined) else float("nan"),
    )
    if len(classes) == 2:
        positive = str(getattr(positive, "value", positive)) if positive else classes[-1]
        negative = classes[0] if positive == classes[1] else classes[1]
        p, n = classes.index(positive), classes.index(negative)
        result.positive = positive
        result.fnr = float(counts[p, n] / rows[p]) if rows[p] else float("nan")
        result.fpr = float(counts[n, p] / rows[n]) if rows[n] else float("nan")
    return result


@dataclass
class RunDistribution:
    """Tukey boxplot statistics. Quartiles interpolate linearly between order statistics. Undefined runs are left out."""

    values: List[float]
    median: float
    q1: float
    q3: float
    lower_adjacent: float
    upper_adjacent: float
    mean: float = field(default=float("nan"))

    def to_dict(self) -> dict:
        return {
            "median": self.median,
            "q1": self.q1,
            "q3": self.q3,
            "lower_adjacent": self.lower_adjacent,
            "upper_adjacent": self.upper_adjacent,
            "mean": self.mean,
            "n": len(self.values),
            "values": list(self.values),
        }


def summarize_runs(values: Sequence[float]) -> RunDistribution:
    arr = np.asarray(values, dtype=float)
    arr = arr[~np.isnan(arr)]
    if len(arr) == 0:
        raise ValueError("summarize_runs needs at least one value")
    q1, median, q3 = np.percentile(arr, [25, 50, 75], method="linear")
    iqr = q3 - q1
    lower = arr[arr >= q1 - 1.5 * iqr].min()
    upper = arr[arr <= q3 + 1.5 * iqr].max()
    return RunDistribution(
        values=[float(v) for v in arr],
        median=float(median),
        q1=float(q1),
        q3=float(q3),
        lower_adjacent=float(lower),
        upper_adjacent=float(upper),
        mean=float(arr.mean()),
    )


def _holdout_score(matrix: FeatureMatrix, seed: int, classes: List[str], k: int, C: float, kernel: KernelSpec,
                   n_train: int, n_holdout: int, tol: float, max_passes: int) -> RunScore:
    plan = draw_split(matrix.participants_by_class(), seed, n_train=n_train, n_holdout=n_holdout)
    train, holdout = materialize(plan, matrix)
    scaler = Standardizer.fit(train.X, train.feature_names)
    ensemble = cv_ensemble_train(
        scaler.transform(train.X), train.labels, groups=train.participants,
        k=k, C=C, kernel=kernel, seed=seed, tol=tol, max_passes=max_passes,
    )
    predicted, _ = ensemble_predict_many(ensemble, scaler.transform(holdout.X))
    return score(predicted, holdout.labels, classes)


def evaluate_runs(
    matrix: FeatureMatrix,
    runs: int = 1000,
    seed: int = 0,
    features: Optional[Sequence[str]] = None,
    classes: Optional[Sequence[str]] = None,
    k: int = 50,
    C: float = 1.0,
    kernel: Optional[KernelSpec] = None,
    n_train: int = 8,
    n_holdout: int = 2,
    tol: float = 1e-3,
    max_passes: int = 100000,
    jobs: int = 1,
) -> List[RunScore]:
    """Repeats split, ensemble training and holdout scoring `runs` times with derived seeds."""
    kernel = kernel or KernelSpec()
    if classes:
        classes = [str(getattr(c, "value", c)) for c in classes]
        matrix = matrix.rows(np.isin(matrix.labels, classes))
    if features is not None:
        matrix = matrix.select(features)
    classes = classes or ordered_classes(matrix.labels)
    logger.info("evaluating %d runs on %d rows, %d features, classes %s, seed %s",
                runs, len(matrix), len(matrix.feature_names), classes, seed)
    return Parallel(n_jobs=jobs)(
        delayed(_holdout_score)(matrix, run_seed, classes, k, C, kernel, n_train, n_holdout, tol, max_passes)
        for run_seed in run_seeds(seed, runs)
    )


def summarize_scores(scores: Sequence[RunScore]) -> dict:
    if not scores:
        raise ValueError("no run scores to summarize")
    classes = scores[0].confusion.classes
    summary = {
        "runs": len(scores),
        "classes": list(classes),
        "accuracy": summarize_runs([s.accuracy for s in scores]).to_dict(),
        "macro_recall": summarize_runs([s.macro_recall for s in scores]).to_dict(),
        "macro_miss_rate": summarize_runs([s.macro_miss_rate for s in scores]).to_dict(),
        "median_recall": {c: float(np.nanmedian([s.recall[c] for s in scores])) for c in classes},
        "median_miss_rate": {c: float(np.nanmedian([s.miss_rate[c] for s in scores])) for c in classes},
        "confusion_total": ConfusionMatrix(list(classes), sum(s.confusion.counts for s in scores)).to_dict(),
    }
    if scores[0].positive is not None:
        summary["positive"] = scores[0].positive
        summary["fnr"] = summarize_runs([s.fnr for s in scores]).to_dict()
        summary["fpr"] = summarize_runs([s.fpr for s in scores]).to_dict()
    return summary


def scores_to_frame(scores: Sequence[RunScore]) -> pd.DataFrame:
    """One row per run, for external plotting."""
    records = []
    for run, s in enumerate(scores):
        row = {"run": run, "accuracy": s.accuracy, "macro_recall": s.macro_recall, "macro_miss_rate": s.macro_miss_rate}
        row.update({f"recall_{c}": v for c, v in s.recall.items()})
        row.update({f"miss_rate_{c}": v for c, v in s.miss_rate.items()})
        if s.positive is not None:
            row.update({"fnr": s.fnr, "fpr": s.fpr})
        records.append(row)
    return pd.DataFrame.from_records(records)


def _flip_iteration(matrix: FeatureMatrix, seed: int, control: bool, k: int, C: float, kernel: KernelSpec,
                    n_holdout: int, tol: float, max_passes: int) -> float:
    expert, intermediate = ClassLabel.EXPERT.value, ClassLabel.INTERMEDIATE.value
    frame = matrix.frame.copy()
    if not control:
        experts = sorted(set(frame["participant_id"]))
        rng = np.random.default_rng(seed)
        flipped = [experts[i] for i in rng.permutation(len(experts))[:len(experts) // 2]]
        frame["class_label"] = np.where(frame["participant_id"].isin(flipped), intermediate, expert)
    relabeled = FeatureMatrix(frame, list(matrix.feature_names))

    groups = relabeled.participants_by_class()
    smallest = min(len(ids) for ids in groups.values())
    held = max(1, min(n_holdout, smallest // 2))
    plan = draw_split(groups, seed, n_train=smallest - held, n_holdout=held)
    train, holdout = materialize(plan, relabeled)
    scaler = Standardizer.fit(train.X, train.feature_names)
    ensemble = cv_ensemble_train(
        scaler.transform(train.X), train.labels, groups=train.participants,
        k=k, C=C, kernel=kernel, seed=seed, tol=tol, max_passes=max_passes,
    )
    predicted, _ = ensemble_predict_many(ensemble, scaler.transform(holdout.X))
    return float(np.mean(predicted == holdout.labels))


def flip_test(
    matrix: FeatureMatrix,
    iterations: int = 100,
    seed: int = 0,
    control: bool = False,
    k: int = 50,
    C: float = 1.0,
    kernel: Optional[KernelSpec] = None,
    n_holdout: int = 2,
    tol: float = 1e-3,
    max_passes: int = 100000,
    jobs: int = 1,
) -> RunDistribution:
    """Experts against experts relabeled as intermediates.

    Each iteration relabels a random half of the expert participants, trains on
    the rest of the protocol as usual and scores held-out participants. With
    control=True the experts and the real intermediates keep their true labels
    instead.
    """
    kernel = kernel or KernelSpec()
    expert, intermediate = ClassLabel.EXPERT.value, ClassLabel.INTERMEDIATE.value
    if control:
        subset = matrix.rows(np.isin(matrix.labels, [expert, intermediate]))
    else:
        subset = matrix.rows(matrix.labels == expert)
        n_experts = len(set(subset.participants))
        if n_experts < 4:
            raise InsufficientParticipantsError(f"flip test needs at least 4 experts, got {n_experts}")
        if n_experts % 2:
            logger.warning("odd expert count %d: flipping %d per iteration", n_experts, n_experts // 2)
    logger.info("flip test: %d iterations, control=%s, seed %s", iterations, control, seed)
    accuracies = Parallel(n_jobs=jobs)(
        delayed(_flip_iteration)(subset, run_seed, control, k, C, kernel, n_holdout, tol, max_passes)
        for run_seed in run_seeds(seed, iterations)
    )
    return summarize_runs(accuracies)
