"""
Soft-margin SVM trained with sequential minimal optimization.

The binary solver minimizes the dual

    f(a) = 1/2 a'Qa - e'a,  subject to  y'a = 0,  0 <= a_i <= C,

with Q_ij = y_i y_j K(x_i, x_j). Each step picks the maximal violating pair
(i, j) from the gradient and moves both coordinates along the only feasible
direction that keeps y'a fixed. The solver stops when the violation gap drops
below tol.

Multiclass models are one-vs-one over the classes present. The ensemble is
k models, each fitted on the out-of-fold rows of one fold.
"""

import logging
from dataclasses import dataclass, field, replace
from enum import Enum
from itertools import combinations
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from joblib import Parallel, delayed
from scipy.spatial.distance import cdist
from sklearn.base import BaseEstimator, ClassifierMixin

from core.exceptions import ConvergenceError, DegenerateLabelsError, UnsupportedKernelError
from core.ingest import CLASS_ORDER

logger = logging.getLogger(__name__)

# smallest curvature used for a step; identical points give zero
TAU = 1e-12
SV_EPS = 1e-10


class KernelKind(str, Enum):
    LINEAR = "linear"
    RBF = "rbf"


@dataclass(frozen=True)
class KernelSpec:
    kind: KernelKind = KernelKind.LINEAR
    gamma: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "kind", KernelKind(str(getattr(self.kind, "value", self.kind)).lower()))
        if self.kind == KernelKind.RBF and not self.gamma > 0:
            raise ValueError("rbf kernel needs gamma > 0")

    def gram(self, A: np.ndarray, B: np.ndarray) -> np.ndarray:
        A = np.atleast_2d(np.asarray(A, dtype=float))
        B = np.atleast_2d(np.asarray(B, dtype=float))
        if self.kind == KernelKind.LINEAR:
            return A @ B.T
        return np.exp(-self.gamma * cdist(A, B, "sqeuclidean"))

    def to_dict(self) -> dict:
        return {"kind": self.kind.value, "gamma": self.gamma}

    @classmethod
    def from_dict(cls, data: dict) -> "KernelSpec":
        return cls(KernelKind(data["kind"]), float(data["gamma"]))


@dataclass
class SvmModel:
    """A fitted binary machine. decision(x) = sum_i alpha_i y_i K(x_i, x) + bias."""

    support_vectors: np.ndarray
    alphas: np.ndarray
    labels: np.ndarray
    bias: float
    kernel: KernelSpec
    C: float
    support_indices: np.ndarray
    objective: float = 0.0
    objective_history: List[float] = field(default_factory=list)
    passes: int = 0
    residual: float = 0.0

    def decision_function(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if len(self.alphas) == 0:
            return np.full(len(X), self.bias)
        return self.kernel.gram(X, self.support_vectors) @ (self.alphas * self.labels) + self.bias

    def predict(self, X) -> np.ndarray:
        return np.where(self.decision_function(X) >= 0, 1, -1)

    def weights(self) -> np.ndarray:
        """Primal weight vector w = sum_i alpha_i y_i x_i. Linear kernel only."""
        if self.kernel.kind != KernelKind.LINEAR:
            raise UnsupportedKernelError("importance defined for linear kernel only")
        return (self.alphas * self.labels) @ self.support_vectors


def _violating_pair(alpha, y, G, C):
    """Index pair (i, j) and the values m, M of -y*G over the up and low sets."""
    score = -y * G
    up = ((y > 0) & (alpha < C)) | ((y < 0) & (alpha > 0))
    low = ((y > 0) & (alpha > 0)) | ((y < 0) & (alpha < C))
    i = int(np.flatnonzero(up)[np.argmax(score[up])])
    j = int(np.flatnonzero(low)[np.argmin(score[low])])
    return i, j, float(score[i]), float(score[j])


def _bias(alpha, y, G, C, m, M) -> float:
    free = (alpha > SV_EPS) & (alpha < C - SV_EPS)
    if free.any():
        return float(np.mean(-y[free] * G[free]))
    return (m + M) / 2.0


def smo_train(X, y, C: float = 1.0, kernel: KernelSpec = KernelSpec(), tol: float = 1e-3, max_passes: int = 100000) -> SvmModel:
    """Fits a binary machine on labels in {-1, +1}.

    The dual objective e'a - 1/2 a'Qa is recorded after every step and never
    decreases. Raises DegenerateLabelsError when only one label is present and
    ConvergenceError carrying the final violation gap when max_passes steps are
    not enough.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = np.asarray(y, dtype=float)
    if len(X) != len(y):
        raise ValueError("rows and labels differ in length")
    if not np.isfinite(X).all():
        raise ValueError("training rows must be finite")
    if not set(np.unique(y)) <= {-1.0, 1.0}:
        raise ValueError("binary labels must be -1 or +1")
    if not ((y > 0).any() and (y < 0).any()):
        raise DegenerateLabelsError("degenerate labels")
    if not C > 0:
        raise ValueError("C must be > 0")

    K = kernel.gram(X, X)
    Q = np.outer(y, y) * K
    n = len(y)
    alpha = np.zeros(n)
    G = -np.ones(n)
    history = [0.0]

    passes = 0
    while True:
        i, j, m, M = _violating_pair(alpha, y, G, C)
        if m - M < tol:
            break
        if passes >= max_passes:
            raise ConvergenceError(m - M, passes)
        passes += 1

        curvature = max(K[i, i] + K[j, j] - 2.0 * K[i, j], TAU)
        bound_i = C - alpha[i] if y[i] > 0 else alpha[i]
        bound_j = alpha[j] if y[j] > 0 else C - alpha[j]
        step = min((m - M) / curvature, bound_i, bound_j)

        delta_i, delta_j = y[i] * step, -y[j] * step
        alpha[i] = np.clip(alpha[i] + delta_i, 0.0, C)
        alpha[j] = np.clip(alpha[j] + delta_j, 0.0, C)
        G += Q[:, i] * delta_i + Q[:, j] * delta_j
        history.append(float(-0.5 * alpha @ (G - 1.0)))

    sv = np.flatnonzero(alpha > SV_EPS)
    model = SvmModel(
        support_vectors=X[sv],
        alphas=alpha[sv],
        labels=y[sv],
        bias=_bias(alpha, y, G, C, m, M),
        kernel=kernel,
        C=C,
        support_indices=sv,
        objective=history[-1],
        objective_history=history,
        passes=passes,
        residual=m - M,
    )
    logger.debug("smo converged in %d passes, %d support vectors", passes, len(sv))
    return model


def ordered_classes(labels) -> List[str]:
    """Classes present in labels, the expertise classes first in their natural order."""
    known = [c.value for c in CLASS_ORDER]
    present = set(str(label) for label in labels)
    return [c for c in known if c in present] + sorted(present - set(known))


@dataclass
class MulticlassModel:
    """One-vs-one machines. In the pair (a, b) class a is the +1 side."""

    classes: List[str]
    pairs: List[Tuple[str, str]]
    models: List[SvmModel]

    def decision_values(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        return np.column_stack([model.decision_function(X) for model in self.models])

    def vote_details(self, X) -> Tuple[np.ndarray, np.ndarray]:
        """Per-class vote counts and summed |decision| of the winning pair models."""
        decisions = self.decision_values(X)
        n = decisions.shape[0]
        votes = np.zeros((n, len(self.classes)))
        strength = np.zeros((n, len(self.classes)))
        index = {c: k for k, c in enumerate(self.classes)}
        for col, (a, b) in enumerate(self.pairs):
            d = decisions[:, col]
            winner = np.where(d >= 0, index[a], index[b])
            votes[np.arange(n), winner] += 1
            strength[np.arange(n), winner] += np.abs(d)
        return votes, strength

    def weighted_shares(self, X) -> np.ndarray:
        """Per-class share of the summed |decision| over the pair machines each class won.

        Rows where every machine sits exactly on its boundary fall back to plain
        vote shares.
        """
        votes, strength = self.vote_details(X)
        return _weighted_shares(votes, strength, len(self.pairs))

    def predict(self, X) -> np.ndarray:
        votes, strength = self.vote_details(X)
        winners = _break_ties(votes, strength)
        return np.asarray(self.classes, dtype=object)[winners].astype(str)


def _weighted_shares(votes: np.ndarray, strength: np.ndarray, n_pairs: int) -> np.ndarray:
    totals = strength.sum(axis=1, keepdims=True)
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(totals > 0, strength / totals, votes / n_pairs)


def _break_ties(primary: np.ndarray, secondary: np.ndarray) -> np.ndarray:
    """Row-wise argmax of primary; ties go to the larger secondary, then to the first column."""
    top = primary == primary.max(axis=1, keepdims=True)
    masked = np.where(top, secondary, -np.inf)
    return np.argmax(masked, axis=1)


def _reindexed(model: SvmModel, index_map: np.ndarray) -> SvmModel:
    return replace(model, support_indices=np.asarray(index_map)[model.support_indices])


def multiclass_train(
    X,
    labels,
    C: float = 1.0,
    kernel: KernelSpec = KernelSpec(),
    classes: Optional[Sequence[str]] = None,
    tol: float = 1e-3,
    max_passes: int = 100000,
) -> MulticlassModel:
    """One-vs-one over the classes present, or over `classes` when given (each must have rows)."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    labels = np.asarray(labels).astype(str)
    present = ordered_classes(labels)
    if classes is None:
        classes = present
    else:
        classes = [str(getattr(c, "value", c)) for c in classes]
        missing = [c for c in classes if c not in present]
        if missing:
            raise DegenerateLabelsError(f"missing class {missing}")
    if len(classes) < 2:
        raise DegenerateLabelsError("degenerate labels")

    pairs, models = [], []
    for a, b in combinations(classes, 2):
        rows = np.flatnonzero((labels == a) | (labels == b))
        y = np.where(labels[rows] == a, 1.0, -1.0)
        model = smo_train(X[rows], y, C=C, kernel=kernel, tol=tol, max_passes=max_passes)
        pairs.append((a, b))
        models.append(_reindexed(model, rows))
    return MulticlassModel(list(classes), pairs, models)


class SmoClassifier(ClassifierMixin, BaseEstimator):
    """scikit-learn style wrapper around multiclass_train."""

    def __init__(self, C: float = 1.0, kernel: str = "linear", gamma: float = 1.0, tol: float = 1e-3, max_passes: int = 100000):
        self.C = C
        self.kernel = kernel
        self.gamma = gamma
        self.tol = tol
        self.max_passes = max_passes

    def fit(self, X, y):
        self.model_ = multiclass_train(
            X, y, C=self.C, kernel=KernelSpec(self.kernel, self.gamma), tol=self.tol, max_passes=self.max_passes,
        )
        self.classes_ = np.asarray(self.model_.classes)
        return self

    def decision_function(self, X) -> np.ndarray:
        values = self.model_.decision_values(X)
        return values[:, 0] if values.shape[1] == 1 else values

    def predict(self, X) -> np.ndarray:
        return self.model_.predict(X)


@dataclass
class SvmEnsemble:
    folds: List[MulticlassModel]
    k: int
    classes: List[str]
    fold_assignment: np.ndarray
    fold_accuracies: List[float]
    participant_wise: bool
    kernel: KernelSpec
    C: float
    train_rows: np.ndarray
    seed: int = 0

    @property
    def mean_fold_accuracy(self) -> float:
        return float(np.nanmean(self.fold_accuracies)) if self.fold_accuracies else float("nan")


def assign_folds(labels, k: int, seed: int, groups=None) -> Tuple[np.ndarray, bool]:
    """Stratified round-robin fold ids per row.

    Units (participants when there are at least k of them and every class has
    two, rows otherwise) are shuffled within each class and dealt to folds in
    turn; the dealing counter carries over from one class to the next so fold
    sizes stay balanced.
    """
    labels = np.asarray(labels).astype(str)
    rng = np.random.default_rng(seed)
    participant_wise = False
    if groups is not None:
        groups = np.asarray(groups).astype(str)
        per_class = [len(np.unique(groups[labels == label])) for label in np.unique(labels)]
        # a class held by a single participant would vanish from one fold's training rows
        participant_wise = len(np.unique(groups)) >= k and min(per_class) >= 2
        if not participant_wise:
            logger.warning("fewer than k=%d participants or a class with one participant; falling back to row-wise folds", k)

    unit_of_row = groups if participant_wise else np.arange(len(labels)).astype(str)
    folds = np.empty(len(labels), dtype=int)
    counter = 0
    for label in ordered_classes(labels):
        units = sorted(set(unit_of_row[labels == label]))
        for pos in rng.permutation(len(units)):
            folds[(unit_of_row == units[pos]) & (labels == label)] = counter % k
            counter += 1
    return folds, participant_wise


def _fit_fold(X, labels, folds, fold, C, kernel, tol, max_passes):
    train = np.flatnonzero(folds != fold)
    valid = np.flatnonzero(folds == fold)
    model = multiclass_train(X[train], labels[train], C=C, kernel=kernel, tol=tol, max_passes=max_passes)
    model = replace(model, models=[_reindexed(m, train) for m in model.models])
    accuracy = float(np.mean(model.predict(X[valid]) == labels[valid])) if len(valid) else float("nan")
    return model, accuracy


def cv_ensemble_train(
    X,
    labels,
    groups=None,
    k: int = 50,
    C: float = 1.0,
    kernel: KernelSpec = KernelSpec(),
    seed: int = 0,
    tol: float = 1e-3,
    max_passes: int = 100000,
    jobs: int = 1,
) -> SvmEnsemble:
    """k models, model i fitted on every row outside fold i and validated on fold i."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    labels = np.asarray(labels).astype(str)
    if k < 2:
        raise ValueError("k must be at least 2")
    if len(X) < k:
        raise ValueError(f"{len(X)} training rows cannot fill k={k} folds")

    folds, participant_wise = assign_folds(labels, k, seed, groups)
    results = Parallel(n_jobs=jobs)(
        delayed(_fit_fold)(X, labels, folds, fold, C, kernel, tol, max_passes) for fold in range(k)
    )
    models = [model for model, _ in results]
    accuracies = [accuracy for _, accuracy in results]
    logger.info("trained %d-fold ensemble (seed %s), mean fold accuracy %.3f", k, seed, np.nanmean(accuracies))
    return SvmEnsemble(
        folds=models,
        k=k,
        classes=ordered_classes(labels),
        fold_assignment=folds,
        fold_accuracies=accuracies,
        participant_wise=participant_wise,
        kernel=kernel,
        C=C,
        train_rows=X,
        seed=seed,
    )


def ensemble_predict_many(ensemble: SvmEnsemble, X) -> Tuple[np.ndarray, np.ndarray]:
    """Predicted classes and the (n, classes) matrix of scores.

    A class scores the mean over folds of its |decision|-weighted vote share in
    that fold. Equal scores go to the class with more raw votes, then to the
    earlier class.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    n, n_classes = len(X), len(ensemble.classes)
    index = {c: k for k, c in enumerate(ensemble.classes)}
    scores = np.zeros((n, n_classes))
    votes = np.zeros((n, n_classes))
    for model in ensemble.folds:
        columns = np.array([index[c] for c in model.classes])
        fold_votes, fold_strength = model.vote_details(X)
        scores[:, columns] += _weighted_shares(fold_votes, fold_strength, len(model.pairs))
        votes[:, columns] += fold_votes
    scores /= len(ensemble.folds)
    predicted = np.asarray(ensemble.classes, dtype=object)[_break_ties(scores, votes)].astype(str)
    return predicted, scores


def ensemble_predict(ensemble: SvmEnsemble, row) -> Tuple[str, Dict[str, float]]:
    predicted, shares = ensemble_predict_many(ensemble, np.atleast_2d(row))
    return str(predicted[0]), dict(zip(ensemble.classes, shares[0].tolist()))


def feature_importance(model, feature_names: Sequence[str]) -> List[Tuple[str, float]]:
    """|w_j| summed over the pair machines (and averaged over folds for an ensemble), highest first."""
    folds = model.folds if isinstance(model, SvmEnsemble) else [model]
    totals = np.zeros(len(feature_names))
    for fold in folds:
        for machine in fold.models:
            totals += np.abs(machine.weights())
    totals /= len(folds)
    order = sorted(range(len(feature_names)), key=lambda j: (-totals[j], j))
    return [(feature_names[j], float(totals[j])) for j in order]


def _model_to_dict(model: SvmModel) -> dict:
    return {
        "support_indices": model.support_indices.tolist(),
        "alphas": model.alphas.tolist(),
        "labels": model.labels.tolist(),
        "bias": model.bias,
    }


def ensemble_to_dict(ensemble: SvmEnsemble) -> dict:
    """Support vectors are stored as row indices into train_rows."""
    return {
        "kernel": ensemble.kernel.to_dict(),
        "C": ensemble.C,
        "k": ensemble.k,
        "seed": ensemble.seed,
        "classes": ensemble.classes,
        "participant_wise": ensemble.participant_wise,
        "fold_assignment": ensemble.fold_assignment.tolist(),
        "fold_accuracies": ensemble.fold_accuracies,
        "train_rows": ensemble.train_rows.tolist(),
        "folds": [
            {
                "classes": fold.classes,
                "pairs": [list(pair) for pair in fold.pairs],
                "models": [_model_to_dict(m) for m in fold.models],
            }
            for fold in ensemble.folds
        ],
    }


def ensemble_from_dict(data: dict) -> SvmEnsemble:
    kernel = KernelSpec.from_dict(data["kernel"])
    C = float(data["C"])
    train_rows = np.asarray(data["train_rows"], dtype=float)
    folds = []
    for fold in data["folds"]:
        models = []
        for m in fold["models"]:
            idx = np.asarray(m["support_indices"], dtype=int)
            models.append(SvmModel(
                support_vectors=train_rows[idx] if len(idx) else np.zeros((0, train_rows.shape[1])),
                alphas=np.asarray(m["alphas"], dtype=float),
                labels=np.asarray(m["labels"], dtype=float),
                bias=float(m["bias"]),
                kernel=kernel,
                C=C,
                support_indices=idx,
            ))
        folds.append(MulticlassModel(list(fold["classes"]), [tuple(p) for p in fold["pairs"]], models))
    return SvmEnsemble(
        folds=folds,
        k=int(data["k"]),
        classes=list(data["classes"]),
        fold_assignment=np.asarray(data["fold_assignment"], dtype=int),
        fold_accuracies=[float(a) for a in data["fold_accuracies"]],
        participant_wise=bool(data["participant_wise"]),
        kernel=kernel,
        C=C,
        train_rows=train_rows,
        seed=int(data["seed"]),
    )
