import logging
from dataclasses import dataclass, field
from enum import Enum
from itertools import combinations
from typing import Dict, List, Mapping, Optional, Sequence

import numpy as np
from joblib import Parallel, delayed
from scipy.stats import norm, rankdata

from core.dataset import draw_split, materialize, run_seeds
from core.features import FEATURE_NAMES, FeatureMatrix, Standardizer
from core.svm import KernelSpec, cv_ensemble_train, feature_importance, ordered_classes

logger = logging.getLogger(__name__)

EXACT_MAX_N = 12


class UTestMethod(str, Enum):
    EXACT = "Exact"
    NORMAL = "NormalApprox"


class SelectionCriterion(str, Enum):
    ALL = "AllFeatures"
    SIGNIFICANT = "Significant"
    MOST_FREQUENT = "MostFrequent"


@dataclass(frozen=True)
class UTestResult:
    u_statistic: float
    p_value: float
    method: UTestMethod


@dataclass
class FeatureSelection:
    kept: List[str]
    criterion: SelectionCriterion
    evidence: Dict[str, float] = field(default_factory=dict)

    def __post_init__(self):
        unknown = set(self.kept) - set(FEATURE_NAMES)
        if unknown:
            raise ValueError(f"selection keeps non-canonical features: {sorted(unknown)}")
        # canonical column order
        self.kept = [name for name in FEATURE_NAMES if name in set(self.kept)]

    def to_dict(self) -> dict:
        return {"criterion": self.criterion.value, "kept": list(self.kept), "evidence": dict(sorted(self.evidence.items()))}

    @classmethod
    def from_dict(cls, data: dict) -> "FeatureSelection":
        return cls(list(data["kept"]), SelectionCriterion(data["criterion"]), {k: float(v) for k, v in data["evidence"].items()})

    @classmethod
    def all_features(cls) -> "FeatureSelection":
        return cls(list(FEATURE_NAMES), SelectionCriterion.ALL)


def _exact_p(ranks2: np.ndarray, n1: int, u2_obs: int, n2: int) -> float:
    """Exact two-sided p by counting every n1-subset of the pooled doubled ranks, ties included."""
    total = int(ranks2.sum())
    counts = np.zeros((n1 + 1, total + 1))
    counts[0, 0] = 1.0
    for r in ranks2:
        counts[1:, r:] += counts[:-1, :total + 1 - r].copy()
    dist = counts[n1]
    sums = np.arange(total + 1)
    # doubled U of each rank sum, centred on its doubled mean n1 * n2
    u2 = sums - n1 * (n1 + 1)
    extreme = np.abs(u2 - n1 * n2) >= abs(u2_obs - n1 * n2)
    return float(min(1.0, dist[extreme].sum() / dist.sum()))


def _normal_p(u: float, n1: int, n2: int, pooled: np.ndarray) -> float:
    n = n1 + n2
    _, tie_counts = np.unique(pooled, return_counts=True)
    tie_term = float(((tie_counts ** 3) - tie_counts).sum()) / (n * (n - 1)) if n > 1 else 0.0
    var = n1 * n2 / 12.0 * ((n + 1) - tie_term)
    if var <= 0:
        return 1.0
    z = max(abs(u - n1 * n2 / 2.0) - 0.5, 0.0) / np.sqrt(var)
    return float(min(1.0, 2.0 * norm.sf(z)))


def mann_whitney_u(xs: Sequence[float], ys: Sequence[float], method: str = "auto") -> UTestResult:
    """Two-sided Mann-Whitney U test. u_statistic is the U of xs.

    "auto" enumerates the exact null distribution when both groups have at most
    12 values and falls back to the tie- and continuity-corrected normal
    approximation otherwise.
    """
    xs = np.asarray(xs, dtype=float)
    ys = np.asarray(ys, dtype=float)
    if len(xs) == 0 or len(ys) == 0:
        raise ValueError("both samples must be nonempty")
    n1, n2 = len(xs), len(ys)
    pooled = np.concatenate([xs, ys])
    ranks = rankdata(pooled)
    u = float(ranks[:n1].sum() - n1 * (n1 + 1) / 2.0)

    if method == "auto":
        method = UTestMethod.EXACT if max(n1, n2) <= EXACT_MAX_N else UTestMethod.NORMAL
    method = UTestMethod({"exact": UTestMethod.EXACT, "normal": UTestMethod.NORMAL}.get(method, method))

    if np.all(pooled == pooled[0]):
        return UTestResult(u, 1.0, method)
    if method == UTestMethod.EXACT:
        ranks2 = np.rint(2 * ranks).astype(int)
        p = _exact_p(ranks2, n1, int(round(2 * u)), n2)
    else:
        p = _normal_p(u, n1, n2, pooled)
    return UTestResult(u, p, method)


def select_by_pvalues(pvalues: Mapping[str, float], alpha: float = 0.0011) -> FeatureSelection:
    """Keeps features whose p-value is below alpha."""
    kept = [name for name, p in pvalues.items() if p < alpha]
    return FeatureSelection(kept, SelectionCriterion.SIGNIFICANT, {k: float(v) for k, v in pvalues.items()})


def pairwise_pvalues(matrix: FeatureMatrix) -> Dict[str, float]:
    """Smallest U-test p over all class pairs, per feature. Flagged rows are left out."""
    usable = matrix.rows(~matrix.flagged)
    labels = usable.labels
    classes = ordered_classes(labels)
    if len(classes) < 2:
        raise ValueError("significance testing needs at least 2 classes")
    X = usable.X
    evidence = {}
    for col, name in enumerate(usable.feature_names):
        best = 1.0
        for a, b in combinations(classes, 2):
            xa = X[labels == a, col]
            xb = X[labels == b, col]
            xa, xb = xa[~np.isnan(xa)], xb[~np.isnan(xb)]
            if len(xa) == 0 or len(xb) == 0:
                continue
            best = min(best, mann_whitney_u(xa, xb).p_value)
        evidence[name] = best
    return evidence


def significant_feature_filter(matrix: FeatureMatrix, alpha: float = 0.0011) -> FeatureSelection:
    """A feature is kept when any class pair differs at p < alpha."""
    logger.info("significance filter: any-pair rule at alpha=%s, no multiple-comparison correction", alpha)
    return select_by_pvalues(pairwise_pvalues(matrix), alpha)


def _top_features(matrix: FeatureMatrix, seed: int, top_m: int, k: int, C: float, kernel: KernelSpec,
                  n_train: int, n_holdout: int, tol: float, max_passes: int) -> List[str]:
    plan = draw_split(matrix.participants_by_class(), seed, n_train=n_train, n_holdout=n_holdout)
    train, _ = materialize(plan, matrix)
    scaler = Standardizer.fit(train.X, train.feature_names)
    ensemble = cv_ensemble_train(
        scaler.transform(train.X), train.labels, groups=train.participants,
        k=k, C=C, kernel=kernel, seed=seed, tol=tol, max_passes=max_passes,
    )
    return [name for name, _ in feature_importance(ensemble, train.feature_names)[:top_m]]


def most_frequent_features(
    matrix: FeatureMatrix,
    runs: int = 1000,
    top_m: int = 7,
    seed: int = 0,
    threshold: float = 0.5,
    k: int = 50,
    C: float = 1.0,
    kernel: Optional[KernelSpec] = None,
    n_train: int = 8,
    n_holdout: int = 2,
    tol: float = 1e-3,
    max_passes: int = 100000,
    jobs: int = 1,
) -> FeatureSelection:
    """Keeps features that land in a run's top_m importance ranking in more than `threshold` of the runs."""
    kernel = kernel or KernelSpec()
    if runs < 10:
        logger.warning("unstable selection: only %d runs", runs)
    logger.info("most frequent features: %d runs, top %d, seed %s", runs, top_m, seed)

    tops = Parallel(n_jobs=jobs)(
        delayed(_top_features)(matrix, run_seed, top_m, k, C, kernel, n_train, n_holdout, tol, max_passes)
        for run_seed in run_seeds(seed, runs)
    )
    counts = {name: 0 for name in matrix.feature_names}
    for top in tops:
        for name in top:
            counts[name] += 1
    frequency = {name: count / runs for name, count in counts.items()}
    kept = [name for name, f in frequency.items() if f > threshold]
    return FeatureSelection(kept, SelectionCriterion.MOST_FREQUENT, frequency)

