"""Metrics and evaluation protocol.

AUROC with midrank tie handling, macro one-vs-rest AUROC over the
three-class label space, the binary-to-three-class probability remapping
used by the binary task formulation, leave-one-center-out splits, and
per-fold evaluation with per-breast max aggregation.

Model access goes through a plain ``predict_fn`` callable so everything
here stays framework-free and directly testable.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from .errors import DataError, ProtocolError, UndefinedMetricError
from .roi import BreastRoi
from .seeding import rng_from

CLASS_NAMES = ("healthy", "benign", "malignant")
_CLASS_INDEX = {name: i for i, name in enumerate(CLASS_NAMES)}


@dataclass(frozen=True)
class ClassDistribution:
    """Probabilities over (healthy, benign, malignant)."""

    p_healthy: float
    p_benign: float
    p_malignant: float

    def __post_init__(self):
        probs = self.as_array()
        if np.any(probs < -1e-12) or np.any(probs > 1 + 1e-12):
            raise ValueError(f"probabilities outside [0, 1]: {tuple(probs)}")
        if abs(float(probs.sum()) - 1.0) > 1e-9:
            raise ValueError(f"probabilities must sum to 1, got {float(probs.sum())!r}")

    def as_array(self) -> np.ndarray:
        return np.array([self.p_healthy, self.p_benign, self.p_malignant], dtype=np.float64)


def map_binary_to_three_class(p_lesion: float) -> ClassDistribution:
    """Remap a lesion-present probability into the three-class space.

    Above 0.5 the probability goes to malignant with the remainder on
    benign; at or below 0.5 it goes to benign with the remainder on
    healthy. The model therefore never argmax-predicts benign away from
    the 0.5 boundary. Exactly 0.5 takes the healthy branch.
    """
    p = float(p_lesion)
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"p_lesion must be in [0, 1], got {p!r}")
    if p > 0.5:
        return ClassDistribution(0.0, 1.0 - p, p)
    return ClassDistribution(1.0 - p, p, 0.0)


# ---------------------------------------------------------------------------
# AUROC
# ---------------------------------------------------------------------------


def _midranks(values: np.ndarray) -> np.ndarray:
    """1-based ranks with ties replaced by the mean rank of the tie group."""
    order = np.sort(values)
    lo = np.searchsorted(order, values, side="left")
    hi = np.searchsorted(order, values, side="right")
    return 0.5 * (lo + hi + 1)


def auroc(scores: Sequence[float], labels: Sequence[int]) -> float:
    """Area under the ROC curve via the midrank (Mann-Whitney) statistic.

    Equals the pair-counting probability P(score+ > score-) plus half the
    tie probability. Raises :class:`UndefinedMetricError` unless both
    classes appear.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if scores.ndim != 1 or scores.shape != labels.shape:
        raise ValueError(f"scores and labels must be equal-length 1D, got {scores.shape} vs {labels.shape}")
    if not np.isin(labels, (0, 1)).all():
        raise ValueError("labels must be binary (0/1)")
    n_pos = int((labels == 1).sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetricError(f"AUROC undefined: {n_pos} positives, {n_neg} negatives")
    ranks = _midranks(scores)
    u = ranks[labels == 1].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def _as_prob_matrix(probs) -> np.ndarray:
    if isinstance(probs, np.ndarray):
        mat = probs.astype(np.float64)
    else:
        rows = [p.as_array() if isinstance(p, ClassDistribution) else np.asarray(p, dtype=np.float64) for p in probs]
        mat = np.stack(rows)
    if mat.ndim != 2 or mat.shape[1] != len(CLASS_NAMES):
        raise ValueError(f"expected (n, {len(CLASS_NAMES)}) probabilities, got {mat.shape}")
    return mat


def _as_label_indices(labels) -> np.ndarray:
    out = []
    for lab in labels:
        if isinstance(lab, str):
            if lab not in _CLASS_INDEX:
                raise ValueError(f"unknown label {lab!r}")
            out.append(_CLASS_INDEX[lab])
        else:
            idx = int(lab)
            if not 0 <= idx < len(CLASS_NAMES):
                raise ValueError(f"label index out of range: {lab!r}")
            out.append(idx)
    return np.asarray(out)


def per_class_auroc(probs, labels) -> dict[str, float]:
    """One-vs-rest AUROC per class, using that class's probability (or any
    per-class monotone score) as the ranking score."""
    mat = _as_prob_matrix(probs)
    idx = _as_label_indices(labels)
    if mat.shape[0] != idx.shape[0]:
        raise ValueError("probs and labels disagree in length")
    out = {}
    for k, name in enumerate(CLASS_NAMES):
        binary = (idx == k).astype(np.int64)
        if binary.sum() == 0:
            raise UndefinedMetricError(f"class {name!r} absent; one-vs-rest AUROC undefined")
        out[name] = auroc(mat[:, k], binary)
    return out


def macro_auroc_ovr(probs, labels) -> float:
    """Unweighted mean of the three one-vs-rest AUROCs."""
    per_class = per_class_auroc(probs, labels)
    return float(np.mean([per_class[name] for name in CLASS_NAMES]))


# ---------------------------------------------------------------------------
# leave-one-center-out protocol
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SplitPlan:
    """One cross-validation fold: all of one center held out for testing,
    a stratified slice of the remaining cases for validation."""

    fold_id: str
    test_center: str
    train_case_ids: tuple[str, ...]
    val_case_ids: tuple[str, ...]
    test_case_ids: tuple[str, ...]

    def __post_init__(self):
        train, val, test = set(self.train_case_ids), set(self.val_case_ids), set(self.test_case_ids)
        if train & val or train & test or val & test:
            raise ValueError(f"fold {self.fold_id}: case id sets overlap")
        if not self.test_case_ids:
            raise ValueError(f"fold {self.fold_id}: empty test set")


def make_loco_splits(cases: Iterable, val_fraction: float = 0.1) -> list[SplitPlan]:
    """One fold per acquisition center, ordered by center id.

    The validation set is drawn per class from the training centers'
    cases (at least one case per class stays in train), selected by a
    seeded permutation of the sorted case ids, so the plan is
    deterministic for a given dataset.
    """
    if not 0.0 <= val_fraction < 1.0:
        raise ValueError(f"val_fraction must be in [0, 1), got {val_fraction}")
    records = sorted(
        ((case.case_id, case.center_id, case.label) for case in cases),
        key=lambda r: r[0],
    )
    if not records:
        raise ProtocolError("no cases supplied")
    centers = sorted({center for _, center, _ in records})
    if len(centers) < 2:
        raise ProtocolError(f"leave-one-center-out needs at least 2 centers, got {len(centers)}")

    plans = []
    for i, held_out in enumerate(centers):
        test_ids = tuple(cid for cid, center, _ in records if center == held_out)
        pool = [(cid, label) for cid, center, label in records if center != held_out]
        by_class: dict[str, list[str]] = {}
        for cid, label in pool:
            by_class.setdefault(label, []).append(cid)
        val_ids: list[str] = []
        for label in sorted(by_class):
            ids = by_class[label]
            n_val = int(round(val_fraction * len(ids)))
            n_val = min(max(n_val, 1 if val_fraction > 0 else 0), len(ids) - 1)
            if n_val <= 0:
                continue
            perm = rng_from("loco-val", held_out, label).permutation(len(ids))
            val_ids.extend(ids[j] for j in perm[:n_val])
        val_set = set(val_ids)
        train_ids = tuple(cid for cid, _ in pool if cid not in val_set)
        plans.append(
            SplitPlan(
                fold_id=f"fold{i}_{held_out}",
                test_center=held_out,
                train_case_ids=train_ids,
                val_case_ids=tuple(sorted(val_set)),
                test_case_ids=test_ids,
            )
        )
    return plans


# ---------------------------------------------------------------------------
# fold evaluation
# ---------------------------------------------------------------------------

PredictFn = Callable[[Sequence[BreastRoi]], np.ndarray]


@dataclass(frozen=True)
class FoldMetrics:
    fold_id: str
    test_center: str
    macro_auroc: float
    class_auroc: dict[str, float]
    n_cases: int

    def to_dict(self) -> dict:
        return {
            "fold_id": self.fold_id,
            "test_center": self.test_center,
            "macro_auroc": self.macro_auroc,
            "class_auroc": dict(self.class_auroc),
            "n_cases": self.n_cases,
        }


def aggregate_case_scores(roi_probs: np.ndarray, task="three_class") -> np.ndarray:
    """Collapse per-ROI probabilities into one per-case score vector.

    A case is as suspicious as its most suspicious breast, so scores are
    per-class maxima over ROIs. Binary-task outputs (columns healthy,
    lesion_present) take the max lesion probability and pass through the
    three-class remapping rule.
    """
    kind = getattr(task, "kind", task)
    roi_probs = np.asarray(roi_probs, dtype=np.float64)
    if roi_probs.ndim != 2 or roi_probs.shape[0] == 0:
        raise ValueError(f"expected (n_rois, n_classes) probabilities, got {roi_probs.shape}")
    if kind == "three_class":
        if roi_probs.shape[1] != 3:
            raise ValueError(f"three-class task needs 3 columns, got {roi_probs.shape[1]}")
        return roi_probs.max(axis=0)
    if kind == "binary_lesion":
        if roi_probs.shape[1] != 2:
            raise ValueError(f"binary task needs 2 columns, got {roi_probs.shape[1]}")
        p_lesion = float(roi_probs[:, 1].max())
        return map_binary_to_three_class(p_lesion).as_array()
    raise ValueError(f"unknown task formulation {kind!r}")


def evaluate_fold(
    predict_fn: PredictFn,
    split: SplitPlan,
    rois_by_case: Mapping[str, Sequence[BreastRoi]],
    labels_by_case: Mapping[str, str],
    task="three_class",
) -> FoldMetrics:
    """Score every test case of a fold and compute macro AUROC.

    ``predict_fn`` maps a case's ROIs to an (n_rois, n_classes)
    probability array. Missing ROIs raise :class:`DataError` naming the
    case.
    """
    case_scores = []
    case_labels = []
    for case_id in split.test_case_ids:
        rois = rois_by_case.get(case_id)
        if not rois:
            raise DataError(f"no ROIs available for test case {case_id!r}")
        if case_id not in labels_by_case:
            raise DataError(f"no label available for test case {case_id!r}")
        probs = np.asarray(predict_fn(rois), dtype=np.float64)
        if probs.ndim != 2 or probs.shape[0] != len(rois):
            raise ValueError(f"predict_fn returned {probs.shape} for {len(rois)} ROIs of {case_id!r}")
        case_scores.append(aggregate_case_scores(probs, task))
        case_labels.append(labels_by_case[case_id])
    scores = np.stack(case_scores)
    per_class = per_class_auroc(scores, case_labels)
    return FoldMetrics(
        fold_id=split.fold_id,
        test_center=split.test_center,
        macro_auroc=float(np.mean([per_class[c] for c in CLASS_NAMES])),
        class_auroc=per_class,
        n_cases=len(case_labels),
    )
