"""Precision/recall machinery and the truncated PR-AUC score.

The headline score D is the area under the precision-recall step curve
restricted to recall <= 0.1, so a perfect classifier scores exactly 0.1.
Samples sharing a score enter the sweep together, which keeps the curve
and D independent of input order.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np

from .errors import DataError

RECALL_CAP = 0.1


@dataclass(frozen=True)
class PrCurve:
    """PR sweep over distinct thresholds, descending, ties grouped."""

    thresholds: np.ndarray
    precisions: np.ndarray
    recalls: np.ndarray
    n_pos: int
    n_total: int


@dataclass(frozen=True)
class Score:
    """Truncated PR-AUC value plus what was evaluated."""

    value: float
    subset: str = ""
    recall_cap: float = RECALL_CAP


def pr_curve(scores: np.ndarray, labels: np.ndarray) -> PrCurve:
    """Exact PR curve with one point per distinct score.

    Requires binary labels with at least one positive and finite scores.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if scores.shape != labels.shape or scores.ndim != 1:
        raise DataError("scores and labels must be equal-length 1-D arrays")
    if not np.isfinite(scores).all():
        raise DataError("scores must be finite")
    if not np.isin(labels, (0, 1)).all():
        raise DataError("labels must be 0/1")
    n_pos = int(labels.sum())
    if n_pos == 0:
        raise DataError("PR curve undefined without positive samples")

    order = np.argsort(-scores, kind="stable")
    sorted_scores = scores[order]
    sorted_labels = labels[order].astype(np.int64)
    tp = np.cumsum(sorted_labels)
    ranks = np.arange(1, scores.size + 1)

    # Last index of each tie group = positions where the score changes.
    boundary = np.flatnonzero(np.diff(sorted_scores) != 0)
    group_end = np.concatenate([boundary, [scores.size - 1]])

    thresholds = sorted_scores[group_end]
    tp_g = tp[group_end].astype(np.float64)
    predicted = ranks[group_end].astype(np.float64)
    precisions = tp_g / predicted
    recalls = tp_g / n_pos
    return PrCurve(
        thresholds=thresholds,
        precisions=precisions,
        recalls=recalls,
        n_pos=n_pos,
        n_total=int(scores.size),
    )


def pr_auc_truncated(curve: PrCurve, recall_cap: float = RECALL_CAP) -> Score:
    """Area of the precision(recall) step function from 0 to ``recall_cap``.

    Each recall increment takes the precision of the sweep point achieving
    it; the segment crossing the cap counts pro-rata. The anchor at recall 0
    is implicit: the first recall-raising point covers [0, r_1].
    """
    area = 0.0
    r_prev = 0.0
    for p, r in zip(curve.precisions, curve.recalls):
        if r <= r_prev:
            continue
        r_hi = min(r, recall_cap)
        if r_hi > r_prev:
            area += (r_hi - r_prev) * p
            r_prev = r_hi
        if r_prev >= recall_cap:
            break
    return Score(value=float(area), recall_cap=recall_cap)


def weighted_average(scores: list[float], sizes: list[int]) -> float:
    """Test-size-weighted mean of per-network scores."""
    if not scores or len(scores) != len(sizes):
        raise DataError("need equal, non-empty score and size lists")
    if any(s <= 0 for s in sizes):
        raise DataError("sizes must be positive")
    total = float(sum(sizes))
    return float(sum(d * n for d, n in zip(scores, sizes)) / total)


def evaluate_scores(
    scores: np.ndarray,
    labels: np.ndarray,
    subset: str = "",
    recall_cap: float = RECALL_CAP,
) -> tuple[Score, PrCurve]:
    curve = pr_curve(scores, labels)
    d = pr_auc_truncated(curve, recall_cap)
    return Score(value=d.value, subset=subset, recall_cap=recall_cap), curve


def evaluate_subset(
    predict_fn: Callable[[np.ndarray], np.ndarray],
    dataset,
    split: int,
    network: str | None = None,
    facility: str | None = None,
    curve_csv: str | Path | None = None,
    extra_mask: np.ndarray | None = None,
) -> tuple[Score, PrCurve]:
    """Score a model on a filtered test subset.

    ``predict_fn`` maps dataset indices to probabilities. ``extra_mask``
    (aligned with the dataset) restricts further, e.g. to precursor-only
    samples. Raises :class:`DataError` when the subset is empty or has no
    positives.
    """
    idx = dataset.indices(split=split, network=network, facility=facility)
    if extra_mask is not None:
        idx = idx[extra_mask[idx]]
    if idx.size == 0:
        raise DataError("evaluation subset is empty")
    labels = dataset.label[idx]
    if labels.sum() == 0:
        raise DataError("evaluation subset has no positive samples")
    scores = predict_fn(idx)
    descriptor = ",".join(
        part
        for part in (
            f"split={split}",
            f"network={network}" if network else "",
            f"facility={facility}" if facility else "",
        )
        if part
    )
    score, curve = evaluate_scores(scores, labels, subset=descriptor)
    if curve_csv is not None:
        write_curve_csv(curve_csv, curve)
    return score, curve


def write_curve_csv(path: str | Path, curve: PrCurve) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["threshold", "precision", "recall"])
        for t, p, r in zip(curve.thresholds, curve.precisions, curve.recalls):
            writer.writerow([repr(float(t)), repr(float(p)), repr(float(r))])
