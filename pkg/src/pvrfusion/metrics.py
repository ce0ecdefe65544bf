"""Classification and retrieval evaluation.

Retrieval follows the leave-one-out protocol: each sample queries every
other sample, rankings use cosine distance (ties resolved toward the lower
sample index), average precision is the mean of precision-at-rank over the
ranks of the relevant items, and the PR curve reports interpolated precision
(the maximum precision at recall at or above the level) averaged over
queries at the 11 standard recall levels 0.0, 0.1, ..., 1.0.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import InputError

RECALL_LEVELS = np.linspace(0.0, 1.0, 11)


@dataclass
class EvalReport:
    overall_acc: float
    mean_class_acc: float
    per_class_acc: list
    retrieval_map: float
    pr_curve: list  # [(recall_level, precision), ...]
    excluded_classes: list = field(default_factory=list)
    config: dict = field(default_factory=dict)

    def to_dict(self):
        return {
            "overall_acc": self.overall_acc,
            "mean_class_acc": self.mean_class_acc,
            "per_class_acc": self.per_class_acc,
            "retrieval_map": self.retrieval_map,
            "pr_curve": [[float(r), float(p)] for r, p in self.pr_curve],
            "excluded_classes": self.excluded_classes,
            "config": self.config,
        }


def classification_metrics(predictions, labels, n_classes):
    """Overall accuracy, unweighted mean class accuracy, per-class accuracies.

    Classes absent from ``labels`` are excluded from the mean (with a
    warning) and reported as NaN in the per-class vector.
    """
    predictions = np.asarray(predictions)
    labels = np.asarray(labels)
    if predictions.shape != labels.shape:
        raise InputError(
            f"predictions shape {predictions.shape} != labels shape {labels.shape}"
        )
    overall = float(np.mean(predictions == labels)) if labels.size else 0.0
    per_class = np.full(n_classes, np.nan)
    excluded = []
    for c in range(n_classes):
        mask = labels == c
        if mask.any():
            per_class[c] = float(np.mean(predictions[mask] == c))
        else:
            excluded.append(c)
    if excluded:
        warnings.warn(
            f"classes {excluded} have no test samples; excluded from mean class accuracy",
            stacklevel=2,
        )
    defined = per_class[~np.isnan(per_class)]
    mean_class = float(np.mean(defined)) if defined.size else 0.0
    return overall, mean_class, per_class, excluded


def _cosine_distances(embeddings):
    norms = np.linalg.norm(embeddings, axis=1, keepdims=True)
    normed = embeddings / np.maximum(norms, 1e-12)
    return 1.0 - normed @ normed.T


def retrieval_map(embeddings, labels):
    """(mAP, 11-point PR curve, excluded query count) for leave-one-out retrieval."""
    embeddings = np.asarray(embeddings, dtype=np.float64)
    labels = np.asarray(labels)
    m = embeddings.shape[0]
    if m < 2:
        raise InputError("retrieval needs at least two samples")
    same = labels[:, None] == labels[None, :]
    np.fill_diagonal(same, False)
    if not same.any():
        raise InputError("retrieval needs at least one same-class pair")

    dist = _cosine_distances(embeddings)
    ap_values = []
    interp_per_query = []
    excluded = 0
    others = np.arange(m)
    for q in range(m):
        keep = others != q
        cand = others[keep]
        # stable sort on distance keeps ties ordered by sample index
        ranked = cand[np.argsort(dist[q, keep], kind="stable")]
        relevant = same[q, ranked]
        n_rel = int(relevant.sum())
        if n_rel == 0:
            excluded += 1
            continue
        ranks = np.arange(1, ranked.size + 1)
        cum_hits = np.cumsum(relevant)
        precision_at = cum_hits / ranks
        ap_values.append(float(np.mean(precision_at[relevant])))
        recall_at = cum_hits / n_rel
        # interpolated precision: best precision at recall >= each level
        running_max = np.maximum.accumulate(precision_at[::-1])[::-1]
        level_idx = np.searchsorted(recall_at, RECALL_LEVELS, side="left")
        level_idx = np.minimum(level_idx, ranked.size - 1)
        interp_per_query.append(running_max[level_idx])
    if excluded:
        warnings.warn(
            f"{excluded} retrieval queries had no relevant items and were excluded",
            stacklevel=2,
        )
    mean_ap = float(np.mean(ap_values))
    pr = np.mean(np.stack(interp_per_query), axis=0)
    curve = list(zip(RECALL_LEVELS.tolist(), pr.tolist()))
    return mean_ap, curve, excluded
