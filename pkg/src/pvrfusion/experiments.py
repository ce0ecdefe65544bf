"""Experiment orchestration: evaluation, the ablation study, robustness sweeps.

The ablation trains, with one shared seed, both unimodal baselines and then
every fusion variant from the same pretrained encoders: late fusion, the
single-view branch alone, and the full model with nested view sets capped at
2, 3, and 4. Robustness re-evaluates trained models under view and point
subsampling against their unimodal comparators.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np

from .data import subsample_points, subsample_views
from .metrics import EvalReport, classification_metrics, retrieval_map
from .models import PreparedDataset
from .training import embeddings, predict, pretrain_unimodal, train_fusion, train_model

ABLATION_ROWS = (
    "point_only",
    "view_only",
    "late_fusion",
    "sfusion",
    "sm_fusion_k2",
    "sm_fusion_k3",
    "sm_fusion_k4",
)

VIEW_SWEEP = (4, 8, 10, 12)
POINT_SWEEP = (128, 256, 384, 512, 640, 768, 896, 1024)


def evaluate_model(model, prepared, n_classes, config_echo=None):
    """Classification metrics plus leave-one-out retrieval on the embeddings."""
    preds = predict(model, prepared)
    overall, mean_class, per_class, excluded = classification_metrics(
        preds, prepared.labels, n_classes
    )
    emb = embeddings(model, prepared)
    mean_ap, pr_curve, _ = retrieval_map(emb, prepared.labels)
    return EvalReport(
        overall_acc=overall,
        mean_class_acc=mean_class,
        per_class_acc=[None if np.isnan(a) else float(a) for a in per_class],
        retrieval_map=mean_ap,
        pr_curve=pr_curve,
        excluded_classes=excluded,
        config=config_echo or {},
    )


def classification_only(model, prepared, n_classes):
    preds = predict(model, prepared)
    overall, mean_class, _, _ = classification_metrics(preds, prepared.labels, n_classes)
    return overall, mean_class


@dataclass
class AblationResult:
    rows: list  # dicts with model / mean_class_acc / overall_acc
    models: dict  # row name -> trained model
    histories: dict  # row name -> per-epoch loss


def run_ablation(dataset, schedule, model_cfg, n_classes, descriptor_dim,
                 keep_models=False):
    """Train and evaluate the seven-row component study with one shared seed."""
    prepared_train = PreparedDataset(dataset.train, model_cfg.knn_k)
    prepared_test = PreparedDataset(dataset.test, model_cfg.knn_k)

    models = {}
    histories = {}

    point_model, histories["point_only"] = pretrain_unimodal(
        dataset.train, "point", schedule, model_cfg, n_classes, descriptor_dim,
        prepared=prepared_train,
    )
    models["point_only"] = point_model
    view_model, histories["view_only"] = pretrain_unimodal(
        dataset.train, "view", schedule, model_cfg, n_classes, descriptor_dim,
        prepared=prepared_train,
    )
    models["view_only"] = view_model

    point_arrays = point_model.arrays()
    view_arrays = view_model.arrays()

    def fusion_variant(variant, multiview=True, top_k=None):
        cfg = (
            dataclasses.replace(model_cfg, top_k=top_k)
            if top_k is not None
            else model_cfg
        )
        model, history = train_fusion(
            dataset.train, point_arrays, view_arrays, schedule, cfg,
            n_classes, descriptor_dim, variant=variant,
            prepared=prepared_train, multiview=multiview,
        )
        return model, history

    models["late_fusion"], histories["late_fusion"] = fusion_variant("late")
    models["sfusion"], histories["sfusion"] = fusion_variant("fusion", multiview=False)
    for k in (2, 3, 4):
        name = f"sm_fusion_k{k}"
        models[name], histories[name] = fusion_variant("fusion", top_k=k)

    rows = []
    for name in ABLATION_ROWS:
        overall, mean_class = classification_only(models[name], prepared_test, n_classes)
        rows.append(
            {"model": name, "mean_class_acc": mean_class, "overall_acc": overall}
        )
    return AblationResult(
        rows=rows,
        models=models if keep_models else {},
        histories=histories,
    )


def run_view_robustness(fusion_model, view_model, test_samples, knn_k, n_classes):
    """Accuracy of 12-view-trained models under camera subsets; CSV-ready rows."""
    rows = []
    for keep in VIEW_SWEEP:
        reduced = [subsample_views(s, keep) for s in test_samples]
        prepared = PreparedDataset(reduced, knn_k)
        for name, model in (("fusion", fusion_model), ("view_only", view_model)):
            overall, _ = classification_only(model, prepared, n_classes)
            rows.append({"model": name, "views": keep, "overall_acc": overall})
    return rows


def run_point_robustness(fusion_model, point_model, test_samples, knn_k, n_classes):
    """Accuracy of 1024-point-trained models under point subsampling."""
    rows = []
    available = min(s.points.shape[0] for s in test_samples)
    sweep = [keep for keep in POINT_SWEEP if keep <= available]
    for keep in sweep:
        reduced = [subsample_points(s, keep) for s in test_samples]
        prepared = PreparedDataset(reduced, knn_k)
        for name, model in (("fusion", fusion_model), ("point_only", point_model)):
            overall, _ = classification_only(model, prepared, n_classes)
            rows.append({"model": name, "points": keep, "overall_acc": overall})
    return rows


def run_robustness(models, test_samples, knn_k, n_classes):
    """Both sweeps; ``models`` maps 'fusion' / 'point' / 'view' to trained models."""
    view_rows = run_view_robustness(
        models["fusion"], models["view"], test_samples, knn_k, n_classes
    )
    point_rows = run_point_robustness(
        models["fusion"], models["point"], test_samples, knn_k, n_classes
    )
    return view_rows, point_rows
