"""Relation-scored fusion of a point feature with per-view features.

The pipeline per sample:

1. score every view against the global point feature with a shared MLP and a
   sigmoid, giving per-view relevance in (0, 1);
2. enhance each view feature residually, v' = v * (1 + score);
3. single-view branch: fuse the point feature with every enhanced view
   through a shared MLP and max-pool the results across views;
4. multi-view branch: rank views by score, and for every prefix size
   k = 2..K, max-combine the top-k enhanced views, fuse with the point
   feature through a second shared MLP, and average the K-1 outputs;
5. concatenate both branches and classify through a small head whose hidden
   activation doubles as the retrieval embedding.

Ranking is a hard selection: gradients flow through the selected view values
and through the enhancement, never through the ordering itself.

All functions take batch-flattened tensors (rows sample-major) plus the view
count; single-sample wrappers reshape for convenience.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import (
    Tensor,
    add,
    concat,
    linear,
    max_over_axis,
    mul_colvec,
    relu,
    repeat_rows,
    reshape,
    scale,
    take_rows,
)
from .errors import DimensionError, InputError
from .params import he_uniform, xavier_uniform


def _mlp2(x, store, prefix):
    h = relu(linear(x, store[f"{prefix}.fc1.w"], store[f"{prefix}.fc1.b"]))
    return linear(h, store[f"{prefix}.fc2.w"], store[f"{prefix}.fc2.b"])


def _add_mlp2_params(store, rng, prefix, d_in, hidden, d_out):
    store.add(f"{prefix}.fc1.w", he_uniform(rng, (d_in, hidden), d_in))
    store.add(f"{prefix}.fc1.b", np.zeros(hidden))
    store.add(f"{prefix}.fc2.w", xavier_uniform(rng, (hidden, d_out), hidden, d_out))
    store.add(f"{prefix}.fc2.b", np.zeros(d_out))


def add_relation_params(store, rng, cfg):
    _add_mlp2_params(
        store, rng, "rel", cfg.point_feat + cfg.view_feat, cfg.relation_hidden, 1
    )


def add_sfusion_params(store, rng, cfg):
    _add_mlp2_params(
        store, rng, "sf", cfg.point_feat + cfg.view_feat, cfg.fusion_hidden, cfg.fuse_feat
    )


def add_mfusion_params(store, rng, cfg):
    _add_mlp2_params(
        store, rng, "mf", cfg.point_feat + cfg.view_feat, cfg.fusion_hidden, cfg.fuse_feat
    )


def add_head_params(store, rng, cfg, n_classes, multiview=True):
    d_in = 2 * cfg.fuse_feat if multiview else cfg.fuse_feat
    _add_mlp2_params(store, rng, "head", d_in, cfg.embed_dim, n_classes)


def _paired_with_point(p, v, n_views):
    if p.data.ndim != 2 or v.data.ndim != 2:
        raise DimensionError(
            f"expected 2-D feature tensors, got {p.data.shape} and {v.data.shape}"
        )
    if v.data.shape[0] != p.data.shape[0] * n_views:
        raise DimensionError(
            f"{v.data.shape[0]} view rows are not {p.data.shape[0]} samples "
            f"x {n_views} views"
        )
    return concat([repeat_rows(p, n_views), v], axis=1)


def relation_scores(p, v, store, n_views):
    """Per-view relevance in (0, 1); a pure function of (p, v_i) per row.

    ``p`` is (B, Dp), ``v`` is (B*V, Dh) sample-major; output is (B*V, 1).
    """
    from .autodiff import sigmoid

    return sigmoid(_mlp2(_paired_with_point(p, v, n_views), store, "rel"))


def enhance_views(v, scores):
    """Residual per-view scaling: row i becomes v_i * (1 + s_i)."""
    if scores.data.shape != (v.data.shape[0], 1):
        raise DimensionError(
            f"scores shape {scores.data.shape} does not match {v.data.shape[0]} views"
        )
    return mul_colvec(v, add(scores, 1.0))


def select_top_k(scores, k):
    """Indices of the k largest scores, descending; ties break to the lower index.

    Accepts a (V,) vector or a (B, V) matrix (selection along the last axis).
    The selection is a hard discrete choice carrying no gradient.
    """
    s = np.asarray(scores.data if isinstance(scores, Tensor) else scores, dtype=np.float64)
    v = s.shape[-1]
    if not 1 <= k <= v:
        raise InputError(f"top-k size {k} out of range [1, {v}]")
    order = np.argsort(-s, axis=-1, kind="stable")
    return order[..., :k]


def view_ranking(scores, n_views):
    """Full descending score order per sample, shape (B, V)."""
    s = scores.data.reshape(-1, n_views)
    return select_top_k(s, n_views)


def sfusion(p, v_enh, store, n_views):
    """Single-view branch: shared pairwise fusion, max-pooled across views."""
    if n_views < 1:
        raise InputError("sfusion needs at least one view")
    pairwise = _mlp2(_paired_with_point(p, v_enh, n_views), store, "sf")
    b = p.data.shape[0]
    return max_over_axis(reshape(pairwise, (b, n_views, pairwise.shape[1])), axis=1)


def mfusion(p, v_enh, order, top_k, store, n_views):
    """Multi-view branch: average of fused top-k view sets for k = 2..K.

    ``order`` is the (B, V) descending score ranking. For each k the top-k
    enhanced views are combined by elementwise max before the shared fusion
    MLP, so the branch is invariant to the order within a selected set and
    its input width does not depend on k. Singleton sets are the single-view
    branch's job, hence k starts at 2.
    """
    if top_k < 2:
        raise InputError(f"multi-view fusion needs top_k >= 2, got {top_k}")
    if top_k > n_views:
        raise InputError(f"top_k {top_k} exceeds view count {n_views}")
    b = p.data.shape[0]
    d_view = v_enh.data.shape[1]
    row_base = (np.arange(b, dtype=np.intp) * n_views)[:, None]
    total = None
    for k in range(2, top_k + 1):
        rows = (order[:, :k] + row_base).ravel()
        picked = take_rows(v_enh, rows)
        combined = max_over_axis(reshape(picked, (b, k, d_view)), axis=1)
        fused_k = _mlp2(concat([p, combined], axis=1), store, "mf")
        total = fused_k if total is None else add(total, fused_k)
    return scale(total, 1.0 / (top_k - 1))


@dataclass
class FusedFeature:
    """Everything the fusion head produces for a batch."""

    scores: Tensor  # (B*V, 1) view relevance
    order: np.ndarray  # (B, V) descending score ranking
    sfused: Tensor  # (B, Df)
    mfused: Tensor | None  # (B, Df), absent for the single-branch variant
    fused: Tensor  # (B, 2 Df) or (B, Df)
    embedding: Tensor  # (B, De) penultimate activation
    logits: Tensor  # (B, C)


def fuse(p, v, store, cfg, n_views, multiview=True):
    """Run the full fusion pipeline on batch features."""
    s = relation_scores(p, v, store, n_views)
    v_enh = enhance_views(v, s)
    sf = sfusion(p, v_enh, store, n_views)
    order = view_ranking(s, n_views)
    if multiview:
        mf = mfusion(p, v_enh, order, cfg.top_k, store, n_views)
        fused = concat([sf, mf], axis=1)
    else:
        mf = None
        fused = sf
    embedding = relu(linear(fused, store["head.fc1.w"], store["head.fc1.b"]))
    logits = linear(embedding, store["head.fc2.w"], store["head.fc2.b"])
    return FusedFeature(
        scores=s,
        order=order,
        sfused=sf,
        mfused=mf,
        fused=fused,
        embedding=embedding,
        logits=logits,
    )


# ---------------------------------------------------------------------------
# late-fusion baseline


def relation_trunk_size(cfg, n_classes, multiview=True):
    """Scalar parameter count of the post-encoder fusion pipeline."""
    d_in = cfg.point_feat + cfg.view_feat
    rel = (d_in + 1) * cfg.relation_hidden + (cfg.relation_hidden + 1) * 1
    branch = (d_in + 1) * cfg.fusion_hidden + (cfg.fusion_hidden + 1) * cfg.fuse_feat
    head_in = 2 * cfg.fuse_feat if multiview else cfg.fuse_feat
    head = (head_in + 1) * cfg.embed_dim + (cfg.embed_dim + 1) * n_classes
    branches = branch * (2 if multiview else 1)
    return rel + branches + head


def late_hidden_width(cfg, n_classes):
    """Hidden width that matches the late head's size to the fusion trunk."""
    target = relation_trunk_size(cfg, n_classes, multiview=True)
    d_in = cfg.point_feat + cfg.view_feat
    fixed = cfg.embed_dim + (cfg.embed_dim + 1) * n_classes
    width = int(round((target - fixed) / (d_in + 1 + cfg.embed_dim)))
    return max(width, 1)


def add_late_head_params(store, rng, cfg, n_classes):
    d_in = cfg.point_feat + cfg.view_feat
    width = late_hidden_width(cfg, n_classes)
    store.add("late.fc1.w", he_uniform(rng, (d_in, width), d_in))
    store.add("late.fc1.b", np.zeros(width))
    store.add("late.fc2.w", he_uniform(rng, (width, cfg.embed_dim), width))
    store.add("late.fc2.b", np.zeros(cfg.embed_dim))
    store.add(
        "late.fc3.w",
        xavier_uniform(rng, (cfg.embed_dim, n_classes), cfg.embed_dim, n_classes),
    )
    store.add("late.fc3.b", np.zeros(n_classes))


def late_fusion(p, v, store, n_views):
    """Baseline: concat the point feature with max-pooled raw view features.

    No relation scoring; the head is sized to the fusion trunk's parameter
    count so the comparison isolates the fusion mechanism, not capacity.
    """
    b = p.data.shape[0]
    pooled = max_over_axis(reshape(v, (b, n_views, v.data.shape[1])), axis=1)
    z = concat([p, pooled], axis=1)
    h = relu(linear(z, store["late.fc1.w"], store["late.fc1.b"]))
    embedding = relu(linear(h, store["late.fc2.w"], store["late.fc2.b"]))
    logits = linear(embedding, store["late.fc3.w"], store["late.fc3.b"])
    return embedding, logits
