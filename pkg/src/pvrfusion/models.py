"""Model assemblies: unimodal baselines, late fusion, and relation fusion.

Each model owns a ParameterStore with conventional path prefixes ("pc." and
"view." for the two encoders), exposes ``encode`` / ``head_outputs`` so the
trainer can cache frozen encoder outputs, and serializes to the shared
checkpoint format. ``model_from_arrays`` rebuilds the right class from a
checkpoint by inspecting which parameter groups are present.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor, linear, max_over_axis, reshape
from .encoders import (
    add_point_encoder_params,
    add_view_encoder_params,
    encode_point_clouds,
    encode_view_stacks,
    point_neighbor_table,
)
from .errors import FormatError, InputError
from .fusion import (
    add_head_params,
    add_late_head_params,
    add_mfusion_params,
    add_relation_params,
    add_sfusion_params,
    fuse,
    late_fusion,
)
from .params import ParameterStore, xavier_uniform

ENCODER_PREFIXES = ("pc.", "view.")


@dataclass
class Batch:
    """Prepared inputs for one forward pass."""

    clouds: list  # deduplicated (n_i, 3) float arrays
    tables: list  # NeighborTable per cloud
    views: np.ndarray  # (B, V, Dv)
    labels: np.ndarray  # (B,)

    @property
    def n_views(self):
        return self.views.shape[1]

    def __len__(self):
        return len(self.labels)


class PreparedDataset:
    """Samples with their deduplicated clouds and neighbor tables precomputed.

    Building the k-NN tables once per sample dominates the preprocessing cost
    and is reused across every epoch and every model trained on the samples.
    """

    def __init__(self, samples, knn_k):
        self.samples = list(samples)
        self.knn_k = knn_k
        self.labels = np.array([s.class_id for s in self.samples], dtype=np.intp)
        self.clouds = []
        self.tables = []
        for s in self.samples:
            uniq, table = point_neighbor_table(s.points, knn_k)
            self.clouds.append(uniq)
            self.tables.append(table)
        self.views = np.stack([s.view_descriptors for s in self.samples])

    def __len__(self):
        return len(self.samples)

    def batch(self, idxs):
        idxs = np.asarray(idxs, dtype=np.intp)
        return Batch(
            clouds=[self.clouds[i] for i in idxs],
            tables=[self.tables[i] for i in idxs],
            views=self.views[idxs],
            labels=self.labels[idxs],
        )


@dataclass
class HeadOutputs:
    logits: Tensor
    embedding: Tensor
    extras: object = None  # FusedFeature for the relation model


class _ModelBase:
    kind = "?"
    encoder_prefixes = ENCODER_PREFIXES

    def __init__(self, model_cfg, n_classes, descriptor_dim):
        self.cfg = model_cfg
        self.n_classes = n_classes
        self.descriptor_dim = descriptor_dim
        self.store = ParameterStore()

    # -- encoder / head split so frozen-phase training can cache features

    def encode(self, batch):
        """(point features, flat view features) as tensors; unused side is None."""
        raise NotImplementedError

    def head_outputs(self, p, v, n_views):
        raise NotImplementedError

    def forward(self, batch):
        p, v = self.encode(batch)
        return self.head_outputs(p, v, batch.n_views)

    def arrays(self):
        return self.store.arrays()

    def load_arrays(self, arrays, prefixes=None):
        """Copy checkpoint values into matching parameters, validating shapes."""
        for path, tensor in self.store.items():
            if prefixes is not None and not path.startswith(tuple(prefixes)):
                continue
            if path not in arrays:
                raise FormatError(f"checkpoint is missing parameter '{path}'")
            value = arrays[path]
            if value.shape != tensor.data.shape:
                raise FormatError(
                    f"checkpoint parameter '{path}' has shape {value.shape}, "
                    f"expected {tensor.data.shape}"
                )
            tensor.data[...] = value


class PointOnlyModel(_ModelBase):
    """Point encoder plus a linear classifier; the global feature is the embedding."""

    kind = "point"
    encoder_prefixes = ("pc.",)

    def __init__(self, model_cfg, n_classes, descriptor_dim, seed=0):
        super().__init__(model_cfg, n_classes, descriptor_dim)
        rng = np.random.default_rng(np.random.SeedSequence([seed, 101]))
        add_point_encoder_params(self.store, rng, model_cfg)
        self.store.add(
            "point_head.w",
            xavier_uniform(rng, (model_cfg.point_feat, n_classes),
                           model_cfg.point_feat, n_classes),
        )
        self.store.add("point_head.b", np.zeros(n_classes))

    def encode(self, batch):
        p = encode_point_clouds(batch.clouds, batch.tables, self.store, self.cfg)
        return p, None

    def head_outputs(self, p, v, n_views):
        logits = linear(p, self.store["point_head.w"], self.store["point_head.b"])
        return HeadOutputs(logits=logits, embedding=p)


class ViewOnlyModel(_ModelBase):
    """View encoder with max view-pooling before a linear classifier."""

    kind = "view"
    encoder_prefixes = ("view.",)

    def __init__(self, model_cfg, n_classes, descriptor_dim, seed=0):
        super().__init__(model_cfg, n_classes, descriptor_dim)
        rng = np.random.default_rng(np.random.SeedSequence([seed, 102]))
        add_view_encoder_params(self.store, rng, model_cfg, descriptor_dim)
        self.store.add(
            "view_head.w",
            xavier_uniform(rng, (model_cfg.view_feat, n_classes),
                           model_cfg.view_feat, n_classes),
        )
        self.store.add("view_head.b", np.zeros(n_classes))

    def encode(self, batch):
        v = encode_view_stacks(batch.views, self.store)
        return None, v

    def head_outputs(self, p, v, n_views):
        b = v.data.shape[0] // n_views
        pooled = max_over_axis(reshape(v, (b, n_views, v.data.shape[1])), axis=1)
        logits = linear(pooled, self.store["view_head.w"], self.store["view_head.b"])
        return HeadOutputs(logits=logits, embedding=pooled)


class _BimodalBase(_ModelBase):
    def encode(self, batch):
        p = encode_point_clouds(batch.clouds, batch.tables, self.store, self.cfg)
        v = encode_view_stacks(batch.views, self.store)
        return p, v


class LateFusionModel(_BimodalBase):
    """Concatenation of the point feature and the pooled view feature."""

    kind = "late"

    def __init__(self, model_cfg, n_classes, descriptor_dim, seed=0):
        super().__init__(model_cfg, n_classes, descriptor_dim)
        rng = np.random.default_rng(np.random.SeedSequence([seed, 103]))
        add_point_encoder_params(self.store, rng, model_cfg)
        add_view_encoder_params(self.store, rng, model_cfg, descriptor_dim)
        add_late_head_params(self.store, rng, model_cfg, n_classes)

    def head_outputs(self, p, v, n_views):
        embedding, logits = late_fusion(p, v, self.store, n_views)
        return HeadOutputs(logits=logits, embedding=embedding)


class RelationFusionModel(_BimodalBase):
    """The full relation-scored fusion model.

    ``multiview=False`` drops the multi-view branch (the head then reads only
    the single-view fusion feature); ``top_k`` bounds the nested view sets of
    the multi-view branch.
    """

    kind = "fusion"

    def __init__(self, model_cfg, n_classes, descriptor_dim, seed=0, multiview=True):
        super().__init__(model_cfg, n_classes, descriptor_dim)
        self.multiview = multiview
        rng = np.random.default_rng(np.random.SeedSequence([seed, 104]))
        add_point_encoder_params(self.store, rng, model_cfg)
        add_view_encoder_params(self.store, rng, model_cfg, descriptor_dim)
        add_relation_params(self.store, rng, model_cfg)
        add_sfusion_params(self.store, rng, model_cfg)
        if multiview:
            add_mfusion_params(self.store, rng, model_cfg)
        add_head_params(self.store, rng, model_cfg, n_classes, multiview=multiview)

    def head_outputs(self, p, v, n_views):
        fused = fuse(p, v, self.store, self.cfg, n_views, multiview=self.multiview)
        return HeadOutputs(logits=fused.logits, embedding=fused.embedding, extras=fused)


_MODEL_KINDS = {
    cls.kind: cls
    for cls in (PointOnlyModel, ViewOnlyModel, LateFusionModel, RelationFusionModel)
}


def build_model(kind, model_cfg, n_classes, descriptor_dim, seed=0, multiview=True):
    if kind not in _MODEL_KINDS:
        raise InputError(f"unknown model kind '{kind}'")
    if kind == "fusion":
        return RelationFusionModel(
            model_cfg, n_classes, descriptor_dim, seed=seed, multiview=multiview
        )
    return _MODEL_KINDS[kind](model_cfg, n_classes, descriptor_dim, seed=seed)


def detect_kind(arrays):
    if "rel.fc1.w" in arrays:
        return "fusion"
    if "late.fc1.w" in arrays:
        return "late"
    if "point_head.w" in arrays:
        return "point"
    if "view_head.w" in arrays:
        return "view"
    raise FormatError("checkpoint does not match any known model layout")


def model_from_arrays(arrays, model_cfg, n_classes, descriptor_dim):
    """Rebuild a model from checkpoint arrays, verifying parameter shapes."""
    kind = detect_kind(arrays)
    multiview = "mf.fc1.w" in arrays
    model = build_model(
        kind, model_cfg, n_classes, descriptor_dim, seed=0, multiview=multiview
    )
    expected = set(model.store.paths())
    present = set(arrays)
    if expected - present:
        missing = ", ".join(sorted(expected - present)[:4])
        raise FormatError(f"checkpoint is missing parameter(s): {missing}")
    if present - expected:
        extra = ", ".join(sorted(present - expected)[:4])
        raise FormatError(f"checkpoint has unexpected parameter(s): {extra}")
    model.load_arrays(arrays)
    return model
