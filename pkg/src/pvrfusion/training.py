"""Training loops: unimodal pretraining and two-phase fusion training.

Fusion-style models train in two phases. While the epoch index is below
``freeze_epochs`` the encoder parameters are excluded from optimizer steps;
since they cannot change, their outputs are computed once per phase and
cached, so frozen epochs cost only the head. Afterwards every parameter
updates jointly. All loops are deterministic functions of the schedule seed.
"""

from __future__ import annotations

import ctypes

import numpy as np

from .autodiff import Tensor, backward, no_grad, softmax_cross_entropy
from .errors import TrainingError
from .models import PreparedDataset
from .params import optimizer_step

_allocator_configured = False


def configure_allocator():
    """Keep large heap blocks resident so per-step temporaries are reused.

    glibc hands every allocation above its mmap threshold straight back to
    the kernel on free, which makes each training step re-fault tens of MB of
    pages. Raising the threshold (and the trim threshold) is a process-wide
    tweak worth several-fold on this workload; silently a no-op off glibc.
    """
    global _allocator_configured
    if _allocator_configured:
        return
    _allocator_configured = True
    try:
        libc = ctypes.CDLL("libc.so.6")
        libc.mallopt(-3, 1 << 30)  # M_MMAP_THRESHOLD
        libc.mallopt(-1, 1 << 30)  # M_TRIM_THRESHOLD
    except (OSError, AttributeError):
        pass


def _epoch_batches(n, batch_size, rng):
    perm = rng.permutation(n)
    return [perm[i : i + batch_size] for i in range(0, n, batch_size)]


def _check_finite(loss_value, kind, epoch, step):
    if not np.isfinite(loss_value):
        raise TrainingError(
            f"non-finite loss {loss_value!r} while training '{kind}' "
            f"(epoch {epoch}, step {step}); try a smaller learning rate"
        )


def _encode_all(model, prepared, batch_size=64):
    """Frozen-encoder feature cache over a whole dataset (no tape)."""
    p_rows, v_rows = [], []
    with no_grad():
        for i in range(0, len(prepared), batch_size):
            batch = prepared.batch(np.arange(i, min(i + batch_size, len(prepared))))
            p, v = model.encode(batch)
            if p is not None:
                p_rows.append(p.data)
            if v is not None:
                v_rows.append(v.data)
    p_all = np.concatenate(p_rows) if p_rows else None
    v_all = np.concatenate(v_rows) if v_rows else None
    return p_all, v_all


def train_model(model, prepared, schedule, two_phase=False):
    """Optimize a model in place; returns the per-epoch mean loss history."""
    configure_allocator()
    rng = np.random.default_rng(np.random.SeedSequence([schedule.seed, 0x7A]))
    n = len(prepared)
    history = []
    n_views = prepared.views.shape[1]
    cached = None
    for epoch in range(schedule.total_epochs):
        frozen_phase = two_phase and epoch < schedule.freeze_epochs
        if frozen_phase and cached is None:
            cached = _encode_all(model, prepared)
        if not frozen_phase:
            cached = None
        losses = []
        for step, idxs in enumerate(_epoch_batches(n, schedule.batch_size, rng)):
            if frozen_phase:
                p_all, v_all = cached
                p = Tensor(p_all[idxs]) if p_all is not None else None
                view_rows = (idxs[:, None] * n_views + np.arange(n_views)).ravel()
                v = Tensor(v_all[view_rows]) if v_all is not None else None
                out = model.head_outputs(p, v, n_views)
                labels = prepared.labels[idxs]
            else:
                batch = prepared.batch(idxs)
                out = model.forward(batch)
                labels = batch.labels
            loss = softmax_cross_entropy(out.logits, labels)
            loss_value = loss.item()
            _check_finite(loss_value, model.kind, epoch, step)
            backward(loss)
            optimizer_step(
                model.store,
                schedule.lr,
                mode=schedule.optimizer,
                frozen=model.encoder_prefixes if frozen_phase else (),
            )
            losses.append(loss_value)
        history.append(float(np.mean(losses)))
    return history


def pretrain_unimodal(dataset_train, branch, schedule, model_cfg, n_classes,
                      descriptor_dim, prepared=None):
    """Train one modality's encoder with a linear classifier on top.

    Returns (model, history). ``freeze_epochs`` plays no role here; there is
    no fusion stage to warm up.
    """
    from .models import build_model

    if branch not in ("point", "view"):
        raise TrainingError(f"unimodal branch must be 'point' or 'view', got '{branch}'")
    model = build_model(branch, model_cfg, n_classes, descriptor_dim, seed=schedule.seed)
    if prepared is None:
        prepared = PreparedDataset(dataset_train, model_cfg.knn_k)
    history = train_model(model, prepared, schedule, two_phase=False)
    return model, history


def train_fusion(dataset_train, point_arrays, view_arrays, schedule, model_cfg,
                 n_classes, descriptor_dim, variant="fusion", prepared=None,
                 multiview=True):
    """Two-phase training of a fusion-style model from unimodal checkpoints.

    ``variant`` is "fusion" (relation fusion; ``multiview`` selects whether
    the multi-view branch exists) or "late". Phase 1 freezes both encoders
    and fits only the fusion parameters; phase 2 updates everything.
    """
    from .models import build_model

    if variant not in ("fusion", "late"):
        raise TrainingError(f"fusion variant must be 'fusion' or 'late', got '{variant}'")
    model = build_model(
        variant, model_cfg, n_classes, descriptor_dim,
        seed=schedule.seed, multiview=multiview,
    )
    model.load_arrays(point_arrays, prefixes=("pc.",))
    model.load_arrays(view_arrays, prefixes=("view.",))
    if prepared is None:
        prepared = PreparedDataset(dataset_train, model_cfg.knn_k)
    history = train_model(model, prepared, schedule, two_phase=True)
    return model, history


def predict(model, prepared, batch_size=64):
    """Class predictions over a prepared dataset (argmax of the logits)."""
    preds = []
    with no_grad():
        for i in range(0, len(prepared), batch_size):
            batch = prepared.batch(np.arange(i, min(i + batch_size, len(prepared))))
            out = model.forward(batch)
            preds.append(np.argmax(out.logits.data, axis=1))
    return np.concatenate(preds)


def embeddings(model, prepared, batch_size=64):
    """Penultimate-layer embeddings over a prepared dataset."""
    rows = []
    with no_grad():
        for i in range(0, len(prepared), batch_size):
            batch = prepared.batch(np.arange(i, min(i + batch_size, len(prepared))))
            out = model.forward(batch)
            rows.append(out.embedding.data.copy())
    return np.concatenate(rows)
