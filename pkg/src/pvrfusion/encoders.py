"""Point-cloud and per-view feature extractors.

The point branch stacks two graph edge layers over a static k-NN graph built
once from the input coordinates, then max-pools over points into a single
global feature. Duplicate coordinates are collapsed before the graph is
built: the neighbor structure, the per-point features, and the global
max-pool are all functions of the coordinate *set*, which makes the encoder
exactly invariant to row permutation and row multiplicity.

The view branch applies one weight-shared two-layer perceptron to every view
descriptor independently; no pooling happens across views here.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import RowGather, Tensor, _node, linear, relu, reshape, segment_max
from .errors import InputError
from .params import he_uniform, xavier_uniform


def knn_graph(points, k):
    """Indices of the k nearest neighbors per point, self excluded.

    Distance ties break toward the lower point index. Large inputs take a
    partition-then-refine path; rows whose tie group straddles the candidate
    boundary (so the partition cannot guarantee the lowest-index winner) fall
    back to a full stable sort.
    """
    pts = np.asarray(points, dtype=np.float64)
    n = pts.shape[0]
    if not 1 <= k < n:
        raise InputError(f"knn_graph needs 1 <= k < n_points, got k={k}, n={n}")
    diff = pts[:, None, :] - pts[None, :, :]
    d2 = np.einsum("ijk,ijk->ij", diff, diff)
    np.fill_diagonal(d2, np.inf)

    width = 2 * k + 1
    if n <= max(64, width + 1):
        order = np.argsort(d2, axis=1, kind="stable")
        return order[:, :k]

    cand = np.argpartition(d2, width - 1, axis=1)[:, :width]
    cand.sort(axis=1)  # ascending index so a stable value sort breaks ties right
    cand_vals = np.take_along_axis(d2, cand, axis=1)
    by_val = np.argsort(cand_vals, axis=1, kind="stable")
    top = np.take_along_axis(cand, by_val[:, :k], axis=1)

    sorted_vals = np.take_along_axis(cand_vals, by_val, axis=1)
    ambiguous = sorted_vals[:, -1] <= sorted_vals[:, k - 1]
    if ambiguous.any():
        rows = np.flatnonzero(ambiguous)
        order = np.argsort(d2[rows], axis=1, kind="stable")
        top[rows] = order[:, :k]
    return top


class NeighborTable:
    """A (n, k) neighbor index table plus a cached gather/scatter plan."""

    __slots__ = ("indices", "gather")

    def __init__(self, indices):
        self.indices = np.ascontiguousarray(indices, dtype=np.intp)
        self.gather = RowGather(self.indices.ravel())

    @property
    def n_points(self):
        return self.indices.shape[0]

    @property
    def k(self):
        return self.indices.shape[1]


def dedupe_cloud(points):
    """Unique coordinate rows in lexicographic order."""
    return np.unique(np.asarray(points, dtype=np.float64), axis=0)


def point_neighbor_table(points, k):
    """Deduplicate a cloud and build its neighbor table.

    Returns (unique_points, table). Errors out when fewer than k+1 distinct
    coordinates remain.
    """
    uniq = dedupe_cloud(points)
    if uniq.shape[0] <= k:
        raise InputError(
            f"point cloud has only {uniq.shape[0]} distinct points; "
            f"need more than k={k}"
        )
    return uniq, NeighborTable(knn_graph(uniq, k))


@dataclass
class EdgeLayer:
    """Per-edge MLP weights: first layer split over (center, neighbor-center)."""

    w_center: Tensor
    w_diff: Tensor
    b_in: Tensor
    w_out: Tensor
    b_out: Tensor


def add_edge_layer_params(store, rng, prefix, d_in, hidden, d_out):
    # the conceptual first layer acts on concat(center, diff), fan-in 2 d_in
    store.add(f"{prefix}.w_center", he_uniform(rng, (d_in, hidden), 2 * d_in))
    store.add(f"{prefix}.w_diff", he_uniform(rng, (d_in, hidden), 2 * d_in))
    store.add(f"{prefix}.b_in", np.zeros(hidden))
    store.add(f"{prefix}.w_out", xavier_uniform(rng, (hidden, d_out), hidden, d_out))
    store.add(f"{prefix}.b_out", np.zeros(d_out))


def edge_layer(store, prefix):
    return EdgeLayer(
        w_center=store[f"{prefix}.w_center"],
        w_diff=store[f"{prefix}.w_diff"],
        b_in=store[f"{prefix}.b_in"],
        w_out=store[f"{prefix}.w_out"],
        b_out=store[f"{prefix}.b_out"],
    )


def edge_conv(x, table, layer):
    """One graph edge layer: per-edge MLP on (center, neighbor - center), then
    max over each point's k edges.

    Runs as a single tape node with a hand-derived backward rule; this is the
    innermost training loop and generic op composition would materialize
    several extra edge-count-sized temporaries per call. The first linear
    layer is evaluated in factored per-point form,

        W1 @ concat(x_i, x_j - x_i) + b == (A x_i + b - B x_i) + B x_j,

    so only the hidden activations ever live at edge granularity. Gradient
    correctness is pinned by the finite-difference suite; ties in the
    neighbor max route to the lowest edge index, matching ``max_over_axis``.
    """
    n, k = table.indices.shape
    wc, wd, b_in, wo, b_out = (
        layer.w_center, layer.w_diff, layer.b_in, layer.w_out, layer.b_out,
    )
    ca = x.data @ wc.data
    ca += b_in.data
    xb = x.data @ wd.data
    base = ca
    base -= xb  # ca is dead; reuse its buffer for (A x + b - B x)
    hidden = xb[table.indices]  # (n, k, h)
    hidden += base[:, None, :]
    np.maximum(hidden, 0.0, out=hidden)
    flat_hidden = hidden.reshape(n * k, -1)
    edge_out = (flat_hidden @ wo.data).reshape(n, k, -1)
    # the shared bias commutes with the neighbor max; adding it afterwards
    # skips one pass over the edge-sized array
    peak = edge_out.max(axis=1)
    out = peak + b_out.data

    def backward_fn(g):
        # Route g through the neighbor max one k-slice at a time: `taken`
        # implements lowest-index tie-breaking, and nothing edge-sized times
        # the output width is ever materialized.
        d_out = out.shape[1]
        if b_out.requires_grad:
            b_out._accumulate(g.sum(axis=0), own=True)
        g_wo = np.zeros((hidden.shape[2], d_out)) if wo.requires_grad else None
        g_hidden = np.empty_like(hidden)  # (n, k, h)
        taken = np.zeros((n, d_out), dtype=bool)
        hit = np.empty_like(taken)
        for j in range(k):
            np.equal(edge_out[:, j, :], peak, out=hit)
            hit &= ~taken
            taken |= hit
            g_j = np.where(hit, g, 0.0)
            if g_wo is not None:
                g_wo += hidden[:, j, :].T @ g_j
            g_hidden[:, j, :] = g_j @ wo.data.T
        if g_wo is not None:
            wo._accumulate(g_wo, own=True)
        flat_g_hidden = g_hidden.reshape(n * k, -1)
        flat_g_hidden *= flat_hidden > 0  # relu gate (post-relu > 0 iff pre > 0)
        g_base = g_hidden.sum(axis=1)
        g_xb = np.zeros_like(xb)
        table.gather.scatter_add(flat_g_hidden, g_xb)
        g_xb -= g_base  # base carries -xb
        if b_in.requires_grad:
            b_in._accumulate(g_base.sum(axis=0), own=True)
        if wc.requires_grad:
            wc._accumulate(x.data.T @ g_base, own=True)
        if wd.requires_grad:
            wd._accumulate(x.data.T @ g_xb, own=True)
        if x.requires_grad:
            gx = g_base @ wc.data.T
            gx += g_xb @ wd.data.T
            x._accumulate(gx, own=True)

    return _node(out, (x, wc, wd, b_in, wo, b_out), backward_fn)


def add_point_encoder_params(store, rng, cfg):
    add_edge_layer_params(store, rng, "pc.conv1", 3, cfg.edge_hidden1, cfg.point_mid)
    add_edge_layer_params(
        store, rng, "pc.conv2", cfg.point_mid, cfg.edge_hidden2, cfg.point_feat
    )


def encode_point_clouds(clouds, tables, store, cfg):
    """Global point features for a batch of deduplicated clouds, shape (B, Dp).

    ``clouds`` are the unique-coordinate arrays and ``tables`` their neighbor
    tables, as produced by ``point_neighbor_table``. Clouds are concatenated
    into one block so both edge layers run as single matrix operations.
    """
    sizes = [c.shape[0] for c in clouds]
    offsets = np.concatenate([[0], np.cumsum(sizes)]).astype(np.intp)
    if len(clouds) == 1:
        coords = np.asarray(clouds[0], dtype=np.float64)
        table = tables[0]
    else:
        coords = np.concatenate(clouds, axis=0)
        table = NeighborTable(
            np.concatenate(
                [t.indices + off for t, off in zip(tables, offsets[:-1])], axis=0
            )
        )
    x = Tensor(coords)
    f1 = edge_conv(x, table, edge_layer(store, "pc.conv1"))
    f2 = edge_conv(f1, table, edge_layer(store, "pc.conv2"))
    return segment_max(f2, offsets)


def point_encode(points, store, cfg):
    """Global feature of a single cloud, shape (Dp,)."""
    uniq, table = point_neighbor_table(points, cfg.knn_k)
    p = encode_point_clouds([uniq], [table], store, cfg)
    return reshape(p, (cfg.point_feat,))


def add_view_encoder_params(store, rng, cfg, descriptor_dim):
    store.add(
        "view.fc1.w", he_uniform(rng, (descriptor_dim, cfg.view_hidden), descriptor_dim)
    )
    store.add("view.fc1.b", np.zeros(cfg.view_hidden))
    store.add(
        "view.fc2.w",
        xavier_uniform(rng, (cfg.view_hidden, cfg.view_feat), cfg.view_hidden, cfg.view_feat),
    )
    store.add("view.fc2.b", np.zeros(cfg.view_feat))


def encode_view_stacks(descriptors, store):
    """Per-view features for stacked descriptors.

    Accepts (V, Dv) or (B, V, Dv) arrays and returns a (rows, Dh) tensor with
    rows laid out sample-major. Weight sharing means identical descriptor
    rows map to identical feature rows.
    """
    desc = np.asarray(descriptors, dtype=np.float64)
    if desc.ndim == 3:
        flat = desc.reshape(-1, desc.shape[2])
    elif desc.ndim == 2:
        flat = desc
    else:
        raise InputError(f"expected (V, Dv) or (B, V, Dv) descriptors, got {desc.shape}")
    expected = store["view.fc1.w"].shape[0]
    if flat.shape[1] != expected:
        raise InputError(
            f"descriptor width {flat.shape[1]} does not match encoder input {expected}"
        )
    h = relu(linear(Tensor(flat), store["view.fc1.w"], store["view.fc1.b"]))
    return linear(h, store["view.fc2.w"], store["view.fc2.b"])


def view_encode(descriptors, store):
    """Per-view features of a single (V, Dv) stack, shape (V, Dh)."""
    return encode_view_stacks(descriptors, store)
