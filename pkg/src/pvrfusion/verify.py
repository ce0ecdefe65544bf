"""Self-contained correctness checks runnable from the command line.

Each check reports a measured value against a bound so failures are
quantitative. ``run_checks(broken_op=...)`` can swap in a deliberately
sign-flipped backward rule; the test suite uses this to prove the gradient
checker detects broken gradients and names the offending operation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor, _node, backward
from .config import ModelConfig
from .encoders import (
    EdgeLayer,
    add_edge_layer_params,
    add_point_encoder_params,
    edge_conv,
    knn_graph,
    point_encode,
    point_neighbor_table,
)
from .fusion import enhance_views, select_top_k
from .gradcheck import grad_check
from .metrics import _cosine_distances, retrieval_map
from .models import Batch, RelationFusionModel
from .params import ParameterStore, optimizer_step
from .serialization import dump_checkpoint_bytes, parse_checkpoint_bytes

GRAD_TOL = 1e-5


@dataclass
class CheckResult:
    name: str
    passed: bool
    measured: float
    bound: str

    def line(self):
        status = "PASS" if self.passed else "FAIL"
        return f"{status}  {self.name:<40} measured={self.measured:.3e}  bound={self.bound}"


def _spread_values(rng, shape, gap=0.05):
    """Random values with pairwise gaps, keeping argmax/relu checks off the kinks."""
    n = int(np.prod(shape))
    vals = (rng.permutation(n * 3)[:n] - n + 0.5) * gap
    return vals.reshape(shape)


def _broken_matmul(a, b):
    out = a.data @ b.data

    def backward_fn(g):
        if a.requires_grad:
            a._accumulate(-(g @ b.data.T))  # deliberate sign flip
        if b.requires_grad:
            b._accumulate(-(a.data.T @ g))

    return _node(out, (a, b), backward_fn)


def _op_grad_checks(broken_op, seeds=range(5)):
    results = []

    def run(name, fn, inputs_fn):
        worst = 0.0
        for s in seeds:
            rng = np.random.default_rng(np.random.SeedSequence([77, s]))
            worst = max(worst, grad_check(fn, inputs_fn(rng)))
        results.append(
            CheckResult(f"grad: {name}", worst < GRAD_TOL, worst, f"< {GRAD_TOL}")
        )

    mat = _broken_matmul if broken_op == "matmul" else ad.matmul
    run("matmul", lambda a, b: ad.sum_all(mat(a, b)),
        lambda rng: [rng.normal(size=(3, 4)), rng.normal(size=(4, 2))])
    run("add/sub/mul", lambda a, b: ad.sum_all(ad.mul(ad.add(a, b), ad.sub(a, b))),
        lambda rng: [rng.normal(size=(3, 3)), rng.normal(size=(3, 3))])
    run("relu", lambda x: ad.sum_all(ad.relu(x)),
        lambda rng: [_spread_values(rng, (4, 3))])
    run("sigmoid", lambda x: ad.sum_all(ad.sigmoid(x)),
        lambda rng: [rng.normal(size=(4, 3))])
    run("max_over_axis", lambda x: ad.sum_all(ad.max_over_axis(x, 1)),
        lambda rng: [_spread_values(rng, (3, 5))])
    run("mean_over_axis", lambda x: ad.sum_all(ad.mean_over_axis(x, 0)),
        lambda rng: [rng.normal(size=(4, 3))])
    run("concat", lambda a, b: ad.sum_all(ad.mul(c := ad.concat([a, b], 1), c)),
        lambda rng: [rng.normal(size=(3, 2)), rng.normal(size=(3, 4))])
    run("linear", lambda x, w, b: ad.sum_all(ad.linear(x, w, b)),
        lambda rng: [rng.normal(size=(5, 3)), rng.normal(size=(3, 4)),
                     rng.normal(size=4)])
    run("take_rows", lambda x: ad.sum_all(
            ad.mul(t := ad.take_rows(x, np.array([2, 0, 1, 2])), t)),
        lambda rng: [rng.normal(size=(4, 3))])
    run("repeat_rows", lambda x: ad.sum_all(ad.mul(t := ad.repeat_rows(x, 3), t)),
        lambda rng: [rng.normal(size=(4, 3))])
    run("mul_colvec", lambda x, s: ad.sum_all(ad.mul_colvec(x, s)),
        lambda rng: [rng.normal(size=(4, 3)), rng.normal(size=(4, 1))])
    run("segment_max", lambda x: ad.sum_all(ad.segment_max(x, np.array([0, 2, 5]))),
        lambda rng: [_spread_values(rng, (5, 3))])
    run("reshape/scale", lambda x: ad.sum_all(ad.scale(ad.reshape(x, (6,)), 2.5)),
        lambda rng: [rng.normal(size=(2, 3))])
    run("softmax_cross_entropy",
        lambda x: ad.softmax_cross_entropy(x, np.array([0, 2, 1])),
        lambda rng: [rng.normal(size=(3, 4))])
    return results


def _tiny_cfg():
    return ModelConfig(
        point_feat=8, point_mid=6, edge_hidden1=4, edge_hidden2=4,
        view_feat=8, view_hidden=10, relation_hidden=6,
        fuse_feat=8, fusion_hidden=10, embed_dim=6, knn_k=3, top_k=3,
    )


def _composite_grad_checks():
    results = []
    cfg = _tiny_cfg()
    rng = np.random.default_rng(5150)

    pts = rng.normal(size=(7, 3))
    _, table = point_neighbor_table(pts, 3)
    seed_store = ParameterStore()
    add_edge_layer_params(seed_store, rng, "probe", 3, 4, 5)
    layer_paths = seed_store.paths()

    def edge_fn(wc, wd, bi, wo, bo):
        layer = EdgeLayer(w_center=wc, w_diff=wd, b_in=bi, w_out=wo, b_out=bo)
        feat = edge_conv(Tensor(pts), table, layer)
        return ad.sum_all(ad.mul(feat, feat))

    worst = grad_check(edge_fn, [seed_store[p].data for p in layer_paths])
    results.append(CheckResult("grad: edge_conv", worst < GRAD_TOL, worst, f"< {GRAD_TOL}"))

    # full fusion pipeline wrt every parameter, tiny dims
    model = RelationFusionModel(cfg, n_classes=3, descriptor_dim=6, seed=3)
    clouds = rng.normal(size=(2, 16, 3))
    views = rng.normal(size=(2, 4, 6))
    labels = np.array([0, 2])
    paths = model.store.paths()
    prepared = [point_neighbor_table(c, cfg.knn_k) for c in clouds]
    batch = Batch(
        clouds=[u for u, _ in prepared],
        tables=[t for _, t in prepared],
        views=views,
        labels=labels,
    )

    def fused_fn(*weights):
        for path, w in zip(paths, weights):
            model.store.replace(path, w)
        out = model.forward(batch)
        return ad.softmax_cross_entropy(out.logits, labels)

    # h=1e-4: at 1e-5 the difference quotient's rounding noise (~1e-11)
    # dominates coordinates whose true gradient is ~1e-7
    worst = grad_check(fused_fn, [model.store[p].data.copy() for p in paths], h=1e-4)
    results.append(
        CheckResult("grad: full fusion pipeline", worst < GRAD_TOL, worst, f"< {GRAD_TOL}")
    )
    return results


def _invariant_checks():
    results = []
    rng = np.random.default_rng(99)
    cfg = _tiny_cfg()

    # sigmoid stays strictly inside (0, 1) even at float saturation
    s = ad.sigmoid(Tensor(np.array([-1e6, -50.0, 0.0, 50.0, 1e6]))).data
    ok = bool(np.all(s > 0.0) and np.all(s < 1.0))
    results.append(CheckResult("sigmoid open interval", ok, float(s.min()), "in (0,1)"))

    # residual enhancement: norm ratio == 1 + score
    worst = 0.0
    for _ in range(200):
        v = Tensor(rng.normal(size=(5, 4)))
        sc = Tensor(rng.uniform(0.01, 0.99, size=(5, 1)))
        ratio = np.linalg.norm(enhance_views(v, sc).data, axis=1)
        ratio /= np.linalg.norm(v.data, axis=1)
        worst = max(worst, float(np.abs(ratio - (1.0 + sc.data[:, 0])).max()))
    results.append(CheckResult("enhancement norm ratio", worst < 1e-12, worst, "< 1e-12"))

    # top-k against a full sort oracle
    mismatches = 0
    for _ in range(500):
        scores = rng.uniform(size=6)
        for k in range(1, 7):
            oracle = sorted(range(6), key=lambda i: (-scores[i], i))[:k]
            if list(select_top_k(scores, k)) != oracle:
                mismatches += 1
    results.append(CheckResult("top-k sort oracle", mismatches == 0, mismatches, "== 0"))

    # max backward routes all mass to exactly one element per slice
    x = Tensor(_spread_values(rng, (4, 5)), requires_grad=True)
    backward(ad.sum_all(ad.max_over_axis(x, 1)))
    per_row = (x.grad != 0).sum(axis=1)
    ok = bool(np.all(per_row == 1))
    results.append(CheckResult("max backward single-routing", ok, float(per_row.max()), "== 1"))

    # knn against a brute-force oracle
    bad = 0
    for _ in range(20):
        pts = rng.normal(size=(24, 3))
        table = knn_graph(pts, 4)
        for i in range(24):
            dists = np.linalg.norm(pts - pts[i], axis=1)
            oracle = sorted((d, j) for j, d in enumerate(dists) if j != i)[:4]
            if list(table[i]) != [j for _, j in oracle]:
                bad += 1
    results.append(CheckResult("knn brute-force oracle", bad == 0, bad, "== 0"))

    # point encoder permutation invariance (bitwise)
    store = ParameterStore()
    add_point_encoder_params(store, np.random.default_rng(3), cfg)
    pts = rng.normal(size=(20, 3))
    base = point_encode(pts, store, cfg).data
    worst = 0.0
    for _ in range(10):
        perm = rng.permutation(20)
        shuffled = point_encode(pts[perm], store, cfg).data
        worst = max(worst, float(np.abs(shuffled - base).max()))
    results.append(CheckResult("point permutation invariance", worst == 0.0, worst, "== 0"))

    # retrieval against a brute-force reference
    worst = 0.0
    for _ in range(10):
        emb = rng.normal(size=(12, 5))
        labels = rng.integers(0, 3, size=12)
        if len(np.unique(labels)) < 2:
            continue
        mean_ap, _, _ = retrieval_map(emb, labels)
        dist = _cosine_distances(emb)
        aps = []
        for q in range(12):
            ranked = sorted((dist[q, j], j) for j in range(12) if j != q)
            rel = [labels[j] == labels[q] for _, j in ranked]
            if not any(rel):
                continue
            precs, hits = [], 0
            for rank, r in enumerate(rel, start=1):
                if r:
                    hits += 1
                    precs.append(hits / rank)
            aps.append(np.mean(precs))
        worst = max(worst, abs(mean_ap - float(np.mean(aps))))
    results.append(CheckResult("retrieval brute-force oracle", worst < 1e-12, worst, "< 1e-12"))

    # optimizer freeze contract
    store = ParameterStore()
    w = store.add("enc.w", np.ones(3))
    h = store.add("head.w", np.ones(3))
    w._accumulate(np.full(3, 0.5))
    h._accumulate(np.full(3, 0.5))
    before = w.data.copy()
    optimizer_step(store, 0.1, mode="adam", frozen=("enc.",))
    frozen_ok = bool(np.array_equal(before, w.data) and not np.array_equal(before, h.data))
    results.append(CheckResult("optimizer freeze contract", frozen_ok, float(frozen_ok), "frozen"))

    # checkpoint round trip
    arrays = {"a.w": rng.normal(size=(3, 2)), "b": rng.normal(size=4)}
    restored = parse_checkpoint_bytes(dump_checkpoint_bytes(arrays))
    ok = all(np.array_equal(arrays[k], restored[k]) for k in arrays)
    results.append(CheckResult("checkpoint round trip", ok, float(ok), "exact"))
    return results


def run_checks(broken_op=None):
    results = []
    results.extend(_op_grad_checks(broken_op))
    results.extend(_composite_grad_checks())
    results.extend(_invariant_checks())
    return results


def render_report(results):
    lines = [r.line() for r in results]
    n_fail = sum(not r.passed for r in results)
    lines.append(f"{len(results) - n_fail}/{len(results)} checks passed")
    return "\n".join(lines)
