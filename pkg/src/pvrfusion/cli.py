"""Command-line entry point.

Subcommands: gen-data, train {point|view|fusion|late}, eval, ablate,
robustness, verify. Every run is a deterministic function of the config file
plus the seed, which can be overridden by ``--seed`` (highest precedence) or
the ``PVRF_SEED`` environment variable. All outputs are written atomically.

Exit codes: 0 success, 1 validation error, 2 runtime error, 3 verification
failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from .config import ExperimentConfig, load_config
from .data import blob_path, load_dataset, make_dataset, manifest_path, save_dataset
from .errors import FormatError, InputError, TrainingError
from .experiments import evaluate_model, run_ablation, run_robustness
from .metrics import retrieval_map
from .models import PreparedDataset, build_model, model_from_arrays
from .serialization import atomic_write_bytes, load_checkpoint, save_checkpoint
from .training import embeddings, pretrain_unimodal, train_fusion
from .verify import render_report, run_checks

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_RUNTIME = 2
EXIT_VERIFY = 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        # argparse defaults to exit code 2; usage problems are validation errors here
        self.print_usage(sys.stderr)
        raise InputError(message)


def _write_json(path, obj):
    payload = (json.dumps(obj, sort_keys=True, indent=2) + "\n").encode("utf-8")
    atomic_write_bytes(path, payload)


def _write_csv(path, header, rows):
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(repr(row[h]) if isinstance(row[h], float) else str(row[h])
                              for h in header))
    atomic_write_bytes(path, ("\n".join(lines) + "\n").encode("utf-8"))


def _resolve_config(args):
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    seed = getattr(args, "seed", None)
    if seed is None and os.environ.get("PVRF_SEED"):
        try:
            seed = int(os.environ["PVRF_SEED"])
        except ValueError as exc:
            raise InputError(f"PVRF_SEED must be an integer: {exc}") from exc
    return cfg, seed


def _load_split(cfg):
    prefix = cfg.paths.dataset
    if not (os.path.exists(manifest_path(prefix)) and os.path.exists(blob_path(prefix))):
        raise InputError(
            f"dataset not found at '{prefix}'; run `pvrf gen-data` first"
        )
    return load_dataset(prefix)


def _ckpt_path(cfg, name):
    return os.path.join(cfg.paths.checkpoints, f"{name}.ckpt")


def _report_path(cfg, name):
    return os.path.join(cfg.paths.reports, name)


def cmd_gen_data(args):
    cfg, seed = _resolve_config(args)
    if seed is not None:
        cfg.data.seed = seed
    prefix = cfg.paths.dataset
    existing = [p for p in (manifest_path(prefix), blob_path(prefix)) if os.path.exists(p)]
    if existing and not args.force:
        raise InputError(
            f"refusing to overwrite existing dataset files {existing}; use --force"
        )
    split = make_dataset(cfg.data)
    save_dataset(split, prefix)
    counts = {}
    for s in split.train:
        counts[s.class_id] = counts.get(s.class_id, 0) + 1
    print(f"wrote {manifest_path(prefix)} and {blob_path(prefix)}")
    print(f"seed: {cfg.data.seed}")
    for class_id, name in enumerate(split.class_names):
        print(f"  class {class_id} ({name}): {counts.get(class_id, 0)} train, "
              f"{sum(1 for s in split.test if s.class_id == class_id)} test")
    return EXIT_OK


def _dry_run(cfg, mode):
    model = build_model(
        "fusion" if mode == "fusion" else mode,
        cfg.model,
        cfg.data.n_classes,
        cfg.data.descriptor_dim,
        seed=cfg.schedule.seed,
    )
    groups = {}
    for path, tensor in model.store.items():
        group = path.split(".")[0]
        groups[group] = groups.get(group, 0) + tensor.data.size
    print(f"dry run: '{mode}' model parameter counts")
    for group in sorted(groups):
        print(f"  {group}: {groups[group]}")
    print(f"  total: {sum(groups.values())}")
    return EXIT_OK


def cmd_train(args):
    cfg, seed = _resolve_config(args)
    if seed is not None:
        cfg.schedule.seed = seed
    mode = args.mode
    if args.dry_run:
        return _dry_run(cfg, mode)
    split = _load_split(cfg)
    n_classes = cfg.data.n_classes
    dv = cfg.data.descriptor_dim

    if mode in ("point", "view"):
        model, history = pretrain_unimodal(
            split.train, mode, cfg.schedule, cfg.model, n_classes, dv
        )
    else:
        for prereq in ("point", "view"):
            path = _ckpt_path(cfg, prereq)
            if not os.path.exists(path):
                raise InputError(
                    f"missing {prereq} checkpoint '{path}'; "
                    f"pretrain {prereq} first (`pvrf train {prereq}`)"
                )
        point_arrays = load_checkpoint(_ckpt_path(cfg, "point"))
        view_arrays = load_checkpoint(_ckpt_path(cfg, "view"))
        model, history = train_fusion(
            split.train, point_arrays, view_arrays, cfg.schedule, cfg.model,
            n_classes, dv, variant="fusion" if mode == "fusion" else "late",
        )

    save_checkpoint(model.arrays(), _ckpt_path(cfg, mode))
    prepared_test = PreparedDataset(split.test, cfg.model.knn_k)
    report = evaluate_model(model, prepared_test, n_classes, config_echo=cfg.to_dict())
    payload = report.to_dict()
    payload["loss_history"] = history
    _write_json(_report_path(cfg, f"{mode}_report.json"), payload)
    print(f"checkpoint: {_ckpt_path(cfg, mode)}")
    print(f"overall accuracy:   {report.overall_acc:.4f}")
    print(f"mean class accuracy: {report.mean_class_acc:.4f}")
    print(f"retrieval mAP:      {report.retrieval_map:.4f}")
    return EXIT_OK


def cmd_eval(args):
    cfg, _ = _resolve_config(args)
    split = _load_split(cfg)
    ckpt = args.checkpoint or _ckpt_path(cfg, "fusion")
    arrays = load_checkpoint(ckpt)
    model = model_from_arrays(
        arrays, cfg.model, cfg.data.n_classes, cfg.data.descriptor_dim
    )
    prepared_test = PreparedDataset(split.test, cfg.model.knn_k)
    report = evaluate_model(
        model, prepared_test, cfg.data.n_classes, config_echo=cfg.to_dict()
    )
    out = _report_path(cfg, "eval_report.json")
    _write_json(out, report.to_dict())
    print(f"report: {out}")
    print(f"overall accuracy:   {report.overall_acc:.4f}")
    print(f"mean class accuracy: {report.mean_class_acc:.4f}")
    print(f"retrieval mAP:      {report.retrieval_map:.4f}")
    return EXIT_OK


def cmd_ablate(args):
    cfg, seed = _resolve_config(args)
    if seed is not None:
        cfg.schedule.seed = seed
    split = _load_split(cfg)
    result = run_ablation(
        split, cfg.schedule, cfg.model, cfg.data.n_classes, cfg.data.descriptor_dim
    )
    out = _report_path(cfg, "ablation.csv")
    _write_csv(out, ("model", "mean_class_acc", "overall_acc"), result.rows)
    print(f"wrote {out}")
    for row in result.rows:
        print(f"  {row['model']:<16} mean-class {row['mean_class_acc']:.4f}  "
              f"overall {row['overall_acc']:.4f}")
    return EXIT_OK


def cmd_robustness(args):
    cfg, _ = _resolve_config(args)
    split = _load_split(cfg)
    models = {}
    for kind in ("fusion", "point", "view"):
        path = _ckpt_path(cfg, kind)
        if not os.path.exists(path):
            raise InputError(
                f"missing {kind} checkpoint '{path}'; "
                f"pretrain {kind} first (`pvrf train {kind}`)"
            )
        models[kind] = model_from_arrays(
            load_checkpoint(path), cfg.model, cfg.data.n_classes, cfg.data.descriptor_dim
        )
    view_rows, point_rows = run_robustness(
        models, split.test, cfg.model.knn_k, cfg.data.n_classes
    )
    views_out = _report_path(cfg, "robustness_views.csv")
    points_out = _report_path(cfg, "robustness_points.csv")
    _write_csv(views_out, ("model", "views", "overall_acc"), view_rows)
    _write_csv(points_out, ("model", "points", "overall_acc"), point_rows)

    prepared_test = PreparedDataset(split.test, cfg.model.knn_k)
    emb = embeddings(models["fusion"], prepared_test)
    _, pr_curve, _ = retrieval_map(emb, prepared_test.labels)
    pr_out = _report_path(cfg, "pr_curve.csv")
    _write_csv(
        pr_out,
        ("recall", "precision"),
        [{"recall": float(r), "precision": float(p)} for r, p in pr_curve],
    )
    print(f"wrote {views_out}, {points_out}, {pr_out}")
    return EXIT_OK


def cmd_verify(args):
    results = run_checks()
    print(render_report(results))
    return EXIT_OK if all(r.passed for r in results) else EXIT_VERIFY


def build_parser():
    parser = _Parser(prog="pvrf", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, seed=True):
        p.add_argument("--config", help="path to a JSON experiment config")
        if seed:
            p.add_argument("--seed", type=int, help="override the relevant config seed")

    p = sub.add_parser("gen-data", help="generate and persist the synthetic dataset")
    common(p)
    p.add_argument("--force", action="store_true", help="overwrite existing files")
    p.set_defaults(fn=cmd_gen_data)

    p = sub.add_parser("train", help="train one model")
    p.add_argument("mode", choices=("point", "view", "fusion", "late"))
    common(p)
    p.add_argument("--dry-run", action="store_true",
                   help="validate the config and print parameter counts")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on the test split")
    common(p, seed=False)
    p.add_argument("--checkpoint", help="checkpoint path (default: the fusion checkpoint)")
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("ablate", help="run the seven-row component study")
    common(p)
    p.set_defaults(fn=cmd_ablate)

    p = sub.add_parser("robustness", help="missing-view and missing-point sweeps")
    common(p, seed=False)
    p.set_defaults(fn=cmd_robustness)

    p = sub.add_parser("verify", help="run the property/oracle check suite")
    p.set_defaults(fn=cmd_verify)
    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.fn(args)
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (FormatError, TrainingError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
