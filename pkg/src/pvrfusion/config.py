"""Experiment configuration: dataclasses, JSON round-trip, validation.

Unknown keys in a config file are rejected outright (typo protection), and
``validate`` cross-checks every dimension before any run starts.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field

from .errors import FormatError, InputError
from .shapes import CLASS_NAMES, MIN_POINTS


@dataclass
class DataConfig:
    n_classes: int = 8
    train_per_class: int = 100
    test_per_class: int = 25
    n_points: int = 1024
    n_views: int = 12
    resolution: int = 8
    elevation_deg: float = 20.0
    jitter_sigma: float = 0.01
    scale_jitter: float = 0.3
    seed: int = 12345

    @property
    def descriptor_dim(self):
        return 3 * self.resolution * self.resolution

    def to_dict(self):
        return dataclasses.asdict(self)


@dataclass
class ModelConfig:
    point_feat: int = 64  # global point feature width
    point_mid: int = 32  # per-point width after the first edge layer
    edge_hidden1: int = 8
    edge_hidden2: int = 8
    view_feat: int = 64  # per-view feature width
    view_hidden: int = 128
    relation_hidden: int = 64
    fuse_feat: int = 128  # width of each fusion branch
    fusion_hidden: int = 128
    embed_dim: int = 64  # penultimate (retrieval) embedding width
    knn_k: int = 8
    top_k: int = 4


@dataclass
class ScheduleConfig:
    total_epochs: int = 40
    freeze_epochs: int = 10
    batch_size: int = 16
    lr: float = 1e-3
    optimizer: str = "adam"
    seed: int = 7


@dataclass
class PathsConfig:
    dataset: str = "runs/dataset/synth"
    checkpoints: str = "runs/checkpoints"
    reports: str = "runs/reports"


@dataclass
class ExperimentConfig:
    data: DataConfig = field(default_factory=DataConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    schedule: ScheduleConfig = field(default_factory=ScheduleConfig)
    paths: PathsConfig = field(default_factory=PathsConfig)

    def to_dict(self):
        return dataclasses.asdict(self)


_SECTIONS = {
    "data": DataConfig,
    "model": ModelConfig,
    "schedule": ScheduleConfig,
    "paths": PathsConfig,
}


def _build_section(cls, raw, where):
    known = {f.name: f.type for f in dataclasses.fields(cls)}
    unknown = set(raw) - set(known)
    if unknown:
        raise InputError(
            f"unknown config key(s) in '{where}': {', '.join(sorted(unknown))}"
        )
    return cls(**raw)


def config_from_dict(raw):
    if not isinstance(raw, dict):
        raise InputError("config root must be a JSON object")
    unknown = set(raw) - set(_SECTIONS)
    if unknown:
        raise InputError(f"unknown config section(s): {', '.join(sorted(unknown))}")
    sections = {}
    for name, cls in _SECTIONS.items():
        part = raw.get(name, {})
        if not isinstance(part, dict):
            raise InputError(f"config section '{name}' must be an object")
        sections[name] = _build_section(cls, part, name)
    cfg = ExperimentConfig(**sections)
    validate(cfg)
    return cfg


def load_config(path):
    try:
        with open(path, "r", encoding="utf-8") as fh:
            raw = json.load(fh)
    except OSError as exc:
        raise InputError(f"cannot read config '{path}': {exc}") from exc
    except json.JSONDecodeError as exc:
        raise FormatError(f"malformed config JSON '{path}': {exc}") from exc
    return config_from_dict(raw)


def save_config(cfg, path):
    from .serialization import atomic_write_bytes

    payload = (json.dumps(cfg.to_dict(), sort_keys=True, indent=2) + "\n").encode()
    atomic_write_bytes(path, payload)


def validate(cfg):
    """Cross-check every dimension and bound; raise InputError on the first problem."""
    d, m, s = cfg.data, cfg.model, cfg.schedule
    problems = []
    if not 2 <= d.n_classes <= len(CLASS_NAMES):
        problems.append(f"data.n_classes must be in [2, {len(CLASS_NAMES)}]")
    if d.train_per_class < 2 or d.test_per_class < 2:
        problems.append("per-class sample counts must be >= 2")
    if d.n_points < MIN_POINTS:
        problems.append(f"data.n_points must be >= {MIN_POINTS}")
    if d.n_views < 1:
        problems.append("data.n_views must be >= 1")
    if d.resolution < 4:
        problems.append("data.resolution must be >= 4")
    if d.jitter_sigma < 0 or d.scale_jitter < 0:
        problems.append("jitter parameters must be non-negative")
    if not 0.0 <= d.scale_jitter < 1.0:
        problems.append("data.scale_jitter must be in [0, 1)")

    for name in (
        "point_feat",
        "point_mid",
        "edge_hidden1",
        "edge_hidden2",
        "view_feat",
        "view_hidden",
        "relation_hidden",
        "fuse_feat",
        "fusion_hidden",
        "embed_dim",
    ):
        if getattr(m, name) < 1:
            problems.append(f"model.{name} must be positive")
    if not 1 <= m.knn_k < d.n_points:
        problems.append("model.knn_k must satisfy 1 <= knn_k < data.n_points")
    if not 2 <= m.top_k <= d.n_views:
        problems.append("model.top_k must satisfy 2 <= top_k <= data.n_views")

    if s.total_epochs < 1:
        problems.append("schedule.total_epochs must be >= 1")
    if not 0 <= s.freeze_epochs <= s.total_epochs:
        problems.append("schedule.freeze_epochs must be in [0, total_epochs]")
    if s.batch_size < 1:
        problems.append("schedule.batch_size must be >= 1")
    if not s.lr > 0:
        problems.append("schedule.lr must be positive")
    if s.optimizer not in ("sgd", "adam"):
        problems.append("schedule.optimizer must be 'sgd' or 'adam'")

    if problems:
        raise InputError("invalid config: " + "; ".join(problems))
    return cfg
