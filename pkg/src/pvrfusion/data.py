"""Dataset assembly, persistence, and test-time subsampling.

A dataset is a pure function of its config: every sample's generator seed is
derived from the global seed, the split, the class, and the index within the
class, so regeneration is bit-identical and the train/test streams are
disjoint.

On disk a dataset is a pair of files:

    <prefix>.manifest.json   sorted-keys JSON echo of the config and class names
    <prefix>.bin             b"PVRD" | version u32 | record_count u32 |
                             tensor records (see serialization.py) | crc32 u32

The CRC covers every byte before it. Loading verifies magic, version, record
count, and checksum, and reports truncation as a format error.
"""

from __future__ import annotations

import json
import struct
import zlib
from dataclasses import dataclass, field

import numpy as np

from .errors import FormatError, InputError
from .serialization import _Reader, atomic_write_bytes, pack_record, read_record
from .shapes import CLASS_NAMES, CameraRig, generate_shape, render_views

DATASET_MAGIC = b"PVRD"
DATASET_VERSION = 1

_U32 = struct.Struct("<I")

# deterministic index subsets of a 12-camera ring, closest to uniform spacing
VIEW_SUBSETS = {
    12: tuple(range(12)),
    10: (0, 1, 2, 3, 4, 6, 7, 8, 9, 10),
    8: (0, 1, 3, 4, 6, 7, 9, 10),
    4: (0, 3, 6, 9),
}


@dataclass
class ShapeSample:
    """One synthetic object: label, point cloud, and per-view descriptors."""

    class_id: int
    points: np.ndarray  # (N, 3)
    view_descriptors: np.ndarray  # (V, Dv)
    sample_id: int
    generator_seed: int


@dataclass
class DatasetSplit:
    train: list[ShapeSample]
    test: list[ShapeSample]
    class_names: list[str]
    manifest: dict = field(default_factory=dict)


def sample_seed(global_seed, split_code, class_id, index):
    """The u64 generator seed for one sample, derived from its coordinates."""
    ss = np.random.SeedSequence([int(global_seed), split_code, class_id, index])
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def make_dataset(cfg):
    """Generate a full train/test split from a ``DataConfig``."""
    if cfg.train_per_class < 2 or cfg.test_per_class < 2:
        raise InputError("per-class counts must be >= 2")
    if not 2 <= cfg.n_classes <= len(CLASS_NAMES):
        raise InputError(
            f"n_classes must be in [2, {len(CLASS_NAMES)}], got {cfg.n_classes}"
        )
    rig = CameraRig(
        view_count=cfg.n_views,
        elevation_deg=cfg.elevation_deg,
        resolution=cfg.resolution,
    )
    splits = []
    next_id = 0
    for split_code, per_class in ((0, cfg.train_per_class), (1, cfg.test_per_class)):
        samples = []
        for class_id in range(cfg.n_classes):
            for index in range(per_class):
                seed = sample_seed(cfg.seed, split_code, class_id, index)
                points = generate_shape(
                    class_id,
                    seed,
                    cfg.n_points,
                    jitter_sigma=cfg.jitter_sigma,
                    scale_jitter=cfg.scale_jitter,
                )
                samples.append(
                    ShapeSample(
                        class_id=class_id,
                        points=points,
                        view_descriptors=render_views(points, rig),
                        sample_id=next_id,
                        generator_seed=seed,
                    )
                )
                next_id += 1
        splits.append(samples)

    manifest = {
        "format": "pvrf-dataset",
        "version": DATASET_VERSION,
        "seed": cfg.seed,
        "config": cfg.to_dict(),
        "class_names": list(CLASS_NAMES[: cfg.n_classes]),
        "train_count": len(splits[0]),
        "test_count": len(splits[1]),
    }
    return DatasetSplit(
        train=splits[0],
        test=splits[1],
        class_names=list(CLASS_NAMES[: cfg.n_classes]),
        manifest=manifest,
    )


def _split_arrays(name, samples):
    seeds = np.array([s.generator_seed for s in samples], dtype=np.uint64)
    return {
        f"{name}/points": np.stack([s.points for s in samples]),
        f"{name}/views": np.stack([s.view_descriptors for s in samples]),
        f"{name}/labels": np.array([s.class_id for s in samples], dtype=np.float64),
        f"{name}/ids": np.array([s.sample_id for s in samples], dtype=np.float64),
        # u64 seeds split into exactly representable u32 halves
        f"{name}/seeds_hi": (seeds >> np.uint64(32)).astype(np.float64),
        f"{name}/seeds_lo": (seeds & np.uint64(0xFFFFFFFF)).astype(np.float64),
    }


def _samples_from_arrays(name, arrays):
    try:
        points = arrays[f"{name}/points"]
        views = arrays[f"{name}/views"]
        labels = arrays[f"{name}/labels"]
        ids = arrays[f"{name}/ids"]
        hi = arrays[f"{name}/seeds_hi"]
        lo = arrays[f"{name}/seeds_lo"]
    except KeyError as exc:
        raise FormatError(f"dataset file is missing record {exc}") from exc
    samples = []
    for i in range(points.shape[0]):
        seed = (int(hi[i]) << 32) | int(lo[i])
        samples.append(
            ShapeSample(
                class_id=int(labels[i]),
                points=points[i],
                view_descriptors=views[i],
                sample_id=int(ids[i]),
                generator_seed=seed,
            )
        )
    return samples


def manifest_path(prefix):
    return f"{prefix}.manifest.json"


def blob_path(prefix):
    return f"{prefix}.bin"


def save_dataset(split, prefix):
    """Write ``<prefix>.manifest.json`` and ``<prefix>.bin`` atomically."""
    manifest_bytes = (
        json.dumps(split.manifest, sort_keys=True, indent=2) + "\n"
    ).encode("utf-8")

    arrays = {}
    arrays.update(_split_arrays("train", split.train))
    arrays.update(_split_arrays("test", split.test))
    body = [DATASET_MAGIC, _U32.pack(DATASET_VERSION), _U32.pack(len(arrays))]
    body.extend(pack_record(path, values) for path, values in sorted(arrays.items()))
    payload = b"".join(body)
    payload += _U32.pack(zlib.crc32(payload) & 0xFFFFFFFF)

    atomic_write_bytes(manifest_path(prefix), manifest_bytes)
    atomic_write_bytes(blob_path(prefix), payload)


def load_dataset(prefix):
    try:
        with open(manifest_path(prefix), "r", encoding="utf-8") as fh:
            manifest = json.load(fh)
    except OSError as exc:
        raise FormatError(f"cannot read dataset manifest: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise FormatError(f"malformed dataset manifest: {exc}") from exc
    try:
        with open(blob_path(prefix), "rb") as fh:
            payload = fh.read()
    except OSError as exc:
        raise FormatError(f"cannot read dataset blob: {exc}") from exc

    if len(payload) < 16:
        raise FormatError("truncated dataset blob")
    crc_stored = _U32.unpack(payload[-4:])[0]
    if zlib.crc32(payload[:-4]) & 0xFFFFFFFF != crc_stored:
        raise FormatError("dataset blob failed checksum verification")

    reader = _Reader(payload[:-4], "dataset blob")
    if bytes(reader.take(4)) != DATASET_MAGIC:
        raise FormatError("not a dataset blob (bad magic)")
    version = reader.u32()
    if version != DATASET_VERSION:
        raise FormatError(f"unsupported dataset version {version}")
    count = reader.u32()
    arrays = {}
    for _ in range(count):
        path, values = read_record(reader)
        arrays[path] = values
    if not reader.exhausted:
        raise FormatError("trailing bytes in dataset blob")

    return DatasetSplit(
        train=_samples_from_arrays("train", arrays),
        test=_samples_from_arrays("test", arrays),
        class_names=list(manifest.get("class_names", [])),
        manifest=manifest,
    )


def subsample_views(sample, keep):
    """Reduce a 12-view sample to one of the supported camera subsets."""
    if keep not in VIEW_SUBSETS:
        raise InputError(
            f"unsupported view count {keep}; expected one of {sorted(VIEW_SUBSETS)}"
        )
    if sample.view_descriptors.shape[0] != 12:
        raise InputError(
            f"view subsampling assumes a 12-camera ring, got "
            f"{sample.view_descriptors.shape[0]} views"
        )
    rows = np.asarray(VIEW_SUBSETS[keep], dtype=np.intp)
    return ShapeSample(
        class_id=sample.class_id,
        points=sample.points,
        view_descriptors=sample.view_descriptors[rows],
        sample_id=sample.sample_id,
        generator_seed=sample.generator_seed,
    )


def subsample_points(sample, keep):
    """Keep a deterministic uniform subset of the point rows."""
    n = sample.points.shape[0]
    if not 1 <= keep <= n:
        raise InputError(f"point subsample size {keep} out of range [1, {n}]")
    if keep == n:
        rows = np.arange(n)
    else:
        rng = np.random.default_rng(np.random.SeedSequence([sample.sample_id, 0x9E37]))
        rows = np.sort(rng.permutation(n)[:keep])
    return ShapeSample(
        class_id=sample.class_id,
        points=sample.points[rows],
        view_descriptors=sample.view_descriptors,
        sample_id=sample.sample_id,
        generator_seed=sample.generator_seed,
    )
