"""Synthetic image-like datasets, the raw on-disk format, and task sampling.

Classes are organised into latent families: each family has a pixel
archetype, each class perturbs its family archetype, and each sample
adds Gaussian noise on top of its class prototype. Tasks drawn from the
same families therefore share discriminative directions, which is what
gives task similarity something real to measure. A "shifted" variant
remixes the same archetype basis with fresh weights and offsets, so its
classes are new but live in the same domain.

Raw dataset file format (little-endian):
    magic  b"IMGD" | version u16 | count u32 | height u16 | width u16
    | channels u16 | num_classes u16
    then per sample: label u8 followed by channels*height*width pixel bytes.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .util import derive_seed

__all__ = [
    "DataFormatError",
    "SyntheticSpec",
    "Dataset",
    "TaskSpec",
    "TaskData",
    "generate_synthetic",
    "save_dataset",
    "load_dataset",
    "normalize",
    "sample_tasks",
    "task_data",
]

MAGIC = b"IMGD"
VERSION = 1
_HEADER = struct.Struct("<4sHIHHHH")


class DataFormatError(ValueError):
    """Raised for malformed dataset files."""


@dataclass(frozen=True)
class SyntheticSpec:
    num_classes: int = 20
    samples_per_class: int = 200
    height: int = 16
    width: int = 16
    channels: int = 1
    families: int = 5
    archetype_scale: float = 0.24
    class_scale: float = 0.10
    noise_scale: float = 0.12
    shifted: bool = False
    train_fraction: float = 0.8

    def __post_init__(self):
        if self.num_classes < 2 or self.num_classes > 255:
            raise ValueError("num_classes must be in [2, 255]")
        if self.families < 1 or self.families > self.num_classes:
            raise ValueError("families must be in [1, num_classes]")
        if not 0.0 < self.train_fraction < 1.0:
            raise ValueError("train_fraction must be in (0, 1)")


@dataclass
class Dataset:
    images: np.ndarray  # uint8, (N, C, H, W)
    labels: np.ndarray  # int64, (N,)
    num_classes: int
    train_idx: np.ndarray
    test_idx: np.ndarray

    @property
    def input_shape(self) -> tuple:
        return tuple(self.images.shape[1:])


def _split_by_class(labels: np.ndarray, num_classes: int, train_fraction: float):
    """Per class, the first train_fraction of its occurrences are train."""
    train, test = [], []
    for c in range(num_classes):
        idx = np.flatnonzero(labels == c)
        cut = int(round(len(idx) * train_fraction))
        train.append(idx[:cut])
        test.append(idx[cut:])
    return np.concatenate(train), np.concatenate(test)


def generate_synthetic(spec: SyntheticSpec, seed: int) -> Dataset:
    """Deterministic class-blocked dataset; same (spec, seed) is byte-identical.

    The base and shifted variants of one seed share the family archetypes,
    so shifted classes are novel but not alien.
    """
    ss = np.random.SeedSequence(seed)
    arch_ss, base_ss, shift_ss = ss.spawn(3)
    arng = np.random.default_rng(arch_ss)
    shape = (spec.channels, spec.height, spec.width)
    archetypes = 0.5 + spec.archetype_scale * arng.standard_normal((spec.families,) + shape)
    rng = np.random.default_rng(shift_ss if spec.shifted else base_ss)
    prototypes = np.empty((spec.num_classes,) + shape)
    for c in range(spec.num_classes):
        if spec.shifted:
            weights = rng.dirichlet(np.ones(spec.families))
            base = 0.5 + np.tensordot(weights, archetypes - 0.5, axes=1)
        else:
            base = archetypes[c % spec.families]
        prototypes[c] = base + spec.class_scale * rng.standard_normal(shape)
    n = spec.num_classes * spec.samples_per_class
    images = np.empty((n,) + shape, np.uint8)
    labels = np.empty(n, np.int64)
    pos = 0
    for c in range(spec.num_classes):
        samples = prototypes[c] + spec.noise_scale * rng.standard_normal(
            (spec.samples_per_class,) + shape
        )
        np.clip(samples, 0.0, 1.0, out=samples)
        images[pos : pos + spec.samples_per_class] = np.round(samples * 255.0).astype(np.uint8)
        labels[pos : pos + spec.samples_per_class] = c
        pos += spec.samples_per_class
    train_idx, test_idx = _split_by_class(labels, spec.num_classes, spec.train_fraction)
    return Dataset(images, labels, spec.num_classes, train_idx, test_idx)


def save_dataset(path, ds: Dataset) -> None:
    n, c, h, w = ds.images.shape
    if ds.num_classes > 255:
        raise ValueError("format stores labels as single bytes")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    sample_bytes = c * h * w
    with open(path, "wb") as f:
        f.write(_HEADER.pack(MAGIC, VERSION, n, h, w, c, ds.num_classes))
        body = np.empty((n, 1 + sample_bytes), np.uint8)
        body[:, 0] = ds.labels.astype(np.uint8)
        body[:, 1:] = ds.images.reshape(n, sample_bytes)
        f.write(body.tobytes())


def load_dataset(path, train_fraction: float = 0.8) -> Dataset:
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise DataFormatError("file too short for header")
    magic, version, n, h, w, c, num_classes = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise DataFormatError(f"bad magic {magic!r}")
    if version != VERSION:
        raise DataFormatError(f"unsupported version {version}")
    sample_bytes = 1 + c * h * w
    expected = _HEADER.size + n * sample_bytes
    if len(raw) != expected:
        raise DataFormatError(f"expected {expected} bytes, found {len(raw)}")
    body = np.frombuffer(raw, np.uint8, offset=_HEADER.size).reshape(n, sample_bytes)
    labels = body[:, 0].astype(np.int64)
    if labels.size and labels.max() >= num_classes:
        raise DataFormatError("label out of range")
    images = body[:, 1:].reshape(n, c, h, w).copy()
    train_idx, test_idx = _split_by_class(labels, num_classes, train_fraction)
    return Dataset(images, labels, num_classes, train_idx, test_idx)


def normalize(images_u8: np.ndarray) -> np.ndarray:
    """uint8 pixels to float32 in [-1, 1]."""
    return ((images_u8.astype(np.float32) - 127.5) / 127.5).astype(np.float32)


# ------------------------------------------------------------------ tasks


@dataclass(frozen=True)
class TaskSpec:
    task_id: str
    classes: tuple
    seed: int

    def __post_init__(self):
        if len(set(self.classes)) != len(self.classes):
            raise ValueError("task classes must be distinct")


@dataclass
class TaskData:
    task_id: str
    classes: tuple
    train_x: np.ndarray  # uint8
    train_y: np.ndarray  # local labels, positions in `classes`
    test_x: np.ndarray
    test_y: np.ndarray

    @property
    def n_train(self) -> int:
        return len(self.train_y)


def sample_tasks(dataset: Dataset, c: int, count: int, seed: int, disjoint_from=None) -> list[TaskSpec]:
    """Deterministic c-class task list; optionally avoid a set of classes."""
    universe = list(range(dataset.num_classes))
    if disjoint_from:
        banned = set()
        for group in disjoint_from:
            banned.update(group if hasattr(group, "__iter__") else [group])
        universe = [k for k in universe if k not in banned]
    if len(universe) < c:
        raise ValueError(f"cannot sample {c} classes from {len(universe)} eligible")
    rng = np.random.default_rng(seed)
    tasks = []
    for i in range(count):
        cls = tuple(sorted(rng.choice(universe, size=c, replace=False).tolist()))
        tasks.append(TaskSpec(f"{c}c-s{seed}-{i:03d}", cls, derive_seed(seed, "task", i)))
    return tasks


def task_data(dataset: Dataset, task: TaskSpec) -> TaskData:
    """Materialise a task's train/test arrays with local labels."""
    classes = np.asarray(task.classes)
    local = np.full(dataset.num_classes, -1, np.int64)
    local[classes] = np.arange(len(classes))

    def pick(idx):
        keep = idx[np.isin(dataset.labels[idx], classes)]
        return dataset.images[keep], local[dataset.labels[keep]]

    train_x, train_y = pick(dataset.train_idx)
    test_x, test_y = pick(dataset.test_idx)
    if len(train_y) == 0 or len(test_y) == 0:
        raise ValueError(f"task {task.task_id} has an empty split")
    return TaskData(task.task_id, task.classes, train_x, train_y, test_x, test_y)
