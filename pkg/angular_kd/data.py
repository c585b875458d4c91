# data.py

from __future__ import annotations

import logging
import math
import struct
from collections import Counter
from dataclasses import dataclass, replace
from .constants import StrEnum
from pathlib import Path
from typing import BinaryIO, Iterable, Iterator, Tuple

import numpy as np
import numpy.typing as npt

from .autodiff import Rng, Tensor, as_tensor
from .constants import IDX_IMAGE_MAGIC, IDX_LABEL_MAGIC, Stream
from .helper.errors import (
    ConsistencyError,
    FormatError,
    LabelError,
    ParameterError,
    ShapeError,
    StorageError,
)

logger = logging.getLogger(__name__)

Labels = npt.NDArray[np.int64]


class SyntheticKind(StrEnum):
    BLOBS = "blobs"
    SPIRALS = "spirals"


@dataclass(frozen=True)
class Dataset:
    features: Tensor
    labels: Labels
    num_classes: int
    name: str = "dataset"

    def __post_init__(self):
        if self.features.ndim != 2:
            raise ShapeError(f"features must be [n x d], got shape {self.features.shape}")
        if self.labels.shape != (self.features.shape[0],):
            raise ConsistencyError(
                f"{self.labels.shape[0]} labels for {self.features.shape[0]} feature rows"
            )
        if self.num_classes < 1:
            raise ParameterError(f"num_classes must be >= 1, got {self.num_classes}")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.num_classes):
            raise LabelError(f"labels must lie in [0, {self.num_classes})")

    def __len__(self) -> int:
        return self.features.shape[0]

    @property
    def input_dim(self) -> int:
        return self.features.shape[1]

    def subset(self, indices: npt.ArrayLike, name: str | None = None) -> Dataset:
        keep = np.asarray(indices, dtype=np.int64)
        return Dataset(
            features=self.features[keep].copy(),
            labels=self.labels[keep].copy(),
            num_classes=self.num_classes,
            name=name or self.name,
        )

    def class_counts(self) -> Counter:
        return Counter(int(label) for label in self.labels)


@dataclass(frozen=True)
class SyntheticSpec:
    kind: SyntheticKind = SyntheticKind.BLOBS
    num_classes: int = 20
    samples_per_class: int = 100
    input_dim: int = 32
    spread: float = 1.1
    seed: int = 0
    test_samples_per_class: int = 50

    def __post_init__(self):
        object.__setattr__(self, "kind", SyntheticKind(self.kind))
        if self.samples_per_class < 1:
            raise ParameterError(f"samples_per_class must be >= 1, got {self.samples_per_class}")
        if self.test_samples_per_class < 0:
            raise ParameterError(f"test_samples_per_class must be >= 0, got {self.test_samples_per_class}")
        if self.spread < 0:
            raise ParameterError(f"spread must be >= 0, got {self.spread}")
        if self.num_classes < 1 or self.input_dim < 1:
            raise ParameterError("num_classes and input_dim must be positive")

    @property
    def feature_dim(self) -> int:
        return 2 if self.kind is SyntheticKind.SPIRALS else self.input_dim


def blobs_hard(seed: int = 0) -> SyntheticSpec:
    """Default desk benchmark: 20 overlapping classes in 32 dimensions."""
    return SyntheticSpec(
        kind=SyntheticKind.BLOBS,
        num_classes=20,
        samples_per_class=100,
        input_dim=32,
        spread=1.1,
        seed=seed,
        test_samples_per_class=50,
    )


# ============================================================================
# Synthetic generators
# ============================================================================


def _blob_centers(spec: SyntheticSpec, rng: Rng) -> Tensor:
    raw = rng.normal((spec.num_classes, spec.input_dim))
    norms = np.maximum(np.linalg.norm(raw, axis=1, keepdims=True), 1e-12)
    return 4.0 * raw / norms


def _draw_class(spec: SyntheticSpec, label: int, count: int, centers: Tensor | None, rng: Rng) -> Tensor:
    if spec.kind is SyntheticKind.BLOBS:
        return centers[label] + rng.normal((count, spec.input_dim), scale=spec.spread)
    # one arm per class, interleaved by phase offset
    t = np.sqrt(rng.uniform(count))
    theta = 2.0 * np.pi * label / spec.num_classes + 3.0 * np.pi * t
    theta = theta + rng.normal(count, scale=spec.spread)
    radius = 4.0 * t
    return np.stack([radius * np.cos(theta), radius * np.sin(theta)], axis=1)


def _generate(spec: SyntheticSpec, per_class: int, split: int, name: str) -> Dataset:
    root = Rng(spec.seed).child(Stream.DATA)
    centers = _blob_centers(spec, root.child(0)) if spec.kind is SyntheticKind.BLOBS else None
    features = [
        _draw_class(spec, label, per_class, centers, root.child(split, label))
        for label in range(spec.num_classes)
    ]
    labels = np.repeat(np.arange(spec.num_classes, dtype=np.int64), per_class)
    return Dataset(
        features=np.ascontiguousarray(np.concatenate(features, axis=0)),
        labels=labels,
        num_classes=spec.num_classes,
        name=name,
    )


def gen_synthetic(spec: SyntheticSpec) -> Dataset:
    return _generate(spec, spec.samples_per_class, 1, f"{spec.kind}-train")


def gen_benchmark(spec: SyntheticSpec) -> Tuple[Dataset, Dataset]:
    """Train and test splits sharing class centers; test draws use their own streams."""
    if spec.test_samples_per_class < 1:
        raise ParameterError("gen_benchmark needs test_samples_per_class >= 1")
    train = gen_synthetic(spec)
    test = _generate(spec, spec.test_samples_per_class, 2, f"{spec.kind}-test")
    logger.info(
        "[DATA] Generated %s: %d train / %d test samples, %d classes, d=%d",
        spec.kind,
        len(train),
        len(test),
        spec.num_classes,
        train.input_dim,
    )
    return train, test


# ============================================================================
# IDX files
# ============================================================================


def _read_exact(handle: BinaryIO, size: int, path: Path) -> bytes:
    raw = handle.read(size)
    if len(raw) != size:
        raise StorageError(f"truncated IDX file {path}: expected {size} bytes, read {len(raw)}")
    return raw


def _read_header(handle: BinaryIO, path: Path, magic: int, dims: int) -> Tuple[int, ...]:
    found, *sizes = struct.unpack(f">{1 + dims}I", _read_exact(handle, 4 * (1 + dims), path))
    if found != magic:
        raise FormatError(f"bad IDX magic 0x{found:08x} in {path} (expected 0x{magic:08x})")
    return tuple(sizes)


def load_idx(
    images_path: str | Path,
    labels_path: str | Path,
    num_classes: int | None = None,
    name: str = "idx",
) -> Dataset:
    images_path, labels_path = Path(images_path), Path(labels_path)
    try:
        with images_path.open("rb") as handle:
            count, rows, cols = _read_header(handle, images_path, IDX_IMAGE_MAGIC, 3)
            pixels = _read_exact(handle, count * rows * cols, images_path)
        with labels_path.open("rb") as handle:
            (label_count,) = _read_header(handle, labels_path, IDX_LABEL_MAGIC, 1)
            label_bytes = _read_exact(handle, label_count, labels_path)
    except OSError as exc:
        raise StorageError(f"cannot read IDX files: {exc}") from exc

    if count != label_count:
        raise ConsistencyError(f"{count} images but {label_count} labels")

    features = np.frombuffer(pixels, dtype=np.uint8).reshape(count, rows * cols) / 255.0
    labels = np.frombuffer(label_bytes, dtype=np.uint8).astype(np.int64)
    classes = num_classes or (int(labels.max()) + 1 if count else 1)
    logger.info("[DATA] Loaded %d IDX samples (%dx%d) from %s", count, rows, cols, images_path)
    return Dataset(np.ascontiguousarray(features), labels, classes, name)


def write_idx(dataset: Dataset, images_path: str | Path, labels_path: str | Path, rows: int, cols: int) -> None:
    if rows * cols != dataset.input_dim:
        raise ShapeError(f"{rows}x{cols} images do not match input_dim {dataset.input_dim}")
    if len(dataset) and dataset.labels.max() > 255:
        raise LabelError("IDX labels must fit in one byte")
    pixels = np.rint(np.clip(dataset.features, 0.0, 1.0) * 255.0).astype(np.uint8)
    try:
        with Path(images_path).open("wb") as handle:
            handle.write(struct.pack(">IIII", IDX_IMAGE_MAGIC, len(dataset), rows, cols))
            handle.write(pixels.tobytes())
        with Path(labels_path).open("wb") as handle:
            handle.write(struct.pack(">II", IDX_LABEL_MAGIC, len(dataset)))
            handle.write(dataset.labels.astype(np.uint8).tobytes())
    except OSError as exc:
        raise StorageError(f"cannot write IDX files: {exc}") from exc


# ============================================================================
# Subsetting protocols
# ============================================================================


def make_imbalanced(d: Dataset, classes: Iterable[int], cap: int) -> Dataset:
    """Keep only the first ``cap`` samples of each selected class, in stored order."""
    selected = set(int(c) for c in classes)
    unknown = sorted(c for c in selected if not 0 <= c < d.num_classes)
    if unknown:
        raise ParameterError(f"unknown class ids: {unknown}")
    if cap < 0:
        raise ParameterError(f"cap must be >= 0, got {cap}")

    seen: Counter = Counter()
    keep = []
    for idx, label in enumerate(d.labels):
        label = int(label)
        if label in selected:
            if seen[label] >= cap:
                continue
            seen[label] += 1
        keep.append(idx)
    return d.subset(keep, name=f"{d.name}-imbalanced")


def take_fraction(d: Dataset, p: float) -> Dataset:
    """First floor(p * n) samples, no shuffling."""
    if not 0.0 < p <= 1.0:
        raise ParameterError(f"fraction must be in (0, 1], got {p}")
    # tolerate float noise such as 0.29 * 100 = 28.999...
    count = int(math.floor(p * len(d) + 1e-9))
    return d.subset(np.arange(count), name=f"{d.name}-frac{p:g}")


def batch_iter(
    d: Dataset,
    batch_size: int,
    rng: Rng | None = None,
    shuffle: bool = False,
) -> Iterator[Tuple[Tensor, Labels]]:
    if batch_size < 1:
        raise ParameterError(f"batch_size must be >= 1, got {batch_size}")
    if shuffle:
        if rng is None:
            raise ParameterError("shuffled batches need a random stream")
        order = rng.permutation(len(d))
    else:
        order = np.arange(len(d))
    for start in range(0, len(d), batch_size):
        idx = order[start:start + batch_size]
        yield d.features[idx], d.labels[idx]


def standardize(train: Dataset, *others: Dataset) -> Tuple[Dataset, ...]:
    """Z-score every dataset with the train mean and std."""
    mean = train.features.mean(axis=0)
    std = train.features.std(axis=0)
    std = np.where(std < 1e-12, 1.0, std)
    return tuple(replace(d, features=(d.features - mean) / std) for d in (train, *others))


def one_hot(labels: npt.ArrayLike, num_classes: int) -> Tensor:
    values = np.asarray(labels)
    if values.ndim != 1 or not np.issubdtype(values.dtype, np.integer):
        raise LabelError("labels must be a 1-D integer array")
    if values.size and (values.min() < 0 or values.max() >= num_classes):
        raise LabelError(f"labels must lie in [0, {num_classes})")
    encoded = np.zeros((values.shape[0], num_classes))
    encoded[np.arange(values.shape[0]), values] = 1.0
    return encoded


def save_dataset(d: Dataset, path: str | Path) -> Path:
    path = Path(path)
    try:
        with path.open("wb") as handle:
            np.savez(
                handle,
                features=d.features,
                labels=d.labels,
                num_classes=np.array(d.num_classes),
                name=np.array(d.name),
            )
    except OSError as exc:
        raise StorageError(f"cannot write dataset {path}: {exc}") from exc
    return path


def load_dataset(path: str | Path) -> Dataset:
    path = Path(path)
    try:
        with np.load(path, allow_pickle=False) as archive:
            missing = {"features", "labels", "num_classes", "name"} - set(archive.files)
            if missing:
                raise FormatError(f"dataset {path} is missing arrays: {sorted(missing)}")
            return Dataset(
                features=as_tensor(archive["features"]),
                labels=archive["labels"].astype(np.int64),
                num_classes=int(archive["num_classes"]),
                name=str(archive["name"]),
            )
    except OSError as exc:
        raise StorageError(f"cannot read dataset {path}: {exc}") from exc
    except ValueError as exc:
        raise FormatError(f"{path} is not a dataset archive: {exc}") from exc
