"""
data.py
Date: 05/10/2026
--------------------------------------------------------#
Description: Datasets for the federated simulator and how they are split
between clients.

Input:
- MNIST-style IDX files (optionally gzipped)
- CSV files of precomputed feature vectors, label in the last column
- or nothing at all: generate_synthetic draws Gaussian class clusters

Output:
- Dataset objects (features, labels, class count)
- per-client ClientShard index sets from a per-class Dirichlet draw

Notes:
Default folders live under data/ in the repo root (found the same way the
rest of the package finds it: two levels above this file).
--------------------------------------------------------#
"""

from __future__ import annotations

import gzip
import logging
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from sklearn.model_selection import train_test_split

logger = logging.getLogger(__name__)

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801
IDX_CLASSES = 10


def repo_root_guess() -> Path:
    """
    Function that tries to return the directory 2 levels above the src package.
    If fails, it returns the current directory.
    """
    try:
        return Path(__file__).resolve().parents[2]
    except Exception:
        return Path.cwd()


REPO_ROOT = repo_root_guess()

DATA_DIR = (REPO_ROOT / "data").resolve()
CONFIG_DIR = DATA_DIR / "configs"
RUNS_DIR = DATA_DIR / "runs"


@dataclass(frozen=True)
class Dataset:
    """
    features: (N, d) float matrix, labels: N ints in 0..n_classes-1.
    """

    features: np.ndarray
    labels: np.ndarray
    n_classes: int

    def __post_init__(self):
        features = np.asarray(self.features, dtype=float)
        labels = np.asarray(self.labels).astype(np.int64)
        if features.ndim != 2:
            raise ValueError(f"features must be 2-D, got shape {features.shape}")
        if features.shape[0] < 1:
            raise ValueError("Dataset needs at least one row")
        if labels.shape != (features.shape[0],):
            raise ValueError(f"Got {labels.shape[0]} labels for {features.shape[0]} rows")
        if not np.all(np.isfinite(features)):
            raise ValueError("features contain NaN or Inf")
        if labels.min() < 0 or labels.max() >= self.n_classes:
            raise ValueError(f"labels must lie in 0..{self.n_classes - 1}")
        object.__setattr__(self, "features", features)
        object.__setattr__(self, "labels", labels)

    def __len__(self) -> int:
        return self.labels.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    def subset(self, indices: Sequence[int]) -> "Dataset":
        idx = np.asarray(indices, dtype=np.int64)
        return Dataset(self.features[idx], self.labels[idx], self.n_classes)


@dataclass(frozen=True)
class PartitionSpec:
    n_clients: int
    alpha: float
    seed: int = 0

    def __post_init__(self):
        if self.n_clients < 1:
            raise ValueError(f"n_clients must be >= 1, got {self.n_clients}")
        if not self.alpha > 0:
            raise ValueError(f"alpha must be > 0, got {self.alpha}")


@dataclass(frozen=True)
class ClientShard:
    indices: np.ndarray

    def __len__(self) -> int:
        return self.indices.shape[0]


def largest_remainder_counts(proportions: np.ndarray, total: int) -> np.ndarray:
    """
    Integer counts summing exactly to `total`, proportional to `proportions`.
    Leftover units go to the largest fractional parts (lowest index on ties).
    """
    raw = proportions / proportions.sum() * total
    counts = np.floor(raw).astype(np.int64)
    leftover = total - int(counts.sum())
    if leftover > 0:
        frac = raw - counts
        order = np.argsort(-frac, kind="stable")
        counts[order[:leftover]] += 1
    return counts


def dirichlet_partition(dataset: Dataset, spec: PartitionSpec,
                        rng: Optional[np.random.Generator] = None) -> List[ClientShard]:
    """
    Split dataset rows between spec.n_clients clients.

    For every class c, proportions p_c ~ Dirichlet(alpha * 1) decide how the
    class-c rows are dealt out. A client left empty takes one row from the
    current largest shard.

    Raises:
        ValueError: if there are more clients than rows.
    """
    n = spec.n_clients
    if n > len(dataset):
        raise ValueError(f"Cannot split {len(dataset)} rows between {n} clients")
    if rng is None:
        rng = np.random.default_rng(spec.seed)

    buckets: List[List[int]] = [[] for _ in range(n)]
    for c in range(dataset.n_classes):
        class_rows = np.flatnonzero(dataset.labels == c)
        if class_rows.size == 0:
            continue
        class_rows = rng.permutation(class_rows)
        proportions = rng.dirichlet(np.full(n, spec.alpha))
        counts = largest_remainder_counts(proportions, class_rows.size)
        start = 0
        for client, count in enumerate(counts):
            buckets[client].extend(class_rows[start:start + count].tolist())
            start += count

    repaired = 0
    for client in range(n):
        if not buckets[client]:
            donor = max(range(n), key=lambda k: (len(buckets[k]), -k))
            buckets[client].append(buckets[donor].pop())
            repaired += 1
    if repaired:
        logger.warning("Moved one row into each of %d empty client shards", repaired)

    return [ClientShard(indices=np.sort(np.asarray(b, dtype=np.int64))) for b in buckets]


def generate_synthetic(classes: int, dim: int, per_class: int, separation: float,
                       rng: np.random.Generator) -> Dataset:
    """
    Gaussian clusters N(m_c, I), one per class.

    Class means sit on the coordinate axes (+e_0, +e_1, ..., then -e_0, ...)
    scaled by separation / sqrt(2), so any two means are at least `separation` apart.
    """
    if min(classes, dim, per_class) < 1:
        raise ValueError("classes, dim and per_class must all be >= 1")
    if classes > 2 * dim:
        raise ValueError(f"At most 2 * dim = {2 * dim} classes fit on the axes, got {classes}")

    scale = separation / np.sqrt(2.0)
    means = np.zeros((classes, dim))
    for c in range(classes):
        axis, sign = c % dim, (1.0 if c < dim else -1.0)
        means[c, axis] = sign * scale

    labels = np.repeat(np.arange(classes), per_class)
    features = means[labels] + rng.standard_normal((labels.size, dim))
    return Dataset(features, labels, classes)


def split_dataset(dataset: Dataset, test_fraction: float = 0.2, seed: int = 0) -> Tuple[Dataset, Dataset]:
    """
    Seeded shuffle split into (train, test); 80/20 by default.
    """
    if not 0 < test_fraction < 1:
        raise ValueError(f"test_fraction must be in (0, 1), got {test_fraction}")
    idx = np.arange(len(dataset))
    train_idx, test_idx = train_test_split(idx, test_size=test_fraction, random_state=seed, shuffle=True)
    return dataset.subset(np.sort(train_idx)), dataset.subset(np.sort(test_idx))


def _read_bytes(path: Union[str, Path]) -> bytes:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"IDX file not found: {path}")
    if path.suffix == ".gz":
        with gzip.open(path, "rb") as f:
            return f.read()
    return path.read_bytes()


def _check_length(path, raw: bytes, expected: int) -> None:
    if len(raw) != expected:
        raise ValueError(f"{path}: expected {expected} bytes from the header, file has {len(raw)}")


def load_idx(images_path: Union[str, Path], labels_path: Union[str, Path]) -> Dataset:
    """
    Load an IDX image/label pair (MNIST layout) as flattened pixels scaled to [0, 1].

    Raises:
        ValueError: on a wrong magic number, mismatched counts or a truncated file.
    """
    raw_images = _read_bytes(images_path)
    raw_labels = _read_bytes(labels_path)
    if len(raw_images) < 16 or len(raw_labels) < 8:
        raise ValueError(f"IDX header truncated: {images_path} / {labels_path}")

    magic, count, rows, cols = struct.unpack(">IIII", raw_images[:16])
    if magic != IDX_IMAGES_MAGIC:
        raise ValueError(f"{images_path}: image magic 0x{magic:08x}, expected 0x{IDX_IMAGES_MAGIC:08x}")
    _check_length(images_path, raw_images, 16 + count * rows * cols)

    label_magic, label_count = struct.unpack(">II", raw_labels[:8])
    if label_magic != IDX_LABELS_MAGIC:
        raise ValueError(f"{labels_path}: label magic 0x{label_magic:08x}, expected 0x{IDX_LABELS_MAGIC:08x}")
    _check_length(labels_path, raw_labels, 8 + label_count)
    if label_count != count:
        raise ValueError(f"Header counts differ: {count} images vs {label_count} labels")

    pixels = np.frombuffer(raw_images, dtype=np.uint8, offset=16).reshape(count, rows * cols)
    labels = np.frombuffer(raw_labels, dtype=np.uint8, offset=8).astype(np.int64)
    logger.info("Loaded %d IDX images of %dx%d from %s", count, rows, cols, images_path)
    return Dataset(pixels.astype(float) / 255.0, labels, IDX_CLASSES)


def load_feature_csv(path: Union[str, Path]) -> Dataset:
    """
    Load rows of d floats followed by one integer label.

    A header row is allowed. Labels that are not already 0..C-1 are remapped in
    sorted order (e.g. sentiment labels 0/4 become 0/1).

    Raises:
        ValueError: on an empty file, ragged rows, non-numeric or non-finite cells
            (the message names the 1-based line number).
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Feature CSV not found: {path}")
    try:
        frame = pd.read_csv(path, header=None, dtype=str, skip_blank_lines=True, keep_default_na=False)
    except pd.errors.EmptyDataError as e:
        raise ValueError(f"{path}: file is empty") from e
    except pd.errors.ParserError as e:
        raise ValueError(f"{path}: ragged rows ({e})") from e

    cells = frame.apply(lambda col: col.str.strip())
    missing = (cells.isna() | (cells == "")).to_numpy()
    numeric = cells.apply(lambda col: pd.to_numeric(col, errors="coerce"))
    line_numbers = np.arange(1, len(frame) + 1)

    if len(frame) and numeric.iloc[0].isna().any() and not missing[0].any():
        # first row is a header
        numeric, missing, line_numbers = numeric.iloc[1:], missing[1:], line_numbers[1:]
    if len(numeric) == 0:
        raise ValueError(f"{path}: no data rows")
    if numeric.shape[1] < 2:
        raise ValueError(f"{path}: need at least one feature column and a label column")

    if missing.any():
        row = int(np.flatnonzero(missing.any(axis=1))[0])
        raise ValueError(f"{path}: ragged row or empty cell at line {line_numbers[row]}")
    bad = numeric.isna().to_numpy()
    if bad.any():
        row = int(np.flatnonzero(bad.any(axis=1))[0])
        raise ValueError(f"{path}: non-numeric cell at line {line_numbers[row]}")

    values = numeric.to_numpy(dtype=float)
    infinite = ~np.isfinite(values)
    if infinite.any():
        row = int(np.flatnonzero(infinite.any(axis=1))[0])
        raise ValueError(f"{path}: non-finite value at line {line_numbers[row]}")
    features, raw_labels = values[:, :-1], values[:, -1]
    if np.any(raw_labels != np.round(raw_labels)):
        row = int(np.flatnonzero(raw_labels != np.round(raw_labels))[0])
        raise ValueError(f"{path}: label is not an integer at line {line_numbers[row]}")

    distinct, labels = np.unique(raw_labels.astype(np.int64), return_inverse=True)
    if not np.array_equal(distinct, np.arange(distinct.size)):
        logger.info("Remapped labels %s -> 0..%d", distinct.tolist(), distinct.size - 1)
    logger.info("Loaded %d rows x %d features from %s", len(labels), features.shape[1], path)
    return Dataset(features, labels, int(distinct.size))
