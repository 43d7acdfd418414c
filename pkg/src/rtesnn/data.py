"""Datasets: IDX ingestion, synthetic Gaussian blobs, splitting and batching.

Inputs always live in ``[0, 1]`` so the attack box and the data box coincide.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConsistencyError, ContractError, FormatError

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


@dataclass
class Dataset:
    inputs: np.ndarray
    labels: np.ndarray
    n_classes: int

    def __post_init__(self):
        self.inputs = np.asarray(self.inputs, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.inputs.ndim != 2:
            raise ContractError(f"inputs must be n×features, got {self.inputs.shape}")
        if len(self.inputs) != len(self.labels):
            raise ConsistencyError(f"{len(self.inputs)} inputs but {len(self.labels)} labels")
        if self.inputs.size and (self.inputs.min() < 0 or self.inputs.max() > 1):
            raise ContractError("inputs must lie in [0, 1]")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.n_classes):
            raise ContractError(f"labels must lie in [0, {self.n_classes})")

    def __len__(self):
        return len(self.labels)

    @property
    def n_features(self):
        return self.inputs.shape[1]

    def subset(self, idx):
        return Dataset(self.inputs[idx], self.labels[idx], self.n_classes)


def _read_idx(path, expected_magic, what):
    path = Path(path)
    raw = path.read_bytes()
    if len(raw) < 4:
        raise OSError(f"{path}: truncated IDX header")
    (magic,) = struct.unpack(">I", raw[:4])
    if magic != expected_magic:
        raise FormatError(f"{path}: bad IDX magic 0x{magic:08x} for {what} (expected 0x{expected_magic:08x})")
    ndim = magic & 0xFF
    header = 4 + 4 * ndim
    if len(raw) < header:
        raise OSError(f"{path}: truncated IDX header")
    dims = struct.unpack(f">{ndim}I", raw[4:header])
    count = int(np.prod(dims))
    if len(raw) - header < count:
        raise OSError(f"{path}: truncated IDX payload ({len(raw) - header} of {count} bytes)")
    return np.frombuffer(raw, dtype=np.uint8, count=count, offset=header).reshape(dims)


def load_idx(images_path, labels_path, n_classes=None):
    """Read an IDX image/label pair; pixels are divided by 255."""
    images = _read_idx(images_path, IDX_IMAGES_MAGIC, "images")
    labels = _read_idx(labels_path, IDX_LABELS_MAGIC, "labels")
    if images.shape[0] != labels.shape[0]:
        raise ConsistencyError(f"{images.shape[0]} images but {labels.shape[0]} labels")
    inputs = images.reshape(images.shape[0], -1).astype(np.float64) / 255.0
    labels = labels.astype(np.int64)
    if n_classes is None:
        n_classes = int(labels.max()) + 1 if labels.size else 1
    return Dataset(inputs, labels, n_classes)


def write_idx(images, labels, images_path, labels_path):
    """Write uint8 arrays as an IDX pair (used for fixtures and tests)."""
    images = np.asarray(images, dtype=np.uint8)
    labels = np.asarray(labels, dtype=np.uint8)
    with open(images_path, "wb") as f:
        f.write(struct.pack(">I", 0x00000800 | images.ndim))
        f.write(struct.pack(f">{images.ndim}I", *images.shape))
        f.write(images.tobytes())
    with open(labels_path, "wb") as f:
        f.write(struct.pack(">II", IDX_LABELS_MAGIC, labels.shape[0]))
        f.write(labels.tobytes())


def blob_centers(n_classes, dim, rng, low=0.25, high=0.75, min_separation=0.35, max_tries=1000):
    """Class centers drawn uniformly from ``[low, high]^dim``, kept apart.

    Falls back to the best-separated draw if ``min_separation`` cannot be met.
    """
    best, best_gap = None, -1.0
    for _ in range(max_tries):
        c = rng.uniform(low, high, size=(n_classes, dim))
        diff = c[:, None, :] - c[None, :, :]
        d = np.sqrt((diff ** 2).sum(-1))
        gap = d[np.triu_indices(n_classes, 1)].min()
        if gap >= min_separation:
            return c
        if gap > best_gap:
            best, best_gap = c, gap
    return best


def synth_blobs(n, n_classes=2, dim=2, spread=0.05, seed=0):
    """Balanced isotropic Gaussian blobs clipped into ``[0, 1]^dim``."""
    if n_classes < 2 or dim < 2:
        raise ContractError("synth_blobs needs n_classes >= 2 and dim >= 2")
    if n < 1 or spread < 0:
        raise ContractError("synth_blobs needs n >= 1 and spread >= 0")
    rng = np.random.default_rng(seed)
    centers = blob_centers(n_classes, dim, rng)
    labels = rng.permutation(np.arange(n) % n_classes)
    points = centers[labels] + spread * rng.standard_normal((n, dim))
    return Dataset(np.clip(points, 0.0, 1.0), labels, n_classes)


def train_test_split(dataset, test_fraction, seed=0):
    """Seeded disjoint split; ``test_fraction`` of the examples go to test."""
    if not 0 < test_fraction < 1:
        raise ContractError(f"test_fraction must lie in (0, 1), got {test_fraction}")
    n = len(dataset)
    order = np.random.default_rng(seed).permutation(n)
    n_test = max(1, int(round(n * test_fraction)))
    return dataset.subset(np.sort(order[n_test:])), dataset.subset(np.sort(order[:n_test]))


def batch_iter(dataset, batch_size, shuffle_seed=None):
    """Yield ``(inputs, labels)`` batches covering the dataset exactly once.

    The final partial batch is kept. ``shuffle_seed=None`` keeps file order.
    """
    if batch_size < 1:
        raise ContractError(f"batch size must be >= 1, got {batch_size}")
    n = len(dataset)
    order = np.arange(n) if shuffle_seed is None else np.random.default_rng(shuffle_seed).permutation(n)
    for start in range(0, n, batch_size):
        idx = order[start:start + batch_size]
        yield dataset.inputs[idx], dataset.labels[idx]
