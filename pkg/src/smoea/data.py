"""Datasets: the CIFAR-10 binary format and a seeded synthetic generator
used for desk-scale experiments.

CIFAR-10 binary records are 3073 bytes: one label byte (0..9) followed by
3072 pixel bytes (1024 red, 1024 green, 1024 blue, each a row-major 32x32
plane).
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .exceptions import DataError, DataFormatError

CIFAR_RECORD = 3073
CIFAR_SHAPE = (3, 32, 32)


@dataclass
class Dataset:
    train_images: np.ndarray  # [N, C, H, W] float64
    train_labels: np.ndarray  # [N] int
    test_images: np.ndarray
    test_labels: np.ndarray

    @property
    def num_classes(self) -> int:
        labels = np.concatenate([self.train_labels, self.test_labels])
        return int(labels.max()) + 1 if labels.size else 0

    def require_nonempty(self) -> None:
        if self.train_images.shape[0] == 0:
            raise DataError("empty training split")


def read_cifar10_batch(path: str | Path) -> tuple[np.ndarray, np.ndarray]:
    """One binary batch file -> (images [N,3,32,32] in [0,1], labels [N])."""
    raw = Path(path).read_bytes()
    if len(raw) % CIFAR_RECORD:
        raise DataFormatError(
            f"{path}: {len(raw)} bytes is not a multiple of {CIFAR_RECORD}"
        )
    n = len(raw) // CIFAR_RECORD
    records = np.frombuffer(raw, dtype=np.uint8).reshape(n, CIFAR_RECORD)
    labels = records[:, 0].astype(np.int64)
    if labels.size and labels.max() > 9:
        raise DataFormatError(f"{path}: label byte {labels.max()} out of range 0..9")
    images = records[:, 1:].reshape(n, *CIFAR_SHAPE).astype(np.float64) / 255.0
    return images, labels


def normalize_per_channel(
    images: np.ndarray, mean: np.ndarray, std: np.ndarray
) -> np.ndarray:
    return (images - mean[None, :, None, None]) / std[None, :, None, None]


def load_cifar10(
    path: str | Path, mean: np.ndarray | None = None, std: np.ndarray | None = None
) -> Dataset:
    """Load a CIFAR-10 directory (data_batch_*.bin + test_batch.bin) or a
    single batch file (all records into the train split).

    Per-channel normalization defaults to statistics computed from the
    training split.
    """
    path = Path(path)
    if path.is_dir():
        train_files = sorted(path.glob("data_batch*.bin"))
        test_files = sorted(path.glob("test_batch*.bin"))
        if not train_files:
            raise DataFormatError(f"no data_batch*.bin files under {path}")
    elif path.is_file():
        train_files, test_files = [path], []
    else:
        raise DataFormatError(f"no such dataset path: {path}")
    train_parts = [read_cifar10_batch(f) for f in train_files]
    train_images = np.concatenate([p[0] for p in train_parts])
    train_labels = np.concatenate([p[1] for p in train_parts])
    if test_files:
        test_parts = [read_cifar10_batch(f) for f in test_files]
        test_images = np.concatenate([p[0] for p in test_parts])
        test_labels = np.concatenate([p[1] for p in test_parts])
    else:
        test_images = np.zeros((0, *CIFAR_SHAPE))
        test_labels = np.zeros(0, dtype=np.int64)
    if mean is None:
        mean = train_images.mean(axis=(0, 2, 3)) if train_images.size else np.zeros(3)
    if std is None:
        std = train_images.std(axis=(0, 2, 3)) if train_images.size else np.ones(3)
        std = np.where(std > 0, std, 1.0)
    mean = np.asarray(mean, dtype=np.float64)
    std = np.asarray(std, dtype=np.float64)
    train_images = normalize_per_channel(train_images, mean, std)
    if test_images.size:
        test_images = normalize_per_channel(test_images, mean, std)
    return Dataset(train_images, train_labels, test_images, test_labels)


def write_cifar10_batch(
    path: str | Path, images_u8: np.ndarray, labels: np.ndarray
) -> None:
    """Inverse of read_cifar10_batch for fixtures: uint8 [N,3,32,32] + labels."""
    n = images_u8.shape[0]
    records = np.empty((n, CIFAR_RECORD), dtype=np.uint8)
    records[:, 0] = labels
    records[:, 1:] = images_u8.reshape(n, -1)
    Path(path).write_bytes(records.tobytes())


@dataclass
class SyntheticParams:
    classes: int = 10
    train_per_class: int = 40
    test_per_class: int = 10
    channels: int = 3
    height: int = 8
    width: int = 8
    noise: float = 0.3
    seed: int = 0


def generate_synthetic(params: SyntheticParams) -> Dataset:
    """Per-class random template images plus Gaussian per-sample noise.

    Linearly separable enough for a small CNN to learn; fully determined by
    the seed.
    """
    if params.classes < 2:
        raise DataError("need at least 2 classes")
    rng = np.random.default_rng(params.seed)
    shape = (params.channels, params.height, params.width)
    templates = rng.normal(0.0, 1.0, size=(params.classes, *shape))

    def sample(per_class: int) -> tuple[np.ndarray, np.ndarray]:
        images = np.empty((params.classes * per_class, *shape))
        labels = np.empty(params.classes * per_class, dtype=np.int64)
        i = 0
        for c in range(params.classes):
            for _ in range(per_class):
                images[i] = templates[c] + params.noise * rng.normal(size=shape)
                labels[i] = c
                i += 1
        order = rng.permutation(len(labels))
        return images[order], labels[order]

    train_images, train_labels = sample(params.train_per_class)
    test_images, test_labels = sample(params.test_per_class)
    return Dataset(train_images, train_labels, test_images, test_labels)
