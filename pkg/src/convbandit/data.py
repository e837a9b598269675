"""Dataset ingestion and bandit-round construction.

Binary loaders parse the IDX image/label format and CIFAR-10 batch files
bit-exactly; images are rescaled to [0, 1] and unit-Frobenius normalized
before they reach any algorithm.  A labelled image becomes one round of
``n_classes`` arms: arm a carries the image in channel block a and zeros
elsewhere, and only the arm matching the label pays reward 1.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator

import numpy as np

from .errors import DataFormatError, DimensionError

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801
CIFAR_RECORD_BYTES = 3073  # 1 label byte + 3 * 32 * 32 pixels


@dataclass(frozen=True)
class LabeledImageSet:
    """Images as (n, channels, pixels) floats in [0, 1] plus integer labels."""

    images: np.ndarray
    labels: np.ndarray
    channels: int
    height: int
    width: int
    n_classes: int

    def __post_init__(self):
        if self.images.shape[0] != self.labels.shape[0]:
            raise DimensionError("image and label counts differ")
        if self.labels.size and int(self.labels.max()) >= self.n_classes:
            raise DataFormatError(
                f"label {int(self.labels.max())} out of range for "
                f"{self.n_classes} classes"
            )

    def __len__(self) -> int:
        return self.images.shape[0]


def _read_exact(f, n: int, what: str) -> bytes:
    buf = f.read(n)
    if len(buf) != n:
        raise DataFormatError(f"truncated file: expected {n} bytes of {what}, "
                              f"got {len(buf)}")
    return buf


def load_idx(image_path, label_path, n_classes: int = 10) -> LabeledImageSet:
    """Parse an IDX image/label file pair (big-endian, unsigned bytes)."""
    with open(image_path, "rb") as f:
        magic, n, rows, cols = struct.unpack(">IIII", _read_exact(f, 16, "header"))
        if magic != IDX_IMAGES_MAGIC:
            raise DataFormatError(
                f"bad image magic 0x{magic:08x}, expected 0x{IDX_IMAGES_MAGIC:08x}"
            )
        raw = _read_exact(f, n * rows * cols, "pixels")
        extra = f.read(1)
        if extra:
            raise DataFormatError("trailing bytes after image payload")
    with open(label_path, "rb") as f:
        magic, n_labels = struct.unpack(">II", _read_exact(f, 8, "header"))
        if magic != IDX_LABELS_MAGIC:
            raise DataFormatError(
                f"bad label magic 0x{magic:08x}, expected 0x{IDX_LABELS_MAGIC:08x}"
            )
        labels = np.frombuffer(_read_exact(f, n_labels, "labels"), dtype=np.uint8)
    if n_labels != n:
        raise DataFormatError(f"{n} images but {n_labels} labels")
    images = np.frombuffer(raw, dtype=np.uint8).astype(np.float64) / 255.0
    images = images.reshape(n, 1, rows * cols)
    return LabeledImageSet(
        images=images, labels=labels.astype(np.int64), channels=1,
        height=rows, width=cols, n_classes=n_classes,
    )


def load_cifar10(batch_paths, n_classes: int = 10) -> LabeledImageSet:
    """Parse CIFAR-10 binary batches (3073-byte records, channel-major)."""
    paths = [batch_paths] if isinstance(batch_paths, (str, Path)) else list(batch_paths)
    if not paths:
        raise DataFormatError("no batch files given")
    chunks, labels = [], []
    for path in paths:
        raw = Path(path).read_bytes()
        if len(raw) == 0 or len(raw) % CIFAR_RECORD_BYTES != 0:
            raise DataFormatError(
                f"{path}: length {len(raw)} is not a positive multiple of "
                f"{CIFAR_RECORD_BYTES}"
            )
        records = np.frombuffer(raw, dtype=np.uint8).reshape(-1, CIFAR_RECORD_BYTES)
        batch_labels = records[:, 0]
        if batch_labels.max(initial=0) >= n_classes:
            raise DataFormatError(
                f"{path}: label byte {int(batch_labels.max())} out of range "
                f"for {n_classes} classes"
            )
        labels.append(batch_labels)
        chunks.append(records[:, 1:].astype(np.float64) / 255.0)
    images = np.concatenate(chunks).reshape(-1, 3, 32 * 32)
    return LabeledImageSet(
        images=images, labels=np.concatenate(labels).astype(np.int64),
        channels=3, height=32, width=32, n_classes=n_classes,
    )


def normalize_unit_frobenius(x: np.ndarray) -> np.ndarray:
    """Scale a nonzero matrix to unit Frobenius norm."""
    x = np.asarray(x, dtype=np.float64)
    norm = np.linalg.norm(x)
    if norm == 0.0:
        raise ValueError("cannot normalize an all-zero matrix")
    return x / norm


@dataclass(frozen=True)
class BanditRound:
    """One decision round: arms, the rewarded index, and image provenance."""

    arms: tuple
    correct: int
    base_image_id: int

    def reward(self, chosen: int) -> float:
        return 1.0 if chosen == self.correct else 0.0


def build_round(image: np.ndarray, label: int, n_classes: int,
                base_image_id: int = -1) -> BanditRound:
    """Lay a normalized (channels, pixels) image into per-class channel blocks."""
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 2:
        raise DimensionError("image must be a (channels, pixels) matrix")
    if not 0 <= label < n_classes:
        raise ValueError(f"label {label} out of range for {n_classes} classes")
    c, p = image.shape
    arms = []
    for a in range(n_classes):
        arm = np.zeros((n_classes * c, p))
        arm[a * c : (a + 1) * c] = image
        arms.append(arm)
    return BanditRound(arms=tuple(arms), correct=int(label),
                       base_image_id=int(base_image_id))


def classification_stream(
    dataset: LabeledImageSet, T: int, seed: int
) -> Iterator[BanditRound]:
    """Yield T rounds over a seeded shuffle of the dataset.

    If T exceeds the dataset size the shuffled order is rewalked with fresh
    shuffles.  Arm tensors are built lazily, one round at a time.
    """
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(dataset))
    pos = 0
    for _ in range(T):
        if pos == len(order):
            order = rng.permutation(len(dataset))
            pos = 0
        i = int(order[pos])
        pos += 1
        image = normalize_unit_frobenius(dataset.images[i])
        yield build_round(image, int(dataset.labels[i]), dataset.n_classes,
                          base_image_id=i)


# ---------------------------------------------------------------------------
# Synthetic reward tasks


@dataclass(frozen=True)
class SyntheticTask:
    """Controlled reward generator over random unit-norm contexts.

    kinds: "linear" (1 + <a, x>)/2, "quadratic" <a, x>^2,
    "cosine" (1 + cos(3 pi <a, x>))/2; all land in [0, 1] for unit vectors.
    """

    kind: str
    hidden: np.ndarray
    noise_sigma: float
    arm_dim: int
    n_arms: int
    seed: int

    def __post_init__(self):
        if self.kind not in ("linear", "quadratic", "cosine"):
            raise ValueError(f"unknown synthetic kind {self.kind!r}")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be non-negative")
        hidden = np.asarray(self.hidden, dtype=np.float64).ravel()
        if hidden.shape != (self.arm_dim,):
            raise DimensionError("hidden parameter length != arm_dim")
        hidden.setflags(write=False)
        object.__setattr__(self, "hidden", hidden)

    @classmethod
    def make(cls, kind: str, arm_dim: int, n_arms: int, noise_sigma: float,
             seed: int) -> "SyntheticTask":
        rng = np.random.default_rng(seed)
        a = rng.standard_normal(arm_dim)
        a /= np.linalg.norm(a)
        return cls(kind=kind, hidden=a, noise_sigma=noise_sigma,
                   arm_dim=arm_dim, n_arms=n_arms, seed=seed)

    def value(self, x: np.ndarray) -> float:
        z = float(self.hidden @ np.asarray(x, dtype=np.float64).ravel())
        if self.kind == "linear":
            v = (1.0 + z) / 2.0
        elif self.kind == "quadratic":
            v = z * z
        else:
            v = (1.0 + np.cos(3.0 * np.pi * z)) / 2.0
        return float(np.clip(v, 0.0, 1.0))


def synthetic_stream(
    task: SyntheticTask, T: int
) -> Iterator[tuple[list[np.ndarray], np.ndarray, np.ndarray]]:
    """Yield (arms, true values, noisy rewards) for T rounds.

    Arms are fresh unit-norm (1, arm_dim) contexts each round; one noise
    draw per round is shared by all arms, so rewards differ from the true
    values by a common shift.
    """
    rng = np.random.default_rng(task.seed)
    for _ in range(T):
        raw = rng.standard_normal((task.n_arms, task.arm_dim))
        raw /= np.linalg.norm(raw, axis=1, keepdims=True)
        arms = [row.reshape(1, task.arm_dim) for row in raw]
        values = np.array([task.value(x) for x in arms])
        noise = rng.normal(0.0, task.noise_sigma) if task.noise_sigma > 0 else 0.0
        yield arms, values, values + noise
