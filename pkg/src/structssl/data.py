"""Datasets: the synthetic shapes corpus and the CIFAR-10 binary loader.

Images are float64 arrays of shape (N, H, W, C) with values in [0, 1].
The shapes generator is the desk-scale corpus: two non-overlapping light-gray
shapes on a fixed dim background, labeled by the unordered pair of shape
types (6 classes).  Bounding boxes are kept in metadata so interpretation
tests can measure mask mass inside objects.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

RECORD_BYTES = 3073
CIFAR_SIDE = 32


class DataError(ValueError):
    """Raised for malformed dataset files or impossible generation specs."""


@dataclass
class Dataset:
    images: np.ndarray
    labels: np.ndarray
    name: str
    num_classes: int
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.images = np.asarray(self.images, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.images.ndim != 4:
            raise DataError(f"images must be (N,H,W,C), got shape {self.images.shape}")
        if self.labels.shape != (self.images.shape[0],):
            raise DataError(f"{self.images.shape[0]} images but {self.labels.shape} labels")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.num_classes):
            raise DataError(f"labels must lie in [0, {self.num_classes})")
        if self.images.size and (self.images.min() < 0.0 or self.images.max() > 1.0):
            raise DataError("image values must lie in [0, 1]")

    def __len__(self) -> int:
        return self.images.shape[0]


SHAPE_NAMES = ("square", "circle", "triangle")
# label = index of the unordered pair of shape types, in this canonical order
PAIR_CLASSES = ((0, 0), (0, 1), (0, 2), (1, 1), (1, 2), (2, 2))

# one fixed light color for every shape and one fixed dim background: the
# class signal is geometry alone, and neither object color nor background
# color can serve as a per-image shortcut for instance identity
SHAPE_COLOR = (0.92, 0.92, 0.92)
BACKGROUND_COLOR = (0.10, 0.13, 0.16)


@dataclass(frozen=True)
class ShapesSpec:
    image_size: int = 32
    objects: int = 2
    size_range: tuple[int, int] = (8, 14)
    seed: int = 0

    def __post_init__(self):
        lo, hi = self.size_range
        if not 3 <= lo <= hi:
            raise DataError(f"size range must satisfy 3 <= lo <= hi, got {self.size_range}")
        if hi > self.image_size:
            raise DataError(f"max object size {hi} exceeds image size {self.image_size}")
        if self.objects != 2:
            raise DataError("only two-object scenes are supported")


def _fill_shape(img: np.ndarray, kind: int, top: int, left: int, size: int,
                color: tuple[float, float, float]) -> None:
    box = img[top:top + size, left:left + size]
    if kind == 0:
        mask = np.ones((size, size), dtype=bool)
    elif kind == 1:
        c = (size - 1) / 2.0
        yy, xx = np.mgrid[0:size, 0:size]
        mask = (yy - c) ** 2 + (xx - c) ** 2 <= (size / 2.0 - 0.2) ** 2
    else:
        mask = np.zeros((size, size), dtype=bool)
        c = (size - 1) / 2.0
        for r in range(size):
            half = (r + 1) / size * (size / 2.0)
            lo = int(np.floor(c - half + 0.5))
            hi = int(np.ceil(c + half - 0.5))
            mask[r, max(lo, 0):min(hi + 1, size)] = True
    box[mask] = color


def _boxes_disjoint(a: tuple[int, int, int, int], b: tuple[int, int, int, int]) -> bool:
    return a[2] <= b[0] or b[2] <= a[0] or a[3] <= b[1] or b[3] <= a[1]


def synth_shapes(spec: ShapesSpec, n: int) -> Dataset:
    """n two-shape scenes; deterministic in spec.seed; bboxes in metadata."""
    if n < 1:
        raise DataError(f"need n >= 1 images, got {n}")
    rng = np.random.default_rng(spec.seed)
    h = spec.image_size
    lo, hi = spec.size_range
    images = np.empty((n, h, h, 3))
    labels = np.empty(n, dtype=np.int64)
    all_boxes = []
    all_kinds = []
    for idx in range(n):
        label = int(rng.integers(len(PAIR_CLASSES)))
        kinds = list(PAIR_CLASSES[label])
        if rng.random() < 0.5:
            kinds.reverse()
        img = np.empty((h, h, 3))
        img[:] = BACKGROUND_COLOR
        size0 = int(rng.integers(lo, hi + 1))
        top0 = int(rng.integers(0, h - size0 + 1))
        left0 = int(rng.integers(0, h - size0 + 1))
        box0 = (top0, left0, top0 + size0, left0 + size0)
        for attempt in range(1001):
            if attempt == 1000:
                raise DataError(f"could not place a second disjoint {lo}..{hi} box "
                                f"in a {h}x{h} image after 1000 attempts")
            size1 = int(rng.integers(lo, hi + 1))
            top1 = int(rng.integers(0, h - size1 + 1))
            left1 = int(rng.integers(0, h - size1 + 1))
            box1 = (top1, left1, top1 + size1, left1 + size1)
            if _boxes_disjoint(box0, box1):
                break
        for kind, box in ((kinds[0], box0), (kinds[1], box1)):
            _fill_shape(img, kind, box[0], box[1], box[2] - box[0], SHAPE_COLOR)
        images[idx] = img
        labels[idx] = label
        all_boxes.append((box0, box1))
        all_kinds.append(tuple(kinds))
    meta = {"name": "shapes", "bboxes": all_boxes, "shape_kinds": all_kinds, "spec": spec}
    return Dataset(images=images, labels=labels, name="shapes",
                   num_classes=len(PAIR_CLASSES), metadata=meta)


def load_cifar10(path) -> Dataset:
    """Parse CIFAR-10 binary batch files (3073-byte records) from a directory
    or a single file; pixel values scaled to [0, 1], record order preserved."""
    path = Path(path)
    if path.is_dir():
        files = sorted(p for p in path.iterdir() if p.suffix == ".bin")
        if not files:
            raise DataError(f"no .bin batch files in directory {path}")
    elif path.is_file():
        files = [path]
    else:
        raise DataError(f"no such file or directory: {path}")
    images = []
    labels = []
    for f in files:
        blob = f.read_bytes()
        if len(blob) == 0 or len(blob) % RECORD_BYTES != 0:
            raise DataError(f"{f.name}: size {len(blob)} is not a positive "
                            f"multiple of {RECORD_BYTES}")
        records = np.frombuffer(blob, dtype=np.uint8).reshape(-1, RECORD_BYTES)
        batch_labels = records[:, 0]
        bad = np.nonzero(batch_labels > 9)[0]
        if bad.size:
            raise DataError(f"{f.name}: record {int(bad[0])} has label "
                            f"{int(batch_labels[bad[0]])} outside [0, 9]")
        pixels = records[:, 1:].reshape(-1, 3, CIFAR_SIDE, CIFAR_SIDE)
        images.append(pixels.transpose(0, 2, 3, 1).astype(np.float64) / 255.0)
        labels.append(batch_labels.astype(np.int64))
    return Dataset(images=np.concatenate(images), labels=np.concatenate(labels),
                   name="cifar10", num_classes=10,
                   metadata={"name": "cifar10", "files": [f.name for f in files]})


def write_cifar10_batch(path, images: np.ndarray, labels: np.ndarray) -> None:
    """Inverse of load_cifar10 for one batch; round-trips bit-exactly."""
    images = np.asarray(images)
    labels = np.asarray(labels)
    if images.ndim != 4 or images.shape[1:] != (CIFAR_SIDE, CIFAR_SIDE, 3):
        raise DataError(f"expected (N,{CIFAR_SIDE},{CIFAR_SIDE},3) images, got {images.shape}")
    if labels.shape != (images.shape[0],):
        raise DataError("labels must match images")
    if labels.size and (labels.min() < 0 or labels.max() > 9):
        raise DataError("labels must lie in [0, 9]")
    planes = np.clip(np.round(images * 255.0), 0, 255).astype(np.uint8)
    records = np.empty((images.shape[0], RECORD_BYTES), dtype=np.uint8)
    records[:, 0] = labels.astype(np.uint8)
    records[:, 1:] = planes.transpose(0, 3, 1, 2).reshape(images.shape[0], -1)
    Path(path).write_bytes(records.tobytes())
