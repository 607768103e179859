"""Core data types and file formats.

Images are HxWxC uint8 arrays, datasets stack them to NxHxWxC, and embeddings
are NxD float32 matrices with integer labels. Everything is validated on
construction and frozen afterwards so instances can be shared across threads.
"""
from __future__ import annotations

import csv
import os
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError, NumericError

CIFAR_SIDE = 32
CIFAR_RECORD = 1 + 3 * CIFAR_SIDE * CIFAR_SIDE
EMB_MAGIC = b"EMB1"
NORM_TOL = 1e-5


def check_image(img: np.ndarray) -> np.ndarray:
    """Validate a single HxWxC uint8 image and return it."""
    if not isinstance(img, np.ndarray):
        raise DataError(f"image must be an ndarray, got {type(img).__name__}")
    if img.ndim != 3:
        raise DataError(f"image must be HxWxC, got shape {img.shape}")
    if img.dtype != np.uint8:
        raise DataError(f"image dtype must be uint8, got {img.dtype}")
    h, w, c = img.shape
    if h < 1 or w < 1 or c < 1:
        raise DataError(f"image has empty dimension: shape {img.shape}")
    return img


def _frozen(arr: np.ndarray) -> np.ndarray:
    out = np.ascontiguousarray(arr)
    if out is arr and arr.flags.writeable:
        out = arr.copy()
    out.flags.writeable = False
    return out


@dataclass(frozen=True)
class LabeledDataset:
    """An immutable stack of same-shaped images with integer class labels."""

    images: np.ndarray
    labels: np.ndarray
    num_classes: int

    def __post_init__(self):
        imgs = np.asarray(self.images)
        if imgs.ndim != 4:
            raise DataError(f"images must be NxHxWxC, got shape {imgs.shape}")
        if imgs.dtype != np.uint8:
            raise DataError(f"images dtype must be uint8, got {imgs.dtype}")
        labels = np.asarray(self.labels)
        if labels.ndim != 1 or len(labels) != len(imgs):
            raise DataError(
                f"labels must be 1-D with length {len(imgs)}, got shape {labels.shape}"
            )
        labels = labels.astype(np.int64)
        if self.num_classes < 1:
            raise DataError(f"num_classes must be >= 1, got {self.num_classes}")
        if len(labels) and (labels.min() < 0 or labels.max() >= self.num_classes):
            raise DataError(
                f"labels must lie in [0, {self.num_classes}), "
                f"got range [{labels.min()}, {labels.max()}]"
            )
        object.__setattr__(self, "images", _frozen(imgs))
        object.__setattr__(self, "labels", _frozen(labels))

    def __len__(self) -> int:
        return len(self.images)

    @property
    def image_shape(self) -> tuple[int, int, int]:
        return tuple(self.images.shape[1:])

    def subset(self, indices: np.ndarray) -> "LabeledDataset":
        """New dataset holding the given rows, in the given order."""
        idx = np.asarray(indices, dtype=np.int64)
        return LabeledDataset(self.images[idx], self.labels[idx], self.num_classes)

    def replace_images(self, images: np.ndarray) -> "LabeledDataset":
        """Same labels, new pixel data."""
        return LabeledDataset(images, self.labels, self.num_classes)


@dataclass(frozen=True)
class ClassProfile:
    """Per-class sample counts for a dataset."""

    counts: np.ndarray

    def __post_init__(self):
        counts = np.asarray(self.counts, dtype=np.int64)
        if counts.ndim != 1 or len(counts) < 1:
            raise DataError(f"counts must be a non-empty vector, got shape {counts.shape}")
        if counts.min() < 1:
            raise DataError("every class count must be >= 1")
        object.__setattr__(self, "counts", _frozen(counts))

    @property
    def num_classes(self) -> int:
        return len(self.counts)

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    @classmethod
    def of(cls, ds: LabeledDataset) -> "ClassProfile":
        return cls(class_histogram(ds.labels, ds.num_classes))


def class_histogram(labels: np.ndarray, num_classes: int) -> np.ndarray:
    """Counts per class id, length num_classes."""
    return np.bincount(np.asarray(labels, dtype=np.int64), minlength=num_classes)


@dataclass(frozen=True)
class EmbeddingSet:
    """NxD float32 features with labels.

    normalized=True asserts unit-length rows (checked to 1e-5).
    """

    features: np.ndarray
    labels: np.ndarray
    normalized: bool = False

    def __post_init__(self):
        feats = np.asarray(self.features)
        if feats.ndim != 2:
            raise DataError(f"features must be NxD, got shape {feats.shape}")
        if feats.shape[1] < 1:
            raise DataError("feature dimension must be >= 1")
        feats = feats.astype(np.float32)
        if not np.all(np.isfinite(feats)):
            raise DataError("features contain NaN or Inf")
        labels = np.asarray(self.labels)
        if labels.ndim != 1 or len(labels) != len(feats):
            raise DataError(
                f"labels must be 1-D with length {len(feats)}, got shape {labels.shape}"
            )
        labels = labels.astype(np.int64)
        if len(labels) and labels.min() < 0:
            raise DataError("labels must be non-negative")
        if self.normalized and len(feats):
            norms = np.linalg.norm(feats.astype(np.float64), axis=1)
            worst = float(np.abs(norms - 1.0).max())
            if worst > NORM_TOL:
                raise DataError(
                    f"normalized flag set but a row norm deviates by {worst:.3g}"
                )
        object.__setattr__(self, "features", _frozen(feats))
        object.__setattr__(self, "labels", _frozen(labels))

    def __len__(self) -> int:
        return len(self.features)

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    @property
    def num_classes(self) -> int:
        return int(self.labels.max()) + 1 if len(self.labels) else 0


def l2_normalize(emb: EmbeddingSet) -> EmbeddingSet:
    """Scale every row to unit length. Zero rows are an error."""
    feats = emb.features.astype(np.float64)
    norms = np.linalg.norm(feats, axis=1)
    zero = np.flatnonzero(norms == 0.0)
    if len(zero):
        raise NumericError(f"cannot normalize zero feature row (first at index {zero[0]})")
    out = (feats / norms[:, None]).astype(np.float32)
    return EmbeddingSet(out, emb.labels, normalized=True)


# ---------------------------------------------------------------------------
# file formats


def _read_file(path: str) -> bytes:
    try:
        with open(path, "rb") as fh:
            return fh.read()
    except OSError as exc:
        raise DataError(f"cannot read {path!r}: {exc}") from exc


def _atomic_write(path: str, payload: bytes) -> None:
    tmp = f"{path}.tmp.{os.getpid()}"
    try:
        with open(tmp, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except OSError as exc:
        try:
            os.unlink(tmp)
        except OSError:
            pass
        raise DataError(f"cannot write {path!r}: {exc}") from exc


def read_cifar_binary(path: str, num_classes: int = 10) -> LabeledDataset:
    """Load a CIFAR-style batch file of 3073-byte records.

    Each record is a label byte followed by three 1024-byte channel planes
    (red, green, blue); planes are interleaved into 32x32x3 images.
    """
    raw = _read_file(path)
    if len(raw) == 0 or len(raw) % CIFAR_RECORD != 0:
        raise DataError(
            f"{path!r}: size {len(raw)} is not a positive multiple of {CIFAR_RECORD}"
        )
    n = len(raw) // CIFAR_RECORD
    records = np.frombuffer(raw, dtype=np.uint8).reshape(n, CIFAR_RECORD)
    labels = records[:, 0].astype(np.int64)
    if labels.max() >= num_classes:
        raise DataError(
            f"{path!r}: label {labels.max()} out of range for {num_classes} classes"
        )
    planes = records[:, 1:].reshape(n, 3, CIFAR_SIDE, CIFAR_SIDE)
    images = np.ascontiguousarray(planes.transpose(0, 2, 3, 1))
    return LabeledDataset(images, labels, num_classes)


def write_embeddings(emb: EmbeddingSet, path: str) -> None:
    """Serialize to the EMB1 binary format (little-endian)."""
    n, d = emb.features.shape
    header = EMB_MAGIC + struct.pack("<IIB", n, d, 1 if emb.normalized else 0)
    body = np.ascontiguousarray(emb.features, dtype="<f4").tobytes()
    tail = np.ascontiguousarray(emb.labels.astype("<u4")).tobytes()
    if len(emb.labels) and emb.labels.max() > np.iinfo(np.uint32).max:
        raise DataError("labels exceed u32 range")
    _atomic_write(path, header + body + tail)


def read_embeddings(path: str) -> EmbeddingSet:
    """Parse an EMB1 file, validating magic, length, and flags."""
    raw = _read_file(path)
    if len(raw) < 13:
        raise DataError(f"{path!r}: too short for an EMB1 header ({len(raw)} bytes)")
    if raw[:4] != EMB_MAGIC:
        raise DataError(f"{path!r}: bad magic {raw[:4]!r}")
    n, d, flag = struct.unpack_from("<IIB", raw, 4)
    if flag not in (0, 1):
        raise DataError(f"{path!r}: normalized flag must be 0 or 1, got {flag}")
    expected = 13 + n * d * 4 + n * 4
    if len(raw) != expected:
        raise DataError(
            f"{path!r}: expected {expected} bytes for N={n} D={d}, got {len(raw)}"
        )
    feats = np.frombuffer(raw, dtype="<f4", count=n * d, offset=13).reshape(n, d)
    labels = np.frombuffer(raw, dtype="<u4", count=n, offset=13 + n * d * 4)
    if d < 1:
        raise DataError(f"{path!r}: feature dimension must be >= 1")
    return EmbeddingSet(feats.copy(), labels.astype(np.int64), normalized=bool(flag))


def write_image_dir(ds: LabeledDataset, path: str) -> None:
    """Write a dataset as one raw image file per sample plus labels.csv.

    Image files carry a 12-byte header of u32 height, width, channels
    (little-endian) followed by raw row-major pixel bytes.
    """
    os.makedirs(path, exist_ok=True)
    h, w, c = ds.image_shape
    header = struct.pack("<III", h, w, c)
    names = []
    for i in range(len(ds)):
        name = f"{i:06d}.img"
        _atomic_write(os.path.join(path, name), header + ds.images[i].tobytes())
        names.append(name)
    rows = "".join(
        f"{name},{int(label)}\n" for name, label in zip(names, ds.labels)
    )
    _atomic_write(os.path.join(path, "labels.csv"), rows.encode("ascii"))


def read_image_dir(path: str, num_classes: int | None = None) -> LabeledDataset:
    """Load a raw-image directory written by write_image_dir.

    Samples are ordered by lexicographic file name; every image must share
    one shape. num_classes defaults to max label + 1.
    """
    csv_path = os.path.join(path, "labels.csv")
    try:
        with open(csv_path, newline="") as fh:
            entries = [row for row in csv.reader(fh) if row]
    except OSError as exc:
        raise DataError(f"cannot read {csv_path!r}: {exc}") from exc
    if not entries:
        raise DataError(f"{csv_path!r}: no labeled samples")
    by_name = {}
    for row in entries:
        if len(row) != 2:
            raise DataError(f"{csv_path!r}: malformed row {row!r}")
        name, text = row[0].strip(), row[1].strip()
        try:
            label = int(text)
        except ValueError as exc:
            raise DataError(f"{csv_path!r}: non-integer label {text!r}") from exc
        if name in by_name:
            raise DataError(f"{csv_path!r}: duplicate file name {name!r}")
        by_name[name] = label
    images, labels = [], []
    for name in sorted(by_name):
        raw = _read_file(os.path.join(path, name))
        if len(raw) < 12:
            raise DataError(f"{name!r}: too short for an image header")
        h, w, c = struct.unpack_from("<III", raw, 0)
        if len(raw) != 12 + h * w * c:
            raise DataError(
                f"{name!r}: expected {12 + h * w * c} bytes for {h}x{w}x{c}, got {len(raw)}"
            )
        img = np.frombuffer(raw, dtype=np.uint8, offset=12).reshape(h, w, c)
        images.append(img)
        labels.append(by_name[name])
    shapes = {img.shape for img in images}
    if len(shapes) > 1:
        raise DataError(f"{path!r}: mixed image shapes {sorted(shapes)}")
    stack = np.stack(images)
    label_arr = np.asarray(labels, dtype=np.int64)
    if label_arr.min() < 0:
        raise DataError(f"{path!r}: negative label")
    classes = num_classes if num_classes is not None else int(label_arr.max()) + 1
    return LabeledDataset(stack, label_arr, classes)
