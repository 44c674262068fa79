"""Dataset ingestion: CSV tables, IDX image files, normalization, splits.

Features are kept as float64 rows of a 2-D array; labels as int64 class
indices. Pixel data stays in raw [0, 255] units until `normalize_features`
is applied, because the signal transforms operate on raw intensities.
"""

from __future__ import annotations

import csv
import math
import struct
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np

IDX_IMAGE_MAGIC = 2051
IDX_LABEL_MAGIC = 2049

NORMALIZATION_METHODS = ("none", "minmax_01", "divide_by_255")


class SchemaError(ValueError):
    """A required column is absent or the header is malformed."""


class ParseError(ValueError):
    """A cell could not be converted; carries the 1-based data row index."""

    def __init__(self, message: str, row: int):
        super().__init__(f"row {row}: {message}")
        self.row = row


class FormatError(ValueError):
    """A binary file does not follow the IDX layout."""


class Example(NamedTuple):
    features: np.ndarray
    label: int


@dataclass(frozen=True)
class Dataset:
    features: np.ndarray
    labels: np.ndarray
    num_classes: int
    feature_range: tuple[np.ndarray, np.ndarray] | None = None
    # (height, width, channels) for image data, None for tabular data
    image_shape: tuple[int, int, int] | None = None
    feature_names: tuple[str, ...] | None = field(default=None, compare=False)

    def __post_init__(self):
        x = np.ascontiguousarray(self.features, dtype=np.float64)
        y = np.ascontiguousarray(self.labels, dtype=np.int64)
        if x.ndim != 2:
            raise ValueError("features must be a 2-D array")
        if y.shape != (x.shape[0],):
            raise ValueError("labels must be 1-D with one entry per example")
        if x.shape[0] == 0:
            raise ValueError("dataset must be non-empty")
        if self.num_classes < 1:
            raise ValueError("num_classes must be positive")
        if y.min() < 0 or y.max() >= self.num_classes:
            raise ValueError("labels must lie in [0, num_classes)")
        if self.image_shape is not None and math.prod(self.image_shape) != x.shape[1]:
            raise ValueError("image_shape does not match feature length")
        object.__setattr__(self, "features", x)
        object.__setattr__(self, "labels", y)
        if self.feature_range is None:
            object.__setattr__(self, "feature_range", (x.min(axis=0), x.max(axis=0)))

    def __len__(self) -> int:
        return self.features.shape[0]

    def __getitem__(self, i: int) -> Example:
        return Example(self.features[i], int(self.labels[i]))

    @property
    def d_in(self) -> int:
        return self.features.shape[1]

    def subset(self, indices) -> "Dataset":
        idx = np.asarray(indices, dtype=np.int64)
        return replace(self, features=self.features[idx], labels=self.labels[idx])

    def with_data(self, features: np.ndarray, labels: np.ndarray) -> "Dataset":
        """Same metadata (classes, recorded range, geometry), new rows."""
        return replace(self, features=features, labels=labels)

    def class_counts(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.num_classes)


def _encode_labels(raw: list[str]) -> tuple[np.ndarray, int]:
    # integer labels that already form 0..K-1 are kept; anything else is
    # encoded by first appearance
    try:
        ints = [int(v) for v in raw]
    except ValueError:
        ints = None
    if ints is not None and set(ints) == set(range(max(ints) + 1)):
        return np.array(ints, dtype=np.int64), max(ints) + 1
    mapping: dict[str, int] = {}
    out = np.empty(len(raw), dtype=np.int64)
    for i, v in enumerate(raw):
        out[i] = mapping.setdefault(v, len(mapping))
    return out, len(mapping)


def _parse_float(cell: str) -> float | None:
    try:
        value = float(cell)
    except ValueError:
        return None
    return value if math.isfinite(value) else None


def load_csv_dataset(path, label_column: str, feature_columns: Sequence[str] | str = "all-others") -> Dataset:
    """Load a headed, comma-separated table.

    Columns whose every cell parses as a finite float are numeric; any other
    column is categorical and integer-encoded by first appearance. Empty
    cells cannot be encoded and raise `ParseError`.
    """
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise SchemaError(f"{path}: missing header row") from None
        rows = [row for row in reader if row]

    if label_column not in header:
        raise SchemaError(f"{path}: label column {label_column!r} not found")
    if feature_columns == "all-others":
        feature_columns = [h for h in header if h != label_column]
    else:
        feature_columns = list(feature_columns)
        missing = [c for c in feature_columns if c not in header]
        if missing:
            raise SchemaError(f"{path}: feature columns not found: {missing}")
    if not feature_columns:
        raise SchemaError(f"{path}: no feature columns")
    if not rows:
        raise SchemaError(f"{path}: no data rows")

    col_idx = {name: header.index(name) for name in header}
    for r, row in enumerate(rows, start=1):
        if len(row) != len(header):
            raise ParseError(f"expected {len(header)} cells, found {len(row)}", r)

    features = np.empty((len(rows), len(feature_columns)), dtype=np.float64)
    for j, name in enumerate(feature_columns):
        cells = [row[col_idx[name]].strip() for row in rows]
        parsed = [_parse_float(c) for c in cells]
        if all(v is not None for v in parsed):
            features[:, j] = parsed
            continue
        mapping: dict[str, int] = {}
        for r, cell in enumerate(cells, start=1):
            if cell == "":
                raise ParseError(f"empty cell in column {name!r}", r)
            features[r - 1, j] = mapping.setdefault(cell, len(mapping))

    raw_labels = [row[col_idx[label_column]].strip() for row in rows]
    for r, cell in enumerate(raw_labels, start=1):
        if cell == "":
            raise ParseError(f"empty label in column {label_column!r}", r)
    labels, k = _encode_labels(raw_labels)
    return Dataset(features, labels, k, feature_names=tuple(feature_columns))


def write_csv_dataset(ds: Dataset, path, label_column: str = "label") -> None:
    names = ds.feature_names or tuple(f"f{j}" for j in range(ds.d_in))
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow([*names, label_column])
        for x, y in zip(ds.features, ds.labels):
            writer.writerow([*(repr(float(v)) for v in x), int(y)])


def _read_exact(fh, n: int, path: Path) -> bytes:
    data = fh.read(n)
    if len(data) != n:
        raise FormatError(f"{path}: truncated payload (wanted {n} bytes, got {len(data)})")
    return data


def read_idx_images(path) -> np.ndarray:
    """Return a uint8 array of shape (count, rows, cols)."""
    path = Path(path)
    with path.open("rb") as fh:
        magic, = struct.unpack(">I", _read_exact(fh, 4, path))
        if magic != IDX_IMAGE_MAGIC:
            raise FormatError(f"{path}: bad magic {magic}, expected {IDX_IMAGE_MAGIC}")
        count, rows, cols = struct.unpack(">III", _read_exact(fh, 12, path))
        payload = _read_exact(fh, count * rows * cols, path)
    return np.frombuffer(payload, dtype=np.uint8).reshape(count, rows, cols)


def read_idx_labels(path) -> np.ndarray:
    path = Path(path)
    with path.open("rb") as fh:
        magic, = struct.unpack(">I", _read_exact(fh, 4, path))
        if magic != IDX_LABEL_MAGIC:
            raise FormatError(f"{path}: bad magic {magic}, expected {IDX_LABEL_MAGIC}")
        count, = struct.unpack(">I", _read_exact(fh, 4, path))
        payload = _read_exact(fh, count, path)
    return np.frombuffer(payload, dtype=np.uint8)


def load_idx_images(images_path, labels_path, num_classes: int | None = None) -> Dataset:
    images = read_idx_images(images_path)
    labels = read_idx_labels(labels_path)
    if images.shape[0] != labels.shape[0]:
        raise FormatError(
            f"{labels_path}: label count {labels.shape[0]} does not match "
            f"image count {images.shape[0]} in {images_path}"
        )
    n, rows, cols = images.shape
    if n == 0:
        raise FormatError(f"{images_path}: file holds no images")
    k = num_classes if num_classes is not None else int(labels.max()) + 1
    return Dataset(
        images.reshape(n, rows * cols).astype(np.float64),
        labels.astype(np.int64),
        k,
        image_shape=(rows, cols, 1),
    )


def write_idx(images: np.ndarray, labels: np.ndarray, images_path, labels_path) -> None:
    images = np.asarray(images, dtype=np.uint8)
    labels = np.asarray(labels, dtype=np.uint8)
    n, rows, cols = images.shape
    with Path(images_path).open("wb") as fh:
        fh.write(struct.pack(">IIII", IDX_IMAGE_MAGIC, n, rows, cols))
        fh.write(images.tobytes())
    with Path(labels_path).open("wb") as fh:
        fh.write(struct.pack(">II", IDX_LABEL_MAGIC, labels.shape[0]))
        fh.write(labels.tobytes())


def normalize_features(ds: Dataset, method: str = "none") -> Dataset:
    """Rescale features. `minmax_01` uses the range recorded at load time,
    so data altered afterwards (e.g. planted signals) is mapped with the
    clean scale and may leave [0, 1]."""
    if method not in NORMALIZATION_METHODS:
        raise ValueError(f"unknown normalization {method!r}; choose from {NORMALIZATION_METHODS}")
    if method == "none":
        return ds
    lo, hi = ds.feature_range
    if method == "divide_by_255":
        x = ds.features / 255.0
        rng = (lo / 255.0, hi / 255.0)
    else:
        span = hi - lo
        safe = np.where(span > 0, span, 1.0)
        x = np.where(span > 0, (ds.features - lo) / safe, 0.0)
        rng = (np.zeros_like(lo), np.where(span > 0, 1.0, 0.0))
    return replace(ds, features=x, feature_range=rng)


def split(ds: Dataset, fraction: float, seed: int) -> tuple[Dataset, Dataset]:
    if not 0.0 < fraction < 1.0:
        raise ValueError(f"fraction must lie in (0, 1), got {fraction}")
    n = len(ds)
    k = int(round(fraction * n))
    if k == 0 or k == n:
        raise ValueError(f"fraction {fraction} of {n} examples leaves one side empty")
    perm = np.random.default_rng(seed).permutation(n)
    return ds.subset(np.sort(perm[:k])), ds.subset(np.sort(perm[k:]))


def subsample_balanced(ds: Dataset, per_class: int, seed: int) -> Dataset:
    counts = ds.class_counts()
    for c, count in enumerate(counts):
        if count < per_class:
            raise ValueError(f"class {c} has {count} examples, fewer than per_class={per_class}")
    rng = np.random.default_rng(seed)
    chosen = [
        rng.choice(np.flatnonzero(ds.labels == c), size=per_class, replace=False)
        for c in range(ds.num_classes)
    ]
    return ds.subset(np.sort(np.concatenate(chosen)))


def make_gaussian_blobs(
    n: int,
    d_in: int,
    num_classes: int = 2,
    separation: float = 3.0,
    noise: float = 1.0,
    seed: int = 0,
) -> Dataset:
    """Isotropic Gaussian clusters; classes are balanced up to one.

    Class means lie along random orthogonal directions, `separation` apart.
    With more classes than dimensions the directions are random unit
    vectors instead, so the spacing is only approximate.
    """
    rng = np.random.default_rng(seed)
    if num_classes <= d_in:
        basis, _ = np.linalg.qr(rng.standard_normal((d_in, num_classes)))
    else:
        basis = rng.standard_normal((d_in, num_classes))
        basis /= np.linalg.norm(basis, axis=0)
    means = separation / math.sqrt(2.0) * basis.T
    labels = np.arange(n) % num_classes
    rng.shuffle(labels)
    features = means[labels] + noise * rng.standard_normal((n, d_in))
    return Dataset(features, labels, num_classes)
