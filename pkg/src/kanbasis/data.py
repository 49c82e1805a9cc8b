"""Datasets: MNIST IDX files, stratified subsets and small synthetic tasks."""

from __future__ import annotations

import gzip
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DataError, FormatError

IMAGES_MAGIC = 0x00000803
LABELS_MAGIC = 0x00000801

MNIST_FILES = {
    "train_images": "train-images-idx3-ubyte",
    "train_labels": "train-labels-idx1-ubyte",
    "test_images": "t10k-images-idx3-ubyte",
    "test_labels": "t10k-labels-idx1-ubyte",
}


@dataclass(frozen=True)
class Dataset:
    """Inputs plus either class labels or regression targets."""

    inputs: np.ndarray
    labels: np.ndarray | None = None
    targets: np.ndarray | None = None
    num_classes: int = 0
    kind: str = "classification"

    def __post_init__(self):
        n = self.inputs.shape[0]
        if self.labels is not None:
            if self.labels.shape != (n,):
                raise DataError(f"{n} inputs but labels have shape {self.labels.shape}")
            if n and (self.labels.min() < 0 or self.labels.max() >= self.num_classes):
                raise DataError(f"labels outside [0, {self.num_classes})")
        if self.targets is not None and self.targets.shape[0] != n:
            raise DataError(f"{n} inputs but {self.targets.shape[0]} targets")

    def __len__(self):
        return self.inputs.shape[0]

    def take(self, idx) -> "Dataset":
        return Dataset(
            self.inputs[idx],
            None if self.labels is None else self.labels[idx],
            None if self.targets is None else self.targets[idx],
            self.num_classes,
            self.kind,
        )


def _read_bytes(path) -> bytes:
    path = Path(path)
    if path.suffix in (".gz", ".gzip"):
        with gzip.open(path, "rb") as f:
            return f.read()
    return path.read_bytes()


def _parse_idx(raw: bytes, magic: int, ndim: int, path) -> np.ndarray:
    header = 4 + 4 * ndim
    if len(raw) < header:
        raise FormatError(f"{path}: file too short for IDX header ({len(raw)} bytes)")
    (found,) = struct.unpack(">I", raw[:4])
    if found != magic:
        raise FormatError(f"{path}: bad magic 0x{found:08x}, expected 0x{magic:08x}")
    dims = struct.unpack(f">{ndim}I", raw[4:header])
    expected = int(np.prod(dims))
    actual = len(raw) - header
    if actual != expected:
        raise FormatError(f"{path}: payload has {actual} bytes, expected {expected} for dims {dims}")
    return np.frombuffer(raw, dtype=np.uint8, offset=header).reshape(dims)


def load_idx_images(path) -> np.ndarray:
    """``[n x rows*cols]`` float64 pixels scaled to ``[0, 1]``."""
    raw = _parse_idx(_read_bytes(path), IMAGES_MAGIC, 3, path)
    return raw.reshape(raw.shape[0], -1).astype(np.float64) / 255.0


def load_idx_labels(path) -> np.ndarray:
    return _parse_idx(_read_bytes(path), LABELS_MAGIC, 1, path).astype(np.int64)


def write_idx(path, array) -> None:
    """Write a uint8 array as IDX (images if 3-D, labels if 1-D); gzip if the name ends in .gz."""
    a = np.ascontiguousarray(array, dtype=np.uint8)
    magic = {3: IMAGES_MAGIC, 1: LABELS_MAGIC}.get(a.ndim)
    if magic is None:
        raise DataError(f"IDX writer supports 1-D labels or 3-D images, got {a.ndim}-D")
    payload = struct.pack(f">I{a.ndim}I", magic, *a.shape) + a.tobytes()
    path = Path(path)
    if path.suffix in (".gz", ".gzip"):
        with gzip.open(path, "wb") as f:
            f.write(payload)
    else:
        path.write_bytes(payload)


def find_mnist_file(directory, key: str) -> Path:
    base = Path(directory)
    name = MNIST_FILES[key]
    for candidate in (base / name, base / f"{name}.gz"):
        if candidate.exists():
            return candidate
    raise DataError(f"missing MNIST file {name}[.gz] in {base}; expected files: {', '.join(MNIST_FILES.values())}")


def load_mnist(directory, split: str = "train") -> Dataset:
    """Load the ``train`` or ``test`` split from a directory of IDX files."""
    images = load_idx_images(find_mnist_file(directory, f"{split}_images"))
    labels = load_idx_labels(find_mnist_file(directory, f"{split}_labels"))
    if images.shape[0] != labels.shape[0]:
        raise DataError(f"{images.shape[0]} images but {labels.shape[0]} labels")
    return Dataset(images, labels, num_classes=10)


def subset(ds: Dataset, n: int, seed: int) -> Dataset:
    """Seeded class-stratified sample of ``n`` rows.

    Classes receive equal quotas; a class that runs out of rows hands its
    unused quota to the others, so ``n == len(ds)`` returns a permutation of
    the whole dataset. Regression data is sampled uniformly.
    """
    size = len(ds)
    if not 0 < n <= size:
        raise DataError(f"subset size must be in [1, {size}], got {n}")
    rng = np.random.default_rng(seed)
    if ds.labels is None:
        return ds.take(np.sort(rng.choice(size, n, replace=False)))

    classes = np.arange(ds.num_classes)
    pools = [rng.permutation(np.flatnonzero(ds.labels == c)) for c in classes]
    avail = np.array([len(p) for p in pools])
    quota = np.zeros(len(classes), dtype=np.int64)
    remaining = n
    while remaining > 0:
        open_ = np.flatnonzero(quota < avail)
        share, extra = divmod(remaining, len(open_))
        # leftover units go to classes in a seeded order
        bonus = np.zeros(len(open_), dtype=np.int64)
        bonus[rng.permutation(len(open_))[:extra]] = 1
        want = np.minimum(quota[open_] + share + bonus, avail[open_])
        remaining -= int(np.sum(want - quota[open_]))
        quota[open_] = want
    idx = np.concatenate([p[:q] for p, q in zip(pools, quota)])
    return ds.take(rng.permutation(idx))


def train_val_split(ds: Dataset, seed: int, val_size: int = 10_000) -> tuple[Dataset, Dataset]:
    """Shuffle with ``seed`` and hold out the last ``val_size`` rows."""
    if not 0 < val_size < len(ds):
        raise DataError(f"validation size must be in [1, {len(ds) - 1}], got {val_size}")
    order = np.random.default_rng(seed).permutation(len(ds))
    return ds.take(order[:-val_size]), ds.take(order[-val_size:])


SYNTH_TASKS = {
    "sine": (1, lambda x: np.sin(np.pi * x[:, 0])),
    "gaussian_bump": (2, lambda x: np.exp(-4.0 * (x[:, 0] ** 2 + x[:, 1] ** 2))),
    "product": (2, lambda x: x[:, 0] * x[:, 1]),
}


def synth_target(name: str, x) -> np.ndarray:
    if name not in SYNTH_TASKS:
        raise DataError(f"unknown synthetic task {name!r}; choose from {sorted(SYNTH_TASKS)}")
    return SYNTH_TASKS[name][1](np.atleast_2d(np.asarray(x, dtype=np.float64)))


def synth_regression(name: str, n: int, seed: int) -> Dataset:
    """``n`` seeded uniform points in ``[-1, 1]^d`` with the named target function."""
    if name not in SYNTH_TASKS:
        raise DataError(f"unknown synthetic task {name!r}; choose from {sorted(SYNTH_TASKS)}")
    dim, _ = SYNTH_TASKS[name]
    x = np.random.default_rng(seed).uniform(-1.0, 1.0, size=(n, dim))
    return Dataset(x, targets=synth_target(name, x)[:, None], kind="regression")


def xor() -> Dataset:
    x = np.array([[0.0, 0.0], [0.0, 1.0], [1.0, 0.0], [1.0, 1.0]])
    return Dataset(x, np.array([0, 1, 1, 0]), num_classes=2)
