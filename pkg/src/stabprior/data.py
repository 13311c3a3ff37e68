"""Datasets: IDX and CSV readers, the bundled digits set, two moons, batching."""
from __future__ import annotations

import csv
import gzip
import math
import os
import struct
from dataclasses import dataclass, replace
from typing import Iterator

import numpy as np

IMAGE_MAGIC = 0x00000803
LABEL_MAGIC = 0x00000801


class DataFormatError(ValueError):
    pass


@dataclass(frozen=True)
class Dataset:
    inputs: np.ndarray
    targets: np.ndarray
    split: str = "train"
    num_classes: int | None = None

    def __post_init__(self):
        x = np.asarray(self.inputs, dtype=np.float64)
        if x.ndim != 2:
            raise DataFormatError("inputs must be a 2-d (examples, features) array")
        if len(self.targets) != x.shape[0]:
            raise DataFormatError(f"{x.shape[0]} inputs but {len(self.targets)} targets")
        if not np.all(np.isfinite(x)):
            raise DataFormatError("inputs contain non-finite values")
        x.setflags(write=False)
        object.__setattr__(self, "inputs", x)
        t = np.asarray(self.targets)
        if self.num_classes is not None:
            t = t.astype(np.int64)
            if t.size and (t.min() < 0 or t.max() >= self.num_classes):
                raise DataFormatError(f"class index outside [0, {self.num_classes})")
        t.setflags(write=False)
        object.__setattr__(self, "targets", t)

    def __len__(self):
        return self.inputs.shape[0]

    @property
    def n_features(self) -> int:
        return self.inputs.shape[1]

    def take(self, idx, split: str | None = None) -> "Dataset":
        return replace(self, inputs=self.inputs[idx], targets=self.targets[idx], split=split or self.split)


def _read_bytes(path) -> bytes:
    with open(path, "rb") as fh:
        raw = fh.read()
    return gzip.decompress(raw) if raw[:2] == b"\x1f\x8b" else raw


def _parse_idx(raw: bytes, expected_magic: int, path) -> np.ndarray:
    if len(raw) < 8:
        raise DataFormatError(f"{path}: truncated IDX header")
    magic = struct.unpack(">I", raw[:4])[0]
    if magic != expected_magic:
        raise DataFormatError(f"{path}: expected magic 0x{expected_magic:08x}, found 0x{magic:08x}")
    ndim = magic & 0xFF
    header = 4 + 4 * ndim
    if len(raw) < header:
        raise DataFormatError(f"{path}: truncated IDX header")
    dims = struct.unpack(f">{ndim}I", raw[4:header])
    n = math.prod(dims)
    if len(raw) - header < n:
        raise DataFormatError(f"{path}: truncated IDX body, expected {n} bytes, found {len(raw) - header}")
    return np.frombuffer(raw, dtype=np.uint8, count=n, offset=header).reshape(dims)


def load_idx(images_path, labels_path, split: str = "train", num_classes: int = 10) -> Dataset:
    """Read an unsigned-byte IDX image/label pair; pixels are scaled to [0, 1]."""
    images = _parse_idx(_read_bytes(images_path), IMAGE_MAGIC, images_path)
    labels = _parse_idx(_read_bytes(labels_path), LABEL_MAGIC, labels_path)
    if images.shape[0] != labels.shape[0]:
        raise DataFormatError(f"{images.shape[0]} images but {labels.shape[0]} labels")
    x = images.reshape(images.shape[0], -1).astype(np.float64) / 255.0
    return Dataset(x, labels.astype(np.int64), split, num_classes)


def write_idx(path, array) -> None:
    """Write a uint8 array as IDX (rank 1 uses the label magic, rank 3 the image magic)."""
    a = np.asarray(array)
    if a.dtype != np.uint8:
        raise DataFormatError("IDX writer handles unsigned bytes only")
    with open(path, "wb") as fh:
        fh.write(struct.pack(">I", 0x0800 | a.ndim))
        fh.write(struct.pack(f">{a.ndim}I", *a.shape))
        fh.write(np.ascontiguousarray(a).tobytes())


def load_csv(path, split: str = "train", num_classes: int | None = None) -> Dataset:
    """Header row, then numeric features with the integer class in the last column."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if len(rows) < 2:
        raise DataFormatError(f"{path}: no data rows")
    body = np.array(rows[1:], dtype=np.float64)
    y = body[:, -1]
    if np.any(y != np.round(y)):
        raise DataFormatError(f"{path}: last column must hold integer classes")
    y = y.astype(np.int64)
    k = num_classes if num_classes is not None else int(y.max()) + 1
    return Dataset(body[:, :-1], y, split, k)


MNIST_FILES = {
    "train": ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
    "test": ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
}


def _find(directory, stem) -> str:
    for name in (stem, stem + ".gz", stem.replace("-idx", ".idx")):
        p = os.path.join(directory, name)
        if os.path.exists(p):
            return p
    raise FileNotFoundError(os.path.join(directory, stem))


def load_mnist_subset(directory, n_train: int = 4096, n_test: int = 1024) -> tuple[Dataset, Dataset]:
    """Leading ``n_train`` / ``n_test`` examples of the standard IDX files in ``directory``."""
    out = []
    for split, n in (("train", n_train), ("test", n_test)):
        images, labels = MNIST_FILES[split]
        ds = load_idx(_find(directory, images), _find(directory, labels), split)
        out.append(ds.take(slice(0, n)))
    return out[0], out[1]


def load_digits_split(n_train: int = 1297, n_test: int = 500, split_seed: int = 0) -> tuple[Dataset, Dataset]:
    """The 8x8 handwritten digits bundled with scikit-learn, pixels scaled to [0, 1].

    A fixed permutation (``split_seed``) separates train from test.
    """
    from sklearn.datasets import load_digits

    d = load_digits()
    x = d.data / 16.0
    y = d.target.astype(np.int64)
    if n_train + n_test > len(y):
        raise ValueError(f"only {len(y)} digits available, asked for {n_train + n_test}")
    perm = np.random.Generator(np.random.Philox(split_seed)).permutation(len(y))
    full = Dataset(x, y, "train", 10)
    return full.take(perm[:n_train], "train"), full.take(perm[n_train:n_train + n_test], "test")


def gen_two_moons(n: int, noise: float, rng, split: str = "train") -> Dataset:
    """Two interleaved unit semicircles; class 1 is the flipped arc centred at (1, 0.5)."""
    if n < 2 or n % 2:
        raise ValueError("n must be a positive even number")
    half = n // 2
    t = np.linspace(0.0, math.pi, half)
    upper = np.stack([np.cos(t), np.sin(t)], axis=1)
    lower = np.stack([1.0 - np.cos(t), 0.5 - np.sin(t)], axis=1)
    x = np.concatenate([upper, lower])
    if noise > 0.0:
        x = x + noise * rng.standard_normal(x.shape)
    y = np.repeat(np.arange(2, dtype=np.int64), half)
    return Dataset(x, y, split, 2)


def batch_indices(n: int, batch_size: int, rng=None, shuffle: bool = True) -> Iterator[np.ndarray]:
    if batch_size < 1:
        raise ValueError("batch size must be at least 1")
    order = rng.permutation(n) if shuffle else np.arange(n)
    for start in range(0, n, batch_size):
        yield order[start:start + batch_size]


def batches(ds: Dataset, batch_size: int, rng=None, shuffle: bool = True):
    """One epoch of ``(inputs, targets)`` minibatches; the last one may be short."""
    if shuffle and rng is None:
        raise ValueError("shuffling needs an rng")
    for idx in batch_indices(len(ds), batch_size, rng, shuffle):
        yield ds.inputs[idx], ds.targets[idx]


@dataclass(frozen=True)
class NormStats:
    mean: np.ndarray
    scale: np.ndarray


def fit_normaliser(ds: Dataset, min_scale: float = 1e-8) -> NormStats:
    """Per-feature mean and std; constant features keep unit scale."""
    mean = ds.inputs.mean(axis=0)
    std = ds.inputs.std(axis=0)
    return NormStats(mean, np.where(std > min_scale, std, 1.0))


def normalise(ds: Dataset, stats: NormStats) -> Dataset:
    return replace(ds, inputs=(ds.inputs - stats.mean) / stats.scale)


def denormalise(ds: Dataset, stats: NormStats) -> Dataset:
    return replace(ds, inputs=ds.inputs * stats.scale + stats.mean)
