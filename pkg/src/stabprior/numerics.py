"""Dense float64 arithmetic and seeded random streams.

Matrices and vectors are plain ``numpy.ndarray`` objects of dtype float64,
stored row-major. Random streams use the counter-based Philox bit generator;
Gaussian draws are produced by numpy's ziggurat transform of that stream, so a
seed fixes every sampled value bit-for-bit.
"""
from __future__ import annotations

import numpy as np

Matrix = np.ndarray
Vector = np.ndarray

DTYPE = np.float64


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible."""


def as_matrix(a) -> Matrix:
    m = np.ascontiguousarray(a, dtype=DTYPE)
    if m.ndim != 2:
        raise ShapeError(f"expected a 2-d matrix, got shape {m.shape}")
    return m


def as_vector(a) -> Vector:
    v = np.ascontiguousarray(a, dtype=DTYPE)
    if v.ndim != 1:
        raise ShapeError(f"expected a 1-d vector, got shape {v.shape}")
    return v


def matmul(a: Matrix, b: Matrix) -> Matrix:
    a = np.asarray(a, dtype=DTYPE)
    b = np.asarray(b, dtype=DTYPE)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"cannot multiply {a.shape} by {b.shape}")
    return a @ b


def make_rng(seed: int) -> np.random.Generator:
    """Return an independent stream for ``seed`` (any non-negative int)."""
    if seed < 0:
        raise ValueError("seed must be non-negative")
    return np.random.Generator(np.random.Philox(seed))


def derive_seed(*parts: int) -> int:
    """Deterministically combine integers into a 64-bit seed.

    Used to hand every experiment cell its own stream.
    """
    ss = np.random.SeedSequence([int(p) for p in parts])
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def standard_normal(rng: np.random.Generator, n: int) -> Vector:
    if n < 1:
        raise ValueError("n must be at least 1")
    return rng.standard_normal(n, dtype=DTYPE)
