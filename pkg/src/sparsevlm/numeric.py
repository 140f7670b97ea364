"""Dense float64 kernels with a fixed reduction order, plus the seeded RNG.

Matrices are plain 2-D ``numpy.float64`` arrays and masks are 2-D boolean
arrays of the same shape. Everything reproducible in this package routes its
reductions through :func:`matmul` so results do not depend on the BLAS build.

Random numbers come from Philox-4x64-10, a counter-based generator, keyed via
``numpy.random.SeedSequence([seed, stream])``. Only the raw 64-bit stream is
covered by numpy's cross-version stability guarantee; ``tests/test_numeric.py``
pins the first outputs for seed 0 as test vectors.
"""

from __future__ import annotations

import math

import numpy as np

from .errors import DimensionError, DomainError

# Named RNG streams so independent consumers of one seed never overlap.
STREAM_DATA = 0
STREAM_INIT = 1
STREAM_SHUFFLE = 2
STREAM_ADAPTER = 3


def make_rng(seed: int, stream: int = 0) -> np.random.Generator:
    """Philox generator for ``(seed, stream)``."""
    if seed < 0:
        raise DomainError(f"seed must be non-negative, got {seed}")
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), int(stream)])))


def as_matrix(x, name: str = "matrix") -> np.ndarray:
    a = np.asarray(x, dtype=np.float64)
    if a.ndim != 2:
        raise DimensionError(f"{name} must be 2-D, got shape {a.shape}")
    return a


def matmul(a, b) -> np.ndarray:
    """Matrix product summed in ascending ``k`` order.

    Each output entry is accumulated exactly like ``s = 0.0; s += a[i,k]*b[k,j]``
    for ``k = 0..K-1`` (separate multiply and add, no fused operations), so it
    is bit-identical to the textbook triple loop.
    """
    a = as_matrix(a, "a")
    b = as_matrix(b, "b")
    if a.shape[1] != b.shape[0]:
        raise DimensionError(f"cannot multiply {a.shape} by {b.shape}")
    out = np.zeros((a.shape[0], b.shape[1]))
    for k in range(a.shape[1]):
        out += a[:, k : k + 1] * b[k : k + 1, :]
    return out


def hadamard_mask(w, m) -> np.ndarray:
    """Zero ``w`` wherever ``m`` is False; kept entries are copied exactly."""
    w = as_matrix(w, "w")
    m = np.asarray(m, dtype=bool)
    if w.shape != m.shape:
        raise DimensionError(f"mask shape {m.shape} does not match weight shape {w.shape}")
    return np.where(m, w, 0.0)


def softmax_row(v) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    if v.ndim != 1 or v.size == 0:
        raise DomainError("softmax_row needs a nonempty 1-D vector")
    if not np.all(np.isfinite(v)):
        raise DomainError("softmax_row input must be finite")
    e = np.exp(v - v.max())
    return e / e.sum()


def log_softmax(z: np.ndarray) -> np.ndarray:
    """Row-wise log-softmax of a 1-D or 2-D array."""
    z = np.asarray(z, dtype=np.float64)
    shifted = z - z.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def softmax(z: np.ndarray) -> np.ndarray:
    """Row-wise softmax of a 1-D or 2-D array."""
    return np.exp(log_softmax(z))


def kl_divergence(p, q) -> float:
    """``sum p * ln(p / q)`` with the convention ``0 * ln(0 / q) = 0``."""
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if p.shape != q.shape or p.ndim != 1:
        raise DimensionError(f"kl_divergence needs equal-length vectors, got {p.shape} and {q.shape}")
    if np.any(p < 0) or np.any(q < 0):
        raise DomainError("probabilities must be non-negative")
    if abs(p.sum() - 1.0) > 1e-9 or abs(q.sum() - 1.0) > 1e-9:
        raise DomainError("probability vectors must sum to 1")
    support = p > 0
    if np.any(q[support] == 0):
        raise DomainError("q is zero where p is positive")
    total = 0.0
    for pi, qi in zip(p[support], q[support]):
        total += pi * math.log(pi / qi)
    return max(total, 0.0)


def zero_blocks(m: np.ndarray, block: int) -> np.ndarray:
    """Count of False entries in each aligned block of ``block`` columns."""
    m = np.asarray(m, dtype=bool)
    rows, cols = m.shape
    if cols % block:
        raise DimensionError(f"block size {block} does not divide {cols} columns")
    return (~m).reshape(rows, cols // block, block).sum(axis=2)


def pack_mask(m: np.ndarray) -> bytes:
    """Row-major packed bits, least significant bit first."""
    return np.packbits(np.asarray(m, dtype=bool).ravel(), bitorder="little").tobytes()


def unpack_mask(data: bytes, rows: int, cols: int) -> np.ndarray:
    bits = np.unpackbits(np.frombuffer(data, dtype=np.uint8), count=rows * cols, bitorder="little")
    return bits.astype(bool).reshape(rows, cols)
