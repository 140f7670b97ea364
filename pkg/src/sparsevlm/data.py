"""Synthetic two-modality classification data.

Every sample picks a latent vision class ``c_v`` and a latent text class
``c_t`` uniformly, emits the matching prototypes plus Gaussian noise, and is
labelled ``(c_v + c_t) mod C``. Neither modality alone carries information
about the label, so a classifier has to fuse both.

Dataset file layout (``SVLD1``, all little-endian)::

    b"SVLD1"
    u32 count, u32 d_v, u32 d_t, u32 classes
    f64[count * d_v]   vision inputs, row-major
    f64[count * d_t]   text inputs, row-major
    u16[count]         labels
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import FormatError, InputError
from .numeric import STREAM_DATA, make_rng

DATA_MAGIC = b"SVLD1"
_HEADER = struct.Struct("<4I")


@dataclass(frozen=True)
class TaskSpec:
    classes: int = 8
    d_v: int = 8
    d_t: int = 32
    noise: float = 0.3

    def __post_init__(self):
        if self.classes < 2:
            raise InputError("need at least two classes")
        if self.classes > 65535:
            raise InputError("labels are stored as u16")
        if self.noise < 0:
            raise InputError("noise must be non-negative")
        if self.d_v < 1 or self.d_t < 1:
            raise InputError("input dims must be positive")


@dataclass
class Dataset:
    """Column-stacked samples: row ``i`` of each array is sample ``i``."""

    vision: np.ndarray
    text: np.ndarray
    labels: np.ndarray
    classes: int

    def __post_init__(self):
        self.vision = np.asarray(self.vision, dtype=np.float64)
        self.text = np.asarray(self.text, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        n = len(self.labels)
        if self.vision.ndim != 2 or self.text.ndim != 2 or len(self.vision) != n or len(self.text) != n:
            raise InputError("vision/text must be 2-D with one row per label")
        if np.any(self.labels < 0) or np.any(self.labels >= self.classes):
            raise InputError("label out of range")

    def __len__(self) -> int:
        return len(self.labels)

    def __getitem__(self, idx) -> "Dataset":
        idx = np.atleast_1d(np.arange(len(self))[idx])
        return Dataset(self.vision[idx], self.text[idx], self.labels[idx], self.classes)

    def samples(self):
        """Yield ``(vision_in, text_in, label)`` triples."""
        for i in range(len(self)):
            yield self.vision[i], self.text[i], int(self.labels[i])

    def equals(self, other: "Dataset") -> bool:
        return (
            self.classes == other.classes
            and np.array_equal(self.vision, other.vision)
            and np.array_equal(self.text, other.text)
            and np.array_equal(self.labels, other.labels)
        )


def generate(spec: TaskSpec, count: int, seed: int) -> Dataset:
    if count < 0:
        raise InputError("count must be non-negative")
    rng = make_rng(seed, STREAM_DATA)
    proto_v = rng.standard_normal((spec.classes, spec.d_v))
    proto_t = rng.standard_normal((spec.classes, spec.d_t))
    c_v = rng.integers(0, spec.classes, size=count)
    c_t = rng.integers(0, spec.classes, size=count)
    vision = proto_v[c_v] + spec.noise * rng.standard_normal((count, spec.d_v))
    text = proto_t[c_t] + spec.noise * rng.standard_normal((count, spec.d_t))
    labels = (c_v + c_t) % spec.classes
    return Dataset(vision, text, labels, spec.classes)


def split(data: Dataset, calib_count: int = 128, eval_count: int = 500):
    """Deterministic disjoint ``(train, calib, eval)`` split.

    Samples are already i.i.d., so the split is positional: eval takes the last
    ``eval_count`` rows, calibration the ``calib_count`` rows before those, and
    training everything in front.
    """
    if calib_count < 1 or eval_count < 0:
        raise InputError("calib_count must be >= 1 and eval_count >= 0")
    n = len(data)
    n_train = n - calib_count - eval_count
    if n_train < 0:
        raise InputError(f"{n} samples cannot hold {calib_count} calibration + {eval_count} eval samples")
    train = data[:n_train]
    calib = data[n_train : n_train + calib_count]
    evals = data[n_train + calib_count :]
    return train, calib, evals


def save_dataset(data: Dataset, path) -> None:
    d_v = data.vision.shape[1]
    d_t = data.text.shape[1]
    with open(path, "wb") as fh:
        fh.write(DATA_MAGIC)
        fh.write(_HEADER.pack(len(data), d_v, d_t, data.classes))
        fh.write(data.vision.astype("<f8").tobytes())
        fh.write(data.text.astype("<f8").tobytes())
        fh.write(data.labels.astype("<u2").tobytes())


def load_dataset(path) -> Dataset:
    raw = Path(path).read_bytes()
    if raw[:5] != DATA_MAGIC:
        raise FormatError(f"{path}: not an SVLD1 dataset")
    try:
        count, d_v, d_t, classes = _HEADER.unpack_from(raw, 5)
        off = 5 + _HEADER.size
        sizes = (count * d_v * 8, count * d_t * 8, count * 2)
        if len(raw) != off + sum(sizes):
            raise FormatError(f"{path}: truncated or oversized dataset body")
        vision = np.frombuffer(raw, "<f8", count * d_v, off).astype(np.float64)
        off += sizes[0]
        text = np.frombuffer(raw, "<f8", count * d_t, off).astype(np.float64)
        off += sizes[1]
        labels = np.frombuffer(raw, "<u2", count, off).astype(np.int64)
        return Dataset(vision.reshape(count, d_v), text.reshape(count, d_t), labels, classes)
    except (struct.error, ValueError) as exc:
        if isinstance(exc, FormatError):
            raise
        raise FormatError(f"{path}: {exc}") from exc
