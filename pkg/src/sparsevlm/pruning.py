"""Calibration-based weight scoring and mask construction.

Masks keep the highest-scoring weights. Ranking is exact top-k over a
comparison group with ties resolved by position: order entries by
``(score descending, flat index ascending)`` and prune from the tail. With
``n`` entries in a group and ratio ``s`` the group keeps ``ceil((1 - s) * n)``.
N:M patterns rank inside each aligned block of ``m`` input columns and prune
the ``n`` tail entries of every block.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from .data import Dataset
from .errors import DimensionError, InputError
from .model import PRUNABLE, Modality, ToyVlm, WeightMode, backward, effective_weight, forward
from .objectives import batch_losses


class ScoringMetric(enum.Enum):
    MAGNITUDE = "magnitude"
    GRADIENT = "gradient"
    WANDA = "wanda"


class Group(enum.Enum):
    PER_LAYER = "per_layer"
    PER_OUTPUT_ROW = "per_output_row"
    GLOBAL = "global"


def default_group(metric: ScoringMetric) -> Group:
    return Group.PER_OUTPUT_ROW if metric is ScoringMetric.WANDA else Group.PER_LAYER


@dataclass(frozen=True)
class SparsitySpec:
    """Either ``ratio`` (unstructured) or ``n`` of every ``m`` pruned."""

    ratio: float = 0.0
    n: int = 0
    m: int = 0
    group: Group = Group.PER_LAYER

    def __post_init__(self):
        if self.m:
            if not 0 <= self.n < self.m:
                raise InputError(f"N:M needs 0 <= n < m, got {self.n}:{self.m}")
        elif not 0.0 <= self.ratio <= 1.0:
            raise InputError(f"sparsity ratio must lie in [0, 1], got {self.ratio}")

    @classmethod
    def unstructured(cls, ratio: float, group: Group = Group.PER_LAYER) -> "SparsitySpec":
        return cls(ratio=float(ratio), group=group)

    @classmethod
    def n_of_m(cls, n: int, m: int) -> "SparsitySpec":
        return cls(n=int(n), m=int(m))

    @property
    def structured(self) -> bool:
        return self.m > 0

    @property
    def target(self) -> float:
        return self.n / self.m if self.structured else self.ratio

    def label(self) -> str:
        return f"{self.n}:{self.m}" if self.structured else f"unstructured:{self.ratio:g}"


def keep_count(ratio: float, n: int) -> int:
    # Round first so that e.g. (1 - 0.7) * 10 counts as exactly 3.
    return min(n, math.ceil(round((1.0 - ratio) * n, 9)))


def _wanda_norms(model: ToyVlm, calib: Dataset, layer_names, chunk: int = 32) -> dict[str, np.ndarray]:
    """Per-input-feature L2 norms of each layer's input, accumulated sample by sample."""
    sums = {name: np.zeros(model[name].shape[1]) for name in layer_names}
    for start in range(0, len(calib), chunk):
        batch = calib[start : start + chunk]
        _, tape = forward(model, batch.vision, batch.text, WeightMode.DENSE_TEACHER)
        for name in layer_names:
            for row in tape.inputs[name]:
                sums[name] += row * row
    return {name: np.sqrt(s) for name, s in sums.items()}


def score(model: ToyVlm, metric: ScoringMetric, calib: Dataset | None = None, scope=PRUNABLE) -> dict[str, np.ndarray]:
    """Importance score for every weight of every layer in ``scope``.

    Magnitude: ``|W0|``. Gradient: ``|W0 * g|`` with ``g`` the mean task-loss
    gradient over the calibration set. Wanda: ``|W0| * ||X_j||_2`` where
    ``X_j`` collects input feature ``j`` of the layer over calibration samples.
    All gradients and activations come from the dense teacher forward.
    """
    metric = ScoringMetric(metric)
    layers = model.select(scope)
    if metric is ScoringMetric.MAGNITUDE:
        return {layer.name: np.abs(layer.w0) for layer in layers}
    if calib is None or len(calib) == 0:
        raise InputError(f"{metric.value} scoring needs a nonempty calibration set")
    if metric is ScoringMetric.WANDA:
        norms = _wanda_norms(model, calib, [layer.name for layer in layers])
        return {layer.name: np.abs(layer.w0) * norms[layer.name][None, :] for layer in layers}
    logits, tape = forward(model, calib.vision, calib.text, WeightMode.DENSE_TEACHER)
    _, dlogits = batch_losses(logits, calib.labels, None, 1.0)
    grads = backward(model, tape, dlogits)
    return {layer.name: np.abs(layer.w0 * grads[layer.name].weight) for layer in layers}


def _check_scores(scores: np.ndarray) -> np.ndarray:
    scores = np.asarray(scores, dtype=np.float64)
    if scores.ndim != 2:
        raise DimensionError("score matrix must be 2-D")
    if not np.all(np.isfinite(scores)):
        raise InputError("scores must be finite")
    return scores


def _top_k(flat: np.ndarray, k: int) -> np.ndarray:
    keep = np.zeros(flat.size, dtype=bool)
    keep[np.argsort(-flat, kind="stable")[:k]] = True
    return keep


def build_mask(scores, spec: SparsitySpec) -> np.ndarray:
    """Keep-mask for a single score matrix (``GLOBAL`` behaves like ``PER_LAYER`` here)."""
    scores = _check_scores(scores)
    rows, cols = scores.shape
    if spec.structured:
        if cols % spec.m:
            raise DimensionError(f"block size {spec.m} does not divide {cols} input columns")
        blocks = scores.reshape(rows, cols // spec.m, spec.m)
        rank = np.argsort(np.argsort(-blocks, axis=2, kind="stable"), axis=2, kind="stable")
        return (rank < spec.m - spec.n).reshape(rows, cols)
    if spec.group is Group.PER_OUTPUT_ROW:
        k = keep_count(spec.ratio, cols)
        return np.stack([_top_k(row, k) for row in scores]) if rows else np.zeros((0, cols), bool)
    return _top_k(scores.ravel(), keep_count(spec.ratio, scores.size)).reshape(rows, cols)


def build_masks(scores: dict[str, np.ndarray], spec: SparsitySpec) -> dict[str, np.ndarray]:
    """Masks for several layers; ``GLOBAL`` ranks all of them together in dict order."""
    if spec.structured or spec.group is not Group.GLOBAL:
        return {name: build_mask(s, spec) for name, s in scores.items()}
    checked = {name: _check_scores(s) for name, s in scores.items()}
    flat = np.concatenate([s.ravel() for s in checked.values()]) if checked else np.zeros(0)
    keep = _top_k(flat, keep_count(spec.ratio, flat.size))
    out, offset = {}, 0
    for name, s in checked.items():
        out[name] = keep[offset : offset + s.size].reshape(s.shape)
        offset += s.size
    return out


def apply_masks(model: ToyVlm, masks: dict[str, np.ndarray], patterns: dict[str, str] | None = None) -> None:
    """Install keep-masks; ``w0`` is left untouched so the teacher still sees it."""
    for name, m in masks.items():
        layer = model[name]
        if layer.modality not in PRUNABLE:
            raise InputError(f"layer {name!r} ({layer.modality.value}) is never pruned")
        m = np.asarray(m, dtype=bool)
        if m.shape != layer.shape:
            raise DimensionError(f"mask for {name} has shape {m.shape}, layer is {layer.shape}")
    for name, m in masks.items():
        model[name].mask = np.array(m, dtype=bool)
        if patterns and name in patterns:
            model[name].pattern = patterns[name]
    model.touch()


def measured_sparsity(model: ToyVlm, scope=PRUNABLE) -> float:
    """Fraction of exact zeros in the student's effective weights over ``scope``."""
    layers = model.select(scope)
    if not layers:
        raise InputError("empty sparsity scope")
    zeros = sum(int(np.count_nonzero(effective_weight(layer) == 0.0)) for layer in layers)
    total = sum(layer.w0.size for layer in layers)
    return zeros / total


def prune(
    model: ToyVlm,
    metric: ScoringMetric,
    specs: dict[Modality, SparsitySpec],
    calib: Dataset | None = None,
) -> dict[str, np.ndarray]:
    """Score, build and install masks, one :class:`SparsitySpec` per modality."""
    scope = frozenset(specs)
    if not scope <= PRUNABLE:
        raise InputError("only vision and language layers can be pruned")
    if not scope:
        return {}
    scores = score(model, metric, calib, scope)
    masks, patterns = {}, {}
    # Modalities sharing one spec are ranked together (matters only for GLOBAL).
    by_spec: dict[SparsitySpec, set] = {}
    for modality, spec in specs.items():
        by_spec.setdefault(spec, set()).add(modality)
    for spec, modalities in by_spec.items():
        sub = {layer.name: scores[layer.name] for layer in model.select(modalities)}
        masks.update(build_masks(sub, spec))
        patterns.update({name: spec.label() for name in sub})
    apply_masks(model, masks, patterns)
    return masks


def nm_violations(weights: np.ndarray, n: int, m: int) -> list[tuple[int, int]]:
    """``(row, block)`` of every aligned block with fewer than ``n`` zeros."""
    zeros = (np.asarray(weights) == 0.0)
    rows, cols = zeros.shape
    if cols % m:
        raise DimensionError(f"block size {m} does not divide {cols} columns")
    counts = zeros.reshape(rows, cols // m, m).sum(axis=2)
    return [tuple(int(v) for v in ij) for ij in np.argwhere(counts < n)]
