"""Mask-aware low-rank adapters: attach, train, merge.

A sparse adapter contributes ``(B @ A) * M`` to a pruned layer, so its
gradients are the masked weight gradient pushed through the factors::

    dL/dB = (dL/dW_hat * M) @ A.T
    dL/dA = B.T @ (dL/dW_hat * M)

A dense adapter (classic LoRA) skips the mask in both the forward and the
gradients, and its merge overwrites pruned positions.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .data import Dataset
from .errors import InputError, StateError
from .model import (
    Adapter,
    AdapterMode,
    Modality,
    ToyVlm,
    WeightMode,
    backward,
    effective_weight,
    forward,
)
from .numeric import STREAM_ADAPTER, STREAM_SHUFFLE, hadamard_mask, make_rng, matmul
from .objectives import LossBreakdown, batch_losses
from .optim import OptimizerState, warmup_lr

ALL_MODALITIES = frozenset(Modality)


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 2e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    warmup: float = 0.10
    epochs: int = 1
    batch_size: int = 16
    lam: float = 0.1
    rank_vision: int = 4
    rank_language: int = 8
    rank_interface: int = 4
    seed: int = 0
    optimizer: str = "adam"
    mode: AdapterMode = AdapterMode.SPARSE
    scope: frozenset = ALL_MODALITIES

    def __post_init__(self):
        if not 0.0 <= self.lam <= 1.0:
            raise InputError(f"lambda must lie in [0, 1], got {self.lam}")
        if not 0.0 <= self.warmup < 1.0:
            raise InputError(f"warmup fraction must lie in [0, 1), got {self.warmup}")
        if self.optimizer not in ("adam", "sgd"):
            raise InputError(f"unknown optimizer {self.optimizer!r}")
        if self.batch_size < 1 or self.epochs < 0:
            raise InputError("batch_size must be >= 1 and epochs >= 0")
        if min(self.rank_vision, self.rank_language, self.rank_interface) < 1:
            raise InputError("adapter ranks must be >= 1")

    def rank_for(self, modality: Modality) -> int:
        return {
            Modality.VISION: self.rank_vision,
            Modality.LANGUAGE: self.rank_language,
            Modality.INTERFACE: self.rank_interface,
        }[modality]

    def new_optimizer(self) -> OptimizerState:
        return OptimizerState(self.beta1, self.beta2, self.eps, self.optimizer)


def attach_adapters(model: ToyVlm, cfg: TrainConfig, scope=None) -> None:
    """Give every in-scope layer an adapter with ``B = 0`` and ``A ~ U(+-1/sqrt(in))``."""
    scope = frozenset(cfg.scope if scope is None else scope)
    if not scope:
        raise InputError("adapter scope is empty")
    layers = model.select(scope)
    for layer in layers:
        if layer.adapter is not None:
            raise StateError(f"layer {layer.name!r} already has an adapter")
    rng = make_rng(cfg.seed, STREAM_ADAPTER)
    for layer in layers:
        n_out, n_in = layer.shape
        r = cfg.rank_for(layer.modality)
        bound = 1.0 / math.sqrt(n_in)
        layer.adapter = Adapter(
            layer=layer.name,
            rank=r,
            B=np.zeros((n_out, r)),
            A=rng.uniform(-bound, bound, size=(r, n_in)),
            mode=cfg.mode,
        )
    model.touch()


def adapter_gradients(dw_hat: np.ndarray, mask: np.ndarray, adapter: Adapter) -> tuple[np.ndarray, np.ndarray]:
    """``(dL/dB, dL/dA)`` from the gradient w.r.t. the effective weight."""
    g = hadamard_mask(dw_hat, mask) if adapter.mode is AdapterMode.SPARSE else dw_hat
    return matmul(g, adapter.A.T), matmul(adapter.B.T, g)


def _adapted(model: ToyVlm):
    layers = [layer for layer in model.layers.values() if layer.adapter is not None]
    if not layers:
        raise StateError("model has no adapters attached")
    return layers


def step(model: ToyVlm, batch: Dataset, cfg: TrainConfig, opt: OptimizerState, lr: float | None = None) -> LossBreakdown:
    """One optimizer update of every adapter on ``batch``; ``w0`` and masks stay fixed."""
    layers = _adapted(model)
    if len(batch) == 0:
        raise InputError("empty batch")
    student, tape = forward(model, batch.vision, batch.text, WeightMode.MASKED_STUDENT)
    teacher = None
    if cfg.lam < 1.0:
        teacher, _ = forward(model, batch.vision, batch.text, WeightMode.DENSE_TEACHER)
    losses, dlogits = batch_losses(student, batch.labels, teacher, cfg.lam)
    grads = backward(model, tape, dlogits)
    params, pgrads = {}, {}
    for layer in layers:
        gB, gA = adapter_gradients(grads[layer.name].weight, layer.mask, layer.adapter)
        params[f"{layer.name}.B"] = layer.adapter.B
        params[f"{layer.name}.A"] = layer.adapter.A
        pgrads[f"{layer.name}.B"] = gB
        pgrads[f"{layer.name}.A"] = gA
    opt.apply(params, pgrads, cfg.lr if lr is None else lr)
    model.touch()
    return losses


def merge(model: ToyVlm) -> None:
    """Fold adapters into the stored weights and drop them.

    Sparse adapters: ``w0 <- (w0 + BA) * M`` with the mask unchanged, so the
    student forward is bit-identical before and after. Dense adapters:
    ``w0 <- w0 * M + BA`` and the mask is reset to all ones, which is exactly
    how classic LoRA refills pruned positions.
    """
    for layer in _adapted(model):
        merged = effective_weight(layer)
        if layer.adapter.mode is AdapterMode.DENSE:
            layer.mask = np.ones_like(layer.mask)
        layer.w0 = merged
        layer.adapter = None
    model.touch()


@dataclass
class TrainingReport:
    losses: list[LossBreakdown] = field(default_factory=list)
    lrs: list[float] = field(default_factory=list)
    teacher_forwards: int = 0

    @property
    def final(self) -> LossBreakdown | None:
        return self.losses[-1] if self.losses else None

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["step", "lr", "task", "distill", "total", "lambda"])
            for i, (lr, loss) in enumerate(zip(self.lrs, self.losses)):
                w.writerow([i, repr(lr), repr(loss.task), repr(loss.distill), repr(loss.total), repr(loss.lam)])


def train(model: ToyVlm, data: Dataset, cfg: TrainConfig) -> TrainingReport:
    """Run ``cfg.epochs`` shuffled passes of :func:`step` over ``data``."""
    _adapted(model)
    report = TrainingReport()
    n = len(data)
    if n == 0 or cfg.epochs == 0:
        return report
    per_epoch = math.ceil(n / cfg.batch_size)
    total = per_epoch * cfg.epochs
    rng = make_rng(cfg.seed, STREAM_SHUFFLE)
    opt = cfg.new_optimizer()
    for _ in range(cfg.epochs):
        order = rng.permutation(n)
        for start in range(0, n, cfg.batch_size):
            lr = warmup_lr(cfg.lr, opt.t, total, cfg.warmup)
            report.losses.append(step(model, data[order[start : start + cfg.batch_size]], cfg, opt, lr))
            report.lrs.append(lr)
            report.teacher_forwards += cfg.lam < 1.0
    return report
