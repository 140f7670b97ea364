"""Dense training of the toy model from scratch, used to build the teacher."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import Dataset
from .model import ModelDims, ToyVlm, WeightMode, backward, forward, init_model
from .numeric import STREAM_SHUFFLE, make_rng
from .objectives import batch_losses
from .optim import OptimizerState


@dataclass(frozen=True)
class PretrainConfig:
    epochs: int = 20
    lr: float = 1e-2
    batch_size: int = 32


def fit_dense(model: ToyVlm, train: Dataset, cfg: PretrainConfig = PretrainConfig(), seed: int = 0) -> list[float]:
    """Train ``w0`` and biases with Adam on the task loss. Returns per-epoch mean loss."""
    rng = make_rng(seed, STREAM_SHUFFLE)
    opt = OptimizerState()
    history = []
    n = len(train)
    for _ in range(cfg.epochs):
        order = rng.permutation(n)
        losses = []
        for start in range(0, n, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            logits, tape = forward(model, train.vision[idx], train.text[idx], WeightMode.DENSE_TEACHER)
            loss, dlogits = batch_losses(logits, train.labels[idx], None, 1.0)
            grads = backward(model, tape, dlogits)
            params, g = {}, {}
            for name, layer in model.layers.items():
                params[f"{name}.weight"] = layer.w0
                params[f"{name}.bias"] = layer.bias
                g[f"{name}.weight"] = grads[name].weight
                g[f"{name}.bias"] = grads[name].bias
            opt.apply(params, g, cfg.lr)
            model.touch()
            losses.append(loss.task)
        history.append(float(np.mean(losses)))
    return history


def pretrained_model(train: Dataset, seed: int, dims: ModelDims = ModelDims(), cfg: PretrainConfig = PretrainConfig()) -> ToyVlm:
    model = init_model(dims, seed)
    fit_dense(model, train, cfg, seed)
    return model
