"""Two-modality toy classifier with a hand-derived backward pass.

Layout (weights are stored ``out x in``)::

    vision_in --vision1--> tanh --vision2--> tanh --interface--> tanh = q
    [q ; text_in] --lang1--> tanh --lang2--> logits

Every weight matrix is a :class:`PrunableLayer` holding the dense original
``w0``, a boolean keep-mask, a bias that is never pruned and an optional
low-rank adapter. The teacher forward reads ``w0`` only; the student forward
reads :func:`effective_weight`.
"""

from __future__ import annotations

import copy
import enum
import itertools
from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionError, InputError, StateError
from .numeric import STREAM_INIT, hadamard_mask, make_rng, matmul


class Modality(enum.Enum):
    VISION = "vision"
    LANGUAGE = "language"
    INTERFACE = "interface"


class WeightMode(enum.Enum):
    DENSE_TEACHER = "dense_teacher"
    MASKED_STUDENT = "masked_student"


class AdapterMode(enum.Enum):
    SPARSE = "sparse"
    DENSE = "dense"


PRUNABLE = frozenset({Modality.VISION, Modality.LANGUAGE})


@dataclass
class Adapter:
    """Low-rank increment ``B @ A`` for one layer (scaling fixed at 1)."""

    layer: str
    rank: int
    B: np.ndarray
    A: np.ndarray
    mode: AdapterMode = AdapterMode.SPARSE

    def __post_init__(self):
        if self.rank < 1:
            raise InputError("adapter rank must be >= 1")
        if self.B.shape[1] != self.rank or self.A.shape[0] != self.rank:
            raise DimensionError(f"adapter {self.layer}: B {self.B.shape} / A {self.A.shape} disagree with rank {self.rank}")

    def delta(self) -> np.ndarray:
        return matmul(self.B, self.A)


@dataclass
class PrunableLayer:
    name: str
    modality: Modality
    w0: np.ndarray
    mask: np.ndarray
    bias: np.ndarray
    adapter: Adapter | None = None
    # N:M or unstructured pattern the mask was built with ("" when never pruned).
    pattern: str = ""

    def __post_init__(self):
        if self.mask.shape != self.w0.shape:
            raise DimensionError(f"{self.name}: mask {self.mask.shape} vs weight {self.w0.shape}")
        if self.bias.shape != (self.w0.shape[0],):
            raise DimensionError(f"{self.name}: bias {self.bias.shape} vs {self.w0.shape[0]} outputs")

    @property
    def shape(self) -> tuple[int, int]:
        return self.w0.shape


def effective_weight(layer: PrunableLayer) -> np.ndarray:
    """Weight the student forward uses.

    Sparse adapter: ``(W0 + BA) * M``. Dense (classic LoRA) adapter:
    ``W0 * M + BA``. No adapter: ``W0 * M``.
    """
    if layer.adapter is None:
        return hadamard_mask(layer.w0, layer.mask)
    if layer.adapter.mode is AdapterMode.DENSE:
        return hadamard_mask(layer.w0, layer.mask) + layer.adapter.delta()
    return hadamard_mask(layer.w0 + layer.adapter.delta(), layer.mask)


@dataclass(frozen=True)
class ModelDims:
    d_v: int = 8
    h_v: int = 32
    d_q: int = 8
    d_t: int = 32
    h_l: int = 64
    classes: int = 8

    def __post_init__(self):
        if min(self.d_v, self.h_v, self.d_q, self.d_t, self.h_l) < 1 or self.classes < 2:
            raise InputError(f"invalid model dims {self}")

    def layer_specs(self):
        """``(name, modality, out, in)`` for each layer in forward order."""
        return [
            ("vision1", Modality.VISION, self.h_v, self.d_v),
            ("vision2", Modality.VISION, self.h_v, self.h_v),
            ("interface", Modality.INTERFACE, self.d_q, self.h_v),
            ("lang1", Modality.LANGUAGE, self.h_l, self.d_q + self.d_t),
            ("lang2", Modality.LANGUAGE, self.classes, self.h_l),
        ]


LAYER_NAMES = tuple(spec[0] for spec in ModelDims().layer_specs())

_model_ids = itertools.count()


@dataclass
class ToyVlm:
    dims: ModelDims
    layers: dict[str, PrunableLayer]
    seed: int = 0
    # Bumped whenever weights, masks or adapters change; tapes remember it.
    version: int = 0
    uid: int = field(default_factory=lambda: next(_model_ids))

    def __getitem__(self, name: str) -> PrunableLayer:
        try:
            return self.layers[name]
        except KeyError:
            raise InputError(f"unknown layer {name!r}") from None

    def touch(self) -> None:
        self.version += 1

    def select(self, scope=PRUNABLE) -> list[PrunableLayer]:
        """Layers whose modality is in ``scope``, in forward order."""
        scope = frozenset(scope)
        return [layer for layer in self.layers.values() if layer.modality in scope]

    def clone(self) -> "ToyVlm":
        twin = copy.deepcopy(self)
        twin.uid = next(_model_ids)
        return twin

    def parameter_registry(self) -> list[tuple[str, Modality]]:
        """Each trainable matrix once, with its modality."""
        out = []
        for layer in self.layers.values():
            out.append((f"{layer.name}.weight", layer.modality))
            out.append((f"{layer.name}.bias", layer.modality))
        return out


def init_model(dims: ModelDims = ModelDims(), seed: int = 0) -> ToyVlm:
    """Weights ~ U(-1/sqrt(in), 1/sqrt(in)), zero biases, all-ones masks."""
    rng = make_rng(seed, STREAM_INIT)
    layers = {}
    for name, modality, n_out, n_in in dims.layer_specs():
        bound = 1.0 / np.sqrt(n_in)
        layers[name] = PrunableLayer(
            name=name,
            modality=modality,
            w0=rng.uniform(-bound, bound, size=(n_out, n_in)),
            mask=np.ones((n_out, n_in), dtype=bool),
            bias=np.zeros(n_out),
        )
    return ToyVlm(dims=dims, layers=layers, seed=seed)


@dataclass
class BackwardTape:
    model_uid: int
    version: int
    mode: WeightMode
    single: bool
    weights: dict[str, np.ndarray]
    inputs: dict[str, np.ndarray]
    outputs: dict[str, np.ndarray]


@dataclass
class LayerGrad:
    weight: np.ndarray
    bias: np.ndarray


def _batch(x, width: int, what: str) -> tuple[np.ndarray, bool]:
    a = np.asarray(x, dtype=np.float64)
    single = a.ndim == 1
    a = np.atleast_2d(a)
    if a.ndim != 2 or a.shape[1] != width:
        raise DimensionError(f"{what} must have {width} features, got shape {np.shape(x)}")
    return a, single


def _linear(x: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    return matmul(x, w.T) + b


def forward(model: ToyVlm, vision_in, text_in, mode: WeightMode = WeightMode.MASKED_STUDENT):
    """Logits for one sample (1-D inputs) or a batch (2-D, one row per sample)."""
    dims = model.dims
    xv, single_v = _batch(vision_in, dims.d_v, "vision_in")
    xt, single_t = _batch(text_in, dims.d_t, "text_in")
    if len(xv) != len(xt):
        raise DimensionError(f"batch sizes differ: {len(xv)} vision vs {len(xt)} text")
    if mode is WeightMode.DENSE_TEACHER:
        weights = {name: layer.w0 for name, layer in model.layers.items()}
    else:
        weights = {name: effective_weight(layer) for name, layer in model.layers.items()}
    inputs, outputs = {}, {}
    h = xv
    for name in ("vision1", "vision2", "interface"):
        inputs[name] = h
        h = np.tanh(_linear(h, weights[name], model[name].bias))
        outputs[name] = h
    inputs["lang1"] = np.concatenate([h, xt], axis=1)
    h = np.tanh(_linear(inputs["lang1"], weights["lang1"], model["lang1"].bias))
    outputs["lang1"] = h
    inputs["lang2"] = h
    logits = _linear(h, weights["lang2"], model["lang2"].bias)
    outputs["lang2"] = logits
    single = single_v and single_t
    tape = BackwardTape(model.uid, model.version, mode, single, weights, inputs, outputs)
    return (logits[0] if single else logits), tape


def backward(model: ToyVlm, tape: BackwardTape, dlogits) -> dict[str, LayerGrad]:
    """Gradients w.r.t. the weights the forward actually used, summed over the batch.

    For the student forward these are ``dL/dW_hat``; chain through the mask or
    the adapter factors is left to the caller.
    """
    if tape.model_uid != model.uid or tape.version != model.version:
        raise StateError("tape was recorded on a different model state")
    g = np.atleast_2d(np.asarray(dlogits, dtype=np.float64))
    if g.shape != tape.outputs["lang2"].shape:
        raise DimensionError(f"dlogits shape {np.shape(dlogits)} does not match logits")
    grads: dict[str, LayerGrad] = {}

    def linear_back(name, dz):
        grads[name] = LayerGrad(matmul(dz.T, tape.inputs[name]), dz.sum(axis=0))
        return matmul(dz, tape.weights[name])

    dh = linear_back("lang2", g)
    dz = dh * (1.0 - tape.outputs["lang1"] ** 2)
    dcat = linear_back("lang1", dz)
    dh = dcat[:, : model.dims.d_q]
    for name, below in (("interface", "vision2"), ("vision2", "vision1"), ("vision1", None)):
        dz = dh * (1.0 - tape.outputs[name] ** 2)
        if below is None:
            grads[name] = LayerGrad(matmul(dz.T, tape.inputs[name]), dz.sum(axis=0))
        else:
            dh = linear_back(name, dz)
    return {name: grads[name] for name in model.layers}


def predict(model: ToyVlm, data, mode: WeightMode = WeightMode.MASKED_STUDENT) -> np.ndarray:
    logits, _ = forward(model, data.vision, data.text, mode)
    return np.argmax(np.atleast_2d(logits), axis=1)


def accuracy(model: ToyVlm, data, mode: WeightMode = WeightMode.MASKED_STUDENT) -> float:
    if len(data) == 0:
        raise InputError("cannot score an empty dataset")
    return float(np.mean(predict(model, data, mode) == data.labels))
