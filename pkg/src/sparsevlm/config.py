"""Flat ``key = value`` run configuration.

One key per line, ``#`` starts a comment, blank lines are ignored. Values are
typed by the field they set and validated before any command runs. Unknown
keys are errors. Precedence, lowest first: built-in defaults, the
``SPARSEVLM_SEED`` environment variable (``seed`` only), the config file,
``--set key=value`` overrides, dedicated command-line flags.
"""

from __future__ import annotations

import dataclasses
import os
import re
from dataclasses import dataclass
from pathlib import Path

from .data import TaskSpec
from .errors import ConfigError, InputError
from .lora import TrainConfig
from .model import AdapterMode, Modality, ModelDims
from .planner import AllocationPlan
from .pretrain import PretrainConfig
from .pruning import Group, ScoringMetric, SparsitySpec, default_group

SEED_ENV = "SPARSEVLM_SEED"
_KEY = re.compile(r"^[a-z_][a-z0-9_]*$")
_dims, _task, _train, _pre = ModelDims(), TaskSpec(), TrainConfig(), PretrainConfig()


def _modality_list(text: str) -> tuple[str, ...]:
    names = tuple(p.strip() for p in text.split(",") if p.strip())
    for name in names:
        Modality(name)
    return names


@dataclass(frozen=True)
class RunConfig:
    seed: int = 7
    # data
    classes: int = _task.classes
    d_v: int = _task.d_v
    d_t: int = _task.d_t
    noise: float = _task.noise
    count: int = 2628
    calib_count: int = 128
    eval_count: int = 500
    # model and pretraining
    h_v: int = _dims.h_v
    d_q: int = _dims.d_q
    h_l: int = _dims.h_l
    pretrain_epochs: int = _pre.epochs
    pretrain_lr: float = _pre.lr
    pretrain_batch: int = _pre.batch_size
    # pruning
    method: str = "wanda"
    sparsity: float = 0.5
    nm: str = ""
    group: str = "default"
    scope: str = "vision,language"
    s_v: float = -1.0
    s_l: float = -1.0
    # planner
    budget: float = 1.0
    step: float = 0.1
    seeds: str = "0,1,2,3,4"
    include_baseline: int = 0
    # finetuning
    lr: float = _train.lr
    beta1: float = _train.beta1
    beta2: float = _train.beta2
    eps: float = _train.eps
    warmup: float = _train.warmup
    epochs: int = _train.epochs
    batch_size: int = _train.batch_size
    lam: float = _train.lam
    rank_vision: int = _train.rank_vision
    rank_language: int = _train.rank_language
    rank_interface: int = _train.rank_interface
    optimizer: str = _train.optimizer
    mode: str = _train.mode.value
    adapter_scope: str = "vision,language,interface"
    train_count: int = -1

    def __post_init__(self):
        try:
            self.task_spec()
            self.model_dims()
            self.train_config()
            self.modality_specs()
            self.plan_seeds()
            ScoringMetric(self.method)
        except (InputError, ValueError) as exc:
            raise ConfigError(str(exc)) from None
        if self.count < 0 or self.pretrain_epochs < 0 or self.pretrain_batch < 1 or self.pretrain_lr <= 0:
            raise ConfigError("count, pretrain_epochs must be >= 0; pretrain_batch >= 1; pretrain_lr > 0")
        if self.seed < 0:
            raise ConfigError("seed must be non-negative")
        if self.include_baseline not in (0, 1):
            raise ConfigError("include_baseline must be 0 or 1")
        if self.lr <= 0:
            raise ConfigError("lr must be positive")

    # derived objects
    def task_spec(self) -> TaskSpec:
        return TaskSpec(self.classes, self.d_v, self.d_t, self.noise)

    def model_dims(self) -> ModelDims:
        return ModelDims(self.d_v, self.h_v, self.d_q, self.d_t, self.h_l, self.classes)

    def pretrain_config(self) -> PretrainConfig:
        return PretrainConfig(self.pretrain_epochs, self.pretrain_lr, self.pretrain_batch)

    def metric(self) -> ScoringMetric:
        return ScoringMetric(self.method)

    def group_enum(self) -> Group:
        return default_group(self.metric()) if self.group == "default" else Group(self.group)

    def modality_specs(self) -> dict[Modality, SparsitySpec]:
        """One spec per pruned modality. ``s_v``/``s_l`` >= 0 override ``sparsity``."""
        group = self.group_enum()
        out = {}
        for name in _modality_list(self.scope):
            modality = Modality(name)
            if modality is Modality.INTERFACE:
                raise InputError("the interface is never pruned")
            if self.nm:
                m = re.fullmatch(r"(\d+):(\d+)", self.nm)
                if not m:
                    raise InputError(f"nm must look like 2:4, got {self.nm!r}")
                out[modality] = SparsitySpec.n_of_m(int(m.group(1)), int(m.group(2)))
            else:
                override = self.s_v if modality is Modality.VISION else self.s_l
                out[modality] = SparsitySpec.unstructured(override if override >= 0 else self.sparsity, group)
        return out

    def plan(self) -> AllocationPlan:
        specs = self.modality_specs()
        ratio = lambda m: specs[m].target if m in specs else 0.0
        return AllocationPlan(ratio(Modality.VISION), ratio(Modality.LANGUAGE))

    def plan_seeds(self) -> list[int]:
        seeds = [int(s) for s in self.seeds.split(",") if s.strip()]
        if not seeds:
            raise InputError("seeds list is empty")
        return seeds

    def train_config(self) -> TrainConfig:
        return TrainConfig(
            lr=self.lr,
            beta1=self.beta1,
            beta2=self.beta2,
            eps=self.eps,
            warmup=self.warmup,
            epochs=self.epochs,
            batch_size=self.batch_size,
            lam=self.lam,
            rank_vision=self.rank_vision,
            rank_language=self.rank_language,
            rank_interface=self.rank_interface,
            seed=self.seed,
            optimizer=self.optimizer,
            mode=AdapterMode(self.mode),
            scope=frozenset(Modality(m) for m in _modality_list(self.adapter_scope)),
        )

    def dumps(self) -> str:
        return "".join(f"{f.name} = {getattr(self, f.name)}\n" for f in dataclasses.fields(self))


_FIELDS = {f.name: f for f in dataclasses.fields(RunConfig)}


def _convert(key: str, raw: str):
    if key not in _FIELDS:
        raise ConfigError(f"unknown config key {key!r}")
    kind = _FIELDS[key].type
    raw = raw.strip()
    try:
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
    except ValueError:
        raise ConfigError(f"{key}: expected {kind}, got {raw!r}") from None
    return raw


def parse_pairs(lines, source: str = "<config>") -> dict[str, object]:
    out = {}
    for lineno, line in enumerate(lines, 1):
        text = line.split("#", 1)[0].strip()
        if not text:
            continue
        if "=" not in text:
            raise ConfigError(f"{source}:{lineno}: expected key = value")
        key, value = (part.strip() for part in text.split("=", 1))
        if not _KEY.match(key):
            raise ConfigError(f"{source}:{lineno}: bad key {key!r}")
        if key in out:
            raise ConfigError(f"{source}:{lineno}: duplicate key {key!r}")
        out[key] = _convert(key, value)
    return out


def load_config(path=None, overrides=(), env=None) -> RunConfig:
    """Merge defaults, environment, file and ``key=value`` overrides into a validated config."""
    env = os.environ if env is None else env
    values: dict[str, object] = {}
    if env.get(SEED_ENV, "").strip():
        values["seed"] = _convert("seed", env[SEED_ENV])
    if path is not None:
        try:
            text = Path(path).read_text(encoding="utf-8")
        except (OSError, UnicodeDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        values.update(parse_pairs(text.splitlines(), str(path)))
    values.update(parse_pairs(overrides, "--set"))
    return RunConfig(**values)
