"""Modality-wise sparsity allocation under a total budget.

Grid rule for :func:`enumerate_allocations`: with budget ``B`` and step ``h``
the vision ratio starts at ``lo = max(0, B - 1)``, advances by ``h`` while it
stays strictly below ``hi = min(1, B)``, and ``hi`` itself is always the last
point. Both ratios are rounded to 9 decimals so that ``0.1 * 3`` reads 0.3.
"""

from __future__ import annotations

import csv
import enum
import math
from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

import numpy as np

from .data import Dataset
from .errors import InputError
from .model import Modality, ToyVlm, accuracy
from .pruning import Group, ScoringMetric, SparsitySpec, default_group, prune

SWEEP_COLUMNS = ["s_v", "s_l", "mode", "metric", "seed", "accuracy", "accuracy_mean", "accuracy_std", "seed_count"]


class PlanMode(enum.Enum):
    JOINT = "joint"
    VISION_ONLY = "vision_only"
    LANGUAGE_ONLY = "language_only"
    CUSTOM = "custom"


def _mode_for(s_v: float, s_l: float) -> PlanMode:
    if s_v == s_l:
        return PlanMode.JOINT
    if s_l == 0.0:
        return PlanMode.VISION_ONLY
    if s_v == 0.0:
        return PlanMode.LANGUAGE_ONLY
    return PlanMode.CUSTOM


@dataclass(frozen=True)
class AllocationPlan:
    s_v: float
    s_l: float
    mode: PlanMode | None = None

    def __post_init__(self):
        for name in ("s_v", "s_l"):
            v = getattr(self, name)
            if not (isinstance(v, (int, float)) and 0.0 <= v <= 1.0):
                raise InputError(f"{name} must lie in [0, 1], got {v!r}")
            object.__setattr__(self, name, float(v))
        implied = _mode_for(self.s_v, self.s_l)
        if self.mode is None:
            object.__setattr__(self, "mode", implied)
        elif self.mode is not implied and self.mode is not PlanMode.CUSTOM:
            raise InputError(f"mode {self.mode.value} does not match ratios ({self.s_v}, {self.s_l})")

    def specs(self, group: Group) -> dict[Modality, SparsitySpec]:
        """Per-modality specs; a zero ratio leaves that modality untouched."""
        out = {}
        if self.s_v > 0:
            out[Modality.VISION] = SparsitySpec.unstructured(self.s_v, group)
        if self.s_l > 0:
            out[Modality.LANGUAGE] = SparsitySpec.unstructured(self.s_l, group)
        return out


def enumerate_allocations(budget_sum: float, step: float) -> list[AllocationPlan]:
    if not (0.0 < budget_sum <= 2.0):
        raise InputError(f"budget must lie in (0, 2], got {budget_sum}")
    # A step wider than the budget is allowed and yields just the two endpoints.
    if not step > 0.0:
        raise InputError(f"step must be positive, got {step}")
    lo, hi = max(0.0, budget_sum - 1.0), min(1.0, budget_sum)
    values = []
    i = 0
    while True:
        s_v = round(lo + i * step, 9)
        if s_v >= round(hi, 9):
            break
        values.append(s_v)
        i += 1
    values.append(round(hi, 9))
    return [AllocationPlan(s_v, round(budget_sum - s_v, 9)) for s_v in values]


@dataclass(frozen=True)
class SweepCell:
    plan: AllocationPlan
    metric: ScoringMetric
    seeds: tuple[int, ...]
    accuracies: tuple[float, ...]

    @property
    def mean(self) -> float:
        return math.fsum(self.accuracies) / len(self.accuracies)

    @property
    def std(self) -> float:
        # Population standard deviation over seeds.
        mu = self.mean
        return math.sqrt(math.fsum((a - mu) ** 2 for a in self.accuracies) / len(self.accuracies))


@dataclass(frozen=True)
class SweepResult:
    cells: tuple[SweepCell, ...]

    def cell(self, s_v: float, s_l: float, metric: ScoringMetric | None = None) -> SweepCell:
        for c in self.cells:
            if math.isclose(c.plan.s_v, s_v, abs_tol=1e-9) and math.isclose(c.plan.s_l, s_l, abs_tol=1e-9):
                if metric is None or c.metric is metric:
                    return c
        raise KeyError((s_v, s_l))

    def best(self) -> SweepCell:
        return max(self.cells, key=lambda c: c.mean)

    def rows(self) -> list[list]:
        out = []
        for c in self.cells:
            for seed, acc in zip(c.seeds, c.accuracies):
                out.append([c.plan.s_v, c.plan.s_l, c.plan.mode.value, c.metric.value, seed, acc, c.mean, c.std, len(c.seeds)])
        return out

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(SWEEP_COLUMNS)
            for row in self.rows():
                w.writerow([repr(v) if isinstance(v, float) else v for v in row])


def run_sweep(
    model_factory: Callable[[int], ToyVlm],
    plans: Sequence[AllocationPlan],
    metric: ScoringMetric,
    calib: Dataset | None,
    eval_set: Dataset,
    seeds: Iterable[int],
    group: Group | None = None,
) -> SweepResult:
    """Prune one model per seed according to every plan and record eval accuracy.

    ``model_factory(seed)`` is called once per seed; each plan prunes a fresh
    clone of that model. Cells are ordered by plan, then seed.
    """
    plans, seeds = list(plans), list(seeds)
    if not plans or not seeds:
        raise InputError("run_sweep needs at least one plan and one seed")
    metric = ScoringMetric(metric)
    group = default_group(metric) if group is None else group
    bases = [model_factory(seed) for seed in seeds]
    cells = []
    for plan in plans:
        accs = []
        for base in bases:
            model = base.clone()
            prune(model, metric, plan.specs(group), calib)
            accs.append(accuracy(model, eval_set))
        cells.append(SweepCell(plan, metric, tuple(seeds), tuple(accs)))
    return SweepResult(tuple(cells))


def equal_split_gap(result: SweepResult, budget_sum: float) -> float:
    """How far the equal split trails the best allocation at ``budget_sum`` (0 when it is the best)."""
    cells = [c for c in result.cells if math.isclose(c.plan.s_v + c.plan.s_l, budget_sum, abs_tol=1e-9)]
    if not cells:
        raise InputError(f"sweep has no cells at budget {budget_sum}")
    equal = result.cell(budget_sum / 2, budget_sum / 2)
    return max(c.mean for c in cells) - equal.mean


def mask_diff(before: ToyVlm, after: ToyVlm) -> dict[str, int]:
    """Number of flipped mask entries per layer."""
    return {name: int(np.count_nonzero(before[name].mask != after[name].mask)) for name in before.layers}
