"""Toy two-modality model pruning with mask-preserving low-rank adapters."""

from .data import Dataset, TaskSpec, generate, load_dataset, save_dataset, split
from .lora import TrainConfig, attach_adapters, merge, train
from .model import AdapterMode, Modality, ModelDims, WeightMode, accuracy, forward, init_model
from .planner import AllocationPlan, enumerate_allocations, run_sweep
from .pruning import Group, ScoringMetric, SparsitySpec, measured_sparsity, prune

__version__ = "0.1.0"
