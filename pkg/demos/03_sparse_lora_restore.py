"""
Restoring a 2:4 model with mask-aware adapters
==============================================

Prune to 2:4, then finetune low-rank adapters for one epoch with a mix of
task loss and distillation from the dense teacher. The sparse adapter is
multiplied by the mask, so merging it keeps every pruned weight at zero.
Classic dense LoRA recovers accuracy too, but its merge fills the holes.
"""

import numpy as np

from sparsevlm import (
    AdapterMode,
    Modality,
    ScoringMetric,
    SparsitySpec,
    TrainConfig,
    accuracy,
    attach_adapters,
    generate,
    measured_sparsity,
    merge,
    prune,
    split,
    train,
)
from sparsevlm.checkpoint import to_checkpoint, verify
from sparsevlm.config import RunConfig
from sparsevlm.pretrain import pretrained_model

cfg = RunConfig()
train_set, calib, evals = split(generate(cfg.task_spec(), cfg.count, cfg.seed))
dense = pretrained_model(train_set, 2, cfg.model_dims(), cfg.pretrain_config())

nm = SparsitySpec.n_of_m(2, 4)
pruned = dense.clone()
prune(pruned, ScoringMetric.WANDA, {Modality.VISION: nm, Modality.LANGUAGE: nm}, calib)
print(f"dense {accuracy(dense, evals):.3f}  pruned {accuracy(pruned, evals):.3f}  sparsity {measured_sparsity(pruned):.3f}")

###############################################################################
# lam weights the task loss; 1 - lam weights KL(student || teacher). The teacher
# is the same weight store read without mask or adapters.
for mode in (AdapterMode.SPARSE, AdapterMode.DENSE):
    model = pruned.clone()
    tcfg = TrainConfig(mode=mode, lam=0.1, seed=0)
    attach_adapters(model, tcfg)
    report = train(model, train_set, tcfg)
    merge(model)
    checks = verify(to_checkpoint(model))
    failed = [line for line in checks.lines() if line.startswith("FAIL")]
    print(
        f"{mode.value:>6s} LoRA: {len(report.losses)} steps, final loss {report.final.total:.4f}, "
        f"accuracy {accuracy(model, evals):.3f}, sparsity {measured_sparsity(model):.3f}, "
        f"verify {'ok' if checks.passed else failed[0]}"
    )

###############################################################################
# Loss curve, every 25th step.
print(np.round([l.total for l in report.losses[::25]], 3))
