"""
Pruning a toy two-modality model
================================

Train the dense toy model, then prune it three ways and look at what each
scoring metric keeps. Runs in a few seconds.
"""

import numpy as np

from sparsevlm import Modality, ScoringMetric, SparsitySpec, accuracy, generate, measured_sparsity, prune, split
from sparsevlm.config import RunConfig
from sparsevlm.pretrain import pretrained_model

# Default task: 8 classes, the label needs both the vision and the text input.
cfg = RunConfig()
data = generate(cfg.task_spec(), cfg.count, cfg.seed)
train, calib, evals = split(data)
dense = pretrained_model(train, seed=0, dims=cfg.model_dims(), cfg=cfg.pretrain_config())
print(f"dense accuracy: {accuracy(dense, evals):.3f}")

###############################################################################
# Unstructured 50% on both modalities. Magnitude needs no data; gradient and
# Wanda read the 128-sample calibration split.
half = SparsitySpec.unstructured(0.5)
for metric in ScoringMetric:
    model = dense.clone()
    prune(model, metric, {Modality.VISION: half, Modality.LANGUAGE: half}, calib)
    print(f"{metric.value:>9s} 50%: accuracy {accuracy(model, evals):.3f}, sparsity {measured_sparsity(model):.3f}")

###############################################################################
# 2:4 keeps exactly two weights of every four along the input axis.
nm = dense.clone()
prune(nm, ScoringMetric.WANDA, {Modality.VISION: SparsitySpec.n_of_m(2, 4), Modality.LANGUAGE: SparsitySpec.n_of_m(2, 4)}, calib)
row = nm["lang1"].mask[0, :12].astype(int)
print("lang1 row 0 mask, first 12 inputs:", row)
print("zeros per block:", (~nm["lang1"].mask).reshape(nm["lang1"].shape[0], -1, 4).sum(axis=2).ravel()[:6])
print(f"2:4 accuracy {accuracy(nm, evals):.3f}")

###############################################################################
# The interface layer between the two modalities is never masked.
print("interface kept fraction:", np.mean(nm["interface"].mask))
