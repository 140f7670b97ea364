"""Restoration losses on logits: task cross-entropy, distillation KL, and their blend."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, InputError
from .numeric import log_softmax


@dataclass(frozen=True)
class LossBreakdown:
    task: float
    distill: float
    total: float
    lam: float


def task_loss(student_logits, label: int):
    """Cross-entropy of ``softmax(student_logits)`` against ``label``.

    Returns ``(loss, dlogits)`` with ``dlogits = softmax - onehot``.
    """
    z = np.asarray(student_logits, dtype=np.float64)
    if z.ndim != 1:
        raise DimensionError("task_loss takes a single logit vector")
    if not 0 <= label < z.size:
        raise InputError(f"label {label} out of range for {z.size} classes")
    logp = log_softmax(z)
    grad = np.exp(logp)
    grad[label] -= 1.0
    return float(-logp[label]), grad


def distill_loss(student_logits, teacher_logits):
    """``KL(softmax(student) || softmax(teacher))``, student distribution first.

    The teacher is a constant; the returned gradient is w.r.t. the student
    logits and equals ``p * (log p - log q - KL)``.
    """
    z = np.asarray(student_logits, dtype=np.float64)
    t = np.asarray(teacher_logits, dtype=np.float64)
    if z.shape != t.shape or z.ndim != 1:
        raise InputError(f"logit shapes differ: {z.shape} vs {t.shape}")
    logp = log_softmax(z)
    logq = log_softmax(t)
    p = np.exp(logp)
    diff = logp - logq
    kl = float(np.dot(p, diff))
    return kl, p * (diff - kl)


def combine(task: float, distill: float, lam: float) -> float:
    if not 0.0 <= lam <= 1.0:
        raise InputError(f"lambda must lie in [0, 1], got {lam}")
    return lam * task + (1.0 - lam) * distill


def batch_losses(student_logits, labels, teacher_logits, lam: float):
    """Mean losses over a batch and the gradient of the mean total w.r.t. the student logits.

    ``teacher_logits`` may be ``None`` only when ``lam == 1``.
    """
    z = np.atleast_2d(np.asarray(student_logits, dtype=np.float64))
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    n, classes = z.shape
    if len(labels) != n:
        raise DimensionError("one label per logit row required")
    if np.any(labels < 0) or np.any(labels >= classes):
        raise InputError("label out of range")
    logp = log_softmax(z)
    p = np.exp(logp)
    task_each = -logp[np.arange(n), labels]
    d_task = p.copy()
    d_task[np.arange(n), labels] -= 1.0
    if teacher_logits is None:
        if lam != 1.0:
            raise InputError("teacher logits are required unless lambda == 1")
        distill_each = np.zeros(n)
        d_distill = np.zeros_like(z)
    else:
        diff = logp - log_softmax(np.atleast_2d(teacher_logits))
        distill_each = (p * diff).sum(axis=1)
        d_distill = p * (diff - distill_each[:, None])
    task = float(task_each.mean())
    distill = float(distill_each.mean())
    breakdown = LossBreakdown(task, distill, combine(task, distill, lam), lam)
    dlogits = (lam * d_task + (1.0 - lam) * d_distill) / n
    return breakdown, dlogits
