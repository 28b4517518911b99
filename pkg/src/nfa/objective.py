"""Search objective: final-task cross-entropy plus the trainable-parameter
penalty that steers the architecture toward cheap tuning schemes.

Per cell the penalty is the architecture-weighted mean of per-path trainable
parameter counts, normalized by the sum of those counts so each cell's term
stays in [0, 1] regardless of module size. The frozen path trains nothing,
so its count inside the penalty is a policy choice: zero, a constant, or half
the module's fine-tune count (the default, which lands between the adapter
and fine-tune counts and scales with the module).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .cell import FINETUNE, FROZEN

PFR_POLICIES = ("zero", "constant", "half_finetune")


@dataclass(frozen=True)
class PenaltyConfig:
    pfr_policy: str = "half_finetune"
    pfr_constant: int = 0
    coefficient: float = 1.0
    enabled: bool = True

    def __post_init__(self):
        if self.pfr_policy not in PFR_POLICIES:
            raise ValueError(f"pfr_policy must be one of {PFR_POLICIES}, got {self.pfr_policy!r}")
        if self.pfr_constant < 0:
            raise ValueError("pfr_constant must be nonnegative")
        if self.coefficient < 0:
            raise ValueError("penalty coefficient must be nonnegative")

    def frozen_count(self, finetune_count):
        if self.pfr_policy == "zero":
            return 0
        if self.pfr_policy == "constant":
            return int(self.pfr_constant)
        return int(finetune_count) // 2


def penalty_counts(cell, cfg: PenaltyConfig):
    """Per-path parameter counts as they enter the penalty for one cell.

    Fine-tune and adapter paths use their true trainable counts; the frozen
    path uses the configured fictitious count. In NA mode (no fine-tune path)
    the policy still keys off the wrapped module's size.
    """
    counts = []
    for path in cell.paths:
        if path == FROZEN:
            counts.append(cfg.frozen_count(cell.module.param_count))
        elif path == FINETUNE:
            counts.append(cell.module.param_count)
        else:
            counts.append(cell.trainable_count(path))
    return np.asarray(counts, dtype=np.float64)


def penalty(cells, weights_per_cell, cfg: PenaltyConfig):
    """Sum over cells of (weights . counts) / sum(counts), differentiable in
    the architecture weights. Each adapter path contributes its own term and
    its count joins the denominator."""
    if len(weights_per_cell) != len(cells):
        raise ValueError(f"{len(weights_per_cell)} weight vectors for {len(cells)} cells")
    total = None
    for cell, w in zip(cells, weights_per_cell):
        counts = penalty_counts(cell, cfg)
        denom = counts.sum()
        if denom == 0:
            raise ValueError(f"cell {cell.index}: all penalty counts are zero")
        term = ad.scale(ad.tensor_sum(ad.mul(w.weights, ad.constant(counts))), 1.0 / denom)
        total = term if total is None else ad.add(total, term)
    return total


def task_loss(logits, labels):
    """Mean cross-entropy of the final-stage logits over the batch."""
    labels = np.asarray(labels)
    if logits.value.ndim != 2:
        raise ad.ShapeError(f"task_loss expects (batch, L) logits, got {logits.shape}")
    n, width = logits.shape
    if labels.shape != (n,):
        raise ad.ShapeError(f"labels shape {labels.shape} does not match batch {n}")
    if labels.min() < 0 or labels.max() >= width:
        raise ValueError(f"labels must lie in [0, {width}), got range [{labels.min()}, {labels.max()}]")
    onehot = np.eye(width)[labels]
    logp = ad.log(ad.softmax_lastdim(logits))
    picked = ad.tensor_sum(ad.mul(ad.constant(onehot), logp), axis=-1)
    return ad.scale(ad.tensor_mean(picked), -1.0)


def total_loss(task, pen, cfg: PenaltyConfig):
    if not cfg.enabled or cfg.coefficient == 0.0:
        return task
    return ad.add(task, ad.scale(pen, cfg.coefficient))
