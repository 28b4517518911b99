"""Searchable cells wrapping cascade modules.

An NFA cell exposes parallel candidate paths over one module: use its frozen
pretrained weights, fine-tune a private copy of them, or run one of the
supplied adapters on top of the frozen forward. Path weights come from a
Gumbel-softmax over per-cell logits; the straight-through variant keeps the
forward hard (one-hot) while gradients flow as if it were soft.

The reduced NA mode drops the fine-tune path entirely: the module backbone
is always frozen and the search only decides skip vs adapter.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import ParameterSet, Tensor
from .cascade import make_adapter

FROZEN = "frozen"
FINETUNE = "finetune"


def adapter_choice(kind):
    return f"adapter:{kind}"


@dataclass
class PathWeights:
    """Simplex weights over a cell's paths; ``hard`` means exactly one-hot."""

    weights: Tensor
    hard: bool

    @property
    def values(self):
        return self.weights.value

    def __post_init__(self):
        v = self.values
        if v.ndim != 1:
            raise ad.ShapeError(f"path weights must be a vector, got shape {v.shape}")
        if np.any(v < -1e-9) or np.any(v > 1.0 + 1e-9) or abs(v.sum() - 1.0) > 1e-9:
            raise ValueError(f"path weights must lie on the simplex, got {v}")
        if self.hard and np.count_nonzero(v == 1.0) != 1:
            raise ValueError(f"hard path weights must be one-hot, got {v}")


def one_hot_weights(n_paths, index):
    v = np.zeros(n_paths)
    v[index] = 1.0
    return PathWeights(ad.constant(v), hard=True)


def gumbel_softmax(alpha, tau, rng=None, hard=False, noise=True):
    """Sample differentiable path weights from logits ``alpha``.

    With ``noise`` the logits are perturbed by i.i.d. Gumbel(0,1) draws, so the
    soft weights' argmax follows the categorical softmax(alpha) distribution.
    ``hard`` snaps the forward value to one-hot while the backward pass treats
    the output as the soft weights (straight-through estimator).
    """
    if tau <= 0:
        raise ValueError(f"gumbel_softmax temperature must be positive, got {tau}")
    logits = alpha
    if noise:
        if rng is None:
            raise ValueError("noise=True requires an rng")
        g = rng.gumbel(size=alpha.shape)
        logits = ad.add(alpha, ad.constant(g))
    soft = ad.softmax_lastdim(ad.scale(logits, 1.0 / tau))
    if not hard:
        return PathWeights(soft, hard=False)
    onehot = np.zeros(soft.shape)
    onehot[int(np.argmax(soft.value))] = 1.0
    st = Tensor(onehot, requires_grad=soft.requires_grad, op="straight_through",
                inputs=(soft,), backward_fn=lambda grad: (grad,))
    return PathWeights(st, hard=True)


class NfaCell:
    """One search unit: a module plus its candidate tuning paths and logits."""

    def __init__(self, module, mode="NFA", adapter_kinds=("BA",), index=0, rng=None):
        if mode not in ("NFA", "NA"):
            raise ValueError(f"cell mode must be 'NFA' or 'NA', got {mode!r}")
        if mode == "NA" and len(adapter_kinds) != 1:
            raise ValueError("NA mode searches skip vs one adapter; supply exactly one kind")
        if not adapter_kinds:
            raise ValueError("at least one adapter kind is required")
        if rng is None:
            rng = np.random.default_rng(0)
        self.module = module
        self.mode = mode
        self.index = index
        self.finetune_params = module.clone_params(requires_grad=True) if mode == "NFA" else None
        self.adapters = [make_adapter(k, module.out_dim, rng) for k in adapter_kinds]
        self.paths = ([FROZEN, FINETUNE] if mode == "NFA" else [FROZEN])
        self.paths += [adapter_choice(a.kind) for a in self.adapters]
        self.alpha = Tensor(np.zeros(len(self.paths)), requires_grad=True)

    @property
    def n_paths(self):
        return len(self.paths)

    def trainable_count(self, path):
        """Trainable parameters of one path (frozen contributes nothing)."""
        if path == FROZEN:
            return 0
        if path == FINETUNE:
            return self.module.param_count
        kind = path.split(":", 1)[1]
        for a in self.adapters:
            if a.kind == kind:
                return a.param_count
        raise ValueError(f"cell has no path {path!r}")

    @property
    def path_param_counts(self):
        return [self.trainable_count(p) for p in self.paths]

    def _path_output(self, path, x, base):
        if path == FROZEN:
            return base
        if path == FINETUNE:
            return self.module.forward(x, self.finetune_params)
        kind = path.split(":", 1)[1]
        for a in self.adapters:
            if a.kind == kind:
                return a.forward(base)
        raise ValueError(f"cell has no path {path!r}")

    def forward(self, x, weights: PathWeights):
        """Weighted sum of path outputs. The frozen and adapter paths share one
        backbone forward through the pretrained snapshot."""
        if weights.values.shape != (self.n_paths,):
            raise ad.ShapeError(
                f"cell {self.index}: got {weights.values.shape[0]} weights for {self.n_paths} paths"
            )
        base = self.module.forward(x)
        out = None
        for k, path in enumerate(self.paths):
            if weights.hard and weights.values[k] == 0.0 and not weights.weights.requires_grad:
                continue  # constant one-hot: skip dead paths entirely
            term = ad.mul(ad.index_lastdim(weights.weights, k), self._path_output(path, x, base))
            out = term if out is None else ad.add(out, term)
        return out

    def discretize(self):
        """Argmax over alpha; ties break toward the fewest trainable params,
        then the lowest path index."""
        a = self.alpha.value
        best = max(a)
        tied = [k for k in range(self.n_paths) if a[k] == best]
        k = min(tied, key=lambda j: (self.trainable_count(self.paths[j]), j))
        return self.paths[k]

    def trainable_params(self):
        """The cell's network-parameter group (fine-tune copy plus adapters);
        alpha is the separate architecture group."""
        out = ParameterSet()
        if self.finetune_params is not None:
            out.merge(self.finetune_params, prefix="finetune.")
        for a in self.adapters:
            out.merge(a.params, prefix=f"adapter.{a.kind}.")
        return out

    def params_for_choice(self, choice):
        """Parameters that would train if ``choice`` were deployed."""
        out = ParameterSet()
        if choice == FROZEN:
            return out
        if choice == FINETUNE:
            return out.merge(self.finetune_params, prefix="finetune.")
        kind = choice.split(":", 1)[1]
        for a in self.adapters:
            if a.kind == kind:
                return out.merge(a.params, prefix=f"adapter.{a.kind}.")
        raise ValueError(f"cell has no path {choice!r}")


def build_cells(model, mode="NFA", adapter_kinds=("BA",), seed=0):
    """One cell per cascade module, with per-cell seeded adapter init."""
    cells = []
    seeds = np.random.SeedSequence([int(seed), 0xCE11]).spawn(len(model.modules))
    for i, module in enumerate(model.modules):
        rng = np.random.default_rng(seeds[i])
        cells.append(NfaCell(module, mode=mode, adapter_kinds=adapter_kinds, index=i, rng=rng))
    return cells


def cascade_forward(model, cells, x, weights_per_cell):
    """Run the whole cascade through its cells, honoring stage boundaries."""
    if len(cells) != len(model.modules):
        raise ValueError(f"{len(cells)} cells for {len(model.modules)} modules")
    if len(weights_per_cell) != len(cells):
        raise ValueError(f"{len(weights_per_cell)} weight vectors for {len(cells)} cells")
    h = x
    for i, cell in enumerate(cells):
        h = cell.forward(h, weights_per_cell[i])
        h = model.stage_output_transform(i, h)
    return h


def network_group(cells):
    """Union of all cells' network parameters (trainable during net steps)."""
    out = ParameterSet()
    for cell in cells:
        out.merge(cell.trainable_params(), prefix=f"cell{cell.index}.")
    return out


def arch_group(cells):
    """All architecture logits (trainable during arch steps)."""
    out = ParameterSet()
    for cell in cells:
        out.add(f"cell{cell.index}.alpha", cell.alpha)
    return out
