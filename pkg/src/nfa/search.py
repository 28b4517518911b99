"""Bilevel alternating search over tuning paths (first-order approximation).

Stage 1 alternates, per iteration, one architecture update on a validation
batch with one network update on a training batch; path weights are sampled
hard (straight-through) from the per-cell Gumbel-softmax at an annealed
temperature. Stage 2 freezes the logits, fixes the discretized architecture,
and trains only the network parameters of the chosen paths' groups.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import objective
from .cell import arch_group, cascade_forward, gumbel_softmax, network_group, one_hot_weights


@dataclass(frozen=True)
class SearchConfig:
    split_ratio: float = 0.5
    lr_network: float = 1e-4
    lr_arch: float = 1e-3
    stage1_epochs: int = 8
    stage2_epochs: int = 4
    tau_start: float = 5.0
    tau_end: float = 0.5
    batch_size: int = 32
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.split_ratio < 1.0:
            raise ValueError("split_ratio must lie in (0, 1)")
        if self.lr_network <= 0 or self.lr_arch <= 0:
            raise ValueError("learning rates must be positive")
        if self.stage1_epochs < 0 or self.stage2_epochs < 0:
            raise ValueError("epoch counts must be nonnegative")
        if self.tau_start <= 0 or self.tau_end <= 0:
            raise ValueError("temperatures must be positive")
        if self.batch_size <= 0:
            raise ValueError("batch_size must be positive")


@dataclass
class EpochRecord:
    epoch: int
    stage: int
    train_loss: float
    val_loss: float
    penalty: float
    alphas: list
    discretization: list
    selected_params: int


@dataclass
class SearchState:
    epoch: int = 0
    stage: int = 1
    arch_frozen: bool = False
    history: list = field(default_factory=list)
    train_ids_seen: set = field(default_factory=set)
    val_ids_seen: set = field(default_factory=set)


def split_dataset(data, ratio, seed):
    """Disjoint, exhaustive, seeded-shuffled split; |train| = round(ratio * N)
    with halves rounded up."""
    n = len(data)
    if n == 0:
        raise ValueError("cannot split an empty dataset")
    if not 0.0 < ratio < 1.0:
        raise ValueError("split ratio must lie in (0, 1)")
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0x5711]))
    order = rng.permutation(n)
    n_train = int(np.floor(ratio * n + 0.5))
    return data.subset(order[:n_train]), data.subset(order[n_train:])


class AdaptiveSearch:
    """Owns the cells, the two optimizer groups, and the search schedule."""

    def __init__(self, model, cells, train_data, val_data, penalty_cfg, cfg: SearchConfig):
        if len(train_data) == 0 or len(val_data) == 0:
            raise ValueError("search requires nonempty train and validation parts")
        self.model = model
        self.cells = cells
        self.train_data = train_data
        self.val_data = val_data
        self.penalty_cfg = penalty_cfg
        self.cfg = cfg
        self.net_params = network_group(cells)
        self.arch_params = arch_group(cells)
        self.opt_net = ad.Adam(self.net_params, lr=cfg.lr_network)
        self.opt_arch = ad.Adam(self.arch_params, lr=cfg.lr_arch)
        ss = np.random.SeedSequence([int(cfg.seed), 0x5EA2]).spawn(3)
        self._gumbel_rng = np.random.default_rng(ss[0])
        self._train_order_rng = np.random.default_rng(ss[1])
        self._val_order_rng = np.random.default_rng(ss[2])
        self.state = SearchState()
        self.tau = cfg.tau_start

    # -- weights ---------------------------------------------------------

    def sample_weights(self, hard=True, noise=True):
        return [gumbel_softmax(c.alpha, self.tau, rng=self._gumbel_rng, hard=hard, noise=noise)
                for c in self.cells]

    def discretization(self):
        return [c.discretize() for c in self.cells]

    def discretized_weights(self):
        return [one_hot_weights(c.n_paths, c.paths.index(c.discretize())) for c in self.cells]

    def selected_params_now(self):
        return sum(c.trainable_count(c.discretize()) for c in self.cells)

    def tau_at(self, epoch):
        """Exponential anneal from tau_start to tau_end across stage-1 epochs."""
        e1 = self.cfg.stage1_epochs
        if e1 <= 1:
            return self.cfg.tau_end
        frac = min(epoch, e1 - 1) / (e1 - 1)
        return self.cfg.tau_start * (self.cfg.tau_end / self.cfg.tau_start) ** frac

    # -- steps -----------------------------------------------------------

    def _zero_all(self):
        self.net_params.zero_grads()
        self.arch_params.zero_grads()

    def arch_step(self, val_batch):
        """One architecture update on a validation batch. Network gradients
        are computed by the same backward pass and then discarded."""
        if len(val_batch) == 0:
            raise ValueError("arch_step needs a nonempty batch")
        self._zero_all()
        weights = self.sample_weights(hard=True, noise=True)
        logits = cascade_forward(self.model, self.cells, ad.constant(val_batch.x), weights)
        task = objective.task_loss(logits, val_batch.labels)
        pen = objective.penalty(self.cells, weights, self.penalty_cfg)
        total = objective.total_loss(task, pen, self.penalty_cfg)
        ad.backward(total)
        self.opt_arch.step()
        self._zero_all()
        self.state.val_ids_seen.update(int(i) for i in val_batch.ids)
        return total.item(), task.item(), pen.item()

    def net_step(self, train_batch):
        """One network update on a training batch; alpha stays untouched and
        the penalty (a function of alpha alone) is excluded."""
        if len(train_batch) == 0:
            raise ValueError("net_step needs a nonempty batch")
        self._zero_all()
        weights = self.sample_weights(hard=True, noise=True)
        logits = cascade_forward(self.model, self.cells, ad.constant(train_batch.x), weights)
        task = objective.task_loss(logits, train_batch.labels)
        ad.backward(task)
        self.opt_net.step()
        self._zero_all()
        self.state.train_ids_seen.update(int(i) for i in train_batch.ids)
        return task.item()

    def _batches(self, data, rng):
        order = rng.permutation(len(data))
        bs = self.cfg.batch_size
        return [data.subset(order[i:i + bs]) for i in range(0, len(order), bs)]

    def _record_epoch(self, stage, train_loss, val_loss, pen):
        self.state.history.append(EpochRecord(
            epoch=self.state.epoch,
            stage=stage,
            train_loss=train_loss,
            val_loss=val_loss,
            penalty=pen,
            alphas=[c.alpha.value.tolist() for c in self.cells],
            discretization=self.discretization(),
            selected_params=self.selected_params_now(),
        ))
        self.state.epoch += 1

    def run_stage1(self, step_callback=None):
        """Alternating bilevel epochs: per iteration one arch step on the next
        validation batch, then one network step on the next training batch."""
        if self.state.stage != 1:
            raise RuntimeError("stage 1 already completed")
        for epoch in range(self.cfg.stage1_epochs):
            self.tau = self.tau_at(epoch)
            train_batches = self._batches(self.train_data, self._train_order_rng)
            val_batches = self._batches(self.val_data, self._val_order_rng)
            train_losses, val_losses, pens = [], [], []
            for it, tb in enumerate(train_batches):
                vb = val_batches[it % len(val_batches)]
                vt, _, pen = self.arch_step(vb)
                if step_callback:
                    step_callback("arch", self)
                tl = self.net_step(tb)
                if step_callback:
                    step_callback("net", self)
                val_losses.append(vt)
                pens.append(pen)
                train_losses.append(tl)
            self._record_epoch(1, float(np.mean(train_losses)), float(np.mean(val_losses)),
                               float(np.mean(pens)))
        self.state.stage = 2
        self.state.arch_frozen = True
        return self.state

    def run_stage2(self, step_callback=None):
        """Train only the network parameters of the fixed discretized scheme;
        alpha is frozen, so the discretization cannot move."""
        if self.state.stage != 2:
            raise RuntimeError("run stage 1 before stage 2")
        weights = self.discretized_weights()
        # only the chosen paths' parameters can receive gradients now; restrict
        # the optimizer to exactly that group (keeps the missing-grad check
        # strict) but carry the stage-1 moment estimates over
        scheme_params = ad.ParameterSet()
        for cell, choice in zip(self.cells, self.discretization()):
            scheme_params.merge(cell.params_for_choice(choice), prefix=f"cell{cell.index}.")
        opt_stage2 = ad.Adam(scheme_params, lr=self.cfg.lr_network)
        opt_stage2.t = self.opt_net.t
        for name in scheme_params:
            opt_stage2._m[name] = self.opt_net._m[name]
            opt_stage2._v[name] = self.opt_net._v[name]
        for _ in range(self.cfg.stage2_epochs):
            train_losses = []
            for tb in self._batches(self.train_data, self._train_order_rng):
                self._zero_all()
                logits = cascade_forward(self.model, self.cells, ad.constant(tb.x), weights)
                task = objective.task_loss(logits, tb.labels)
                ad.backward(task)
                opt_stage2.step()
                self._zero_all()
                self.state.train_ids_seen.update(int(i) for i in tb.ids)
                train_losses.append(task.item())
                if step_callback:
                    step_callback("net", self)
            val_task, pen = self.evaluate(self.val_data)
            self._record_epoch(2, float(np.mean(train_losses)), val_task, pen)
        return self.state

    def evaluate(self, data, weights=None):
        """Task loss (and penalty) of the current discretized architecture."""
        if weights is None:
            weights = self.discretized_weights()
        logits = cascade_forward(self.model, self.cells, ad.constant(data.x), weights)
        task = objective.task_loss(logits, data.labels)
        pen = objective.penalty(self.cells, weights, self.penalty_cfg)
        return task.item(), pen.item()


def run_search(model, cells, train_data, val_data, penalty_cfg, cfg, step_callback=None):
    """Convenience wrapper: stage 1 then (if configured) stage 2."""
    search = AdaptiveSearch(model, cells, train_data, val_data, penalty_cfg, cfg)
    search.run_stage1(step_callback=step_callback)
    if cfg.stage2_epochs > 0:
        search.run_stage2(step_callback=step_callback)
    return search
