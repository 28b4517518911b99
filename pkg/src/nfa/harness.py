"""Experiment orchestration: data, pretraining, search, the brute-force
enumeration oracle, parameter accounting, and on-disk reports.

Outputs per run: ``architecture.json`` (the discretized decision plus exact
parameter accounting), ``metrics.csv`` (one row per search epoch), and flat
binary checkpoints with JSON manifests at each stage boundary.
"""

from __future__ import annotations

import csv
import itertools
import json
import os
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from . import autodiff as ad
from . import objective
from .cascade import build_cascade, pretrain_upstream
from .cell import build_cells, cascade_forward, network_group, one_hot_weights
from .config import ExperimentConfig, config_hash
from .data import SynthDataConfig, generate_synthetic
from .search import AdaptiveSearch, split_dataset

OUTPUT_ROOT_ENV = "NFA_OUTPUT_ROOT"
DEFAULT_ORACLE_CAP = 243


@dataclass(frozen=True)
class CellDecision:
    index: int
    module: str
    choice: str
    alpha: tuple
    path_params: dict


@dataclass(frozen=True)
class ArchitectureDecision:
    cells: tuple
    totals: dict
    config_hash: str
    seed: int


@dataclass
class RunResult:
    decision: ArchitectureDecision
    out_dir: Path
    architecture_path: Path
    metrics_path: Path
    checkpoint_paths: list
    final_val_loss: float
    search: AdaptiveSearch


@dataclass(frozen=True)
class OracleEntry:
    scheme: tuple
    val_loss: float


# -- accounting ------------------------------------------------------------


def account_params(model, cells, choices):
    """Exact integer totals for a discretized decision.

    total: pretrained weights + every search-time trainable + alpha logits.
    train: the search-time trainables (network group + alpha).
    selected: trainables of the chosen paths only — the deployment cost.
    """
    if len(choices) != len(cells):
        raise ValueError(f"{len(choices)} choices for {len(cells)} cells")
    alpha_count = sum(c.alpha.value.size for c in cells)
    network = network_group(cells).count
    selected = sum(c.trainable_count(choice) for c, choice in zip(cells, choices))
    totals = {
        "total_params": model.pretrained_count() + network + alpha_count,
        "train_params": network + alpha_count,
        "selected_params": selected,
    }
    assert totals["selected_params"] <= totals["train_params"]
    return totals


def make_decision(model, cells, choices, cfg_hash, seed):
    cell_decisions = tuple(
        CellDecision(
            index=c.index,
            module=c.module.name,
            choice=choice,
            alpha=tuple(float(v) for v in c.alpha.value),
            path_params={p: c.trainable_count(p) for p in c.paths},
        )
        for c, choice in zip(cells, choices)
    )
    return ArchitectureDecision(
        cells=cell_decisions,
        totals=account_params(model, cells, choices),
        config_hash=cfg_hash,
        seed=int(seed),
    )


def export_architecture(decision: ArchitectureDecision, path):
    path = Path(path)
    doc = {
        "cells": [
            {
                "index": c.index,
                "module": c.module,
                "choice": c.choice,
                "alpha": list(c.alpha),
                "P": dict(c.path_params),
            }
            for c in decision.cells
        ],
        "totals": decision.totals,
        "config_hash": decision.config_hash,
        "seed": decision.seed,
    }
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w") as fh:
            json.dump(doc, fh, indent=2, sort_keys=True)
            fh.write("\n")
    except OSError as e:
        raise OSError(f"failed to write architecture report to {path}: {e}") from e
    return path


def import_architecture(path) -> ArchitectureDecision:
    with open(path) as fh:
        doc = json.load(fh)
    cells = tuple(
        CellDecision(
            index=int(c["index"]),
            module=c["module"],
            choice=c["choice"],
            alpha=tuple(float(v) for v in c["alpha"]),
            path_params={k: int(v) for k, v in c["P"].items()},
        )
        for c in sorted(doc["cells"], key=lambda c: c["index"])
    )
    return ArchitectureDecision(
        cells=cells,
        totals={k: int(v) for k, v in doc["totals"].items()},
        config_hash=doc["config_hash"],
        seed=int(doc["seed"]),
    )


def diff_decisions(a: ArchitectureDecision, b: ArchitectureDecision):
    """Per-cell choice differences between two runs, plus totals side by side."""
    if len(a.cells) != len(b.cells):
        raise ValueError("decisions cover different numbers of cells")
    rows = []
    for ca, cb in zip(a.cells, b.cells):
        rows.append({
            "index": ca.index,
            "module": ca.module,
            "a": ca.choice,
            "b": cb.choice,
            "same": ca.choice == cb.choice,
        })
    return rows


# -- checkpoints -------------------------------------------------------------


def save_checkpoint(named_values, prefix):
    """Flat binary of float64 tensors plus a JSON manifest; bit-exact reload."""
    prefix = Path(prefix)
    prefix.parent.mkdir(parents=True, exist_ok=True)
    manifest = {"dtype": "float64", "tensors": []}
    offset = 0
    with open(prefix.with_suffix(".bin"), "wb") as fh:
        for name, value in named_values.items():
            arr = np.ascontiguousarray(value, dtype=np.float64)
            fh.write(arr.tobytes())
            manifest["tensors"].append({"name": name, "shape": list(arr.shape), "offset": offset})
            offset += arr.nbytes
    with open(prefix.with_suffix(".json"), "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return prefix.with_suffix(".bin"), prefix.with_suffix(".json")


def load_checkpoint(prefix):
    prefix = Path(prefix)
    with open(prefix.with_suffix(".json")) as fh:
        manifest = json.load(fh)
    raw = prefix.with_suffix(".bin").read_bytes()
    out = {}
    for entry in manifest["tensors"]:
        shape = tuple(entry["shape"])
        n = int(np.prod(shape)) if shape else 1
        start = entry["offset"]
        arr = np.frombuffer(raw, dtype=np.float64, count=n, offset=start).reshape(shape)
        out[entry["name"]] = arr.copy()
    return out


def snapshot_tensors(cells):
    """All search-time state worth checkpointing: network group plus alpha."""
    named = {}
    for name, t in network_group(cells).items():
        named[name] = t.value
    for c in cells:
        named[f"cell{c.index}.alpha"] = c.alpha.value
    return named


# -- experiment assembly -----------------------------------------------------


def source_data_config(cfg: ExperimentConfig) -> SynthDataConfig:
    return SynthDataConfig(
        n_samples=cfg.n_source,
        dim=cfg.data.dim,
        n_labels=cfg.data.n_labels,
        n_intermediate=cfg.data.n_intermediate,
        noise_std=cfg.noise_std_source,
        domain="source",
        shift_delta=cfg.data.shift_delta,
    )


def build_experiment(cfg: ExperimentConfig, seed):
    """Deterministically build everything the search and the oracle share:
    datasets, the pretrained cascade, the target split, and fresh cells."""
    seed = int(seed)
    source = generate_synthetic(source_data_config(cfg), seed)
    target = generate_synthetic(cfg.data, seed)
    model = build_cascade(cfg.cascade, seed)
    pretrain_upstream(model, source, epochs=cfg.pretrain.epochs, lr=cfg.pretrain.lr,
                      batch_size=cfg.pretrain.batch_size, seed=seed)
    train, val = split_dataset(target, cfg.search.split_ratio, seed)
    cells = build_cells(model, mode=cfg.mode, adapter_kinds=cfg.adapters, seed=seed)
    return model, cells, source, train, val


def resolve_out_dir(cfg: ExperimentConfig, out_dir=None, seed=None):
    base = Path(out_dir) if out_dir else Path(cfg.output_dir)
    root = os.environ.get(OUTPUT_ROOT_ENV)
    if root:
        base = Path(root) / base
    if seed is not None and out_dir is None:
        base = base / f"seed{seed}"
    return base


def _fmt(v):
    return repr(float(v))


def write_metrics(history, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "stage", "train_loss", "val_loss", "penalty", "selected_params"])
        for rec in history:
            w.writerow([rec.epoch, rec.stage, _fmt(rec.train_loss), _fmt(rec.val_loss),
                        _fmt(rec.penalty), rec.selected_params])
    return path


def run_experiment(cfg: ExperimentConfig, seed=None, out_dir=None, step_callback=None) -> RunResult:
    """Pretrain -> split -> stage 1 -> stage 2 -> discretize -> account -> export."""
    seed = int(seed) if seed is not None else cfg.search.seed
    search_cfg = replace(cfg.search, seed=seed)
    out = resolve_out_dir(cfg, out_dir, seed=seed)
    out.mkdir(parents=True, exist_ok=True)
    stage = "setup"
    try:
        model, cells, _, train, val = build_experiment(cfg, seed)
        search = AdaptiveSearch(model, cells, train, val, cfg.penalty, search_cfg)
        checkpoints = []
        stage = "stage1"
        search.run_stage1(step_callback=step_callback)
        checkpoints += save_checkpoint(snapshot_tensors(cells), out / "checkpoints" / "stage1")
        if search_cfg.stage2_epochs > 0:
            stage = "stage2"
            search.run_stage2(step_callback=step_callback)
            checkpoints += save_checkpoint(snapshot_tensors(cells), out / "checkpoints" / "stage2")
        stage = "report"
        decision = make_decision(model, cells, search.discretization(), config_hash(cfg), seed)
        arch_path = export_architecture(decision, out / "architecture.json")
        metrics_path = write_metrics(search.state.history, out / "metrics.csv")
        final_val_loss, _ = search.evaluate(val)
    except Exception as e:
        flag = out / "FAILED"
        flag.write_text(f"stage={stage}\nerror={type(e).__name__}: {e}\n")
        raise RuntimeError(f"experiment aborted during {stage}: {e}") from e
    return RunResult(
        decision=decision,
        out_dir=out,
        architecture_path=arch_path,
        metrics_path=metrics_path,
        checkpoint_paths=checkpoints,
        final_val_loss=final_val_loss,
        search=search,
    )


# -- brute-force oracle ------------------------------------------------------


def scheme_space(cells):
    """All discrete per-cell path assignments."""
    return list(itertools.product(*[tuple(c.paths) for c in cells]))


def train_fixed_scheme(model, cells, scheme, train, val, lr, epochs, batch_size, seed):
    """Train only the parameters the scheme selects, with constant one-hot
    weights, and return the final validation task loss."""
    weights = [one_hot_weights(c.n_paths, c.paths.index(choice))
               for c, choice in zip(cells, scheme)]
    params = ad.ParameterSet()
    for c, choice in zip(cells, scheme):
        params.merge(c.params_for_choice(choice), prefix=f"cell{c.index}.")
    opt = ad.Adam(params, lr=lr) if len(params) else None
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0x04AC]))
    for _ in range(epochs):
        order = rng.permutation(len(train))
        if opt is None:
            break
        for start in range(0, len(order), batch_size):
            batch = train.subset(order[start:start + batch_size])
            params.zero_grads()
            logits = cascade_forward(model, cells, ad.constant(batch.x), weights)
            loss = objective.task_loss(logits, batch.labels)
            ad.backward(loss)
            opt.step()
            params.zero_grads()
    logits = cascade_forward(model, cells, ad.constant(val.x), weights)
    return objective.task_loss(logits, val.labels).item()


def enumerate_oracle(cfg: ExperimentConfig, seed=None, cap=DEFAULT_ORACLE_CAP):
    """Budget-matched exhaustive baseline: train every discrete scheme with the
    stage-2 epoch budget and rank by validation task loss (ascending)."""
    seed = int(seed) if seed is not None else cfg.search.seed
    model, cells, _, train, val = build_experiment(cfg, seed)
    space = scheme_space(cells)
    if len(space) > cap:
        raise ValueError(
            f"scheme space has {len(space)} entries (> cap {cap}); shrink the cascade "
            "or the adapter candidate list"
        )
    entries = []
    for scheme in space:
        # identical initialization for every scheme: rebuild the cells
        fresh = build_cells(model, mode=cfg.mode, adapter_kinds=cfg.adapters, seed=seed)
        loss = train_fixed_scheme(
            model, fresh, scheme, train, val,
            lr=cfg.search.lr_network, epochs=cfg.search.stage2_epochs,
            batch_size=cfg.search.batch_size, seed=seed,
        )
        entries.append(OracleEntry(scheme=scheme, val_loss=loss))
    return sorted(entries, key=lambda e: (e.val_loss, e.scheme))


def oracle_rank(entries, scheme):
    """1-based rank of ``scheme`` in an oracle ranking."""
    for i, e in enumerate(entries):
        if e.scheme == tuple(scheme):
            return i + 1
    raise ValueError(f"scheme {scheme!r} not present in the oracle ranking")
