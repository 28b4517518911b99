"""Show how the parameter-count penalty steers the search toward cheap
tuning schemes.

Per cell the penalty is the architecture-weighted mean of per-path trainable
parameter counts, normalized to [0, 1]; the frozen path's fictitious count
follows the configured policy (here HalfFineTune). With the penalty on, the
search should pick far fewer fine-tune paths and a much smaller selected
parameter count, at a modest loss cost.
"""

from nfa import harness
from nfa.config import config_from_dict


def make_cfg(seed, enabled):
    return config_from_dict({
        "cascade": {"preset": "toy6"},
        "adapters": ["BA"],
        "mode": "NFA",
        "penalty": {"pfr_policy": "half_finetune", "coefficient": 1.0, "enabled": enabled},
        "search": {"stage1_epochs": 8, "stage2_epochs": 4, "lr_network": 0.01,
                   "lr_arch": 0.05, "batch_size": 32, "seed": seed},
        "pretrain": {"epochs": 30, "lr": 0.01},
        "data": {"n_source": 1024, "n_target": 512},
        "output_dir": f"demo_runs/ablation_{'on' if enabled else 'off'}",
    })


print(f"{'seed':>4}  {'penalty':>8}  {'selected':>8}  {'#finetune':>9}  {'val loss':>8}")
for seed in range(3):
    for enabled in (True, False):
        r = harness.run_experiment(make_cfg(seed, enabled))
        n_ft = sum(c.choice == "finetune" for c in r.decision.cells)
        print(f"{seed:>4}  {'on' if enabled else 'off':>8}  "
              f"{r.decision.totals['selected_params']:>8}  {n_ft:>9}  "
              f"{r.final_val_loss:>8.4f}")
