"""Validate the search against brute force on the 3-cell cascade.

With 3 cells and paths {frozen, fine-tune, adapter:BA} there are only 27
discrete schemes, so we can train every one of them with the same stage-2
budget and rank them by validation loss. A good search should land its
discretized scheme near the top of that ranking.
"""

from nfa import harness
from nfa.config import config_from_dict


def make_cfg(seed):
    return config_from_dict({
        "cascade": {"preset": "toy3"},
        "adapters": ["BA"],
        "mode": "NFA",
        "penalty": {"pfr_policy": "half_finetune", "coefficient": 1.0, "enabled": False},
        "search": {"stage1_epochs": 8, "stage2_epochs": 4, "lr_network": 0.01,
                   "lr_arch": 0.05, "batch_size": 32, "seed": seed},
        "pretrain": {"epochs": 30, "lr": 0.01},
        "data": {"n_source": 1024, "n_target": 512},
        "output_dir": "demo_runs/oracle",
    })


for seed in range(3):
    cfg = make_cfg(seed)
    result = harness.run_experiment(cfg)
    entries = harness.enumerate_oracle(cfg)
    scheme = tuple(c.choice for c in result.decision.cells)
    rank = harness.oracle_rank(entries, scheme)

    print(f"seed {seed}: searched scheme {scheme}")
    print(f"  oracle rank {rank} of {len(entries)}")
    print("  oracle top 3:")
    for e in entries[:3]:
        print(f"    {e.val_loss:.4f}  {e.scheme}")
    print(f"  oracle worst: {entries[-1].val_loss:.4f}  {entries[-1].scheme}")
    print()
