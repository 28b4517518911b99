"""Run one full adaptive-tuning search on the 6-module toy cascade.

The cascade (denoise -> recognize -> label) is pretrained on a synthetic
source domain, then every module is wrapped in a search cell with candidate
paths {frozen, fine-tune, bottleneck adapter}. Stage 1 learns the path logits
by alternating architecture and network updates; stage 2 fixes the argmax
architecture and trains only its parameters.
"""

from nfa import harness
from nfa.config import config_from_dict

cfg = config_from_dict({
    "cascade": {"preset": "toy6"},
    "adapters": ["BA"],
    "mode": "NFA",
    "penalty": {"pfr_policy": "half_finetune", "coefficient": 1.0, "enabled": True},
    "search": {"stage1_epochs": 8, "stage2_epochs": 4, "lr_network": 0.01,
               "lr_arch": 0.05, "batch_size": 32, "seed": 0},
    "pretrain": {"epochs": 30, "lr": 0.01},
    "data": {"n_source": 1024, "n_target": 512},
    "output_dir": "demo_runs/search",
})

result = harness.run_experiment(cfg)

print("discretized tuning scheme:")
for c in result.decision.cells:
    print(f"  cell {c.index} ({c.module}): {c.choice}  "
          f"(path costs {c.path_params})")

totals = result.decision.totals
print(f"\ntotal params      {totals['total_params']}")
print(f"trained in search {totals['train_params']}")
print(f"selected (deploy) {totals['selected_params']}")
print(f"final val loss    {result.final_val_loss:.4f}")
print(f"\nreports written to {result.out_dir}/")

print("\nloss trajectory (epoch, stage, train, val, penalty):")
for rec in result.search.state.history:
    print(f"  {rec.epoch:>2}  s{rec.stage}  {rec.train_loss:.4f}  "
          f"{rec.val_loss:.4f}  {rec.penalty:.4f}")
