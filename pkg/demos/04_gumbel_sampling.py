"""Inspect the Gumbel-softmax path sampler used inside every search cell.

Three facts matter for the search: noise-free symmetric logits give exactly
uniform weights, hard (straight-through) samples are one-hot in the forward
pass while keeping the soft gradients, and the empirical pick rate of a path
follows softmax(alpha).
"""

import math

import numpy as np

from nfa import autodiff as ad
from nfa.cell import gumbel_softmax

alpha = ad.constant([0.0, 0.0, 0.0])
w = gumbel_softmax(alpha, tau=1.0, noise=False)
print("symmetric logits, no noise:", w.values)

alpha = ad.parameter([1.0, 0.0, -0.5])
soft = gumbel_softmax(alpha, tau=0.7, noise=False, hard=False)
hard = gumbel_softmax(alpha, tau=0.7, noise=False, hard=True)
print("soft weights:", np.round(soft.values, 4))
print("hard sample :", hard.values)

probe = ad.constant([0.3, -1.2, 2.0])
ad.backward(ad.tensor_sum(ad.mul(hard.weights, probe)))
hard_grad = alpha.grad.copy()
alpha.zero_grad()
ad.backward(ad.tensor_sum(ad.mul(soft.weights, probe)))
print("straight-through grad equals soft grad:",
      bool(np.allclose(hard_grad, alpha.grad, atol=1e-15)))

rng = np.random.default_rng(0)
alpha = ad.constant([1.0, 0.0])
n = 50_000
hits = sum(
    int(gumbel_softmax(alpha, tau=1.0, rng=rng, hard=True, noise=True).values[0] == 1.0)
    for _ in range(n)
)
print(f"empirical pick rate of path 0: {hits / n:.4f} "
      f"(softmax predicts {math.e / (math.e + 1):.4f})")
