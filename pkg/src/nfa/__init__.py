"""Adaptive-tuning architecture search for cascaded multi-task models.

Wraps every module of a pretrained cascade in a search cell whose candidate
paths are frozen / adapter(s) / fine-tune, learns path logits by alternating
first-order bilevel optimization with straight-through Gumbel-softmax
sampling, and penalizes the loss by the normalized trainable-parameter cost
of the sampled architecture.
"""

from . import autodiff, cascade, cell, config, data, harness, objective, search

__all__ = ["autodiff", "cascade", "cell", "config", "data", "harness", "objective", "search"]
__version__ = "0.1.0"
