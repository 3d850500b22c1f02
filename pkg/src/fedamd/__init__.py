"""Federated training with anchor and miner client groups.

Sampled clients are split each round into anchors, which refresh a cached
large-batch gradient, and miners, which run variance-reduced local steps
against the average of those caches. Baselines (FedAvg, SCAFFOLD,
minibatch SGD, BVR-L-SGD) share the same sampling, batching and cost
accounting.
"""

from .kernels import BACKEND

__version__ = "0.1.0"

__all__ = ["BACKEND", "__version__"]
