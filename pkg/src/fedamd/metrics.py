"""Cost counters, global evaluation and target tracking.

Gradient cost is counted in per-sample gradient evaluations and
communication in 64-bit floats moved between server and clients.
Evaluation never touches the counters.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from . import objectives
from .errors import UsageError
from .numerics import l2_norm_sq, ordered_mean

CSV_COLUMNS = (
    "round",
    "p_t",
    "anchors",
    "miners",
    "train_loss",
    "grad_norm_sq",
    "test_acc",
    "cum_grad_samples",
    "cum_comm_floats",
)


@dataclass(frozen=True)
class Counters:
    cum_grad_samples: int = 0
    cum_comm_floats: int = 0
    rounds: int = 0


def charge(counters: Counters, grad_samples: int = 0, comm_floats: int = 0, rounds: int = 0) -> Counters:
    if grad_samples < 0 or comm_floats < 0 or rounds < 0:
        raise UsageError("counter increments must be non-negative")
    return Counters(
        counters.cum_grad_samples + int(grad_samples),
        counters.cum_comm_floats + int(comm_floats),
        counters.rounds + int(rounds),
    )


def floats_to_mbits(floats: int, bits_per_value: int = 32) -> float:
    """Convert a float count to megabits, assuming ``bits_per_value``-bit weights."""
    return floats * bits_per_value / 1e6


@dataclass(frozen=True)
class RoundReport:
    """Row ``round`` describes the model after ``round`` completed rounds;
    ``p_t``, ``n_anchors`` and ``n_miners`` describe the round just run
    (``None``/0 for the initial row)."""

    round: int
    p_t: float | None
    n_anchors: int
    n_miners: int
    counters: Counters
    train_loss: float = math.nan
    grad_norm_sq: float = math.nan
    test_acc: float = math.nan

    def with_eval(self, train_loss: float, grad_norm_sq: float, test_acc: float) -> "RoundReport":
        return replace(self, train_loss=train_loss, grad_norm_sq=grad_norm_sq, test_acc=test_acc)

    @property
    def evaluated(self) -> bool:
        return not math.isnan(self.train_loss)

    def row(self) -> tuple:
        return (
            self.round,
            self.p_t,
            self.n_anchors,
            self.n_miners,
            self.train_loss,
            self.grad_norm_sq,
            self.test_acc,
            self.counters.cum_grad_samples,
            self.counters.cum_comm_floats,
        )


def eval_global(objective, partition, x: np.ndarray, test_set=None) -> tuple[float, float, float]:
    """Return ``(train_loss, ||grad F(x)||^2, test_acc)``.

    Loss and gradient are equal-weight means of the per-shard full-batch
    values; accuracy is ``nan`` without a test set.
    """
    losses = []
    grads = []
    for shard in partition.shards:
        f, g = objectives.loss_and_grad(objective, x, shard.as_batch())
        losses.append(f)
        grads.append(g)
    train_loss = math.fsum(losses) / len(losses)
    gns = l2_norm_sq(ordered_mean(grads))
    acc = math.nan
    if test_set is not None and objective.kind != "quadratic":
        acc = float(np.mean(objectives.predict(objective, x, test_set.features) == test_set.labels))
    return train_loss, gns, acc


def rounds_to_target(history: Sequence[float], target: float) -> int | None:
    """Index of the first entry ``>= target``; ``nan`` entries are skipped."""
    for i, v in enumerate(history):
        if v is not None and not math.isnan(v) and v >= target:
            return i
    return None
