"""Comparison algorithms on the engine's selection, batching and cost contracts.

Every round function has the shape
``(state, objective, partition, hp, counters) -> (state', RoundReport)``
and draws from the same per-round, per-client streams as FedAMD, so runs
with a shared seed see the same client subsets and batches.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import objectives
from .data import sample_batch
from .engine import (
    GlobalState,
    RoundParams,
    aggregate,
    anchor_step,
    batch_size,
    miner_step,
    pmap,
    select_clients,
)
from .errors import NumericError, UsageError
from .metrics import Counters, RoundReport, charge
from .numerics import SERVER, Purpose, all_finite, ordered_mean, ordered_sum, stream


def _selected(hp: RoundParams, t: int, M: int) -> list[int]:
    return select_clients(M, hp.A, stream(hp.seed, t, SERVER, Purpose.CLIENT_SELECTION))


def _rng(hp: RoundParams, t: int, m: int) -> np.random.Generator:
    return stream(hp.seed, t, m, Purpose.BATCH_SAMPLING)


def _finish(state, x_next, t, extra, counters, samples, comm, n_active, n_anchors=0):
    if not all_finite(x_next):
        raise NumericError(f"global model became non-finite in round {t}")
    counters = charge(counters, samples, comm, 1)
    report = RoundReport(t + 1, None, n_anchors, n_active, counters)
    return GlobalState(x_next, t + 1, state.cache, extra), report


def local_sgd(objective, shard, x_t, K, b_small, eta_l, rng):
    x = x_t
    for _ in range(K):
        x = x - eta_l * objectives.grad(objective, x, sample_batch(shard, b_small, rng))
    return x_t - x


def fedavg_round(state: GlobalState, objective, partition, hp: RoundParams, counters: Counters):
    """Each selected client runs ``K`` local SGD steps; the server averages deltas."""
    t = state.t
    sel = _selected(hp, t, partition.M)

    def work(m):
        return local_sgd(objective, partition.shards[m], state.x, hp.K, hp.b_small, hp.eta_l, _rng(hp, t, m))

    deltas = pmap(work, sel, hp.threads)
    x_next = state.x - hp.eta_s * ordered_mean(deltas)
    samples = sum(hp.K * batch_size(partition.shards[m], hp.b_small) for m in sel)
    return _finish(state, x_next, t, state.extra, counters, samples, 2 * hp.A * objective.d, len(sel))


def minibatch_sgd_round(state: GlobalState, objective, partition, hp: RoundParams, counters: Counters):
    """One gradient per client at ``x_t``, averaged over ``K`` size-b' batches;
    the server steps with ``eta = eta_l * eta_s``."""
    t = state.t
    sel = _selected(hp, t, partition.M)

    def work(m):
        shard, rng = partition.shards[m], _rng(hp, t, m)
        return ordered_mean([objectives.grad(objective, state.x, sample_batch(shard, hp.b_small, rng)) for _ in range(hp.K)])

    grads = pmap(work, sel, hp.threads)
    x_next = state.x - (hp.eta_l * hp.eta_s) * ordered_mean(grads)
    samples = sum(hp.K * batch_size(partition.shards[m], hp.b_small) for m in sel)
    return _finish(state, x_next, t, state.extra, counters, samples, 2 * hp.A * objective.d, len(sel))


@dataclass(eq=False)
class ScaffoldState:
    c_global: np.ndarray
    c_local: np.ndarray  # (M, d)

    @classmethod
    def zeros(cls, M: int, d: int) -> "ScaffoldState":
        return cls(np.zeros(d), np.zeros((M, d)))


def scaffold_round(state: GlobalState, objective, partition, hp: RoundParams, counters: Counters):
    """Controlled local steps ``y -= eta_l (grad(y) - c_i + c)``.

    Control update (option II): ``c_i+ = c_i - c + (x_t - y_K) / (K eta_l)``.
    The model delta is averaged over participants, and ``c`` moves by
    ``(1/M) sum(c_i+ - c_i)`` so it stays the mean of all ``c_i``.
    """
    t = state.t
    sc: ScaffoldState = state.extra.get("scaffold") or ScaffoldState.zeros(partition.M, objective.d)
    sel = _selected(hp, t, partition.M)
    c = sc.c_global

    def work(m):
        shard, rng = partition.shards[m], _rng(hp, t, m)
        corr = c - sc.c_local[m]
        y = state.x
        for _ in range(hp.K):
            y = y - hp.eta_l * (objectives.grad(objective, y, sample_batch(shard, hp.b_small, rng)) + corr)
        delta = state.x - y
        c_new = sc.c_local[m] - c + delta / (hp.K * hp.eta_l)
        return delta, c_new

    out = pmap(work, sel, hp.threads)
    x_next = state.x - hp.eta_s * ordered_mean([d for d, _ in out])
    c_local = sc.c_local.copy()
    dc = []
    for m, (_, c_new) in zip(sel, out):
        dc.append(c_new - c_local[m])
        c_local[m] = c_new
    c_global = c + ordered_sum(dc) / partition.M
    extra = dict(state.extra, scaffold=ScaffoldState(c_global, c_local))
    samples = sum(hp.K * batch_size(partition.shards[m], hp.b_small) for m in sel)
    return _finish(state, x_next, t, extra, counters, samples, 4 * hp.A * objective.d, len(sel))


def bvr_l_sgd_round(state: GlobalState, objective, partition, hp: RoundParams, counters: Counters):
    """Alternating synchronization and local rounds.

    Even rounds: the sampled clients compute size-``b`` gradients at ``x_t``
    and the direction ``g`` becomes their average (only sampled clients
    contribute under partial participation). Odd rounds: the sampled
    clients run the variance-reduced local steps from ``g``.
    """
    t = state.t
    sel = _selected(hp, t, partition.M)
    d = objective.d
    if t % 2 == 0:
        def sync(m):
            return anchor_step(objective, partition.shards[m], state.x, hp.b, _rng(hp, t, m))

        g = ordered_mean(pmap(sync, sel, hp.threads))
        samples = sum(batch_size(partition.shards[m], hp.b) for m in sel)
        extra = dict(state.extra, bvr_g=g)
        return _finish(state, state.x, t, extra, counters, samples, 2 * hp.A * d, 0, len(sel))

    g = state.extra.get("bvr_g")
    if g is None:
        raise UsageError("local round reached before any synchronization round")

    def local(m):
        return miner_step(objective, partition.shards[m], state.x, g, hp.K, hp.b_small, hp.eta_l, _rng(hp, t, m))

    results = pmap(local, sel, hp.threads)
    x_next = aggregate(results, state.x, hp.eta_s)
    if hp.grad_count == "exact":
        samples = sum(r.grad_samples_used for r in results)
    else:
        samples = sum(hp.K * batch_size(partition.shards[m], hp.b_small) for m in sel)
    return _finish(state, x_next, t, state.extra, counters, samples, 3 * hp.A * d, len(sel))


ROUND_FUNCTIONS = {
    "fedavg": fedavg_round,
    "scaffold": scaffold_round,
    "minibatch-sgd": minibatch_sgd_round,
    "bvr-l-sgd": bvr_l_sgd_round,
}
