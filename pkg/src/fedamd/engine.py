"""FedAMD round engine.

Each round the server samples ``A`` clients, splits them into anchors
(probability ``p_t`` each) and miners, and sends ``x_t`` plus the cached
gradient average ``g_t`` to the miners. Anchors refresh their cached
gradient with a large batch; miners run ``K`` variance-reduced local steps
and return a model delta. Only miner deltas move the global model.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping

import numpy as np

from . import objectives
from .data import sample_batch
from .errors import ConfigError, NumericError, UsageError
from .metrics import Counters, RoundReport, charge
from .numerics import SERVER, Purpose, all_finite, ordered_mean, ordered_sum, stream
from .schedules import Schedule, prob_at

CACHE_MODES = ("full-table", "massive-client")
GRAD_COUNTS = ("exact", "paper")


@dataclass(frozen=True)
class RoundParams:
    A: int
    K: int = 10
    b: int | None = None  # anchor batch; None means the full local shard
    b_small: int = 64
    eta_l: float = 0.01
    eta_s: float = 1.0
    seed: int = 0
    grad_count: str = "exact"
    cache_mode: str = "full-table"
    g_to_all: bool = False
    threads: int | None = None  # None defers to FEDAMD_THREADS

    def __post_init__(self):
        if self.A < 1:
            raise ConfigError("A must be >= 1")
        if self.K < 1:
            raise ConfigError("K must be >= 1")
        if self.b_small < 1 or (self.b is not None and self.b < 1):
            raise ConfigError("batch sizes must be >= 1")
        if not self.eta_l > 0 or not self.eta_s > 0:
            raise ConfigError("learning rates must be positive")
        if self.grad_count not in GRAD_COUNTS:
            raise ConfigError(f"grad_count must be one of {GRAD_COUNTS}")
        if self.cache_mode not in CACHE_MODES:
            raise ConfigError(f"cache_mode must be one of {CACHE_MODES}")


@dataclass(eq=False)
class CacheState:
    v: np.ndarray  # (M, d): most recent anchor gradient of every client
    g_avg: np.ndarray
    mode: str = "full-table"

    @property
    def M(self) -> int:
        return self.v.shape[0]

    def copy(self) -> "CacheState":
        return CacheState(self.v.copy(), self.g_avg.copy(), self.mode)


@dataclass(eq=False)
class GlobalState:
    x: np.ndarray
    t: int = 0
    cache: CacheState | None = None
    extra: dict = field(default_factory=dict)  # per-algorithm state for baselines


@dataclass(eq=False)
class MinerResult:
    delta: np.ndarray
    grad_samples_used: int
    client: int
    first_direction: np.ndarray | None = None  # g_{t,1}, kept for invariant checks

    def __post_init__(self):
        if self.grad_samples_used <= 0:
            raise UsageError("a miner must consume at least one gradient sample")


# --- parallel map --------------------------------------------------------


def thread_count(requested: int | None = None) -> int:
    if requested is None:
        raw = os.environ.get("FEDAMD_THREADS", "1")
        try:
            requested = int(raw)
        except ValueError:
            raise ConfigError(f"FEDAMD_THREADS must be an integer, got {raw!r}") from None
    if requested < 0:
        raise ConfigError("thread count must be >= 0")
    return requested if requested > 0 else (os.cpu_count() or 1)


def pmap(fn: Callable, items: list, threads: int | None = None) -> list:
    """``[fn(i) for i in items]``, optionally on a thread pool. Results keep
    input order, so callers reduce deterministically."""
    n = min(thread_count(threads), len(items))
    if n <= 1:
        return [fn(i) for i in items]
    with ThreadPoolExecutor(max_workers=n) as pool:
        return list(pool.map(fn, items))


# --- selection -----------------------------------------------------------


def select_clients(M: int, A: int, rng: np.random.Generator) -> list[int]:
    """Uniform ``A``-subset of ``range(M)`` by partial Fisher-Yates; sorted."""
    if not 1 <= A <= M:
        raise ConfigError(f"A must be <= M (got A={A}, M={M})")
    if A == M:
        return list(range(M))
    pool = list(range(M))
    for i in range(A):
        j = i + int(rng.integers(M - i))
        pool[i], pool[j] = pool[j], pool[i]
    return sorted(pool[:A])


def classify_groups(selected: Iterable[int], p_t: float, rng: np.random.Generator) -> tuple[list[int], list[int]]:
    """One uniform draw per client in ascending id order; anchor iff ``u < p_t``."""
    if not 0.0 <= p_t <= 1.0:
        raise UsageError(f"p_t must lie in [0, 1], got {p_t}")
    selected = sorted(selected)
    u = rng.random(len(selected))
    anchors = [m for m, ui in zip(selected, u) if ui < p_t]
    miners = [m for m, ui in zip(selected, u) if not ui < p_t]
    return anchors, miners


# --- client work ---------------------------------------------------------


def batch_size(shard, b: int | None) -> int:
    return shard.n if b is None else min(b, shard.n)


def anchor_step(objective, shard, x_t: np.ndarray, b: int | None, rng: np.random.Generator) -> np.ndarray:
    """Gradient on a fresh size-``b`` batch (the whole shard when ``b`` is None)."""
    size = shard.n if b is None else b
    return objectives.grad(objective, x_t, sample_batch(shard, size, rng))


def miner_step(
    objective,
    shard,
    x_t: np.ndarray,
    g_t: np.ndarray,
    K: int,
    b_small: int,
    eta_l: float,
    rng: np.random.Generator,
) -> MinerResult:
    """``K`` recursive variance-reduced steps starting from ``g_{t,0} = g_t``.

    ``g_{k+1} = g_k - grad(x_{k-1}, B_k) + grad(x_k, B_k)`` with
    ``x_{-1} = x_0 = x_t``. At ``k = 0`` both gradients sit at the same
    point on the same batch, so ``g_1 = g_t`` is set exactly and the single
    shared gradient is evaluated once.
    """
    if K < 1 or b_small < 1 or not eta_l > 0:
        raise UsageError("miner_step needs K >= 1, b' >= 1 and eta_l > 0")
    per_batch = min(b_small, shard.n)
    x_prev = x_t
    x = x_t
    g = g_t
    first = None
    used = 0
    for k in range(K):
        batch = sample_batch(shard, b_small, rng)
        if k == 0:
            objectives.grad(objective, x, batch)
            used += per_batch
            g = g_t.copy()
            first = g
        else:
            g = g - objectives.grad(objective, x_prev, batch) + objectives.grad(objective, x, batch)
            used += 2 * per_batch
        x_prev, x = x, x - eta_l * g
    return MinerResult(x_t - x, used, shard.client, first)


# --- server --------------------------------------------------------------


def aggregate(miner_results: list[MinerResult], x_t: np.ndarray, eta_s: float) -> np.ndarray:
    """``x_t - eta_s * mean(delta)``, summing in ascending client id.
    With no miners the model is returned unchanged."""
    if not eta_s > 0:
        raise UsageError("eta_s must be positive")
    if not miner_results:
        return x_t
    ordered = sorted(miner_results, key=lambda r: r.client)
    return x_t - eta_s * ordered_mean([r.delta for r in ordered])


def init_cache(objective, partition, x0: np.ndarray, b: int | None, seed: int, mode: str = "full-table") -> tuple[CacheState, int]:
    """Cache every client's gradient at ``x0``; returns the cache and its sample cost."""
    if mode not in CACHE_MODES:
        raise ConfigError(f"cache_mode must be one of {CACHE_MODES}")
    rows = []
    cost = 0
    for shard in partition.shards:
        rng = stream(seed, 0, shard.client, Purpose.CACHE_INIT)
        rows.append(anchor_step(objective, shard, x0, b, rng))
        cost += batch_size(shard, b)
    v = np.array(rows, dtype=np.float64)
    return CacheState(v, ordered_mean(list(v)), mode), cost


def update_cache(cache: CacheState, anchor_updates: Mapping[int, np.ndarray]) -> CacheState:
    """Overwrite the anchors' rows. ``full-table`` recomputes the average;
    ``massive-client`` adds ``(1/M) * sum(v_new - v_old)``."""
    if not anchor_updates:
        return cache
    M = cache.M
    ids = sorted(anchor_updates)
    for i in ids:
        if not 0 <= i < M:
            raise UsageError(f"unknown client id {i}")
    v = cache.v.copy()
    if cache.mode == "full-table":
        for i in ids:
            v[i] = anchor_updates[i]
        return CacheState(v, ordered_mean(list(v)), cache.mode)
    deltas = []
    for i in ids:
        new = np.asarray(anchor_updates[i], dtype=np.float64)
        deltas.append(new - v[i])
        v[i] = new
    g = cache.g_avg + ordered_sum(deltas) / M
    return CacheState(v, g, cache.mode)


def round_comm(A: int, n_miners: int, d: int, g_to_all: bool = False) -> int:
    """Model down to ``A``, ``g_t`` down to the miners (or all), one upload each."""
    return A * d + (A if g_to_all else n_miners) * d + A * d


def run_round(
    state: GlobalState,
    objective,
    partition,
    schedule: Schedule,
    hp: RoundParams,
    counters: Counters,
    observer: Callable[[str, object], None] | None = None,
) -> tuple[GlobalState, RoundReport]:
    """One FedAMD round: select, classify, client work, aggregate, refresh cache."""
    if state.cache is None:
        raise UsageError("FedAMD state needs an initialized cache")
    t = state.t
    M = partition.M
    if hp.A > M:
        raise ConfigError(f"A must be <= M (got A={hp.A}, M={M})")
    p_t = prob_at(schedule, t)
    selected = select_clients(M, hp.A, stream(hp.seed, t, SERVER, Purpose.CLIENT_SELECTION))
    anchors, miners = classify_groups(selected, p_t, stream(hp.seed, t, SERVER, Purpose.GROUP_CLASSIFICATION))
    x_t = state.x
    g_t = state.cache.g_avg  # stale on purpose: computed before this round's anchors

    def work(m: int):
        shard = partition.shards[m]
        rng = stream(hp.seed, t, m, Purpose.BATCH_SAMPLING)
        if m in anchor_set:
            return anchor_step(objective, shard, x_t, hp.b, rng)
        return miner_step(objective, shard, x_t, g_t, hp.K, hp.b_small, hp.eta_l, rng)

    anchor_set = set(anchors)
    out = dict(zip(selected, pmap(work, selected, hp.threads)))
    results = [out[m] for m in miners]
    if observer is not None:
        observer("miners", results)

    x_next = aggregate(results, x_t, hp.eta_s)
    if not all_finite(x_next):
        raise NumericError(f"global model became non-finite in round {t}")
    cache = update_cache(state.cache, {m: out[m] for m in anchors})

    samples = sum(batch_size(partition.shards[m], hp.b) for m in anchors)
    if hp.grad_count == "exact":
        samples += sum(r.grad_samples_used for r in results)
    else:
        samples += sum(hp.K * min(hp.b_small, partition.shards[m].n) for m in miners)
    counters = charge(counters, samples, round_comm(hp.A, len(miners), objective.d, hp.g_to_all), 1)
    report = RoundReport(t + 1, p_t, len(anchors), len(miners), counters)
    return GlobalState(x_next, t + 1, cache, state.extra), report
