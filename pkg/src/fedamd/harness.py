"""Experiment assembly, execution, comparison tables and output encoding."""

from __future__ import annotations

import csv
import io
import json
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import baselines, data, engine, objectives
from .config import ExperimentConfig, resolve_p
from .errors import ConfigError, FedAMDError, RoundError
from .metrics import CSV_COLUMNS, Counters, RoundReport, charge, eval_global, floats_to_mbits, rounds_to_target
from .schedules import HyperPreset, Schedule, preset_lrs

log = logging.getLogger(__name__)


@dataclass(eq=False)
class Experiment:
    """Everything a run needs, resolved from a config."""

    config: ExperimentConfig
    objective: objectives.ObjectiveSpec
    partition: data.Partition
    test_set: data.Dataset | None
    x0: np.ndarray
    schedule: Schedule
    params: engine.RoundParams
    resolved: dict = field(default_factory=dict)


def build_data(cfg: ExperimentConfig):
    ds, M, seed = cfg["dataset"], cfg["federation"]["M"], cfg.seed
    if ds["kind"] == "quadratic":
        obj = objectives.quadratic_ensemble(M, ds["d"], ds["eig_min"], ds["eig_max"], ds["center_scale"], seed)
        return obj, data.quadratic_partition(M, ds["samples_per_client"]), None
    if ds["kind"] == "synthetic":
        kw = dict(anisotropy=ds["anisotropy"])
        train = data.gen_synthetic_classification(
            ds["in_dim"], ds["classes"], M * ds["samples_per_client"], ds["spread"], seed, split="train", **kw
        )
        test = data.gen_synthetic_classification(
            ds["in_dim"], ds["classes"], ds["test_samples"], ds["spread"], seed, split="test", **kw
        )
    else:
        train = data.load_idx(ds["images"], ds["labels"], ds["classes"])
        test = None
        if ds["test_images"] is not None and ds["test_labels"] is not None:
            test = data.load_idx(ds["test_images"], ds["test_labels"], ds["classes"])
    part = data.partition_label_skew(train, M, ds["classes_per_client"], seed)
    in_dim = train.features.shape[1]
    model = cfg["model"]
    if model["kind"] == "mlp2":
        obj = objectives.mlp2(in_dim, model["hidden"], train.classes)
    else:
        obj = objectives.softmax_regression(in_dim, train.classes)
    return obj, part, test


def build(cfg: ExperimentConfig) -> Experiment:
    obj, part, test = build_data(cfg)
    fed, lrs, sch, run = cfg["federation"], cfg["lrs"], cfg["schedule"], cfg["run"]
    L, mu = lrs["L"], lrs["mu"]
    if obj.kind == "quadratic" and "auto" in (L, mu):
        mu_q, L_q = objectives.global_curvature_bounds(obj)
        L = L_q if L == "auto" else L
        mu = mu_q if mu == "auto" else mu
    eta_l, eta_s = lrs["eta_l"], lrs["eta_s"]
    if lrs["preset"] is not None:
        hp = HyperPreset(
            L=L, K=fed["K"], M=fed["M"], A=fed["A"], b_small=fed["b_small"], L_sigma=lrs["L_sigma"],
            sigma=lrs["sigma"], mu=mu, c=sch["c"], tau=sch["tau"], b=fed["b"],
        )
        pl, ps = preset_lrs(lrs["preset"], hp)
        eta_l = pl if eta_l is None else eta_l
        eta_s = ps if eta_s is None else eta_s
    p = resolve_p(cfg, mu)
    schedule = Schedule(sch["kind"], 0.0 if p is None else p, sch["tau"])
    smallest = min(part.sizes())
    if fed["b_small"] > smallest:
        log.warning("b_small=%d exceeds the smallest shard (%d); miners use full shards", fed["b_small"], smallest)
    params = engine.RoundParams(
        A=fed["A"], K=fed["K"], b=fed["b"], b_small=fed["b_small"], eta_l=eta_l, eta_s=eta_s, seed=cfg.seed,
        grad_count=run["grad_count"], cache_mode=run["cache_mode"], g_to_all=run["g_to_all"], threads=run["threads"],
    )
    x0 = objectives.init_params(obj, cfg.seed, cfg["model"]["init"])
    resolved = {"eta_l": eta_l, "eta_s": eta_s, "p": p, "L": L, "mu": mu}
    return Experiment(cfg, obj, part, test, x0, schedule, params, resolved)


@dataclass(eq=False)
class RunArtifact:
    config: dict
    reports: list[RoundReport]
    summary: dict
    x_final: np.ndarray

    def column(self, name: str) -> list:
        i = CSV_COLUMNS.index(name)
        return [r.row()[i] for r in self.reports]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for r in self.reports:
            w.writerow([_cell(v) for v in r.row()])
        return buf.getvalue()

    def to_json(self) -> str:
        rows = [dict(zip(CSV_COLUMNS, (_jsonable(v) for v in r.row()))) for r in self.reports]
        doc = {"config": self.config, "rows": rows, "summary": {k: _jsonable(v) for k, v in self.summary.items()}}
        return json.dumps(doc, indent=2, sort_keys=True) + "\n"


def _cell(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _jsonable(v):
    if isinstance(v, float) and not math.isfinite(v):
        return None
    if isinstance(v, np.floating):
        return _jsonable(float(v))
    return v


def log_gap_fit(rounds: list[int], gaps: list[float]) -> tuple[float, float]:
    """Least-squares line through ``(round, log gap)``; returns ``(slope, R^2)``."""
    if len(rounds) < 3:
        return math.nan, math.nan
    t = np.asarray(rounds, dtype=float)
    y = np.log(np.asarray(gaps, dtype=float))
    slope, icpt = np.polyfit(t, y, 1)
    resid = y - (slope * t + icpt)
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - float(np.sum(resid**2)) / ss_tot if ss_tot > 0 else math.nan
    return float(slope), r2


def run_experiment(cfg: ExperimentConfig, exp: Experiment | None = None) -> RunArtifact:
    """Run ``run.rounds`` rounds and collect one report per round plus the initial one."""
    exp = exp or build(cfg)
    obj, part, hp = exp.objective, exp.partition, exp.params
    T, every = cfg["run"]["rounds"], cfg["run"]["eval_every"]
    counters = Counters()
    state = engine.GlobalState(exp.x0.copy(), 0)
    if cfg.algorithm == "fedamd":
        cache, cost = engine.init_cache(obj, part, exp.x0, hp.b, hp.seed, hp.cache_mode)
        counters = charge(counters, cost, 0)
        state.cache = cache
    step = None if cfg.algorithm == "fedamd" else baselines.ROUND_FUNCTIONS[cfg.algorithm]

    def evaluate(rep: RoundReport, x) -> RoundReport:
        return rep.with_eval(*eval_global(obj, part, x, exp.test_set))

    reports = [evaluate(RoundReport(0, None, 0, 0, counters), state.x)]
    for t in range(T):
        try:
            if step is None:
                x_before = state.x
                state, rep = engine.run_round(state, obj, part, exp.schedule, hp, counters)
                if rep.n_miners == 0 and not np.array_equal(state.x, x_before):
                    raise FedAMDError("model moved in a round without miners")
            else:
                state, rep = step(state, obj, part, hp, counters)
        except ConfigError:
            raise
        except FedAMDError as exc:
            raise RoundError(t, exc) from exc
        counters = rep.counters
        if rep.round % every == 0 or rep.round == T:
            rep = evaluate(rep, state.x)
        reports.append(rep)
    return RunArtifact(cfg.echo(), reports, _summary(cfg, exp, reports), state.x)


def _summary(cfg: ExperimentConfig, exp: Experiment, reports: list[RoundReport]) -> dict:
    last = reports[-1]
    target = cfg["run"]["target_acc"]
    acc = [r.test_acc for r in reports]
    hit = rounds_to_target(acc, target) if target is not None else None
    out = {
        "algorithm": cfg.algorithm,
        "label": cfg.label,
        "rounds": cfg["run"]["rounds"],
        "final_loss": last.train_loss,
        "final_grad_norm_sq": last.grad_norm_sq,
        "final_acc": last.test_acc,
        "target_acc": target,
        "rounds_to_target": None if hit is None else reports[hit].round,
        "cum_grad_samples": last.counters.cum_grad_samples,
        "cum_comm_floats": last.counters.cum_comm_floats,
        "comm_mbits": floats_to_mbits(last.counters.cum_comm_floats),
    }
    out.update({f"resolved_{k}": v for k, v in exp.resolved.items()})
    if exp.objective.kind == "quadratic":
        _, f_star = objectives.quadratic_minimum(exp.objective)
        pts = [(r.round, r.train_loss - f_star) for r in reports[1:] if r.evaluated and r.n_miners > 0]
        pts = [(t, g) for t, g in pts if g > 0]
        slope, r2 = log_gap_fit([t for t, _ in pts], [g for _, g in pts])
        out.update(f_star=f_star, final_gap=last.train_loss - f_star, log_gap_slope=slope, log_gap_r2=r2)
    return out


# --- multi-run tables -----------------------------------------------------


def run_seeds(cfg: ExperimentConfig, seeds: int) -> list[RunArtifact]:
    return [run_experiment(cfg.with_overrides(run={"seed": cfg.seed + i})) for i in range(seeds)]


def mean_curve(arts: list[RunArtifact], name: str) -> list[float]:
    cols = [a.column(name) for a in arts]
    return [float(np.mean([c[i] for c in cols])) for i in range(len(cols[0]))]


def seed_mean_row(label: str, algorithm: str, arts: list[RunArtifact], target: float | None) -> dict:
    """Table row from curves averaged over seeds; the target is located on the mean accuracy curve."""
    acc = mean_curve(arts, "test_acc")
    grads = mean_curve(arts, "cum_grad_samples")
    comm = mean_curve(arts, "cum_comm_floats")
    rounds = arts[0].column("round")
    hit = rounds_to_target(acc, target) if target is not None else None
    return {
        "label": label,
        "algorithm": algorithm,
        "seeds": len(arts),
        "target_acc": target,
        "rounds_to_target": None if hit is None else rounds[hit],
        "grad_samples_to_target": None if hit is None else grads[hit],
        "comm_floats_to_target": None if hit is None else comm[hit],
        "final_acc": acc[-1],
        "final_loss": float(np.mean([a.summary["final_loss"] for a in arts])),
        "cum_grad_samples": grads[-1],
        "cum_comm_floats": comm[-1],
    }


def compare(configs: list[ExperimentConfig], seeds: int = 1, target: float | str | None = None) -> list[dict]:
    """One row per config label, sorted by label.

    ``target`` may be a number, ``None`` (each config's ``run.target_acc``)
    or ``"fedavg"`` (the seed-averaged final accuracy of the fedavg row).
    """
    if len(configs) < 2:
        raise ConfigError("compare needs at least two configurations")
    ref = configs[0]
    labels = [c.label for c in configs]
    if len(set(labels)) != len(labels):
        raise ConfigError(f"compare needs distinct labels, got {labels}")
    for c in configs[1:]:
        if c["dataset"] != ref["dataset"] or c.seed != ref.seed or c["federation"]["M"] != ref["federation"]["M"]:
            raise ConfigError(f"mismatched datasets: {c.label!r} and {ref.label!r} must share dataset, M and seed")
    runs = {c.label: run_seeds(c, seeds) for c in configs}
    if target == "fedavg":
        fed = [c for c in configs if c.algorithm == "fedavg"]
        if not fed:
            raise ConfigError("target 'fedavg' needs a fedavg configuration")
        target = mean_curve(runs[fed[0].label], "test_acc")[-1]
    rows = []
    for c in sorted(configs, key=lambda c: c.label):
        tgt = c["run"]["target_acc"] if target is None else float(target)
        rows.append(seed_mean_row(c.label, c.algorithm, runs[c.label], tgt))
    return rows


def sweep(cfg: ExperimentConfig) -> list[dict]:
    """Grid over ``sweep.eta_l`` x ``sweep.eta_s``, seed-averaged."""
    sw = cfg["sweep"]
    lrs = cfg["lrs"]
    grid_l = sw["eta_l"] or [lrs["eta_l"]]
    grid_s = sw["eta_s"] or [lrs["eta_s"]]
    if None in grid_l or None in grid_s:
        raise ConfigError("sweep needs sweep.eta_l/eta_s lists or fixed lrs.eta_l/eta_s")
    rows = []
    for el in grid_l:
        for es in grid_s:
            c = cfg.with_overrides(lrs={"eta_l": float(el), "eta_s": float(es)})
            row = seed_mean_row(c.label, c.algorithm, run_seeds(c, sw["seeds"]), c["run"]["target_acc"])
            rows.append({"eta_l": float(el), "eta_s": float(es), **row})
    return rows


def table_csv(rows: list[dict]) -> str:
    if not rows:
        return ""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    keys = list(rows[0])
    w.writerow(keys)
    for r in rows:
        w.writerow([_cell(r[k]) for k in keys])
    return buf.getvalue()


def table_json(rows: list[dict]) -> str:
    return json.dumps([{k: _jsonable(v) for k, v in r.items()} for r in rows], indent=2) + "\n"
