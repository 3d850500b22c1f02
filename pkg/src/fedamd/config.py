"""Experiment configuration: a nested YAML tree with validated defaults.

Top-level sections are ``algorithm``, ``label``, ``dataset``, ``model``,
``federation``, ``schedule``, ``lrs``, ``run`` and (for ``sweep``)
``sweep``. Unknown keys are rejected by name.
"""

from __future__ import annotations

import copy
import math
from dataclasses import dataclass

import yaml

from .errors import ConfigError
from .schedules import REGIMES, optimal_constant_p, optimal_constant_p_pl

ALGORITHMS = ("fedamd", "fedavg", "scaffold", "minibatch-sgd", "bvr-l-sgd")

DEFAULTS = {
    "algorithm": "fedamd",
    "label": None,
    "dataset": {
        "kind": "synthetic",
        "in_dim": 20,
        "d": 10,
        "classes": 10,
        "samples_per_client": 100,
        "test_samples": 2000,
        "spread": 0.3,
        "anisotropy": 1.0,
        "classes_per_client": 2,
        "eig_min": 1.0,
        "eig_max": 10.0,
        "center_scale": 1.0,
        "images": None,
        "labels": None,
        "test_images": None,
        "test_labels": None,
    },
    "model": {"kind": None, "hidden": 32, "init": "zeros"},
    "federation": {"M": 100, "A": 20, "K": 10, "b": None, "b_small": 64},
    "schedule": {"kind": "constant", "p": "optimal", "c": 1.0, "tau": 2},
    "lrs": {
        "preset": None,
        "eta_l": None,
        "eta_s": None,
        "L": None,
        "L_sigma": None,
        "sigma": None,
        "mu": None,
    },
    "run": {
        "rounds": 100,
        "seed": 0,
        "eval_every": 1,
        "target_acc": None,
        "grad_count": "exact",
        "cache_mode": "full-table",
        "g_to_all": False,
        "threads": None,
    },
    "sweep": {"eta_l": None, "eta_s": None, "seeds": 1},
}

SECTIONS = tuple(k for k, v in DEFAULTS.items() if isinstance(v, dict))


@dataclass(frozen=True, eq=False)
class ExperimentConfig:
    """Validated tree with every default filled in. ``raw`` is the mapping
    as written, kept so overrides can be re-validated."""

    tree: dict
    raw: dict

    def __getitem__(self, key):
        return self.tree[key]

    @property
    def algorithm(self) -> str:
        return self.tree["algorithm"]

    @property
    def label(self) -> str:
        return self.tree["label"] or self.tree["algorithm"]

    @property
    def seed(self) -> int:
        return self.tree["run"]["seed"]

    def echo(self) -> dict:
        return copy.deepcopy(self.tree)

    def with_overrides(self, **sections) -> "ExperimentConfig":
        """Re-validate with ``section={key: value}`` overrides applied to the raw tree."""
        raw = copy.deepcopy(self.raw)
        for sec, vals in sections.items():
            if isinstance(vals, dict):
                raw.setdefault(sec, {}).update(vals)
            else:
                raw[sec] = vals
        return from_mapping(raw)


def _merge(raw: dict) -> dict:
    if not isinstance(raw, dict):
        raise ConfigError("configuration must be a mapping at the top level")
    tree = copy.deepcopy(DEFAULTS)
    for key, val in raw.items():
        if key not in DEFAULTS:
            raise ConfigError(f"unknown key {key!r}")
        if key in SECTIONS:
            if val is None:
                continue
            if not isinstance(val, dict):
                raise ConfigError(f"section {key!r} must be a mapping")
            for sub, sv in val.items():
                if sub not in DEFAULTS[key]:
                    raise ConfigError(f"unknown key {key}.{sub!r}")
                tree[key][sub] = sv
        else:
            tree[key] = val
    return tree


def _int(tree, sec, key, lo=None, allow_none=False):
    v = tree[sec][key]
    if v is None and allow_none:
        return None
    if isinstance(v, bool) or not isinstance(v, int):
        raise ConfigError(f"{sec}.{key} must be an integer, got {v!r}")
    if lo is not None and v < lo:
        raise ConfigError(f"{sec}.{key} must be >= {lo}, got {v}")
    return v


def _num(tree, sec, key, allow_none=True, allow_auto=False):
    v = tree[sec][key]
    if v is None and allow_none:
        return None
    if allow_auto and v == "auto":
        return v
    if isinstance(v, str):
        # YAML 1.1 reads exponents without a sign (1e-3 is fine, 1e3 is not) as strings
        try:
            v = tree[sec][key] = float(v)
        except ValueError:
            pass
    if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v):
        raise ConfigError(f"{sec}.{key} must be a finite number, got {v!r}")
    return float(v)


def _choice(tree, sec, key, options):
    v = tree[sec][key] if sec else tree[key]
    if v not in options:
        name = f"{sec}.{key}" if sec else key
        raise ConfigError(f"{name} must be one of {options}, got {v!r}")
    return v


def from_mapping(raw: dict) -> ExperimentConfig:
    tree = _merge(raw)
    _choice(tree, None, "algorithm", ALGORITHMS)
    if tree["label"] is not None and not isinstance(tree["label"], str):
        raise ConfigError("label must be a string")

    ds = tree["dataset"]
    kind = _choice(tree, "dataset", "kind", ("synthetic", "quadratic", "idx"))
    model = tree["model"]
    if model["kind"] is None:
        model["kind"] = "quadratic" if kind == "quadratic" else "softmax-regression"
    _choice(tree, "model", "kind", ("quadratic", "softmax-regression", "mlp2"))
    if (kind == "quadratic") != (model["kind"] == "quadratic"):
        raise ConfigError("quadratic models go with the quadratic dataset and only with it")
    _choice(tree, "model", "init", ("zeros", "glorot"))
    _int(tree, "model", "hidden", 1)
    for key in ("in_dim", "d", "classes", "samples_per_client", "test_samples", "classes_per_client"):
        _int(tree, "dataset", key, 1)
    if kind != "quadratic" and ds["classes"] < 2:
        raise ConfigError("dataset.classes must be >= 2")
    for key in ("spread", "anisotropy", "eig_min", "eig_max", "center_scale"):
        _num(tree, "dataset", key, allow_none=False)
    if ds["anisotropy"] < 1.0:
        raise ConfigError("dataset.anisotropy must be >= 1")
    if kind == "quadratic" and not 0 <= ds["eig_min"] <= ds["eig_max"]:
        raise ConfigError("need 0 <= dataset.eig_min <= dataset.eig_max")
    if kind == "idx" and (ds["images"] is None or ds["labels"] is None):
        raise ConfigError("idx datasets need dataset.images and dataset.labels")

    M = _int(tree, "federation", "M", 1)
    A = _int(tree, "federation", "A", 1)
    if A > M:
        raise ConfigError(f"A must be ≤ M (got A={A}, M={M})")
    _int(tree, "federation", "K", 1)
    b = _int(tree, "federation", "b", 1, allow_none=True)
    b_small = _int(tree, "federation", "b_small", 1)
    if b is not None and b_small > b:
        raise ConfigError(f"b_small must be ≤ b (got b_small={b_small}, b={b})")

    run = tree["run"]
    _int(tree, "run", "rounds", 1)
    _int(tree, "run", "seed", 0)
    _int(tree, "run", "eval_every", 1)
    _int(tree, "run", "threads", 0, allow_none=True)
    _num(tree, "run", "target_acc")
    _choice(tree, "run", "grad_count", ("exact", "paper"))
    _choice(tree, "run", "cache_mode", ("full-table", "massive-client"))
    if not isinstance(run["g_to_all"], bool):
        raise ConfigError("run.g_to_all must be true or false")

    lrs = tree["lrs"]
    if lrs["preset"] is not None:
        _choice(tree, "lrs", "preset", REGIMES)
    for key in ("eta_l", "eta_s", "L_sigma", "sigma"):
        _num(tree, "lrs", key)
    for key in ("L", "mu"):
        _num(tree, "lrs", key, allow_auto=True)
        if lrs[key] == "auto" and kind != "quadratic":
            raise ConfigError(f"lrs.{key}: auto is only available for quadratic datasets")
    for key in ("eta_l", "eta_s", "L", "L_sigma", "sigma", "mu"):
        if isinstance(lrs[key], float) and lrs[key] <= 0:
            raise ConfigError(f"lrs.{key} must be positive")
    if lrs["preset"] is None and (lrs["eta_l"] is None or lrs["eta_s"] is None):
        raise ConfigError("give lrs.eta_l and lrs.eta_s, or an lrs.preset")
    if lrs["preset"] is not None and lrs["L"] is None:
        raise ConfigError("lrs.preset needs lrs.L")

    sch = tree["schedule"]
    _choice(tree, "schedule", "kind", ("constant", "sequential"))
    c = _num(tree, "schedule", "c", allow_none=False)
    if c < 1.0:
        raise ConfigError("schedule.c must be >= 1")
    _int(tree, "schedule", "tau", 2)
    if sch["kind"] == "constant" and sch["p"] != "optimal":
        p = _num(tree, "schedule", "p", allow_none=False)
        if not 0.0 <= p <= 1.0:
            raise ConfigError(f"schedule.p must lie in [0, 1], got {p}")

    sw = tree["sweep"]
    for key in ("eta_l", "eta_s"):
        if sw[key] is not None:
            if not isinstance(sw[key], list) or not sw[key]:
                raise ConfigError(f"sweep.{key} must be a non-empty list")
            for v in sw[key]:
                if isinstance(v, bool) or not isinstance(v, (int, float)) or not v > 0:
                    raise ConfigError(f"sweep.{key} entries must be positive numbers")
    _int(tree, "sweep", "seeds", 1)
    return ExperimentConfig(tree, copy.deepcopy(raw))


def parse_config(text: str) -> ExperimentConfig:
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"malformed configuration: {exc}") from None
    return from_mapping(raw or {})


def load_config(path) -> ExperimentConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read configuration {path}: {exc}") from None
    return parse_config(text)


def resolve_p(cfg: ExperimentConfig, mu: float | None = None) -> float | None:
    """Numeric constant ``p``; ``optimal`` uses the PL formula when ``mu`` is known."""
    sch = cfg["schedule"]
    if sch["kind"] != "constant":
        return None
    if sch["p"] != "optimal":
        return float(sch["p"])
    A = cfg["federation"]["A"]
    if mu is None and isinstance(cfg["lrs"]["mu"], float):
        mu = cfg["lrs"]["mu"]
    if mu is not None:
        return optimal_constant_p_pl(A, sch["c"], mu)
    return optimal_constant_p(A, sch["c"])
