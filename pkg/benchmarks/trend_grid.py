"""Learning-rate grid for the nonconvex trend experiment.

    python3 benchmarks/trend_grid.py [--samples-per-client N] [--json out.json]

Runs FedAvg, FedAMD with the constant optimal p, and FedAMD with the
sequential schedules tau=2 and tau=3 over an (eta_l, eta_s) grid on the
label-skewed synthetic softmax task (M=100, A=20, K=10, b'=64, b=full).
Each algorithm keeps the cell with the best seed-averaged final test
accuracy. The target is the tuned FedAvg final accuracy, and the script
reports rounds and gradient samples to that target on the seed-mean curve.
The acceptance suite freezes the selected cells.
"""

from __future__ import annotations

import argparse
import itertools
import json
import sys
import time

import numpy as np

from fedamd import harness
from fedamd.config import from_mapping
from fedamd.errors import FedAMDError

ALGORITHMS = {
    "fedavg": {"algorithm": "fedavg"},
    "fedamd-constant": {"algorithm": "fedamd"},
    "fedamd-tau2": {"algorithm": "fedamd", "schedule": {"kind": "sequential", "tau": 2}},
    "fedamd-tau3": {"algorithm": "fedamd", "schedule": {"kind": "sequential", "tau": 3}},
}


def trend_config(name, eta_l, eta_s, seed, spc=100, rounds=200, anisotropy=10.0):
    raw = {
        "label": name,
        "dataset": {"kind": "synthetic", "in_dim": 20, "classes": 10, "samples_per_client": spc,
                    "anisotropy": anisotropy, "classes_per_client": 2},
        "federation": {"M": 100, "A": 20, "K": 10, "b": None, "b_small": 64},
        "lrs": {"eta_l": eta_l, "eta_s": eta_s},
        "run": {"rounds": rounds, "seed": seed},
        **ALGORITHMS[name],
    }
    return from_mapping(raw)


def seed_curves(name, eta_l, eta_s, seeds, **kw):
    """Seed-mean (test_acc, cum_grad_samples) curves, or None if a run failed."""
    try:
        arts = [harness.run_experiment(trend_config(name, eta_l, eta_s, s, **kw)) for s in seeds]
    except FedAMDError:
        return None
    acc = harness.mean_curve(arts, "test_acc")
    if not np.isfinite(acc[-1]):
        return None
    return acc, harness.mean_curve(arts, "cum_grad_samples")


def to_target(curves, target):
    acc, grads = curves
    for i, a in enumerate(acc):
        if a >= target:
            return i, grads[i]
    return None, None


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--samples-per-client", type=int, default=100)
    ap.add_argument("--rounds", type=int, default=200)
    ap.add_argument("--eta-l", default="1,2,4,8,16,32,64")
    ap.add_argument("--eta-s", default="0.1,0.2,0.5,1.0")
    ap.add_argument("--seeds", type=int, default=3)
    ap.add_argument("--json", default=None)
    args = ap.parse_args(argv)
    els = [float(v) for v in args.eta_l.split(",")]
    ess = [float(v) for v in args.eta_s.split(",")]
    seeds = list(range(args.seeds))
    kw = dict(spc=args.samples_per_client, rounds=args.rounds)

    t0 = time.perf_counter()
    grid = {}
    for name, el, es in itertools.product(ALGORITHMS, els, ess):
        grid[name, el, es] = seed_curves(name, el, es, seeds, **kw)
        c = grid[name, el, es]
        print(f"{name:16s} eta_l={el:<6g} eta_s={es:<5g} final acc "
              f"{'diverged' if c is None else format(c[0][-1], '.4f')}", file=sys.stderr)

    best = {}
    for name in ALGORITHMS:
        cells = [(c[0][-1], el, es) for (n, el, es), c in grid.items() if n == name and c is not None]
        _, el, es = max(cells)
        best[name] = (el, es)
    target = grid[("fedavg",) + best["fedavg"]][0][-1]
    rows = []
    for name, (el, es) in best.items():
        r, g = to_target(grid[name, el, es], target)
        rows.append({"algorithm": name, "eta_l": el, "eta_s": es,
                     "final_acc": grid[name, el, es][0][-1], "rounds_to_target": r, "grad_samples_to_target": g})
    print(f"target accuracy {target:.4f} ({time.perf_counter() - t0:.0f}s)")
    for row in rows:
        print(f"{row['algorithm']:16s} eta_l={row['eta_l']:<6g} eta_s={row['eta_s']:<5g} "
              f"final {row['final_acc']:.4f}  rounds {row['rounds_to_target']}  grads {row['grad_samples_to_target']}")
    if args.json:
        with open(args.json, "w", encoding="utf-8") as fh:
            json.dump({"target": target, "selected": rows,
                       "grid": {f"{n}|{el}|{es}": None if c is None else c[0][-1] for (n, el, es), c in grid.items()}},
                      fh, indent=2)


if __name__ == "__main__":
    main()
