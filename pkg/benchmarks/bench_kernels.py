"""Compare the compiled and NumPy loss/gradient kernels.

    python3 benchmarks/bench_kernels.py [--repeat N] [--json out.json]

Times one gradient evaluation per (model, batch size) cell for each
backend and reports the speedup. Shapes follow the simulator's defaults:
20 input features, 10 classes, hidden width 32.
"""

from __future__ import annotations

import argparse
import json
import timeit

import numpy as np

from fedamd import _kernels_py, kernels

IN_DIM, CLASSES, HIDDEN = 20, 10, 32
BATCHES = (1, 16, 64, 600)


def cases(rng):
    for b in BATCHES:
        X = rng.standard_normal((b, IN_DIM))
        y = rng.integers(0, CLASSES, b).astype(np.int64)
        xs = rng.standard_normal(CLASSES * IN_DIM + CLASSES)
        xm = 0.1 * rng.standard_normal(IN_DIM * HIDDEN + HIDDEN + HIDDEN * CLASSES + CLASSES)
        yield "softmax", b, lambda m: m.softmax_loss_grad(xs, X, y, CLASSES)
        yield "mlp2", b, lambda m: m.mlp2_loss_grad(xm, X, y, CLASSES, HIDDEN)


def best_time(fn, repeat):
    number = max(1, int(0.05 / max(timeit.timeit(fn, number=1), 1e-7)))
    return min(timeit.repeat(fn, number=number, repeat=repeat)) / number


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--json", default=None, help="also write results here")
    args = ap.parse_args(argv)
    if not kernels.compiled_available():
        print("compiled kernels are not built; only the NumPy backend is available")
        return 1
    from fedamd import _kernels

    rows = []
    print(f"{'model':8s} {'batch':>6s} {'numpy us':>10s} {'compiled us':>12s} {'speedup':>8s}")
    for model, b, call in cases(np.random.default_rng(0)):
        tp = best_time(lambda: call(_kernels_py), args.repeat)
        tc = best_time(lambda: call(_kernels), args.repeat)
        rows.append({"model": model, "batch": b, "numpy_s": tp, "compiled_s": tc, "speedup": tp / tc})
        print(f"{model:8s} {b:6d} {tp * 1e6:10.1f} {tc * 1e6:12.1f} {tp / tc:8.2f}")
    if args.json:
        with open(args.json, "w") as fh:
            json.dump(rows, fh, indent=2)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
