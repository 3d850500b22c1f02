import threading

import numpy as np
import pytest

from fedamd import data, objectives


@pytest.fixture
def small_quadratic():
    obj = objectives.quadratic_ensemble(M=6, d=4, eig_min=1.0, eig_max=4.0, seed=3)
    return obj, data.quadratic_partition(6, 8)


@pytest.fixture
def small_softmax():
    ds = data.gen_synthetic_classification(5, 4, 6 * 20, 0.5, seed=1)
    part = data.partition_label_skew(ds, 6, 2, seed=1)
    return objectives.softmax_regression(5, 4), part


class GradCounter:
    """Counts per-sample gradient evaluations routed through objectives.grad."""

    def __init__(self):
        self.samples = 0
        self.calls = 0
        self._lock = threading.Lock()

    def wrap(self, real):
        def counted(obj, x, batch):
            with self._lock:
                self.samples += batch.size
                self.calls += 1
            return real(obj, x, batch)

        return counted


@pytest.fixture
def grad_counter(monkeypatch):
    counter = GradCounter()
    monkeypatch.setattr(objectives, "grad", counter.wrap(objectives.grad))
    return counter


def rand_vec(seed, d):
    return np.random.default_rng(seed).standard_normal(d)


# --- acceptance report -----------------------------------------------------

ACCEPTANCE_LINES: dict[int, str] = {}


def record(criterion: int, ok: bool, detail: str) -> bool:
    line = f"criterion {criterion:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES[criterion] = line
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[k])
