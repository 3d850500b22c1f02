"""Anchor-probability schedules and theory-derived learning rates."""

from __future__ import annotations

import math
from dataclasses import dataclass

from .errors import ConfigError, NumericError

REGIMES = ("sequential-nonconvex", "constant-nonconvex", "constant-pl")


@dataclass(frozen=True)
class Schedule:
    """``constant``: every round uses ``p``.
    ``sequential``: ``p_t = 1`` when ``t mod tau == 0``, else 0.

    ``p`` may be 0 or 1 for degenerate experiments (all miners / all
    anchors) even though the convergence results assume ``0 < p < 1``.
    """

    kind: str = "constant"
    p: float = 0.5
    tau: int = 2

    def __post_init__(self):
        if self.kind == "constant":
            if not 0.0 <= self.p <= 1.0:
                raise ConfigError(f"constant schedule needs 0 <= p <= 1, got {self.p}")
        elif self.kind == "sequential":
            if int(self.tau) != self.tau or self.tau < 2:
                raise ConfigError(f"sequential schedule needs integer tau >= 2, got {self.tau}")
        else:
            raise ConfigError(f"unknown schedule kind {self.kind!r}")


def prob_at(s: Schedule, t: int) -> float:
    if t < 0:
        raise ValueError("round index must be >= 0")
    if s.kind == "constant":
        return s.p
    return 1.0 if t % s.tau == 0 else 0.0


def optimal_constant_p(A: int, c: float = 1.0) -> float:
    """Round-optimal constant anchor probability for nonconvex objectives."""
    if A < 1 or c < 1.0:
        raise ConfigError("need A >= 1 and c >= 1")
    return (2.0 / (A + 2.0)) ** (1.0 / A) / c


def optimal_constant_p_pl(A: int, c: float, mu: float) -> float:
    """Round-optimal constant anchor probability under the PL condition.

    The base ``1 + a - sqrt(a^2 + b)`` with ``a = (A+1)/(2 mu^2)`` and
    ``b = A / mu^2`` is evaluated as ``1 - b / (a + sqrt(a^2 + b))``,
    which avoids cancellation when ``a`` is large.
    """
    if A < 1 or c < 1.0:
        raise ConfigError("need A >= 1 and c >= 1")
    if not mu > 0:
        raise ConfigError("mu must be positive")
    a = (A + 1.0) / (2.0 * mu * mu)
    b = A / (mu * mu)
    rad = a * a + b
    if rad < 0:
        raise NumericError("negative radicand in PL-optimal probability")
    base = 1.0 - b / (a + math.sqrt(rad))
    if not 0.0 < base <= 1.0:
        raise NumericError(f"PL-optimal probability base {base} outside (0, 1]")
    return base ** (1.0 / A) / c


@dataclass(frozen=True)
class HyperPreset:
    L: float
    K: int
    M: int
    A: int
    b_small: int = 1
    L_sigma: float | None = None
    sigma: float | None = None
    mu: float | None = None
    c: float = 1.0
    tau: int = 2
    b: int | None = None

    def __post_init__(self):
        if not self.L > 0:
            raise ConfigError("smoothness constant L must be positive")
        if self.K < 1 or self.M < 1 or not 1 <= self.A <= self.M:
            raise ConfigError("need K >= 1 and 1 <= A <= M")
        if self.c < 1.0:
            raise ConfigError("probability damping c must be >= 1")


def preset_lrs(regime: str, hp: HyperPreset) -> tuple[float, float]:
    """Return ``(eta_l, eta_s)`` from the convergence analysis step-size rules.

    * ``sequential-nonconvex``: ``eta_l`` at its cap
      ``min(1/(2 sqrt6 K L), sqrt(b'/K) / (4 sqrt3 L_sigma))`` (second term
      only when ``L_sigma`` is known); ``eta_s`` solves
      ``eta_s eta_l = (1/(K L)) (1 + 2 M tau / A)^-1``.
    * ``constant-nonconvex``: ``eta_l = 1/(2 sqrt6 K L)``,
      ``eta_s = 2 sqrt6 A / (A + 3 M c)``.
    * ``constant-pl``: same ``eta_l``;
      ``eta_s = min(sqrt6 A L / (M mu c), 2 sqrt6 / (1 + 32 M c / (mu A)))``.
    """
    s6 = math.sqrt(6.0)
    K, L, M, A, c = hp.K, hp.L, hp.M, hp.A, hp.c
    eta_l = 1.0 / (2.0 * s6 * K * L)
    if regime == "sequential-nonconvex":
        if hp.L_sigma:
            eta_l = min(eta_l, math.sqrt(hp.b_small / K) / (4.0 * math.sqrt(3.0) * hp.L_sigma))
        product = 1.0 / (K * L) / (1.0 + 2.0 * M * hp.tau / A)
        return eta_l, product / eta_l
    if regime == "constant-nonconvex":
        return eta_l, 2.0 * s6 * A / (A + 3.0 * M * c)
    if regime == "constant-pl":
        if hp.mu is None or not hp.mu > 0:
            raise ConfigError("constant-pl preset needs a positive mu")
        mu = hp.mu
        return eta_l, min(s6 * A * L / (M * mu * c), 2.0 * s6 / (1.0 + 32.0 * M * c / (mu * A)))
    raise ConfigError(f"unknown learning-rate regime {regime!r}; expected one of {REGIMES}")
