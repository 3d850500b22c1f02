"""Local empirical losses ``f_m(x, B)`` and their gradients.

Three model families share one interface:

* ``quadratic``: client ``m`` owns ``0.5 (x - c_m)^T A_m (x - c_m)``. The
  loss ignores batch contents, so gradients are exact whatever the batch.
* ``softmax-regression``: multinomial logistic regression.
* ``mlp2``: dense -> ReLU -> dense -> softmax.

The classification losses are the mean per-sample cross-entropy, computed
by :mod:`fedamd.kernels` with a max-shifted softmax.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .errors import DimensionError, SingularityError, UsageError
from .numerics import Purpose, ordered_sum, stream

KINDS = ("quadratic", "softmax-regression", "mlp2")

# data-generation sub-streams (carried in the round slot of the stream tuple)
QUADRATIC_STREAM = 3
INIT_STREAM = 4


@dataclass(frozen=True, eq=False)
class ObjectiveSpec:
    kind: str
    d: int
    classes: int = 0
    in_dim: int = 0
    hidden: int = 0
    quad_A: np.ndarray | None = field(default=None, repr=False)
    quad_c: np.ndarray | None = field(default=None, repr=False)
    eig_min: float | None = None
    eig_max: float | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise UsageError(f"unknown objective kind {self.kind!r}; expected one of {KINDS}")
        if self.kind != "quadratic" and self.classes < 2:
            raise UsageError("classification objectives need classes >= 2")

    @property
    def n_clients(self) -> int:
        return 0 if self.quad_A is None else self.quad_A.shape[0]


@dataclass(frozen=True, eq=False)
class Batch:
    features: np.ndarray
    labels: np.ndarray
    client: int = 0

    @property
    def size(self) -> int:
        return int(self.labels.shape[0])


def softmax_regression(in_dim: int, classes: int) -> ObjectiveSpec:
    return ObjectiveSpec("softmax-regression", d=classes * in_dim + classes, classes=classes, in_dim=in_dim)


def mlp2(in_dim: int, hidden: int, classes: int) -> ObjectiveSpec:
    d = (in_dim * hidden + hidden) + (hidden * classes + classes)
    return ObjectiveSpec("mlp2", d=d, classes=classes, in_dim=in_dim, hidden=hidden)


def quadratic_ensemble(
    M: int,
    d: int,
    eig_min: float,
    eig_max: float,
    center_scale: float = 1.0,
    seed: int = 0,
) -> ObjectiveSpec:
    """Build ``M`` quadratics ``A_m = Q_m diag(lambda) Q_m^T``.

    Eigenvalues are linearly spaced in ``[eig_min, eig_max]`` and each
    ``Q_m`` is a seeded random orthogonal matrix, so every ``A_m`` has
    smoothness exactly ``eig_max``.
    """
    if not 0.0 <= eig_min <= eig_max:
        raise UsageError("need 0 <= eig_min <= eig_max")
    rng = stream(seed, QUADRATIC_STREAM, 0, Purpose.DATA_GENERATION)
    lam = np.linspace(eig_min, eig_max, d)
    A = np.empty((M, d, d))
    for m in range(M):
        q, r = np.linalg.qr(rng.standard_normal((d, d)))
        q *= np.sign(np.diag(r))
        a = (q * lam) @ q.T
        A[m] = 0.5 * (a + a.T)
    c = center_scale * rng.standard_normal((M, d))
    return ObjectiveSpec("quadratic", d=d, quad_A=A, quad_c=c, eig_min=float(eig_min), eig_max=float(eig_max))


def _check(obj: ObjectiveSpec, x: np.ndarray, batch: Batch) -> None:
    if x.ndim != 1 or x.shape[0] != obj.d:
        raise DimensionError(f"parameter vector has shape {x.shape}, objective expects ({obj.d},)")
    if obj.kind == "quadratic":
        if not 0 <= batch.client < obj.n_clients:
            raise UsageError(f"client {batch.client} outside quadratic ensemble of {obj.n_clients}")
    elif batch.features.ndim != 2 or batch.features.shape[1] != obj.in_dim:
        raise DimensionError(f"batch features {batch.features.shape} do not match in_dim={obj.in_dim}")


def _loss_grad(obj: ObjectiveSpec, x: np.ndarray, batch: Batch, need_grad: bool):
    x = np.ascontiguousarray(x, dtype=np.float64)
    _check(obj, x, batch)
    if obj.kind == "quadratic":
        A = obj.quad_A[batch.client]
        r = x - obj.quad_c[batch.client]
        Ar = A @ r
        return 0.5 * float(r @ Ar), (Ar if need_grad else None)
    if batch.size < 1:
        raise UsageError("empty batch")
    if obj.kind == "softmax-regression":
        return kernels.softmax_loss_grad(x, batch.features, batch.labels, obj.classes, need_grad)
    return kernels.mlp2_loss_grad(x, batch.features, batch.labels, obj.classes, obj.hidden, need_grad)


def loss_and_grad(obj: ObjectiveSpec, x: np.ndarray, batch: Batch) -> tuple[float, np.ndarray]:
    return _loss_grad(obj, x, batch, True)


def loss(obj: ObjectiveSpec, x: np.ndarray, batch: Batch) -> float:
    return _loss_grad(obj, x, batch, False)[0]


def grad(obj: ObjectiveSpec, x: np.ndarray, batch: Batch) -> np.ndarray:
    return _loss_grad(obj, x, batch, True)[1]


def full_grad(obj: ObjectiveSpec, x: np.ndarray, shard) -> np.ndarray:
    """Gradient over every sample of ``shard`` exactly once, in stored order."""
    if shard.n < 1:
        raise UsageError("empty shard")
    return grad(obj, x, shard.as_batch())


def finite_diff_grad(obj: ObjectiveSpec, x: np.ndarray, batch: Batch, h: float = 1e-6) -> np.ndarray:
    """Central differences, one coordinate at a time."""
    if h <= 0:
        raise UsageError("h must be positive")
    x = np.array(x, dtype=np.float64)
    out = np.empty_like(x)
    for i in range(x.shape[0]):
        xi = x[i]
        x[i] = xi + h
        fp = loss(obj, x, batch)
        x[i] = xi - h
        fm = loss(obj, x, batch)
        x[i] = xi
        out[i] = (fp - fm) / (2.0 * h)
    return out


def quadratic_minimum(obj: ObjectiveSpec) -> tuple[np.ndarray, float]:
    """Solve ``(sum A_m) x* = sum A_m c_m`` and return ``(x*, F*)``."""
    if obj.kind != "quadratic":
        raise UsageError("quadratic_minimum needs a quadratic objective")
    S = ordered_sum(obj.quad_A)
    rhs = ordered_sum([a @ c for a, c in zip(obj.quad_A, obj.quad_c)])
    eigs = np.linalg.eigvalsh(S)
    if eigs[0] <= eigs[-1] * 1e3 * np.finfo(float).eps:
        raise SingularityError("sum of quadratic curvatures is singular")
    x_star = np.linalg.solve(S, rhs)
    f_star = float(np.mean([0.5 * (x_star - c) @ a @ (x_star - c) for a, c in zip(obj.quad_A, obj.quad_c)]))
    return x_star, f_star


def global_curvature_bounds(obj: ObjectiveSpec) -> tuple[float, float]:
    """``(mu, L)``: smallest eigenvalue of the averaged Hessian and the
    largest per-client eigenvalue. ``mu`` is the exact PL constant of F."""
    mean_h = ordered_sum(obj.quad_A) / obj.n_clients
    mu = float(np.linalg.eigvalsh(mean_h)[0])
    L = float(max(np.linalg.eigvalsh(a)[-1] for a in obj.quad_A))
    return mu, L


def logits(obj: ObjectiveSpec, x: np.ndarray, features: np.ndarray) -> np.ndarray:
    C, n_in = obj.classes, obj.in_dim
    if obj.kind == "softmax-regression":
        return features @ x[: C * n_in].reshape(C, n_in).T + x[C * n_in:]
    if obj.kind == "mlp2":
        H = obj.hidden
        o_b1 = H * n_in
        o_w2 = o_b1 + H
        o_b2 = o_w2 + C * H
        act = np.maximum(features @ x[:o_b1].reshape(H, n_in).T + x[o_b1:o_w2], 0.0)
        return act @ x[o_w2:o_b2].reshape(C, H).T + x[o_b2:]
    raise UsageError("logits are defined for classification objectives only")


def predict(obj: ObjectiveSpec, x: np.ndarray, features: np.ndarray) -> np.ndarray:
    # argmax breaks ties towards the lowest class id
    return np.argmax(logits(obj, x, features), axis=1)


def init_params(obj: ObjectiveSpec, seed: int = 0, scheme: str = "zeros") -> np.ndarray:
    """Initial model ``x_0``: all zeros, or Glorot-uniform weights for mlp2."""
    if scheme == "zeros" or obj.kind != "mlp2":
        return np.zeros(obj.d)
    if scheme != "glorot":
        raise UsageError(f"unknown init scheme {scheme!r}")
    rng = stream(seed, INIT_STREAM, 0, Purpose.DATA_GENERATION)
    H, C, n_in = obj.hidden, obj.classes, obj.in_dim
    x = np.zeros(obj.d)
    lim1 = math.sqrt(6.0 / (n_in + H))
    lim2 = math.sqrt(6.0 / (H + C))
    x[: H * n_in] = rng.uniform(-lim1, lim1, H * n_in)
    o_w2 = H * n_in + H
    x[o_w2: o_w2 + C * H] = rng.uniform(-lim2, lim2, C * H)
    return x
