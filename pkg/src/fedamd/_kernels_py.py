"""NumPy reference kernels for minibatch losses and gradients.

Used when the compiled extension is unavailable or ``FEDAMD_KERNELS=python``.
Signatures match :mod:`fedamd._kernels` exactly.

Parameter layouts (row-major, flattened)::

    softmax-regression: W[C, in], b[C]
    mlp2:               W1[H, in], b1[H], W2[C, H], b2[C]
"""

from __future__ import annotations

import numpy as np

BACKEND = "python"


def _xent(z: np.ndarray, y: np.ndarray, need_grad: bool):
    rows = np.arange(z.shape[0])
    z = z - z.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=1))
    loss = float(np.mean(lse - z[rows, y]))
    if not need_grad:
        return loss, None
    r = np.exp(z - lse[:, None])
    r[rows, y] -= 1.0
    r /= z.shape[0]
    return loss, r


def softmax_loss_grad(x, X, y, classes, need_grad=True):
    n_in = X.shape[1]
    split = classes * n_in
    W = x[:split].reshape(classes, n_in)
    z = X @ W.T + x[split:]
    loss, r = _xent(z, y, need_grad)
    if r is None:
        return loss, None
    grad = np.empty_like(x)
    grad[:split] = (r.T @ X).reshape(-1)
    grad[split:] = r.sum(axis=0)
    return loss, grad


def mlp2_loss_grad(x, X, y, classes, hidden, need_grad=True):
    n_in = X.shape[1]
    o_b1 = hidden * n_in
    o_w2 = o_b1 + hidden
    o_b2 = o_w2 + classes * hidden
    W1 = x[:o_b1].reshape(hidden, n_in)
    W2 = x[o_w2:o_b2].reshape(classes, hidden)
    pre = X @ W1.T + x[o_b1:o_w2]
    act = np.maximum(pre, 0.0)
    z = act @ W2.T + x[o_b2:]
    loss, r = _xent(z, y, need_grad)
    if r is None:
        return loss, None
    dh = (r @ W2) * (pre > 0.0)
    grad = np.empty_like(x)
    grad[:o_b1] = (dh.T @ X).reshape(-1)
    grad[o_b1:o_w2] = dh.sum(axis=0)
    grad[o_w2:o_b2] = (r.T @ act).reshape(-1)
    grad[o_b2:] = r.sum(axis=0)
    return loss, grad
