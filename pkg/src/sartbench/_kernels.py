"""Hot training-loop kernel: numba-jitted with a pure-numpy fallback.

Both lanes run the same source; the jitted lane is just the compiled
version of it. Selection happens at import time: set SARTBENCH_NUMBA=0
to force the numpy path (the package also falls back automatically when
numba is unavailable). benchmarks/bench_kernels.py compares the lanes.
"""

from __future__ import annotations

import os

import numpy as np


def numba_requested() -> bool:
    return os.environ.get("SARTBENCH_NUMBA", "1").strip().lower() not in (
        "0", "false", "off")


def _train_loop(x, y, w1, b1, w2, b2, w3, b3, perms, batch_size, lrs,
                beta1, beta2, eps, weight_decay, stop_loss):
    """Minibatch AdamW on the two-hidden-layer ReLU regressor.

    x: (n, d) normalized features; y: (n, out) targets; perms: (epochs, n)
    int64 shuffle orders; lrs: (epochs,) per-epoch learning rates.
    Parameters update in place (decoupled weight decay); returns the
    per-epoch mean training loss, truncated at the first epoch whose mean
    loss drops below stop_loss (0 disables the early stop). The loss per
    batch is the mean over samples of the squared L2 action error.
    """
    n = x.shape[0]
    epochs = perms.shape[0]
    losses = np.zeros(epochs)
    m_w1 = np.zeros_like(w1)
    v_w1 = np.zeros_like(w1)
    m_b1 = np.zeros_like(b1)
    v_b1 = np.zeros_like(b1)
    m_w2 = np.zeros_like(w2)
    v_w2 = np.zeros_like(w2)
    m_b2 = np.zeros_like(b2)
    v_b2 = np.zeros_like(b2)
    m_w3 = np.zeros_like(w3)
    v_w3 = np.zeros_like(w3)
    m_b3 = np.zeros_like(b3)
    v_b3 = np.zeros_like(b3)
    step = 0
    for e in range(epochs):
        lr = lrs[e]
        perm = perms[e]
        total = 0.0
        start = 0
        while start < n:
            stop = min(n, start + batch_size)
            idx = perm[start:stop]
            xb = x[idx]
            yb = y[idx]
            bsz = float(stop - start)

            z1 = xb @ w1 + b1
            a1 = np.maximum(z1, 0.0)
            z2 = a1 @ w2 + b2
            a2 = np.maximum(z2, 0.0)
            out = a2 @ w3 + b3

            diff = out - yb
            total += (diff * diff).sum()
            g = (2.0 / bsz) * diff

            g_w3 = a2.T @ g
            g_b3 = g.sum(axis=0)
            g_a2 = np.where(z2 > 0.0, g @ w3.T, 0.0)
            g_w2 = a1.T @ g_a2
            g_b2 = g_a2.sum(axis=0)
            g_a1 = np.where(z1 > 0.0, g_a2 @ w2.T, 0.0)
            g_w1 = xb.T @ g_a1
            g_b1 = g_a1.sum(axis=0)

            step += 1
            c1 = 1.0 - beta1 ** step
            c2 = 1.0 - beta2 ** step

            m_w1[:] = beta1 * m_w1 + (1.0 - beta1) * g_w1
            v_w1[:] = beta2 * v_w1 + (1.0 - beta2) * g_w1 * g_w1
            w1 -= lr * ((m_w1 / c1) / (np.sqrt(v_w1 / c2) + eps) + weight_decay * w1)
            m_b1[:] = beta1 * m_b1 + (1.0 - beta1) * g_b1
            v_b1[:] = beta2 * v_b1 + (1.0 - beta2) * g_b1 * g_b1
            b1 -= lr * ((m_b1 / c1) / (np.sqrt(v_b1 / c2) + eps) + weight_decay * b1)
            m_w2[:] = beta1 * m_w2 + (1.0 - beta1) * g_w2
            v_w2[:] = beta2 * v_w2 + (1.0 - beta2) * g_w2 * g_w2
            w2 -= lr * ((m_w2 / c1) / (np.sqrt(v_w2 / c2) + eps) + weight_decay * w2)
            m_b2[:] = beta1 * m_b2 + (1.0 - beta1) * g_b2
            v_b2[:] = beta2 * v_b2 + (1.0 - beta2) * g_b2 * g_b2
            b2 -= lr * ((m_b2 / c1) / (np.sqrt(v_b2 / c2) + eps) + weight_decay * b2)
            m_w3[:] = beta1 * m_w3 + (1.0 - beta1) * g_w3
            v_w3[:] = beta2 * v_w3 + (1.0 - beta2) * g_w3 * g_w3
            w3 -= lr * ((m_w3 / c1) / (np.sqrt(v_w3 / c2) + eps) + weight_decay * w3)
            m_b3[:] = beta1 * m_b3 + (1.0 - beta1) * g_b3
            v_b3[:] = beta2 * v_b3 + (1.0 - beta2) * g_b3 * g_b3
            b3 -= lr * ((m_b3 / c1) / (np.sqrt(v_b3 / c2) + eps) + weight_decay * b3)

            start = stop
        losses[e] = total / n
        if stop_loss > 0.0 and losses[e] < stop_loss:
            return losses[:e + 1]
    return losses


train_loop_numpy = _train_loop
train_loop = _train_loop
USING_NUMBA = False

if numba_requested():
    try:
        from numba import njit

        train_loop = njit(cache=True)(_train_loop)
        USING_NUMBA = True
    except ImportError:  # pragma: no cover - numba is a declared dependency
        pass
