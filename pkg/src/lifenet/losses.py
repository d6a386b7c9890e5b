"""Training objectives: forward-difference regression, its smoothness-
regularized variant, and the multi-step rollout (time-stability) loss.

All losses use sum reduction over their terms; the smoothness penalty is
averaged over the batch so that lambda does not depend on batch size.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .core import BATTERY_TEMP, ENV_INDICES, DriveSession, validate_session
from .errors import DivergedRollout, EmptyBatch, ValidationError
from .nn import MlpModel, Params, _backward, _forward_cache, smoothness_batch

DIVERGENCE_LIMIT = 1e4


@dataclass(frozen=True)
class FdTarget:
    input: np.ndarray
    target_derivative: float
    dt: float


@dataclass(frozen=True)
class LossValue:
    value: float
    grad: Params
    n_terms: int = 1

    @property
    def mean(self) -> float:
        return self.value / self.n_terms


def fd_arrays(data: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Inputs, forward-difference targets and step sizes of a session array."""
    t = data[:, 0]
    u = data[:, BATTERY_TEMP]
    dt = np.diff(t)
    return data[:-1], np.diff(u) / dt, dt


def fd_targets(s: DriveSession) -> list[FdTarget]:
    validate_session(s)
    X, y, dt = fd_arrays(s.data)
    return [FdTarget(X[i].copy(), float(y[i]), float(dt[i])) for i in range(len(y))]


def stack_targets(batch: Sequence[FdTarget]) -> tuple[np.ndarray, np.ndarray]:
    if len(batch) == 0:
        raise EmptyBatch("loss needs a non-empty batch")
    X = np.array([b.input for b in batch], dtype=np.float64)
    y = np.array([b.target_derivative for b in batch], dtype=np.float64)
    return X, y


def loss_no_arrays(m: MlpModel, X: np.ndarray, y: np.ndarray) -> LossValue:
    if X.shape[0] == 0:
        raise EmptyBatch("loss needs a non-empty batch")
    out, acts, masks = _forward_cache(m, X)
    r = y - out
    grads, _ = _backward(m, acts, masks, -2.0 * r)
    return LossValue(float(np.dot(r, r)), grads, X.shape[0])


def loss_reg_arrays(m: MlpModel, X: np.ndarray, y: np.ndarray, lam: float, env_indices=ENV_INDICES) -> LossValue:
    if lam < 0:
        raise ValidationError(f"lambda must be non-negative, got {lam}")
    base = loss_no_arrays(m, X, y)
    B = X.shape[0]
    penalty, pgrad = smoothness_batch(m, X, env_indices, weights=np.full(B, 1.0 / B))
    value = base.value + lam * float(np.mean(penalty))
    grads = [g + lam * pg for g, pg in zip(base.grad, pgrad)]
    return LossValue(value, grads, B)


def loss_no(m: MlpModel, batch: Sequence[FdTarget]) -> LossValue:
    X, y = stack_targets(batch)
    return loss_no_arrays(m, X, y)


def loss_reg(m: MlpModel, batch: Sequence[FdTarget], lam: float, env_indices=ENV_INDICES) -> LossValue:
    X, y = stack_targets(batch)
    return loss_reg_arrays(m, X, y, lam, env_indices)


def _rollout_fast(m: MlpModel, data: np.ndarray, u0: float) -> np.ndarray:
    """Euler rollout with the temperature feature fed back.

    The first layer's contribution from the recorded columns is computed for
    all steps at once; only the temperature column changes per step.
    """
    n = data.shape[0] - 1
    h = np.diff(data[:, 0])
    mu, sd = m.norm.mean, m.norm.std
    xhat = (data[:-1] - mu) / sd
    xhat[:, BATTERY_TEMP] = 0.0
    W0, b0 = m.weights[0], m.biases[0]
    base = xhat @ W0.T + b0
    wcol = W0[:, BATTERY_TEMP]
    mu_t, sd_t = mu[BATTERY_TEMP], sd[BATTERY_TEMP]
    rest = list(zip(m.weights[1:], m.biases[1:]))
    scale = m.norm.target_scale
    u = np.empty(n + 1)
    u[0] = u0
    cur = u0
    for i in range(n):
        z = base[i] + wcol * ((cur - mu_t) / sd_t)
        for w, b in rest:
            z = w @ np.maximum(z, 0.0) + b
        cur = cur + h[i] * (scale * z[0])
        if not abs(cur) <= DIVERGENCE_LIMIT:
            raise DivergedRollout(i + 1, float(cur))
        u[i + 1] = cur
    return u


def loss_ts_arrays(m: MlpModel, data: np.ndarray) -> LossValue:
    """Rollout loss on a contiguous run of samples, started from the first
    recorded temperature, with exact backpropagation through the recursion."""
    n = data.shape[0] - 1
    if n < 1:
        raise EmptyBatch("time-stability loss needs at least two samples")
    gt = data[:, BATTERY_TEMP]
    h = np.diff(data[:, 0])
    u = _rollout_fast(m, data, float(gt[0]))
    resid = gt[1:] - u[1:]
    value = float(np.dot(resid, resid))

    X = np.array(data[:-1], dtype=np.float64)
    X[:, BATTERY_TEMP] = u[:-1]
    _, acts, masks = _forward_cache(m, X)
    _, dxhat = _backward(m, acts, masks, np.ones(n), want_params=False)
    dfdu = dxhat[:, BATTERY_TEMP] / m.norm.std[BATTERY_TEMP]

    # adj[i] = dL/du_i for i = 1..n; adj[0] unused (u_0 is fixed)
    adj = np.zeros(n + 1)
    direct = -2.0 * resid
    adj[n] = direct[n - 1]
    for i in range(n - 1, 0, -1):
        adj[i] = direct[i - 1] + adj[i + 1] * (1.0 + h[i] * dfdu[i])
    grads, _ = _backward(m, acts, masks, adj[1:] * h)
    return LossValue(value, grads, n)


def loss_ts(m: MlpModel, s: DriveSession) -> LossValue:
    validate_session(s)
    return loss_ts_arrays(m, s.data)


def ts_chunks(data: np.ndarray, max_unroll: int) -> list[np.ndarray]:
    """Split a session into runs of at most ``max_unroll`` Euler steps.

    Consecutive chunks share their boundary sample, so each chunk restarts
    from the recorded temperature there.
    """
    if max_unroll < 1:
        raise ValidationError("max_unroll must be at least 1")
    n = data.shape[0] - 1
    return [data[k : min(k + max_unroll, n) + 1] for k in range(0, n, max_unroll)]
