"""Central finite-difference checks of every analytic gradient in the package.

Each trial draws a random architecture (up to 4 x 50), random normalization
statistics and random inputs, and compares analytic derivatives against
central differences on a random subset of coordinates. Draws whose hidden
pre-activations come within ``KINK_MARGIN`` of zero are redrawn, since the
finite difference would straddle a ReLU kink there.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import BATTERY_TEMP, ENV_INDICES, NormStats
from .errors import DivergedRollout
from .losses import _rollout_fast, loss_no_arrays, loss_reg_arrays, loss_ts_arrays
from .nn import MlpArch, MlpModel, _forward_cache, flatten, grad_input_batch, mlp_init, unflatten

FD_STEP = 1e-6
KINK_MARGIN = 1e-5
TOLERANCES = {"loss_no": 1e-5, "loss_reg": 1e-4, "loss_ts": 1e-4, "input_grad": 1e-5}


def central_difference(f, theta: np.ndarray, coords, step: float = FD_STEP) -> np.ndarray:
    out = np.empty(len(coords))
    for k, i in enumerate(coords):
        e = np.zeros_like(theta)
        e[i] = step
        out[k] = (f(theta + e) - f(theta - e)) / (2.0 * step)
    return out


def relative_error(analytic, numeric) -> float:
    """Normwise relative error ``max|a - n| / max(|a|, |n|)``; 0 when both vanish."""
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    scale = max(np.max(np.abs(a)), np.max(np.abs(n)))
    if scale == 0.0:
        return 0.0
    return float(np.max(np.abs(a - n)) / scale)


def min_preactivation(m: MlpModel, X: np.ndarray) -> float:
    a = (X - m.norm.mean) / m.norm.std
    lo = np.inf
    for w, b in zip(m.weights[:-1], m.biases[:-1]):
        z = a @ w.T + b
        lo = min(lo, float(np.min(np.abs(z))))
        a = np.maximum(z, 0.0)
    return lo


def random_model(rng: np.random.Generator, max_layers: int = 4, max_hidden: int = 50) -> MlpModel:
    arch = MlpArch(hidden_layers=int(rng.integers(1, max_layers + 1)), hidden_size=int(rng.integers(2, max_hidden + 1)))
    norm = NormStats(rng.normal(0.0, 5.0, 6), rng.uniform(0.5, 10.0, 6), rng.uniform(0.01, 2.0))
    m = mlp_init(arch, int(rng.integers(2**31)), norm)
    return m.with_params([p + 0.1 * rng.standard_normal(p.shape) for p in m.params])


def random_session_array(rng: np.random.Generator, m: MlpModel, n_steps: int) -> np.ndarray:
    d = m.norm.mean + m.norm.std * rng.standard_normal((n_steps + 1, 6))
    d[:, 0] = np.concatenate([[0.0], np.cumsum(rng.uniform(0.05, 0.15, n_steps))])
    return d


@dataclass
class CheckResult:
    name: str
    trials: int
    max_error: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.max_error <= self.tolerance


def _param_check(rng, m: MlpModel, loss, n_coords: int) -> float:
    theta = flatten(m.params)
    analytic = flatten(loss(m).grad)
    coords = rng.choice(theta.size, size=min(n_coords, theta.size), replace=False)
    f = lambda th: loss(m.with_params(unflatten(th, m.params))).value  # noqa: E731
    return relative_error(analytic[coords], central_difference(f, theta, coords))


def run_gradcheck(trials: int = 100, seed: int = 0, n_coords: int = 24, ts_steps: int = 10) -> list[CheckResult]:
    rng = np.random.default_rng(seed)
    worst = dict.fromkeys(TOLERANCES, 0.0)
    done = 0
    while done < trials:
        m = random_model(rng)
        B = int(rng.integers(1, 9))
        X = m.norm.mean + m.norm.std * rng.standard_normal((B, 6))
        y = rng.normal(0.0, 1.0, B)
        data = random_session_array(rng, m, ts_steps)
        try:
            u = _rollout_fast(m, data, float(data[0, BATTERY_TEMP]))
        except DivergedRollout:
            continue
        Xts = data[:-1].copy()
        Xts[:, BATTERY_TEMP] = u[:-1]
        if min(min_preactivation(m, X), min_preactivation(m, Xts)) < KINK_MARGIN:
            continue

        worst["loss_no"] = max(worst["loss_no"], _param_check(rng, m, lambda mm: loss_no_arrays(mm, X, y), n_coords))
        worst["loss_reg"] = max(worst["loss_reg"], _param_check(
            rng, m, lambda mm: loss_reg_arrays(mm, X, y, 0.1, ENV_INDICES), n_coords))
        worst["loss_ts"] = max(worst["loss_ts"], _param_check(rng, m, lambda mm: loss_ts_arrays(mm, data), n_coords))

        x = X[0]
        g = grad_input_batch(m, x[None, :])[0]
        fwd = lambda v: float(_forward_cache(m, v[None, :])[0][0])  # noqa: E731
        worst["input_grad"] = max(worst["input_grad"], relative_error(g, central_difference(fwd, x, range(6))))
        done += 1
    return [CheckResult(k, trials, worst[k], TOLERANCES[k]) for k in TOLERANCES]
