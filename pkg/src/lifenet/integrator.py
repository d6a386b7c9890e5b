"""Euler-forward rollout of a learned (or injected) temperature derivative."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Union

import numpy as np

from .core import BATTERY_TEMP, DriveSession, Metrics, metrics, validate_session
from .errors import DivergedRollout, ValidationError
from .losses import DIVERGENCE_LIMIT
from .nn import MlpModel, mlp_forward

Rhs = Callable[[np.ndarray], float]


@dataclass(frozen=True)
class Rollout:
    times: np.ndarray
    predicted_temps: np.ndarray
    final_temp: float


def _as_rhs(model: Union[MlpModel, Rhs]) -> Rhs:
    if isinstance(model, MlpModel):
        return lambda x: mlp_forward(model, x)
    return model


def euler_rollout(model: Union[MlpModel, Rhs], s: DriveSession, u0: float | None = None) -> Rollout:
    """Integrate ``u[i+1] = u[i] + h_i * f(x_i)`` over the session's own time grid.

    ``x_i`` is the recorded sample i with its battery-temperature entry
    replaced by the rolled-out ``u[i]``. ``model`` may be any callable on the
    6-vector, which lets an analytic right-hand side stand in for the network.
    """
    validate_session(s)
    rhs = _as_rhs(model)
    data = s.data
    u = float(data[0, BATTERY_TEMP]) if u0 is None else float(u0)
    if not np.isfinite(u):
        raise ValidationError("initial temperature must be finite")
    n = data.shape[0]
    out = np.empty(n)
    out[0] = u
    t = data[:, 0]
    x = np.empty(data.shape[1])
    for i in range(n - 1):
        x[:] = data[i]
        x[BATTERY_TEMP] = u
        h = t[i + 1] - t[i]
        u = u + h * rhs(x)
        if not abs(u) <= DIVERGENCE_LIMIT:
            raise DivergedRollout(i + 1, u)
        out[i + 1] = u
    out.setflags(write=False)
    return Rollout(np.array(t), out, float(out[-1]))


def rollout_and_score(m: Union[MlpModel, Rhs], s: DriveSession) -> tuple[Rollout, Metrics]:
    r = euler_rollout(m, s)
    return r, metrics(r.predicted_temps, s.temps)
