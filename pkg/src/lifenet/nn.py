"""ReLU multilayer perceptron with hand-written gradients, and Adam.

The network maps a raw 6-feature input to a scalar. Inputs are standardized
inside the model with its :class:`~lifenet.core.NormStats`, and the last
layer's output is multiplied by the stored target scale, so a checkpoint is
self-contained. Weights are stored ``(out, in)``; every batched routine takes
raw inputs of shape ``(B, 6)``.

ReLU's derivative is taken as 0 at exactly 0. Because the second derivative
of ReLU vanishes almost everywhere, the input gradient is a product of fixed
masked matrices around a given point, which is what makes the parameter
gradient of the smoothness penalty a plain reverse sweep through that product.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .core import ENV_INDICES, N_FEATURES, NormStats
from .errors import (
    ConfigError,
    EmptyIndexSet,
    NonFiniteGradient,
    NonFiniteInput,
    ShapeMismatch,
    ValidationError,
)

FORMAT_VERSION = 1

Params = list  # list of ndarrays ordered [W1, b1, W2, b2, ...]


@dataclass(frozen=True)
class MlpArch:
    input_dim: int = N_FEATURES
    hidden_layers: int = 4
    hidden_size: int = 100
    output_dim: int = 1
    activation: str = "relu"

    def __post_init__(self):
        # hidden_layers = 0 is a plain affine map; handy for closed-form checks
        if self.input_dim < 1 or self.output_dim != 1:
            raise ConfigError("input_dim must be positive and output_dim must be 1")
        if not 0 <= self.hidden_layers <= 16:
            raise ConfigError(f"hidden_layers must be in 0..16, got {self.hidden_layers}")
        if not 1 <= self.hidden_size <= 1024:
            raise ConfigError(f"hidden_size must be in 1..1024, got {self.hidden_size}")
        if self.activation != "relu":
            raise ConfigError(f"unsupported activation {self.activation!r}")

    @property
    def layer_shapes(self) -> list[tuple[int, int]]:
        dims = [self.input_dim] + [self.hidden_size] * self.hidden_layers + [self.output_dim]
        return [(dims[i + 1], dims[i]) for i in range(len(dims) - 1)]

    def to_dict(self) -> dict:
        return {
            "input_dim": self.input_dim,
            "hidden_layers": self.hidden_layers,
            "hidden_size": self.hidden_size,
            "output_dim": self.output_dim,
            "activation": self.activation,
        }


@dataclass(frozen=True)
class MlpModel:
    arch: MlpArch
    weights: tuple
    biases: tuple
    norm: NormStats = field(default_factory=NormStats.identity)

    def __post_init__(self):
        ws = tuple(np.array(w, dtype=np.float64) for w in self.weights)
        bs = tuple(np.array(b, dtype=np.float64).reshape(-1) for b in self.biases)
        shapes = self.arch.layer_shapes
        if len(ws) != len(shapes) or len(bs) != len(shapes):
            raise ShapeMismatch(f"expected {len(shapes)} layers, got {len(ws)} weights / {len(bs)} biases")
        for i, (w, b, shp) in enumerate(zip(ws, bs, shapes)):
            if w.shape != shp or b.shape != (shp[0],):
                raise ShapeMismatch(f"layer {i}: weight {w.shape}, bias {b.shape}, expected {shp}")
            if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
                raise ValidationError(f"layer {i} holds non-finite parameters")
            w.setflags(write=False)
            b.setflags(write=False)
        object.__setattr__(self, "weights", ws)
        object.__setattr__(self, "biases", bs)

    @property
    def n_layers(self) -> int:
        return len(self.weights)

    @property
    def params(self) -> Params:
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend((w, b))
        return out

    def with_params(self, params: Sequence[np.ndarray]) -> "MlpModel":
        return replace(self, weights=tuple(params[0::2]), biases=tuple(params[1::2]))

    def with_norm(self, norm: NormStats) -> "MlpModel":
        return replace(self, norm=norm)

    @property
    def n_params(self) -> int:
        return sum(p.size for p in self.params)


def zeros_like_params(m: MlpModel) -> Params:
    return [np.zeros_like(p) for p in m.params]


def flatten(params: Sequence[np.ndarray]) -> np.ndarray:
    return np.concatenate([np.ravel(p) for p in params])


def unflatten(vec: np.ndarray, like: Sequence[np.ndarray]) -> Params:
    vec = np.asarray(vec)
    total = sum(p.size for p in like)
    if vec.shape != (total,):
        raise ShapeMismatch(f"flat parameter vector has shape {vec.shape}, expected ({total},)")
    out, k = [], 0
    for p in like:
        out.append(np.asarray(vec[k : k + p.size], dtype=np.float64).reshape(p.shape))
        k += p.size
    return out


def mlp_init(arch: MlpArch, seed: int, norm: NormStats | None = None) -> MlpModel:
    """He-style uniform init: ``W ~ U(-a, a)``, ``a = sqrt(6 / fan_in)``, so
    ``std(W) = sqrt(2 / fan_in)``. Biases start at zero."""
    rng = np.random.default_rng(seed)
    ws, bs = [], []
    for fan_out, fan_in in arch.layer_shapes:
        a = np.sqrt(6.0 / fan_in)
        ws.append(rng.uniform(-a, a, size=(fan_out, fan_in)))
        bs.append(np.zeros(fan_out))
    return MlpModel(arch, tuple(ws), tuple(bs), norm or NormStats.identity())


def init_scale(fan_in: int) -> float:
    """Theoretical standard deviation of freshly initialized weights."""
    return float(np.sqrt(2.0 / fan_in))


# --- checks -----------------------------------------------------------------


def _check_batch(m: MlpModel, X) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != m.arch.input_dim:
        raise ShapeMismatch(f"expected inputs of shape (B, {m.arch.input_dim}), got {X.shape}")
    if not np.all(np.isfinite(X)):
        raise NonFiniteInput("model input contains NaN or Inf")
    return X


def _check_vector(m: MlpModel, x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (m.arch.input_dim,):
        raise ShapeMismatch(f"expected an input vector of length {m.arch.input_dim}, got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        raise NonFiniteInput("model input contains NaN or Inf")
    return x


# --- forward ------------------------------------------------------------------


def mlp_forward(m: MlpModel, x) -> float:
    """NN(x) for one raw input vector. This is the canonical scalar path used
    by the rollout integrator."""
    a = (_check_vector(m, x) - m.norm.mean) / m.norm.std
    last = m.n_layers - 1
    for i, (w, b) in enumerate(zip(m.weights, m.biases)):
        z = w @ a + b
        a = z if i == last else np.maximum(z, 0.0)
    return float(m.norm.target_scale * a[0])


def _forward_cache(m: MlpModel, X: np.ndarray):
    """Batched forward on raw inputs; returns output ``(B,)`` and per-layer
    inputs ``acts[l]`` with ReLU masks ``masks[l]`` of hidden layer l."""
    a = (X - m.norm.mean) / m.norm.std
    acts, masks = [a], []
    last = m.n_layers - 1
    for i, (w, b) in enumerate(zip(m.weights, m.biases)):
        z = a @ w.T + b
        if i == last:
            return m.norm.target_scale * z[:, 0], acts, masks
        mask = z > 0.0
        a = np.where(mask, z, 0.0)
        masks.append(mask)
        acts.append(a)
    raise AssertionError("unreachable")


def forward_batch(m: MlpModel, X) -> np.ndarray:
    X = _check_batch(m, X)
    return _forward_cache(m, X)[0]


# --- first-order gradients -----------------------------------------------------


def _backward(m: MlpModel, acts, masks, upstream: np.ndarray, want_params=True):
    """Reverse sweep. ``upstream`` has shape ``(B,)``; parameter gradients are
    summed over the batch. Returns (param_grads or None, d_out/d_xhat (B, in))."""
    delta = m.norm.target_scale * upstream[:, None]
    grads: list = [None] * (2 * m.n_layers)
    for i in range(m.n_layers - 1, -1, -1):
        if want_params:
            grads[2 * i] = delta.T @ acts[i]
            grads[2 * i + 1] = delta.sum(axis=0)
        delta = delta @ m.weights[i]
        if i > 0:
            delta = delta * masks[i - 1]
    return (grads if want_params else None), delta


def grad_params_batch(m: MlpModel, X, upstream) -> tuple[np.ndarray, Params]:
    """Outputs ``(B,)`` and the gradient of ``sum_b upstream_b * NN(x_b)``."""
    X = _check_batch(m, X)
    up = np.asarray(upstream, dtype=np.float64).reshape(-1)
    if up.shape[0] != X.shape[0]:
        raise ShapeMismatch("upstream must hold one weight per batch row")
    out, acts, masks = _forward_cache(m, X)
    grads, _ = _backward(m, acts, masks, up)
    return out, grads


def grad_input_batch(m: MlpModel, X) -> np.ndarray:
    """d NN / d x for raw inputs, shape ``(B, 6)``."""
    X = _check_batch(m, X)
    _, acts, masks = _forward_cache(m, X)
    _, dxhat = _backward(m, acts, masks, np.ones(X.shape[0]), want_params=False)
    return dxhat / m.norm.std


def mlp_grad_params(m: MlpModel, x, upstream: float) -> Params:
    x = _check_vector(m, x)
    return grad_params_batch(m, x[None, :], np.array([float(upstream)]))[1]


def mlp_grad_input(m: MlpModel, x) -> np.ndarray:
    x = _check_vector(m, x)
    return grad_input_batch(m, x[None, :])[0]


# --- smoothness penalty and its parameter gradient ------------------------------


def _env_index_array(m: MlpModel, env_indices) -> np.ndarray:
    idx = np.array(sorted(set(int(j) for j in env_indices)), dtype=np.intp)
    if idx.size == 0:
        raise EmptyIndexSet("smoothness penalty needs at least one input index")
    if idx[0] < 0 or idx[-1] >= m.arch.input_dim:
        raise ValidationError(f"input indices must lie in 0..{m.arch.input_dim - 1}")
    return idx


def smoothness_batch(m: MlpModel, X, env_indices=ENV_INDICES, weights=None):
    """Per-row penalties ``(1/M) sum_j (dNN/dx_j)^2`` over ``env_indices`` and
    the parameter gradient of ``sum_b weights_b * penalty_b``.

    The input gradient is ``W1^T D1 W2^T ... D_{L-1} W_L^T`` at fixed masks;
    the parameter gradient walks that product in reverse. Bias gradients are
    zero because the masks are locally constant.
    """
    X = _check_batch(m, X)
    idx = _env_index_array(m, env_indices)
    B = X.shape[0]
    w_rows = np.ones(B) if weights is None else np.asarray(weights, dtype=np.float64).reshape(B)
    _, acts, masks = _forward_cache(m, X)

    # deltas[i]: gradient of the output w.r.t. the pre-activation of layer i
    L = m.n_layers
    deltas: list = [None] * L
    delta = np.full((B, 1), m.norm.target_scale)
    deltas[L - 1] = delta
    for i in range(L - 1, 0, -1):
        delta = (delta @ m.weights[i]) * masks[i - 1]
        deltas[i - 1] = delta
    gx = (delta @ m.weights[0]) / m.norm.std  # raw input gradient (B, in)

    M = idx.size
    sel = gx[:, idx]
    penalty = np.sum(sel * sel, axis=1) / M

    r = np.zeros_like(gx)
    r[:, idx] = (2.0 / M) * sel * w_rows[:, None]
    r = r / m.norm.std  # upstream on d NN / d xhat

    grads: Params = [None] * (2 * L)
    s = r
    for i in range(L):
        grads[2 * i] = deltas[i].T @ s
        grads[2 * i + 1] = np.zeros_like(m.biases[i])
        if i < L - 1:
            s = (s @ m.weights[i].T) * masks[i]
    return penalty, grads


def smoothness_grad_params(m: MlpModel, x, env_indices=ENV_INDICES) -> tuple[float, Params]:
    x = _check_vector(m, x)
    penalty, grads = smoothness_batch(m, x[None, :], env_indices)
    return float(penalty[0]), grads


# --- Adam -------------------------------------------------------------------------


@dataclass(frozen=True)
class AdamState:
    step: int
    m: tuple
    v: tuple
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if self.step < 0:
            raise ValidationError("Adam step count must be non-negative")
        if self.lr < 0 or not 0 < self.beta1 < 1 or not 0 < self.beta2 < 1 or self.eps <= 0:
            raise ConfigError("invalid Adam hyperparameters")


def adam_init(m: MlpModel, lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> AdamState:
    zeros = tuple(np.zeros_like(p) for p in m.params)
    return AdamState(0, zeros, tuple(np.zeros_like(p) for p in m.params), lr, beta1, beta2, eps)


def adam_step(state: AdamState, m: MlpModel, grad: Sequence[np.ndarray]) -> tuple[MlpModel, AdamState]:
    params = m.params
    if len(grad) != len(params) or len(state.m) != len(params):
        raise ShapeMismatch("gradient / optimizer state do not match the model's parameter list")
    for p, g, mo in zip(params, grad, state.m):
        if np.shape(g) != p.shape or mo.shape != p.shape:
            raise ShapeMismatch(f"gradient shape {np.shape(g)} does not match parameter shape {p.shape}")
        if not np.all(np.isfinite(g)):
            raise NonFiniteGradient("gradient contains NaN or Inf")
    t = state.step + 1
    b1, b2 = state.beta1, state.beta2
    bc1 = 1.0 - b1**t
    bc2 = 1.0 - b2**t
    new_p, new_m, new_v = [], [], []
    for p, g, mo, vo in zip(params, grad, state.m, state.v):
        mt = b1 * mo + (1.0 - b1) * g
        vt = b2 * vo + (1.0 - b2) * (g * g)
        new_p.append(p - state.lr * (mt / bc1) / (np.sqrt(vt / bc2) + state.eps))
        new_m.append(mt)
        new_v.append(vt)
    return m.with_params(new_p), replace(state, step=t, m=tuple(new_m), v=tuple(new_v))


# --- checkpoints ---------------------------------------------------------------------


def model_to_dict(m: MlpModel, training_meta: dict | None = None) -> dict:
    return {
        "format_version": FORMAT_VERSION,
        "arch": m.arch.to_dict(),
        "norm_stats": m.norm.to_dict(),
        "layers": [{"weight": w.tolist(), "bias": b.tolist()} for w, b in zip(m.weights, m.biases)],
        "training_meta": dict(training_meta or {}),
    }


def model_from_dict(d: dict) -> tuple[MlpModel, dict]:
    if d.get("format_version") != FORMAT_VERSION:
        raise ValidationError(f"unsupported checkpoint format_version {d.get('format_version')!r}")
    arch = MlpArch(**d["arch"])
    layers = d["layers"]
    m = MlpModel(
        arch,
        tuple(np.array(l["weight"], dtype=np.float64).reshape(shp) for l, shp in zip(layers, arch.layer_shapes)),
        tuple(np.array(l["bias"], dtype=np.float64) for l in layers),
        NormStats.from_dict(d["norm_stats"]),
    )
    return m, dict(d.get("training_meta", {}))


def save_model(m: MlpModel, path: str | Path, training_meta: dict | None = None) -> None:
    Path(path).write_text(json.dumps(model_to_dict(m, training_meta), indent=1) + "\n", encoding="utf-8")


def load_model(path: str | Path) -> tuple[MlpModel, dict]:
    return model_from_dict(json.loads(Path(path).read_text(encoding="utf-8")))
