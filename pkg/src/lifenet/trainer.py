"""Training loops for the three objectives, test evaluation and grid sweeps."""

from __future__ import annotations

import csv
import itertools
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .core import (
    ENV_INDICES,
    Dataset,
    Metrics,
    fit_norm_stats,
    format_float,
    mean_metrics,
)
from .errors import ConfigError, EmptyDataset, LifenetError, NonFiniteLoss
from .integrator import rollout_and_score
from .losses import fd_arrays, loss_no_arrays, loss_reg_arrays, loss_ts_arrays, ts_chunks
from .nn import MlpArch, MlpModel, adam_init, adam_step, mlp_init

log = logging.getLogger(__name__)

OBJECTIVES = ("baseline", "regularized", "time_stability")

DEFAULT_LAMBDA_GRID = (0.0, 1e-6, 1e-4, 0.01, 0.1, 1.0, 10.0, 100.0, 1000.0, 10000.0)
DEFAULT_HIDDEN_GRID = (10, 20, 50, 100)
DEFAULT_LAYERS_GRID = (2, 4, 6, 8)


@dataclass(frozen=True)
class TrainConfig:
    objective: str = "baseline"
    lam: float | None = None
    arch: MlpArch = field(default_factory=MlpArch)
    lr: float = 1e-3
    batch_size: int = 4096
    epochs: int = 100
    seed: int = 0
    max_unroll: int = 4096
    sessions_per_step: int = 1
    env_indices: tuple = ENV_INDICES
    patience: int | None = None
    pretrain_epochs: int = 0
    pretrain_lr: float = 1e-3

    def __post_init__(self):
        if self.objective not in OBJECTIVES:
            raise ConfigError(f"objective must be one of {OBJECTIVES}, got {self.objective!r}")
        if (self.lam is not None) != (self.objective == "regularized"):
            raise ConfigError("lambda is required for, and only for, the regularized objective")
        if self.lam is not None and not self.lam >= 0:
            raise ConfigError(f"lambda must be non-negative, got {self.lam}")
        if self.epochs < 1 or self.batch_size < 1 or self.max_unroll < 1 or self.sessions_per_step < 1:
            raise ConfigError("epochs, batch_size, max_unroll and sessions_per_step must be >= 1")
        if not (self.lr >= 0 and self.pretrain_lr >= 0):
            raise ConfigError(f"learning rate must be non-negative, got {self.lr}")
        if self.pretrain_epochs < 0:
            raise ConfigError("pretrain_epochs must be >= 0")
        if self.pretrain_epochs and self.objective != "time_stability":
            raise ConfigError("pretrain_epochs only applies to the time_stability objective")
        if self.patience is not None and self.patience < 1:
            raise ConfigError("patience must be >= 1")
        object.__setattr__(self, "env_indices", tuple(int(j) for j in self.env_indices))

    def to_dict(self) -> dict:
        return {
            "objective": self.objective,
            "lambda": self.lam,
            "arch": self.arch.to_dict(),
            "lr": self.lr,
            "batch_size": self.batch_size,
            "epochs": self.epochs,
            "seed": self.seed,
            "max_unroll": self.max_unroll,
            "sessions_per_step": self.sessions_per_step,
            "env_indices": list(self.env_indices),
            "patience": self.patience,
            "pretrain_epochs": self.pretrain_epochs,
            "pretrain_lr": self.pretrain_lr,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        arch = MlpArch(**d.pop("arch", {}))
        lam = d.pop("lambda", None)
        env = tuple(d.pop("env_indices", ENV_INDICES))
        return cls(arch=arch, lam=lam, env_indices=env, **d)


@dataclass
class TrainReport:
    config: TrainConfig
    epoch_losses: list
    epoch_times: list
    model: MlpModel
    session_metrics: dict = field(default_factory=dict)
    mean_metrics: Metrics | None = None
    pretrain_losses: list = field(default_factory=list)

    @property
    def epochs_run(self) -> int:
        return len(self.epoch_losses)

    @property
    def time_per_epoch(self) -> float:
        return float(np.mean(self.epoch_times))

    def to_dict(self, include_timing: bool = False) -> dict:
        d = {
            "config": self.config.to_dict(),
            "epochs_run": self.epochs_run,
            "epoch_losses": list(self.epoch_losses),
            "pretrain_losses": list(self.pretrain_losses),
            "session_metrics": {k: v.to_dict() for k, v in self.session_metrics.items()},
            "mean_metrics": None if self.mean_metrics is None else self.mean_metrics.to_dict(),
        }
        if include_timing:
            d["epoch_times_s"] = list(self.epoch_times)
            d["time_per_epoch_s"] = self.time_per_epoch
        return d

    def training_meta(self) -> dict:
        c = self.config
        return {"objective": c.objective, "lambda": c.lam, "seed": c.seed, "epochs": self.epochs_run,
                "pretrain_epochs": len(self.pretrain_losses)}


def _shuffle_rng(seed: int) -> np.random.Generator:
    # spawned child stream: evaluation or init calls never touch it
    return np.random.default_rng(np.random.SeedSequence(seed).spawn(1)[0])


def _pool_fd(ds: Dataset) -> tuple[np.ndarray, np.ndarray]:
    xs, ys = [], []
    for s in ds.sessions:
        X, y, _ = fd_arrays(s.data)
        xs.append(X)
        ys.append(y)
    return np.concatenate(xs), np.concatenate(ys)


def _epoch_fd(cfg, model, opt, X, y, rng):
    perm = rng.permutation(X.shape[0])
    total = 0.0
    for k in range(0, len(perm), cfg.batch_size):
        idx = perm[k : k + cfg.batch_size]
        if cfg.objective == "regularized":
            lv = loss_reg_arrays(model, X[idx], y[idx], cfg.lam, cfg.env_indices)
        else:
            lv = loss_no_arrays(model, X[idx], y[idx])
        total += lv.value
        model, opt = adam_step(opt, model, lv.grad)
    return model, opt, total / X.shape[0]


def _epoch_ts(cfg, model, opt, chunks, rng):
    order = rng.permutation(len(chunks))
    total, terms = 0.0, 0
    for k in range(0, len(order), cfg.sessions_per_step):
        grad = None
        for j in order[k : k + cfg.sessions_per_step]:
            lv = loss_ts_arrays(model, chunks[j])
            total += lv.value
            terms += lv.n_terms
            grad = lv.grad if grad is None else [a + b for a, b in zip(grad, lv.grad)]
        model, opt = adam_step(opt, model, grad)
    return model, opt, total / terms


def train(cfg: TrainConfig, train_ds: Dataset, test_ds: Dataset | None = None, init: MlpModel | None = None) -> TrainReport:
    """Fit a model with the configured objective.

    Forward-difference objectives draw shuffled minibatches from the pooled
    targets of all sessions; the time-stability objective takes one Adam
    step per group of ``sessions_per_step`` session chunks. The reported
    epoch loss is the objective per target (or per rollout step), averaged
    over the epoch. ``init`` warm-starts from an existing model.

    A freshly initialized network usually makes rollouts blow up, so the
    time-stability objective can first run ``pretrain_epochs`` epochs of the
    forward-difference objective at ``pretrain_lr`` (same shuffle stream);
    the rollout phase then starts a fresh Adam state at ``lr``. Pretraining
    losses are kept apart in ``pretrain_losses``.
    """
    if len(train_ds) == 0:
        raise EmptyDataset("training set is empty")
    norm = fit_norm_stats(train_ds)
    if init is not None:
        if init.arch != cfg.arch:
            raise ConfigError("warm-start model architecture differs from the configured one")
        model = init
    else:
        model = mlp_init(cfg.arch, cfg.seed, norm)
    opt = adam_init(model, lr=cfg.lr)
    rng = _shuffle_rng(cfg.seed)

    pre_losses = []
    if cfg.objective == "time_stability":
        chunks = [c for s in train_ds.sessions for c in ts_chunks(s.data, cfg.max_unroll)]
        if cfg.pretrain_epochs:
            X, y = _pool_fd(train_ds)
            pre_cfg = replace(cfg, objective="baseline", pretrain_epochs=0)
            pre_opt = adam_init(model, lr=cfg.pretrain_lr)
            for epoch in range(cfg.pretrain_epochs):
                model, pre_opt, loss = _epoch_fd(pre_cfg, model, pre_opt, X, y, rng)
                if not np.isfinite(loss):
                    raise NonFiniteLoss(epoch, loss)
                pre_losses.append(float(loss))
            opt = adam_init(model, lr=cfg.lr)
    else:
        X, y = _pool_fd(train_ds)

    losses, times = [], []
    best, stale = np.inf, 0
    for epoch in range(cfg.epochs):
        t0 = time.perf_counter()
        if cfg.objective == "time_stability":
            model, opt, loss = _epoch_ts(cfg, model, opt, chunks, rng)
        else:
            model, opt, loss = _epoch_fd(cfg, model, opt, X, y, rng)
        times.append(time.perf_counter() - t0)
        if not np.isfinite(loss):
            raise NonFiniteLoss(epoch, loss)
        losses.append(float(loss))
        log.debug("epoch %d loss %.6g (%.3fs)", epoch, loss, times[-1])
        if cfg.patience is not None:
            if loss < best:
                best, stale = loss, 0
            else:
                stale += 1
                if stale >= cfg.patience:
                    log.info("early stop at epoch %d", epoch)
                    break

    report = TrainReport(cfg, losses, times, model, pretrain_losses=pre_losses)
    if test_ds is not None and len(test_ds):
        report.session_metrics, report.mean_metrics = evaluate(model, test_ds)
    return report


def evaluate(m: MlpModel, test: Dataset) -> tuple[dict, Metrics]:
    if len(test) == 0:
        raise EmptyDataset("test set is empty")
    per = {s.id: rollout_and_score(m, s)[1] for s in test.sessions}
    return per, mean_metrics(list(per.values()))


# --- sweeps ------------------------------------------------------------------------

GRID_KEYS = ("lambda", "hidden_size", "hidden_layers", "lr", "epochs", "batch_size")


def expand_grid(grid: dict) -> list[dict]:
    if not grid:
        raise ConfigError("sweep grid is empty")
    unknown = set(grid) - set(GRID_KEYS)
    if unknown:
        raise ConfigError(f"unknown grid keys {sorted(unknown)}; allowed: {GRID_KEYS}")
    keys = [k for k in GRID_KEYS if k in grid]
    values = [list(grid[k]) for k in keys]
    if any(len(v) == 0 for v in values):
        raise ConfigError("every grid axis needs at least one value")
    return [dict(zip(keys, combo)) for combo in itertools.product(*values)]


def config_for_point(base: TrainConfig, point: dict) -> TrainConfig:
    arch = base.arch
    if "hidden_size" in point or "hidden_layers" in point:
        arch = replace(arch, hidden_size=int(point.get("hidden_size", arch.hidden_size)),
                       hidden_layers=int(point.get("hidden_layers", arch.hidden_layers)))
    cfg = replace(base, arch=arch)
    if "lambda" in point:
        cfg = replace(cfg, objective="regularized", lam=float(point["lambda"]))
    for k in ("lr", "epochs", "batch_size"):
        if k in point:
            cfg = replace(cfg, **{k: type(getattr(base, k))(point[k])})
    return cfg


def _run_point(args):
    base, point, train_ds, test_ds = args
    row = dict(point)
    try:
        report = train(config_for_point(base, point), train_ds, test_ds)
        mm = report.mean_metrics
        row.update(status="ok", mae=mm.mae, mse=mm.mse, relative_error_pct=mm.relative_error_pct,
                   final_train_loss=report.epoch_losses[-1])
    except (LifenetError, FloatingPointError) as exc:
        row.update(status=f"failed: {exc}", mae=None, mse=None, relative_error_pct=None, final_train_loss=None)
    return row


def sweep(base: TrainConfig, grid: dict, train_ds: Dataset, test_ds: Dataset, threads: int = 1) -> list[dict]:
    """Train and evaluate one model per grid point, all with ``base.seed``.

    A failing point is recorded with its error rather than aborting. The row
    with the lowest mean test MSE gets ``best = 1``.
    """
    points = expand_grid(grid)
    jobs = [(base, p, train_ds, test_ds) for p in points]
    if threads > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            rows = list(pool.map(_run_point, jobs))
    else:
        rows = [_run_point(j) for j in jobs]
    ok = [i for i, r in enumerate(rows) if r["status"] == "ok"]
    best = min(ok, key=lambda i: rows[i]["mse"]) if ok else None
    for i, r in enumerate(rows):
        r["best"] = int(i == best)
    return rows


def write_sweep_csv(rows: Sequence[dict], path: str | Path) -> None:
    keys = [k for k in GRID_KEYS if rows and k in rows[0]]
    cols = keys + ["status", "mae", "mse", "relative_error_pct", "final_train_loss", "best"]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(cols)
        for r in rows:
            w.writerow(["" if r[c] is None else (format_float(r[c]) if isinstance(r[c], float) else r[c]) for c in cols])
