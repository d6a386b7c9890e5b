"""Domain types, drive-session CSV I/O, splitting, normalization and metrics."""

from __future__ import annotations

import csv
import math
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import (
    BadStartTime,
    CsvFormatError,
    DuplicateSessionId,
    EmptyDataset,
    EmptyInput,
    LengthMismatch,
    NonFinite,
    NonMonotonicTime,
    TooFewSessions,
    TooShort,
    ValidationError,
)

# Column order of the model input vector; battery_temp doubles as the state.
FEATURES = ("t_rel", "power", "speed", "battery_level", "outside_temp", "battery_temp")
N_FEATURES = len(FEATURES)
T_REL, POWER, SPEED, BATTERY_LEVEL, OUTSIDE_TEMP, BATTERY_TEMP = range(N_FEATURES)
ENV_INDICES = (POWER, SPEED, BATTERY_LEVEL, OUTSIDE_TEMP, BATTERY_TEMP)

KELVIN_OFFSET = 273.15

DRIVE_CSV_HEADER = (
    "session_id",
    "t_rel_s",
    "power_kw",
    "speed_kmh",
    "battery_level_pct",
    "outside_temp_c",
    "battery_temp_c",
)

_DECIMAL = re.compile(r"[+-]?(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?")


@dataclass(frozen=True)
class Sample:
    t_rel: float
    power: float
    speed: float
    battery_level: float
    outside_temp: float
    battery_temp: float

    def as_array(self) -> np.ndarray:
        return np.array([getattr(self, f) for f in FEATURES], dtype=np.float64)


class DriveSession:
    """One drive: an ``(N, 6)`` float64 array whose columns follow FEATURES.

    The array is copied and made read-only, so sessions can be shared freely.
    Construction does not validate; use :func:`validate_session`.
    """

    __slots__ = ("id", "data")

    def __init__(self, id: str, data):
        arr = np.array(data, dtype=np.float64, copy=True)
        if arr.ndim != 2 or arr.shape[1] != N_FEATURES:
            raise ValidationError(f"session data must have shape (N, {N_FEATURES}), got {arr.shape}")
        arr.setflags(write=False)
        self.id = str(id)
        self.data = arr

    @classmethod
    def from_samples(cls, id: str, samples: Iterable[Sample]) -> "DriveSession":
        rows = [s.as_array() for s in samples]
        return cls(id, np.array(rows, dtype=np.float64).reshape(len(rows), N_FEATURES))

    @property
    def samples(self) -> list[Sample]:
        return [Sample(*map(float, row)) for row in self.data]

    def __len__(self) -> int:
        return self.data.shape[0]

    @property
    def times(self) -> np.ndarray:
        return self.data[:, T_REL]

    @property
    def temps(self) -> np.ndarray:
        return self.data[:, BATTERY_TEMP]

    @property
    def steps(self) -> np.ndarray:
        return np.diff(self.data[:, T_REL])

    def head(self, k: int) -> "DriveSession":
        return DriveSession(self.id, self.data[:k])

    def __eq__(self, other) -> bool:
        if not isinstance(other, DriveSession):
            return NotImplemented
        return self.id == other.id and np.array_equal(self.data, other.data)

    def __repr__(self) -> str:
        return f"DriveSession(id={self.id!r}, n={len(self)})"


@dataclass(frozen=True)
class Dataset:
    sessions: tuple[DriveSession, ...]

    def __post_init__(self):
        object.__setattr__(self, "sessions", tuple(self.sessions))
        seen = set()
        for s in self.sessions:
            if s.id in seen:
                raise DuplicateSessionId(f"duplicate session id {s.id!r}")
            seen.add(s.id)

    def __len__(self) -> int:
        return len(self.sessions)

    def __iter__(self):
        return iter(self.sessions)

    @property
    def ids(self) -> list[str]:
        return [s.id for s in self.sessions]

    @property
    def n_samples(self) -> int:
        return sum(len(s) for s in self.sessions)

    def get(self, session_id: str) -> DriveSession:
        for s in self.sessions:
            if s.id == session_id:
                return s
        raise KeyError(session_id)


@dataclass(frozen=True)
class NormStats:
    """Input standardization plus a fixed output scale.

    The network's raw output is multiplied by ``target_scale`` so that
    derivative targets of order 1e-3 degC/s do not have to be produced by
    O(1)-initialized weights.
    """

    mean: np.ndarray
    std: np.ndarray
    target_scale: float = 1.0

    def __post_init__(self):
        mean = np.array(self.mean, dtype=np.float64)
        std = np.array(self.std, dtype=np.float64)
        if mean.shape != (N_FEATURES,) or std.shape != (N_FEATURES,):
            raise ValidationError("norm stats must hold one mean and std per input feature")
        if not (np.all(np.isfinite(mean)) and np.all(np.isfinite(std)) and np.all(std > 0)):
            raise ValidationError("norm stats must be finite with positive std")
        if not (np.isfinite(self.target_scale) and self.target_scale > 0):
            raise ValidationError("target_scale must be finite and positive")
        mean.setflags(write=False)
        std.setflags(write=False)
        object.__setattr__(self, "target_scale", float(self.target_scale))
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "std", std)

    @classmethod
    def identity(cls) -> "NormStats":
        return cls(np.zeros(N_FEATURES), np.ones(N_FEATURES))

    def apply(self, x: np.ndarray) -> np.ndarray:
        return (x - self.mean) / self.std

    def to_dict(self) -> dict:
        return {"mean": self.mean.tolist(), "std": self.std.tolist(), "target_scale": self.target_scale}

    @classmethod
    def from_dict(cls, d: dict) -> "NormStats":
        return cls(d["mean"], d["std"], d.get("target_scale", 1.0))


@dataclass(frozen=True)
class Metrics:
    mae: float
    mse: float
    relative_error_pct: float

    def to_dict(self) -> dict:
        return {"mae": self.mae, "mse": self.mse, "relative_error_pct": self.relative_error_pct}


def validate_session(raw: DriveSession) -> DriveSession:
    """Return ``raw`` unchanged if it is a well-formed drive session.

    Raises TooShort, NonFinite (first offending row/field), BadStartTime or
    NonMonotonicTime (index of the later sample of the offending pair).
    """
    d = raw.data
    if d.shape[0] < 2:
        raise TooShort(f"session {raw.id!r} has {d.shape[0]} sample(s); at least 2 required")
    bad = ~np.isfinite(d)
    if bad.any():
        i, j = np.argwhere(bad)[0]
        raise NonFinite(int(i), FEATURES[j], raw.id)
    t = d[:, T_REL]
    if t[0] != 0.0:
        raise BadStartTime(f"session {raw.id!r} starts at t_rel={t[0]!r}, expected 0")
    nonpos = np.flatnonzero(np.diff(t) <= 0)
    if nonpos.size:
        raise NonMonotonicTime(int(nonpos[0]) + 1, raw.id)
    return raw


def validate_dataset(ds: Dataset) -> Dataset:
    for s in ds.sessions:
        validate_session(s)
    return ds


def _test_count(n: int, test_fraction: float) -> int:
    # round half up (not banker's rounding), then keep both sides non-empty
    k = int(math.floor(test_fraction * n + 0.5))
    return min(max(k, 1), n - 1)


def split_dataset(ds: Dataset, test_fraction: float, seed: int) -> tuple[Dataset, Dataset]:
    """Partition whole sessions into (train, test).

    ``|test| = round(test_fraction * n)`` clamped to ``[1, n - 1]``. Sessions
    keep their original relative order on both sides.
    """
    if not 0.0 < test_fraction < 1.0:
        raise ValidationError(f"test_fraction must lie in (0, 1), got {test_fraction}")
    n = len(ds)
    if n < 2:
        raise TooFewSessions(f"need at least 2 sessions to split, got {n}")
    k = _test_count(n, test_fraction)
    perm = np.random.default_rng(seed).permutation(n)
    test_idx = set(perm[:k].tolist())
    train = [s for i, s in enumerate(ds.sessions) if i not in test_idx]
    test = [s for i, s in enumerate(ds.sessions) if i in test_idx]
    return Dataset(tuple(train)), Dataset(tuple(test))


def split_dataset_by_ids(ds: Dataset, test_ids: Sequence[str]) -> tuple[Dataset, Dataset]:
    """Curated split: sessions named in ``test_ids`` go to the test side."""
    wanted = set(test_ids)
    unknown = wanted - set(ds.ids)
    if unknown:
        raise ValidationError(f"unknown session ids: {sorted(unknown)}")
    train = tuple(s for s in ds.sessions if s.id not in wanted)
    test = tuple(s for s in ds.sessions if s.id in wanted)
    if not train or not test:
        raise TooFewSessions("an explicit split must leave both sides non-empty")
    return Dataset(train), Dataset(test)


def fit_norm_stats(train: Dataset) -> NormStats:
    """Population mean/std of every input over all training samples (std
    replaced by 1 for constant features), and the population std of the
    forward-difference temperature derivatives as output scale."""
    if len(train) == 0 or train.n_samples == 0:
        raise EmptyDataset("cannot fit normalization statistics on an empty dataset")
    x = np.concatenate([s.data for s in train.sessions], axis=0)
    mean = x.mean(axis=0)
    std = x.std(axis=0)
    std = np.where(std < 1e-12, 1.0, std)
    rates = [np.diff(s.temps) / np.diff(s.times) for s in train.sessions if len(s) >= 2]
    scale = float(np.concatenate(rates).std()) if rates else 1.0
    if not (np.isfinite(scale) and scale >= 1e-12):
        scale = 1.0
    return NormStats(mean, std, scale)


def metrics(pred: Sequence[float], gt: Sequence[float]) -> Metrics:
    """MAE, MSE and relative error (percent) of a predicted temperature trace.

    The relative error is an aggregate ratio against Kelvin-shifted ground
    truth, ``100 * sum|pred - gt| / sum|gt + 273.15|``, which stays finite
    when the Celsius values cross zero.
    """
    p = np.asarray(pred, dtype=np.float64)
    g = np.asarray(gt, dtype=np.float64)
    if p.shape != g.shape or p.ndim != 1:
        raise LengthMismatch(f"pred has shape {p.shape}, gt has shape {g.shape}")
    if p.size == 0:
        raise EmptyInput("metrics need at least one point")
    if not np.all(np.isfinite(g)):
        raise ValidationError("ground truth must be finite")
    err = np.abs(p - g)
    mae = float(err.mean())
    mse = float(np.mean(err * err))
    rel = float(100.0 * err.sum() / np.abs(g + KELVIN_OFFSET).sum())
    return Metrics(mae, mse, rel)


def mean_metrics(rows: Sequence[Metrics]) -> Metrics:
    if not rows:
        raise EmptyInput("cannot average an empty list of metrics")
    n = len(rows)
    return Metrics(
        sum(r.mae for r in rows) / n,
        sum(r.mse for r in rows) / n,
        sum(r.relative_error_pct for r in rows) / n,
    )


# --- CSV -------------------------------------------------------------------


def parse_float(text: str, *, where: str = "") -> float:
    """Parse a finite decimal float; anything else (nan, inf, blanks) is rejected."""
    s = text.strip()
    if not _DECIMAL.fullmatch(s):
        raise CsvFormatError(f"not a finite decimal number: {text!r}{where}")
    v = float(s)
    if not math.isfinite(v):
        raise CsvFormatError(f"number out of range: {text!r}{where}")
    return v


def format_float(v: float) -> str:
    # repr is the shortest string that round-trips exactly
    return repr(float(v))


def read_drive_csv(path: str | Path) -> Dataset:
    groups: dict[str, list[list[float]]] = {}
    order: list[str] = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(h.strip() for h in header) != DRIVE_CSV_HEADER:
            raise CsvFormatError(f"{path}: expected header {','.join(DRIVE_CSV_HEADER)}")
        last = None
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(DRIVE_CSV_HEADER):
                raise CsvFormatError(f"{path}:{lineno}: expected {len(DRIVE_CSV_HEADER)} fields, got {len(row)}")
            sid = row[0]
            if sid != last:
                if sid in groups:
                    raise CsvFormatError(f"{path}:{lineno}: rows of session {sid!r} are not contiguous")
                groups[sid] = []
                order.append(sid)
                last = sid
            where = f" ({path}:{lineno})"
            groups[sid].append([parse_float(v, where=where) for v in row[1:]])
    sessions = tuple(validate_session(DriveSession(sid, groups[sid])) for sid in order)
    return Dataset(sessions)


def write_drive_csv(ds: Dataset, path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(DRIVE_CSV_HEADER)
        for s in ds.sessions:
            for row in s.data:
                w.writerow([s.id, *(format_float(v) for v in row)])
