"""Linear models of charging statistics from state of charge and battery
temperature, fit by ordinary least squares through the normal equations.

Peak power:   c_p      = c_soc * soc_start + c_T * T + o
Charge time:  t_charge = c_soc_s * soc_start + c_soc_e * soc_end + c_T_t * T + o_t
"""

from __future__ import annotations

import csv
import json
import warnings
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy import linalg, stats

from .core import format_float, parse_float
from .errors import CsvFormatError, SingularDesign, TooFewRows, ValidationError

MAX_CONDITION = 1e12
SIGNIFICANCE = 0.05

PEAK_NAMES = ("c_soc", "c_T", "o")
TIME_NAMES = ("c_soc_s", "c_soc_e", "c_T_t", "o_t")

CHARGING_CSV_HEADER = (
    "session_id",
    "soc_start_pct",
    "soc_end_pct",
    "battery_temp_c",
    "peak_power_kw",
    "charge_time_min",
)

# validity ranges of the drive data the temperatures come from
SOC_RANGE = (10.0, 100.0)
TEMP_RANGE = (-5.79, 33.9)


@dataclass(frozen=True)
class ChargingSession:
    soc_start: float
    soc_end: float
    battery_temp: float
    peak_power: float
    charge_time: float
    session_id: str = ""

    def __post_init__(self):
        vals = (self.soc_start, self.soc_end, self.battery_temp, self.peak_power, self.charge_time)
        if not all(np.isfinite(vals)):
            raise ValidationError(f"charging session {self.session_id!r} has non-finite fields")
        if not 0.0 <= self.soc_start < self.soc_end <= 100.0:
            raise ValidationError(f"charging session {self.session_id!r}: need 0 <= soc_start < soc_end <= 100")
        if self.peak_power <= 0 or self.charge_time <= 0:
            raise ValidationError(f"charging session {self.session_id!r}: peak power and charge time must be positive")


@dataclass(frozen=True)
class SurrogatePlant:
    """Coefficients of both linear models, used to synthesize charging data."""

    c_soc: float
    c_T: float
    o: float
    c_soc_s: float
    c_soc_e: float
    c_T_t: float
    o_t: float

    def peak_power(self, soc_start, temp):
        return self.c_soc * soc_start + self.c_T * temp + self.o

    def charge_time(self, soc_start, soc_end, temp):
        return self.c_soc_s * soc_start + self.c_soc_e * soc_end + self.c_T_t * temp + self.o_t

    def to_dict(self) -> dict:
        d = asdict(self)
        return {
            "peak_power": {k: d[k] for k in PEAK_NAMES},
            "charge_time": {k: d[k] for k in TIME_NAMES},
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SurrogatePlant":
        try:
            return cls(**{k: float(d["peak_power"][k]) for k in PEAK_NAMES},
                       **{k: float(d["charge_time"][k]) for k in TIME_NAMES})
        except (KeyError, TypeError) as exc:
            raise ValidationError(f"malformed plant description: {exc}") from None


# Published coefficient estimates, used as default plant values.
PUBLISHED_PLANT = SurrogatePlant(-0.6109, 3.7923, 39.7772, -0.4505, 0.7690, -0.6267, -6.9412)


@dataclass(frozen=True)
class OlsFit:
    names: tuple
    coef: np.ndarray
    std_err: np.ndarray
    t_stat: np.ndarray
    p_value: np.ndarray
    r2: float
    sigma2: float
    n: int

    def __getitem__(self, name: str) -> float:
        return float(self.coef[self.names.index(name)])

    @property
    def significant(self) -> np.ndarray:
        return self.p_value < SIGNIFICANCE

    def predict(self, X) -> np.ndarray:
        return np.asarray(X, dtype=np.float64) @ self.coef

    def to_dict(self) -> dict:
        return {
            "names": list(self.names),
            "coef": self.coef.tolist(),
            "std_err": self.std_err.tolist(),
            "t_stat": self.t_stat.tolist(),
            "p_value": self.p_value.tolist(),
            "r2": self.r2,
            "sigma2": self.sigma2,
            "n": self.n,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "OlsFit":
        arr = lambda k: np.array(d[k], dtype=np.float64)  # noqa: E731
        return cls(tuple(d["names"]), arr("coef"), arr("std_err"), arr("t_stat"), arr("p_value"),
                   float(d["r2"]), float(d["sigma2"]), int(d["n"]))


def fit_ols(X, y, names: Sequence[str] | None = None) -> OlsFit:
    """Least squares via the normal equations ``(X^T X) b = X^T y``.

    ``X`` must already contain the intercept column. The Gram matrix is
    Cholesky-factored; designs with condition number above 1e12 are refused.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    if X.ndim != 2 or X.shape[0] != y.shape[0]:
        raise ValidationError(f"design {X.shape} and response {y.shape} do not match")
    n, p = X.shape
    if n <= p:
        raise TooFewRows(f"need more rows than columns, got n={n}, p={p}")
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
        raise ValidationError("design and response must be finite")
    gram = X.T @ X
    cond = np.linalg.cond(gram)
    if not cond <= MAX_CONDITION:
        raise SingularDesign(f"normal matrix is ill-conditioned (condition number {cond:.3g})")
    factor = linalg.cho_factor(gram, lower=True)
    beta = linalg.cho_solve(factor, X.T @ y)
    gram_inv = linalg.cho_solve(factor, np.eye(p))

    resid = y - X @ beta
    ss_res = float(resid @ resid)
    dev = y - y.mean()
    ss_tot = float(dev @ dev)
    r2 = 1.0 if ss_tot == 0.0 else 1.0 - ss_res / ss_tot
    dof = n - p
    sigma2 = ss_res / dof
    se = np.sqrt(sigma2 * np.diag(gram_inv))
    with np.errstate(divide="ignore", invalid="ignore"):
        t = np.where(se > 0, beta / se, np.where(beta == 0, 0.0, np.copysign(np.inf, beta)))
    pval = np.clip(2.0 * stats.t.sf(np.abs(t), dof), 0.0, 1.0)
    if names is None:
        names = tuple(f"b{i}" for i in range(p))
    return OlsFit(tuple(names), beta, se, t, pval, r2, sigma2, n)


def peak_power_design(sessions: Sequence[ChargingSession]) -> np.ndarray:
    return np.array([[s.soc_start, s.battery_temp, 1.0] for s in sessions], dtype=np.float64).reshape(-1, 3)


def charge_time_design(sessions: Sequence[ChargingSession]) -> np.ndarray:
    return np.array([[s.soc_start, s.soc_end, s.battery_temp, 1.0] for s in sessions], dtype=np.float64).reshape(-1, 4)


def fit_peak_power(sessions: Sequence[ChargingSession]) -> OlsFit:
    if len(sessions) < 4:
        raise TooFewRows(f"peak-power model needs at least 4 sessions, got {len(sessions)}")
    y = [s.peak_power for s in sessions]
    return fit_ols(peak_power_design(sessions), y, PEAK_NAMES)


def fit_charge_time(sessions: Sequence[ChargingSession]) -> OlsFit:
    if len(sessions) < 5:
        raise TooFewRows(f"charge-time model needs at least 5 sessions, got {len(sessions)}")
    y = [s.charge_time for s in sessions]
    return fit_ols(charge_time_design(sessions), y, TIME_NAMES)


def predict_charging(fit_p: OlsFit, fit_t: OlsFit, soc_start: float, soc_end: float, battery_temp: float) -> tuple[float, float]:
    """Peak power (kW) and charge time (min) for one prospective session.

    Emits a warning when inputs leave the range the models were built for.
    """
    for name, v, (lo, hi) in (("soc_start", soc_start, SOC_RANGE), ("soc_end", soc_end, SOC_RANGE),
                              ("battery_temp", battery_temp, TEMP_RANGE)):
        if not lo <= v <= hi:
            warnings.warn(f"{name}={v} is outside the validity range [{lo}, {hi}]", stacklevel=2)
    peak = float(np.dot(fit_p.coef, [soc_start, battery_temp, 1.0]))
    time = float(np.dot(fit_t.coef, [soc_start, soc_end, battery_temp, 1.0]))
    return peak, time


def charging_trajectory(fit_p: OlsFit, fit_t: OlsFit, soc, temps, soc_end: float = 100.0) -> tuple[np.ndarray, np.ndarray]:
    """Peak power and charge time if charging began at each point of a drive,
    using the drive's battery level and a (rolled-out) temperature trace."""
    soc = np.asarray(soc, dtype=np.float64)
    temps = np.asarray(temps, dtype=np.float64)
    ones = np.ones_like(soc)
    peak = np.column_stack([soc, temps, ones]) @ fit_p.coef
    time = np.column_stack([soc, np.full_like(soc, soc_end), temps, ones]) @ fit_t.coef
    return peak, time


# --- files -----------------------------------------------------------------------


def read_charging_csv(path: str | Path) -> list[ChargingSession]:
    out = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(h.strip() for h in header) != CHARGING_CSV_HEADER:
            raise CsvFormatError(f"{path}: expected header {','.join(CHARGING_CSV_HEADER)}")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(CHARGING_CSV_HEADER):
                raise CsvFormatError(f"{path}:{lineno}: expected {len(CHARGING_CSV_HEADER)} fields")
            vals = [parse_float(v, where=f" ({path}:{lineno})") for v in row[1:]]
            out.append(ChargingSession(*vals, session_id=row[0]))
    return out


def write_charging_csv(sessions: Sequence[ChargingSession], path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CHARGING_CSV_HEADER)
        for s in sessions:
            w.writerow([s.session_id, *(format_float(v) for v in
                        (s.soc_start, s.soc_end, s.battery_temp, s.peak_power, s.charge_time))])


def save_fits(fit_p: OlsFit, fit_t: OlsFit, path: str | Path) -> None:
    doc = {"peak_power": fit_p.to_dict(), "charge_time": fit_t.to_dict()}
    Path(path).write_text(json.dumps(doc, indent=1) + "\n", encoding="utf-8")


def load_fits(path: str | Path) -> tuple[OlsFit, OlsFit]:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    try:
        return OlsFit.from_dict(doc["peak_power"]), OlsFit.from_dict(doc["charge_time"])
    except (KeyError, TypeError, ValueError) as exc:
        raise ValidationError(f"{path}: malformed fit file ({exc})") from None


def write_fit_report(fits: dict[str, OlsFit], path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["model", "coefficient", "estimate", "std_error", "t_stat", "p_value",
                    "significant_p05", "r_squared", "n"])
        for model, fit in fits.items():
            for i, name in enumerate(fit.names):
                w.writerow([model, name, format_float(fit.coef[i]), format_float(fit.std_err[i]),
                            format_float(fit.t_stat[i]), format_float(fit.p_value[i]),
                            int(fit.significant[i]), format_float(fit.r2), fit.n])
