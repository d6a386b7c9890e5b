"""Synthetic drive and charging data from a lumped thermal model of the pack.

The cell temperature obeys

    m c dT/dt = I^2 R + T dS I / (n F) - A h (T - T_amb),   I = 1000 P / V_nom

with the convective term dissipative (heat leaves the cell when it is warmer
than ambient). Drives are integrated with classical RK4 on a sub-grid of the
sampling grid and then sampled, which makes the generated sessions an exact
reference for everything downstream.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, fields
from importlib import resources
from pathlib import Path

import numpy as np

from .core import (
    BATTERY_TEMP,
    KELVIN_OFFSET,
    OUTSIDE_TEMP,
    POWER,
    Dataset,
    DriveSession,
)
from .errors import ProfileOutOfRange, ValidationError
from .surrogate import PUBLISHED_PLANT, ChargingSession, SurrogatePlant

# value ranges of the training drives
POWER_RANGE = (-68.0, 166.0)
SPEED_RANGE = (0.0, 167.0)
LEVEL_RANGE = (10.0, 100.0)
OUTSIDE_RANGE = (-9.5, 35.5)
BATTERY_TEMP_RANGE = (-5.79, 33.9)

DEFAULT_CAPACITY_KWH = 60.0
MAX_REDRAWS = 200


@dataclass(frozen=True)
class PhysicsParams:
    m: float
    c_cell: float
    R: float
    dS: float
    n: float
    F: float
    A: float
    h_conv: float
    V_nom: float

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if not np.isfinite(v):
                raise ValidationError(f"physics parameter {f.name} must be finite")
            if f.name != "dS" and v <= 0:
                raise ValidationError(f"physics parameter {f.name} must be positive, got {v}")

    @classmethod
    def from_dict(cls, d: dict) -> "PhysicsParams":
        names = {f.name for f in fields(cls)}
        missing = names - set(d)
        if missing:
            raise ValidationError(f"physics parameters missing: {sorted(missing)}")
        return cls(**{k: float(d[k]) for k in names})

    def to_dict(self) -> dict:
        return asdict(self)

    @property
    def time_constant(self) -> float:
        return self.m * self.c_cell / (self.A * self.h_conv)


def default_physics() -> PhysicsParams:
    text = resources.files("lifenet").joinpath("data/physics_default.json").read_text(encoding="utf-8")
    return PhysicsParams.from_dict(json.loads(text))


def load_physics(path: str | Path | None) -> PhysicsParams:
    if path is None:
        return default_physics()
    return PhysicsParams.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def cell_rhs(p: PhysicsParams, T_cell: float, T_amb: float, power: float) -> float:
    """dT/dt in K/s for cell and ambient temperatures in K and power in kW."""
    current = 1000.0 * power / p.V_nom
    heat = current * current * p.R + T_cell * p.dS * current / (p.n * p.F) - p.A * p.h_conv * (T_cell - T_amb)
    return heat / (p.m * p.c_cell)


def oracle_rhs(p: PhysicsParams):
    """The true temperature derivative as a function of the model input
    vector (degC/s); a drop-in replacement for the network in a rollout."""

    def rhs(x: np.ndarray) -> float:
        return cell_rhs(p, x[BATTERY_TEMP] + KELVIN_OFFSET, x[OUTSIDE_TEMP] + KELVIN_OFFSET, x[POWER])

    return rhs


@dataclass(frozen=True)
class DriveProfile:
    """Environmental trajectories on a uniform knot grid ``k * step``.

    Power and speed are linear between knots; battery level is stored at the
    knots. Outside temperature is constant over a drive.
    """

    duration: float
    step: float
    power: np.ndarray
    speed: np.ndarray
    battery_level: np.ndarray
    outside_temp: float
    seed: int = 0

    def __post_init__(self):
        n = _n_steps(self.duration, self.step)
        for name in ("power", "speed", "battery_level"):
            arr = np.array(getattr(self, name), dtype=np.float64)
            if arr.shape != (n + 1,):
                raise ValidationError(f"profile {name} must have {n + 1} knots, got {arr.shape}")
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def n_steps(self) -> int:
        return _n_steps(self.duration, self.step)

    @property
    def times(self) -> np.ndarray:
        return self.step * np.arange(self.n_steps + 1)

    def check_ranges(self) -> None:
        for name, arr, (lo, hi) in (
            ("power", self.power, POWER_RANGE),
            ("speed", self.speed, SPEED_RANGE),
            ("battery_level", self.battery_level, LEVEL_RANGE),
            ("outside_temp", np.array([self.outside_temp]), OUTSIDE_RANGE),
        ):
            if not (np.all(np.isfinite(arr)) and arr.min() >= lo and arr.max() <= hi):
                raise ProfileOutOfRange(f"{name} leaves [{lo}, {hi}]: min {arr.min()}, max {arr.max()}")


def _n_steps(duration: float, step: float) -> int:
    if not (step > 0 and duration > 0):
        raise ValidationError("duration and step must be positive")
    n = int(round(duration / step))
    if n < 2 or abs(n * step - duration) > 1e-9 * duration:
        raise ValidationError(f"duration {duration} must be a whole multiple (>= 2) of step {step}")
    return n


def _ar1(rng: np.random.Generator, n: int, phi: float, mean: float, sd: float, start: float) -> np.ndarray:
    x = np.empty(n)
    x[0] = start
    innov = sd * np.sqrt(1.0 - phi * phi) * rng.standard_normal(n - 1)
    for k in range(1, n):
        x[k] = mean + phi * (x[k - 1] - mean) + innov[k - 1]
    return x


def coulomb_count(power: np.ndarray, step: float, level0: float, capacity_kwh: float = DEFAULT_CAPACITY_KWH) -> np.ndarray:
    """Battery level (percent) from trapezoid-integrated power, clipped to range."""
    energy_kwh = np.concatenate([[0.0], np.cumsum(0.5 * (power[1:] + power[:-1]) * step / 3600.0)])
    return np.clip(level0 - 100.0 * energy_kwh / capacity_kwh, *LEVEL_RANGE)


def sample_profile(seed: int, duration: float, step: float, capacity_kwh: float = DEFAULT_CAPACITY_KWH) -> DriveProfile:
    """Random but smooth drive: mean-reverting AR(1) speed and power series
    clipped to the training ranges, battery level by coulomb counting."""
    n = _n_steps(duration, step) + 1
    rng = np.random.default_rng(seed)
    # correlation time of ~5 min regardless of the sampling step
    phi = float(np.exp(-step / 300.0))
    speed = np.clip(_ar1(rng, n, phi, 70.0, 40.0, rng.uniform(0.0, 30.0)), *SPEED_RANGE)
    drive = _ar1(rng, n, phi, 0.0, 25.0, 0.0)
    power = np.clip(0.4 * speed + drive, *POWER_RANGE)
    level0 = rng.uniform(40.0, 100.0)
    outside = float(rng.uniform(*OUTSIDE_RANGE))
    level = coulomb_count(power, step, level0, capacity_kwh)
    return DriveProfile(float(duration), float(step), power, speed, level, outside, seed)


def rk4_temperatures(p: PhysicsParams, profile: DriveProfile, T0: float, substeps: int = 10) -> np.ndarray:
    """Cell temperature (degC) at every knot, RK4 with ``substeps`` per knot
    interval. Power is linear inside each interval, so the right-hand side is
    smooth on every RK4 step."""
    if substeps < 1:
        raise ValidationError("substeps must be >= 1")
    dt = profile.step / substeps
    t_amb = profile.outside_temp + KELVIN_OFFSET
    pw = profile.power
    n = profile.n_steps
    out = np.empty(n + 1)
    T = T0 + KELVIN_OFFSET
    out[0] = T0
    for k in range(n):
        p0, p1 = pw[k], pw[k + 1]
        for j in range(substeps):
            a = j / substeps
            b = (j + 0.5) / substeps
            c = (j + 1) / substeps
            pa = p0 + a * (p1 - p0)
            pb = p0 + b * (p1 - p0)
            pc = p0 + c * (p1 - p0)
            k1 = cell_rhs(p, T, t_amb, pa)
            k2 = cell_rhs(p, T + 0.5 * dt * k1, t_amb, pb)
            k3 = cell_rhs(p, T + 0.5 * dt * k2, t_amb, pb)
            k4 = cell_rhs(p, T + dt * k3, t_amb, pc)
            T = T + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        out[k + 1] = T - KELVIN_OFFSET
    return out


def simulate_cell(p: PhysicsParams, profile: DriveProfile, T0: float, session_id: str = "drive", substeps: int = 10) -> DriveSession:
    profile.check_ranges()
    temps = rk4_temperatures(p, profile, T0, substeps)
    data = np.column_stack([
        profile.times,
        profile.power,
        profile.speed,
        profile.battery_level,
        np.full(profile.n_steps + 1, profile.outside_temp),
        temps,
    ])
    return DriveSession(session_id, data)


def generate_dataset(
    n_sessions: int,
    seed: int,
    p: PhysicsParams | None = None,
    step: float = 10.0,
    duration_range: tuple[float, float] = (1800.0, 5400.0),
) -> Dataset:
    """``n_sessions`` simulated drives with per-session seeds spawned from ``seed``.

    Durations are drawn uniformly from ``duration_range`` and rounded to the
    sampling step; the start temperature sits a few degrees around the
    outside temperature. Drives whose simulated battery temperature leaves
    the battery range are redrawn.
    """
    if n_sessions < 1:
        raise ValidationError("n_sessions must be >= 1")
    p = p or default_physics()
    children = np.random.SeedSequence(seed).spawn(n_sessions)
    sessions = []
    for i, child in enumerate(children):
        rng = np.random.default_rng(child)
        lo, hi = duration_range
        duration = step * max(2, int(round(rng.uniform(lo, hi) / step)))
        for _ in range(MAX_REDRAWS):
            prof_seed = int(rng.integers(0, 2**63 - 1))
            profile = sample_profile(prof_seed, duration, step)
            T0 = float(np.clip(profile.outside_temp + rng.uniform(-3.0, 8.0), *BATTERY_TEMP_RANGE))
            session = simulate_cell(p, profile, T0, session_id=f"drive-{i:03d}")
            temps = session.temps
            if temps.min() >= BATTERY_TEMP_RANGE[0] and temps.max() <= BATTERY_TEMP_RANGE[1]:
                break
        else:
            raise ProfileOutOfRange(f"drive {i}: no draw kept the battery temperature in range; check the physics parameters")
        sessions.append(session)
    return Dataset(tuple(sessions))


def generate_charging_sessions(
    n: int,
    seed: int,
    plant: SurrogatePlant = PUBLISHED_PLANT,
    noise_sigma: float = 0.0,
) -> list[ChargingSession]:
    """Charging events whose statistics follow the planted linear models plus
    Gaussian noise. Draws violating the session invariants are redrawn."""
    if n < 0 or noise_sigma < 0:
        raise ValidationError("n and noise_sigma must be non-negative")
    rng = np.random.default_rng(seed)
    out: list[ChargingSession] = []
    while len(out) < n:
        soc_s = rng.uniform(10.0, 60.0)
        soc_e = rng.uniform(soc_s + 30.0, 100.0)
        temp = rng.uniform(5.0, BATTERY_TEMP_RANGE[1])
        peak = plant.peak_power(soc_s, temp) + noise_sigma * rng.standard_normal()
        ctime = plant.charge_time(soc_s, soc_e, temp) + noise_sigma * rng.standard_normal()
        if peak <= 0 or ctime <= 0:
            continue
        out.append(ChargingSession(soc_s, soc_e, temp, peak, ctime, session_id=f"charge-{len(out):04d}"))
    return out
