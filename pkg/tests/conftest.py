import numpy as np
import pytest

from lifenet.core import Dataset, DriveSession, NormStats
from lifenet.datagen import generate_dataset


def central_fd(f, theta, step=1e-6, coords=None):
    """Plain central differences of a scalar function, coordinate by coordinate."""
    theta = np.asarray(theta, dtype=np.float64)
    coords = range(theta.size) if coords is None else coords
    out = []
    for i in coords:
        e = np.zeros_like(theta)
        e[i] = step
        out.append((f(theta + e) - f(theta - e)) / (2 * step))
    return np.array(out)


def rel_err(a, b):
    a, b = np.asarray(a), np.asarray(b)
    scale = max(np.abs(a).max(), np.abs(b).max())
    return 0.0 if scale == 0 else float(np.abs(a - b).max() / scale)


def make_session(sid, t, u, rng=None, env=None):
    """Session with the given times/temperatures and random (or given) environment."""
    t = np.asarray(t, dtype=np.float64)
    n = t.size
    rng = rng or np.random.default_rng(0)
    d = np.empty((n, 6))
    d[:, 0] = t
    d[:, 1:5] = rng.normal([30, 60, 70, 10], [20, 20, 10, 5], size=(n, 4)) if env is None else env
    d[:, 5] = u
    return DriveSession(sid, d)


@pytest.fixture(scope="session")
def small_dataset():
    return generate_dataset(6, seed=11, duration_range=(600.0, 900.0))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def random_norm(rng):
    return NormStats(rng.normal(0, 3, 6), rng.uniform(0.5, 4.0, 6))


# --- acceptance summary -----------------------------------------------------------

_ACCEPTANCE: dict = {}


@pytest.fixture
def acceptance():
    """Record one PASS/FAIL line per acceptance criterion; printed at the end of the run."""

    def record(tag: str, passed: bool, detail: str) -> None:
        line = f"{'PASS' if passed else 'FAIL'} {tag}: {detail}"
        _ACCEPTANCE[tag] = line
        print(line)

    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for tag in sorted(_ACCEPTANCE, key=lambda t: int(t.split("-")[1])):
            terminalreporter.write_line(_ACCEPTANCE[tag])
