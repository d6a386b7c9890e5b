import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lifenet.core import BATTERY_TEMP, DriveSession, NormStats
from lifenet.datagen import default_physics, oracle_rhs, sample_profile, simulate_cell
from lifenet.errors import DivergedRollout, NonMonotonicTime, ValidationError
from lifenet.integrator import euler_rollout, rollout_and_score
from lifenet.losses import _rollout_fast
from lifenet.nn import MlpArch, MlpModel, mlp_forward, mlp_init

from conftest import make_session


def _constant_model(c):
    return MlpModel(MlpArch(hidden_layers=0), (np.zeros((1, 6)),), (np.array([c]),))


def test_zero_network_is_constant():
    s = make_session("a", [0, 1, 2.5, 7], [5, 6, 7, 8])
    r = euler_rollout(_constant_model(0.0), s)
    assert np.all(r.predicted_temps == 5.0) and r.final_temp == 5.0


def test_constant_network_dyadic_exact():
    s = make_session("a", [0, 0.5, 1.5, 3.5, 4.0], [0] * 5)
    r = euler_rollout(_constant_model(0.25), s, u0=1.0)
    assert r.predicted_temps.tolist() == [1.0, 1.125, 1.375, 1.875, 2.0]


def test_one_step_session():
    s = make_session("a", [0, 2.0], [3.0, 0.0])
    assert euler_rollout(_constant_model(1.5), s).predicted_temps.tolist() == [3.0, 6.0]


def test_explicit_u0_overrides_record():
    s = make_session("a", [0, 1], [3.0, 0.0])
    assert euler_rollout(_constant_model(0.0), s, u0=-2.0).final_temp == -2.0


def test_teacher_forcing_of_environment(rng):
    s = make_session("a", np.arange(6.0), np.zeros(6), rng)
    seen = []

    def rhs(x):
        seen.append(x.copy())
        return 1.0

    r = euler_rollout(rhs, s, u0=10.0)
    for i, x in enumerate(seen):
        assert np.array_equal(x[:BATTERY_TEMP], s.data[i, :BATTERY_TEMP])
        assert x[BATTERY_TEMP] == r.predicted_temps[i]


def test_rejects_non_monotonic():
    with pytest.raises(NonMonotonicTime):
        euler_rollout(_constant_model(0.0), make_session("a", [0, 2, 1], [0, 0, 0]))


def test_rejects_nan_u0():
    with pytest.raises(ValidationError):
        euler_rollout(_constant_model(0.0), make_session("a", [0, 1], [0, 0]), u0=float("nan"))


def test_divergence_reports_step():
    with pytest.raises(DivergedRollout) as exc:
        euler_rollout(_constant_model(3000.0), make_session("a", [0, 1, 2, 3, 4], [0] * 5))
    assert exc.value.step == 4


def test_fast_rollout_matches_reference(rng):
    norm = NormStats(rng.normal(0, 5, 6), rng.uniform(1, 5, 6), target_scale=0.01)
    m = mlp_init(MlpArch(hidden_layers=3, hidden_size=9), 4, norm)
    s = make_session("a", np.arange(0, 50, 2.0), np.full(25, 20.0), rng)
    ref = euler_rollout(m, s).predicted_temps
    fast = _rollout_fast(m, s.data, 20.0)
    assert np.allclose(ref, fast, rtol=0, atol=1e-10)


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**31 - 1), st.integers(2, 40))
def test_additivity_bit_level(seed, n):
    rng = np.random.default_rng(seed)
    norm = NormStats(rng.normal(0, 5, 6), rng.uniform(1, 5, 6), target_scale=0.01)
    m = mlp_init(MlpArch(hidden_layers=2, hidden_size=5), seed, norm)
    t = np.concatenate([[0.0], np.cumsum(rng.uniform(0.1, 5, n - 1))])
    s = make_session("a", t, rng.normal(20, 1, n), rng)
    u = euler_rollout(m, s).predicted_temps
    for i in range(n - 1):
        x = s.data[i].copy()
        x[BATTERY_TEMP] = u[i]
        assert u[i + 1] == u[i] + (t[i + 1] - t[i]) * mlp_forward(m, x)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(0.01, 100), min_size=1, max_size=30), st.floats(-5, 5), st.floats(-50, 50))
def test_constant_rhs_sums_steps(hs, c, u0):
    t = np.concatenate([[0.0], np.cumsum(hs)])
    s = make_session("a", t, np.zeros(t.size))
    r = euler_rollout(lambda x: c, s, u0=u0)
    assert r.final_temp == pytest.approx(u0 + c * float(np.sum(np.diff(t))), rel=1e-12, abs=1e-9)


def test_euler_with_oracle_is_first_order():
    p = default_physics()
    prof = sample_profile(3, duration=1800.0, step=10.0)
    ref = simulate_cell(p, prof, 20.0, substeps=20)
    rhs = oracle_rhs(p)
    errs = []
    for stride in (4, 2, 1):
        d = ref.data[::stride]
        r = euler_rollout(rhs, DriveSession("x", d))
        errs.append(np.abs(r.predicted_temps - d[:, BATTERY_TEMP]).max())
    assert errs[1] <= errs[0] / 2 * 1.1 and errs[2] <= errs[1] / 2 * 1.1


def test_rollout_and_score(rng):
    s = make_session("a", [0, 1, 2], [0, 1, 2])
    r, mt = rollout_and_score(_constant_model(1.0), s)
    assert mt.mse == 0.0 and r.final_temp == 2.0
