import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lifenet.core import BATTERY_TEMP, NormStats
from lifenet.errors import DivergedRollout, EmptyBatch, ValidationError
from lifenet.gradcheck import min_preactivation
from lifenet.losses import (
    fd_arrays,
    fd_targets,
    loss_no,
    loss_no_arrays,
    loss_reg,
    loss_reg_arrays,
    loss_ts,
    _rollout_fast,
    loss_ts_arrays,
    ts_chunks,
)
from lifenet.nn import MlpArch, MlpModel, flatten, forward_batch, mlp_init, smoothness_batch, unflatten

from conftest import central_fd, make_session, rel_err


def _model(rng, layers=2, hidden=6, scale=None):
    norm = NormStats(np.array([50, 30, 60, 70, 10, 20.0]), np.array([30, 20, 20, 10, 5, 5.0]),
                     target_scale=float(rng.uniform(0.05, 0.5)) if scale is None else scale)
    m = mlp_init(MlpArch(hidden_layers=layers, hidden_size=hidden), seed=int(rng.integers(1 << 30)), norm=norm)
    return m.with_params([p + (0.05 * rng.normal(size=p.shape) if p.ndim == 1 else 0) for p in m.params])


def _constant_model(c):
    arch = MlpArch(hidden_layers=0)
    return MlpModel(arch, (np.zeros((1, 6)),), (np.array([c]),))


class TestFdTargets:
    def test_values(self):
        s = make_session("a", [0, 2, 3], [10, 14, 13])
        tg = fd_targets(s)
        assert [t.target_derivative for t in tg] == [2.0, -1.0]
        assert [t.dt for t in tg] == [2.0, 1.0]
        assert np.array_equal(tg[0].input, s.data[0])

    def test_session_of_two(self):
        assert len(fd_targets(make_session("a", [0, 1], [0, 1]))) == 1


class TestLossNo:
    def test_constant_model_value_and_grad(self):
        s = make_session("a", [0, 1, 2], [0, 1, 3])
        lv = loss_no(_constant_model(0.5), fd_targets(s))
        # residuals 0.5-1 and 0.5-2, sum-reduced
        assert lv.value == 0.25 + 2.25
        assert lv.grad[1][0] == 2 * (-0.5) + 2 * (-1.5)
        assert lv.n_terms == 2 and lv.mean == 1.25

    def test_perfect_model_zero_loss(self):
        s = make_session("a", [0, 1, 2], [0, 0.5, 1.0])
        lv = loss_no(_constant_model(0.5), fd_targets(s))
        assert lv.value == 0.0 and all(np.all(g == 0) for g in lv.grad)

    def test_empty_batch(self):
        with pytest.raises(EmptyBatch):
            loss_no(_constant_model(0.0), [])

    def test_gradient(self, rng):
        for _ in range(5):
            m = _model(rng)
            X = m.norm.mean + m.norm.std * rng.standard_normal((6, 6))
            if min_preactivation(m, X) < 1e-4:
                continue
            y = rng.normal(size=6)
            f = lambda th: loss_no_arrays(m.with_params(unflatten(th, m.params)), X, y).value  # noqa: E731
            assert rel_err(flatten(loss_no_arrays(m, X, y).grad), central_fd(f, flatten(m.params))) < 1e-6


class TestLossReg:
    def test_lambda_zero_is_bit_identical(self, rng):
        m = _model(rng)
        X = rng.normal(30, 20, (7, 6))
        y = rng.normal(size=7)
        a, b = loss_no_arrays(m, X, y), loss_reg_arrays(m, X, y, 0.0)
        assert a.value == b.value
        assert all(np.array_equal(p, q) for p, q in zip(a.grad, b.grad))

    def test_adds_mean_penalty(self, rng):
        m = _model(rng)
        X = rng.normal(30, 20, (7, 6))
        y = rng.normal(size=7)
        pen, _ = smoothness_batch(m, X)
        diff = loss_reg_arrays(m, X, y, 0.3).value - loss_no_arrays(m, X, y).value
        assert diff == pytest.approx(0.3 * pen.mean(), rel=1e-10)

    def test_negative_lambda(self, rng):
        with pytest.raises(ValidationError):
            loss_reg(_model(rng), fd_targets(make_session("a", [0, 1], [0, 1])), -1.0)

    def test_constant_model_has_no_penalty(self):
        s = make_session("a", [0, 1, 2], [0, 1, 3])
        assert loss_reg(_constant_model(0.5), fd_targets(s), 10.0).value == 2.5

    def test_gradient(self, rng):
        for _ in range(5):
            m = _model(rng)
            X = m.norm.mean + m.norm.std * rng.standard_normal((5, 6))
            if min_preactivation(m, X) < 1e-4:
                continue
            y = rng.normal(size=5)
            f = lambda th: loss_reg_arrays(m.with_params(unflatten(th, m.params)), X, y, 0.1).value  # noqa: E731
            an = flatten(loss_reg_arrays(m, X, y, 0.1).grad)
            assert rel_err(an, central_fd(f, flatten(m.params))) < 1e-5


class TestLossTs:
    def test_single_step_relates_to_fd_loss(self, rng):
        m = _model(rng)
        s = make_session("a", [0, 3.0], [20.0, 20.5], rng)
        X, y, dt = fd_arrays(s.data)
        expected = dt[0] ** 2 * loss_no_arrays(m, X, y).value
        assert loss_ts(m, s).value == pytest.approx(expected, rel=1e-12)

    def test_perfect_rhs_gives_zero(self):
        s = make_session("a", [0, 1, 2, 4], [1.0, 1.5, 2.0, 3.0])
        assert loss_ts(_constant_model(0.5), s).value == 0.0

    def test_constant_model_closed_form(self):
        # rollout 0, 1, 2, 3 against truth 0, 0, 0, 0 gives 1 + 4 + 9
        s = make_session("a", [0, 1, 2, 3], [0, 0, 0, 0])
        lv = loss_ts(_constant_model(1.0), s)
        assert lv.value == 14.0
        # d/dc sum_k (k c)^2 = 2 c (1 + 4 + 9)
        assert lv.grad[1][0] == pytest.approx(28.0, rel=1e-14)

    def test_feeds_prediction_back(self, rng):
        """A model that depends on temperature makes L_TS differ from a teacher-forced sum."""
        m = _model(rng, scale=0.5)
        s = make_session("a", np.arange(8.0), np.linspace(20, 22, 8), rng)
        X, y, dt = fd_arrays(s.data)
        forced = np.cumsum(dt * forward_batch(m, X)) + s.temps[0]
        forced_loss = float(np.sum((s.temps[1:] - forced) ** 2))
        assert loss_ts(m, s).value != pytest.approx(forced_loss, rel=1e-6)

    def test_gradient(self, rng):
        checked = 0
        while checked < 5:
            m = _model(rng)
            t = np.concatenate([[0], np.cumsum(rng.uniform(0.5, 2, 10))])
            s = make_session("a", t, 20 + rng.normal(0, 0.3, 11), rng)
            f = lambda th: loss_ts(m.with_params(unflatten(th, m.params)), s).value  # noqa: E731
            try:
                an = flatten(loss_ts(m, s).grad)
            except DivergedRollout:
                continue
            assert rel_err(an, central_fd(f, flatten(m.params))) < 1e-5
            checked += 1

    def test_divergence(self):
        s = make_session("a", [0, 1, 2], [0, 0, 0])
        with pytest.raises(DivergedRollout):
            loss_ts(_constant_model(1e5), s)


class TestChunks:
    def test_shared_boundaries(self):
        data = np.arange(22.0).reshape(11, 2)
        chunks = ts_chunks(data, 4)
        assert [c.shape[0] for c in chunks] == [5, 5, 3]
        assert np.array_equal(chunks[0][-1], chunks[1][0])
        assert np.array_equal(chunks[-1][-1], data[-1])

    def test_no_split_when_short(self):
        data = np.zeros((5, 6))
        (c,) = ts_chunks(data, 100)
        assert c.shape == (5, 6)

    def test_invalid(self):
        with pytest.raises(ValidationError):
            ts_chunks(np.zeros((3, 6)), 0)

    @settings(max_examples=100, deadline=None)
    @given(st.integers(2, 60), st.integers(1, 70))
    def test_cover_every_step_once(self, n, k):
        data = np.arange(n, dtype=float)[:, None]
        chunks = ts_chunks(data, k)
        steps = [(c[j, 0], c[j + 1, 0]) for c in chunks for j in range(c.shape[0] - 1)]
        assert steps == [(float(i), float(i + 1)) for i in range(n - 1)]
        assert all(c.shape[0] - 1 <= k for c in chunks)


def test_loss_ts_arrays_rejects_single_sample():
    with pytest.raises(EmptyBatch):
        loss_ts_arrays(_constant_model(0.0), np.zeros((1, 6)))


def test_ts_loss_ignores_recorded_temperature_after_start(rng):
    """Only the first recorded temperature enters the rollout; the rest are targets."""
    m = _model(rng)
    s = make_session("a", np.arange(5.0), np.full(5, 20.0), rng)
    d = s.data.copy()
    d[2:, BATTERY_TEMP] += 1.0
    u = _rollout_fast(m, s.data, 20.0)
    expected = float(np.sum((d[1:, BATTERY_TEMP] - u[1:]) ** 2))
    assert loss_ts_arrays(m, d).value == pytest.approx(expected, rel=1e-12)
