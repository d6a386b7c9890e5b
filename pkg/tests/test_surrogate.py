import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from lifenet.datagen import generate_charging_sessions
from lifenet.errors import SingularDesign, TooFewRows, ValidationError
from lifenet.surrogate import (
    PUBLISHED_PLANT,
    ChargingSession,
    SurrogatePlant,
    charging_trajectory,
    fit_charge_time,
    fit_ols,
    fit_peak_power,
    load_fits,
    predict_charging,
    read_charging_csv,
    save_fits,
    write_charging_csv,
    write_fit_report,
)


class TestOls:
    def test_exact_line(self):
        X = np.column_stack([[0.0, 1, 2, 3], np.ones(4)])
        fit = fit_ols(X, [1.0, 3, 5, 7])
        assert np.allclose(fit.coef, [2, 1], atol=1e-12)
        assert fit.r2 == 1.0

    def test_matches_linregress(self, rng):
        x = rng.uniform(0, 10, 30)
        y = 1.5 * x - 2 + rng.normal(0, 2, 30)
        fit = fit_ols(np.column_stack([x, np.ones(30)]), y)
        ref = stats.linregress(x, y)
        assert fit.coef[0] == pytest.approx(ref.slope, rel=1e-10)
        assert fit.coef[1] == pytest.approx(ref.intercept, rel=1e-10)
        assert fit.std_err[0] == pytest.approx(ref.stderr, rel=1e-8)
        assert fit.p_value[0] == pytest.approx(ref.pvalue, rel=1e-6, abs=1e-300)
        assert fit.r2 == pytest.approx(ref.rvalue**2, rel=1e-10)

    def test_matches_lstsq(self, rng):
        X = np.column_stack([rng.normal(size=(50, 3)), np.ones(50)])
        y = rng.normal(size=50)
        assert np.allclose(fit_ols(X, y).coef, np.linalg.lstsq(X, y, rcond=None)[0], rtol=0, atol=1e-10)

    def test_singular(self):
        x = np.arange(6.0)
        with pytest.raises(SingularDesign):
            fit_ols(np.column_stack([x, 2 * x, np.ones(6)]), x)

    def test_too_few_rows(self):
        with pytest.raises(TooFewRows):
            fit_ols(np.ones((2, 2)), [1.0, 2.0])

    def test_constant_response(self):
        X = np.column_stack([np.arange(5.0), np.ones(5)])
        fit = fit_ols(X, np.full(5, 3.0))
        assert fit.r2 == 1.0 and np.allclose(fit.coef, [0, 3], atol=1e-12)

    def test_mismatched_rows(self):
        with pytest.raises(ValidationError):
            fit_ols(np.ones((5, 2)), [1.0, 2.0])

    @settings(max_examples=50, deadline=None)
    @given(st.integers(0, 2**31 - 1))
    def test_residual_orthogonal_to_design(self, seed):
        rng = np.random.default_rng(seed)
        X = np.column_stack([rng.uniform(-5, 5, (20, 2)), np.ones(20)])
        y = rng.normal(size=20)
        fit = fit_ols(X, y)
        assert np.abs(X.T @ (y - X @ fit.coef)).max() < 1e-9
        assert 0.0 <= fit.r2 <= 1.0
        assert np.all((0 <= fit.p_value) & (fit.p_value <= 1))


class TestChargingModels:
    def test_planted_recovery(self):
        sess = generate_charging_sessions(50, seed=1)
        fp, ft = fit_peak_power(sess), fit_charge_time(sess)
        assert np.allclose(fp.coef, [PUBLISHED_PLANT.c_soc, PUBLISHED_PLANT.c_T, PUBLISHED_PLANT.o], atol=1e-6)
        assert np.allclose(ft.coef, [PUBLISHED_PLANT.c_soc_s, PUBLISHED_PLANT.c_soc_e, PUBLISHED_PLANT.c_T_t, PUBLISHED_PLANT.o_t], atol=1e-6)
        assert fp.names == ("c_soc", "c_T", "o")

    def test_minimum_rows(self):
        sess = generate_charging_sessions(4, seed=1)
        fit_peak_power(sess)
        with pytest.raises(TooFewRows):
            fit_charge_time(sess)
        with pytest.raises(TooFewRows):
            fit_peak_power(sess[:3])

    def test_significance_flags(self):
        sess = generate_charging_sessions(200, seed=2, noise_sigma=0.5)
        fit = fit_peak_power(sess)
        assert fit.significant.all()

    def test_predict(self):
        sess = generate_charging_sessions(30, seed=3)
        fp, ft = fit_peak_power(sess), fit_charge_time(sess)
        peak, t = predict_charging(fp, ft, 20.0, 80.0, 25.0)
        assert peak == pytest.approx(PUBLISHED_PLANT.peak_power(20.0, 25.0), abs=1e-6)
        assert t == pytest.approx(PUBLISHED_PLANT.charge_time(20.0, 80.0, 25.0), abs=1e-6)

    def test_predict_warns_out_of_range(self):
        sess = generate_charging_sessions(30, seed=3)
        fp, ft = fit_peak_power(sess), fit_charge_time(sess)
        with pytest.warns(UserWarning):
            predict_charging(fp, ft, 20.0, 80.0, 45.0)
        with warnings.catch_warnings():
            warnings.simplefilter("error")
            predict_charging(fp, ft, 20.0, 80.0, 20.0)

    def test_trajectory(self):
        sess = generate_charging_sessions(30, seed=3)
        fp, ft = fit_peak_power(sess), fit_charge_time(sess)
        peak, t = charging_trajectory(fp, ft, [30.0, 40.0], [20.0, 21.0], soc_end=90.0)
        assert peak[1] == pytest.approx(PUBLISHED_PLANT.peak_power(40.0, 21.0), abs=1e-6)
        assert t[0] == pytest.approx(PUBLISHED_PLANT.charge_time(30.0, 90.0, 20.0), abs=1e-6)


class TestSessions:
    @pytest.mark.parametrize("kw", [
        {"soc_start": 50.0, "soc_end": 40.0},
        {"peak_power": -1.0},
        {"charge_time": 0.0},
        {"battery_temp": float("nan")},
    ])
    def test_invalid(self, kw):
        base = dict(soc_start=20.0, soc_end=80.0, battery_temp=20.0, peak_power=50.0, charge_time=30.0)
        base.update(kw)
        with pytest.raises(ValidationError):
            ChargingSession(**base)

    def test_plant_dict_roundtrip(self):
        assert SurrogatePlant.from_dict(PUBLISHED_PLANT.to_dict()) == PUBLISHED_PLANT

    def test_plant_dict_malformed(self):
        with pytest.raises(ValidationError):
            SurrogatePlant.from_dict({"peak_power": {}})


class TestFiles:
    def test_csv_roundtrip(self, tmp_path):
        sess = generate_charging_sessions(10, seed=0, noise_sigma=1.0)
        write_charging_csv(sess, tmp_path / "c.csv")
        assert read_charging_csv(tmp_path / "c.csv") == sess

    def test_fits_roundtrip(self, tmp_path):
        sess = generate_charging_sessions(20, seed=0, noise_sigma=1.0)
        fp, ft = fit_peak_power(sess), fit_charge_time(sess)
        save_fits(fp, ft, tmp_path / "f.json")
        bp, bt = load_fits(tmp_path / "f.json")
        assert np.array_equal(bp.coef, fp.coef) and bt.names == ft.names and bt.r2 == ft.r2

    def test_report_rows(self, tmp_path):
        sess = generate_charging_sessions(20, seed=0, noise_sigma=1.0)
        write_fit_report({"peak_power": fit_peak_power(sess), "charge_time": fit_charge_time(sess)}, tmp_path / "r.csv")
        lines = (tmp_path / "r.csv").read_text().splitlines()
        assert len(lines) == 1 + 3 + 4 and lines[0].startswith("model,coefficient,estimate")
