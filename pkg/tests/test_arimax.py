import warnings

import numpy as np
import pytest
from scipy.signal import lfilter
from statsmodels.tsa.stattools import acf as sm_acf, adfuller, pacf as sm_pacf

from ecoforecast import arimax as A


def test_difference_and_roundtrip(rng):
    np.testing.assert_array_equal(A.difference([1, 3, 6, 10], 1), [2, 3, 4])
    np.testing.assert_array_equal(A.difference([1, 3, 6, 10], 2), [1, 1])
    x = rng.normal(size=30)
    for d in (1, 2):
        w = A.difference(x, d)
        np.testing.assert_allclose(A.undifference(w, x[:d], d), x, atol=1e-12)


def test_acf_white_noise_and_ar1():
    r = np.random.default_rng(0)
    x = r.normal(size=4000)
    assert np.all(np.abs(A.acf(x, 10)) < 3 / np.sqrt(x.size))
    ar = lfilter([1], [1, -0.8], r.normal(size=4000))
    assert abs(A.acf(ar, 1)[0] - 0.8) < 0.05
    np.testing.assert_allclose(A.acf(ar, 12), sm_acf(ar, nlags=12, fft=False)[1:], atol=1e-12)


def test_pacf_cutoff_and_oracle():
    r = np.random.default_rng(1)
    ar2 = lfilter([1], [1, -0.5, 0.3], r.normal(size=4000))
    pc = A.pacf(ar2, 8)
    assert abs(pc[1] + 0.3) < 0.05
    assert np.all(np.abs(pc[2:]) < 3 / np.sqrt(4000))
    np.testing.assert_allclose(pc, sm_pacf(ar2, nlags=8, method="ldb")[1:], atol=1e-10)


def test_unit_root_statistic_matches_dickey_fuller():
    r = np.random.default_rng(2)
    x = np.cumsum(r.normal(size=500))
    ref = adfuller(x, maxlag=0, regression="c", autolag=None)[0]
    assert A.unit_root_score(x).stat == pytest.approx(ref, rel=1e-10)


def test_unit_root_monte_carlo():
    rw = sum(not A.unit_root_score(np.cumsum(np.random.default_rng(s).normal(size=500))).stationary
             for s in range(100))
    wn = sum(A.unit_root_score(np.random.default_rng(1000 + s).normal(size=500)).stationary
             for s in range(100))
    assert rw >= 90 and wn >= 90
    with pytest.raises(ValueError):
        A.unit_root_score(np.arange(10.0))


def test_white_noise_model_is_mean_and_variance(rng):
    y = rng.normal(3, 2, 500)
    f = A.fit(y, spec=A.ArimaxSpec(0, 0, 0, 0))
    assert f.mu == pytest.approx(y.mean(), rel=1e-12)
    assert f.sigma2 == pytest.approx(y.var(), rel=1e-12)


def test_irrelevant_exog(rng):
    y = lfilter([1], [1, -0.5], rng.normal(size=2000))
    f = A.fit(y, rng.normal(size=2000), A.ArimaxSpec(1, 0, 0, 1))
    assert abs(f.beta[0]) < 0.1


def test_length_precondition():
    with pytest.raises(ValueError, match="too few"):
        A.fit(np.arange(30.0), np.ones(30), spec=A.ArimaxSpec(1, 0, 1, 1))


def test_ma_fit_css_path_non_increasing():
    e = np.random.default_rng(3).normal(size=1001)
    f = A.fit(e[1:] + 0.5 * e[:-1], spec=A.ArimaxSpec(0, 0, 1, 0))
    assert abs(f.theta[0] - 0.5) < 0.1
    assert np.all(np.diff(f.css_path) <= 0)
    assert f.ma_invertible()


def test_forecast_ar1_by_hand():
    f = A.ArimaxFit(A.ArimaxSpec(1, 0, 0, 0), 0.0, np.array([0.5]), np.zeros(0), np.zeros(0), 1.0, 0.0, 10)
    assert A.forecast(f, [0.3, 2.0]) == 1.0


def test_forecast_armax_by_hand():
    r = np.random.default_rng(4)
    y = r.uniform(1, 3, 10)
    x = r.normal(size=11)
    mu, phi, theta, beta = 0.4, 0.6, 0.3, 0.8
    f = A.ArimaxFit(A.ArimaxSpec(1, 0, 1, 1), mu, np.array([phi]), np.array([theta]),
                    np.array([beta]), 1.0, 0.0, 10)
    e = [0.0]
    for t in range(1, 10):
        e.append(y[t] - mu - phi * y[t - 1] - beta * x[t] - theta * e[t - 1])
    want = mu + phi * y[9] + beta * x[10] + theta * e[9]
    assert A.forecast(f, y, x) == pytest.approx(want, abs=1e-13)


def test_forecast_clamps_at_zero():
    f = A.ArimaxFit(A.ArimaxSpec(1, 0, 0, 0), -5.0, np.array([0.1]), np.zeros(0), np.zeros(0), 1.0, 0.0, 10)
    assert A.forecast(f, [1.0]) == 0.0


def test_forecast_d1_reconstructs_level():
    f = A.ArimaxFit(A.ArimaxSpec(1, 1, 0, 0), 0.0, np.array([0.5]), np.zeros(0), np.zeros(0), 1.0, 0.0, 10)
    # last change 2 -> next change 1 -> level 7 + 1
    assert A.forecast(f, [3.0, 5.0, 7.0]) == pytest.approx(8.0, abs=1e-14)


def test_auto_order_ar2():
    y = lfilter([1], [1, -0.5, 0.3], np.random.default_rng(5).normal(size=2000))
    spec, table = A.auto_order(y, return_table=True)
    assert spec.p in (2, 3) and spec.d == 0
    assert len(table) == 16


def test_auto_order_skips_infeasible_cells():
    y = np.random.default_rng(6).normal(size=60)
    _, table = A.auto_order(y, np.random.default_rng(7).normal(size=(60, 2)), return_table=True)
    assert all(10 * (p + q + 3) < 60 - 3 for p, q in table)


def test_one_step_and_in_sample(rng):
    x = rng.normal(size=400)
    y = 5 + lfilter([1], [1, -0.6], rng.normal(size=400)) + 0.5 * x
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        f = A.fit(y[:300], x[:300], A.ArimaxSpec(1, 0, 0, 1))
    p = A.one_step(f, y, x, first=300)
    assert p.shape == (100,) and np.all(p >= 0)
    loop = [A.forecast(f, y[:t], x[:t + 1]) for t in range(300, 400)]
    np.testing.assert_allclose(p, loop, atol=1e-12)
    ins = A.in_sample(f, y[:300], x[:300])
    assert np.isnan(ins[0]) and np.isfinite(ins[1:]).all()


def test_report_text():
    e = np.random.default_rng(8).normal(size=600)
    f = A.fit(e, spec=A.ArimaxSpec(1, 0, 0, 0))
    text = A.fit_report("L1", f, A.select_d(e)[1])
    assert text.startswith("link=L1\nspec=1,0,0\n") and "sigma2=" in text
