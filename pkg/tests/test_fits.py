import math

import numpy as np
import pytest

from fits import (
    FitError,
    TailFit,
    auto_tail_window,
    fit_linear,
    fit_logistic,
    fit_powerlaw,
    fit_tail,
    k_scaling,
    logistic_model,
    powerlaw_model,
    predict_delta_L,
    tail_model,
)


# -----------------------------
# Logistic
# -----------------------------

def test_logistic_recovers_clean_parameters():
    l = np.arange(1, 51)
    fit = fit_logistic(l, logistic_model(l, 0.1, 0.3))
    assert fit.r0 == pytest.approx(0.1, rel=1e-6)
    assert fit.gamma == pytest.approx(0.3, rel=1e-6)
    assert fit.lstar == pytest.approx(math.log(9) / 0.3, rel=1e-6)
    assert fit.converged
    assert fit.residual < 1e-8


def test_logistic_inflection_from_sixteenth():
    l = np.arange(0, 21)
    fit = fit_logistic(l, logistic_model(l, 1 / 16, 0.5))
    assert fit.lstar == pytest.approx(5.416, abs=1e-3)


def test_logistic_is_stable_under_noise():
    l = np.arange(1, 61)
    clean = logistic_model(l, 0.02, 0.15)
    lstars = []
    for seed in range(20):
        noise = np.random.default_rng(seed).normal(0, 0.01, l.size)
        lstars.append(fit_logistic(l, clean + noise).lstar)
    assert np.median(lstars) == pytest.approx(math.log(49) / 0.15, abs=0.5)


def test_logistic_survives_saturating_rank_curve():
    l = np.arange(1, 11)
    r = np.array([1, 2, 3, 5, 8, 11, 14, 15, 16, 16]) / 16
    fit = fit_logistic(l, r)
    assert np.isfinite(fit.lstar)
    assert 3.0 < fit.lstar < 7.0
    assert fit.residual < 0.2


def test_logistic_rejects_constant_and_short_data():
    with pytest.raises(FitError):
        fit_logistic(np.arange(10), np.full(10, 0.5))
    with pytest.raises(FitError):
        fit_logistic(np.arange(4), np.array([0.1, 0.2, 0.3, 0.4]))


# -----------------------------
# Exponential tail
# -----------------------------

def test_tail_recovers_visible_floor():
    l = np.arange(0, 2001, 10)
    y = tail_model(l, 1e-9, 1e-3, 0.01)
    fit = fit_tail(l, y, (0, 2000))
    assert fit.C == pytest.approx(1e-9, rel=1e-3)
    assert fit.A == pytest.approx(1e-3, rel=1e-3)
    assert fit.k == pytest.approx(0.01, rel=1e-3)
    assert fit.window == (0, 2000)
    assert not fit.singular


def test_tail_pins_absent_floor():
    l = np.arange(20, 101, dtype=float)
    y = 2e-3 * np.exp(-0.05 * l)
    fit = fit_tail(l, y, (20, 100))
    assert fit.C == 0.0
    assert "C" in fit.active
    assert fit.k == pytest.approx(0.05, rel=1e-4)
    assert fit.A == pytest.approx(2e-3, rel=1e-3)


def test_tail_window_errors():
    l = np.arange(1, 20, dtype=float)
    y = tail_model(l, 1e-6, 1e-2, 0.2)
    with pytest.raises(FitError) as info:
        fit_tail(l, y, (100, 200))
    assert info.value.window == (100, 200)
    with pytest.raises(FitError):
        fit_tail(l, y, (1, 3))
    with pytest.raises(FitError):
        fit_tail(l, -y, (1, 19))


def test_auto_tail_window_prefers_table_then_lstar():
    l = np.arange(1, 41)
    assert auto_tail_window(l, 10.0, (20, 30)) == ((20, 30), "table")
    assert auto_tail_window(l, 10.2, (100, 200)) == ((12, 40), "auto")
    assert auto_tail_window(l, 10.2) == ((12, 40), "auto")
    with pytest.raises(FitError):
        auto_tail_window(l, 38.0, (100, 200))
    with pytest.raises(FitError):
        auto_tail_window(l, None, None)


# -----------------------------
# Layer prediction
# -----------------------------

def test_predict_delta_L_example():
    tail = TailFit(C=1e-9, A=1e-3, k=0.01, window=(0, 1), residual=0.0)
    assert predict_delta_L(tail, 12, 1e-6) == pytest.approx(100 * math.log(1e-3 / (1e-6 / 12 - 1e-9)), rel=1e-12)
    assert predict_delta_L(tail, 12, 1e-6) == pytest.approx(940.5, abs=0.1)


def test_predict_delta_L_without_floor():
    tail = TailFit(C=0.0, A=1e-3, k=0.01, window=(0, 1), residual=0.0)
    assert predict_delta_L(tail, 8, 1e-6) == pytest.approx(898.7, abs=0.05)
    assert predict_delta_L(tail, 8, 2e-6) < predict_delta_L(tail, 8, 1e-6)
    assert predict_delta_L(TailFit(C=1.25e-7, A=1e-3, k=0.01, window=(0, 1), residual=0.0), 8, 1e-6) == math.inf


def test_predict_delta_L_pole_and_clamp():
    tail = TailFit(C=1e-6, A=1e-3, k=0.01, window=(0, 1), residual=0.0)
    assert predict_delta_L(tail, 10, 1e-5) == math.inf
    assert predict_delta_L(TailFit(C=0.0, A=1e-9, k=0.01, window=(0, 1), residual=0.0), 1, 1e-3) == 0.0
    with pytest.raises(ValueError):
        predict_delta_L(TailFit(C=0.0, A=1.0, k=0.0, window=(0, 1), residual=0.0), 4, 1e-3)


def test_predict_delta_L_grows_as_eps_shrinks():
    tail = TailFit(C=1e-10, A=1e-2, k=0.02, window=(0, 1), residual=0.0)
    values = [predict_delta_L(tail, 8, eps) for eps in (1e-3, 1e-4, 1e-5, 1e-6)]
    assert values == sorted(values)
    assert values[0] < values[-1]


# -----------------------------
# Power law and linear
# -----------------------------

def test_powerlaw_exact_cube():
    n = np.array([8, 10, 12, 14])
    fit = fit_powerlaw(n, 2 * n ** 3)
    assert fit.beta == pytest.approx(3.0, abs=1e-12)
    assert fit.alpha == pytest.approx(2.0, rel=1e-10)
    assert fit.r2_log == pytest.approx(1.0)
    assert not fit.underdetermined


def test_powerlaw_recovers_reference_scaling():
    n = np.array([8, 10, 12, 14, 16])
    fit = fit_powerlaw(n, powerlaw_model(n, 1549.0, 1.521))
    assert fit.alpha == pytest.approx(1549.0, rel=1e-9)
    assert fit.beta == pytest.approx(1.521, rel=1e-9)


def test_powerlaw_two_points_is_underdetermined():
    fit = fit_powerlaw([8, 16], [1.0, 8.0])
    assert fit.beta == pytest.approx(3.0)
    assert math.isnan(fit.stderr)
    assert fit.underdetermined
    assert fit.to_dict()["n_points"] == 2


def test_powerlaw_exponent_is_scale_invariant():
    n = np.array([6, 8, 10, 12])
    y = np.array([3.0, 7.5, 13.0, 22.0])
    assert fit_powerlaw(n, 17 * y).beta == pytest.approx(fit_powerlaw(n, y).beta, abs=1e-12)


def test_powerlaw_rejects_bad_input():
    with pytest.raises(ValueError):
        fit_powerlaw([8, 10], [1.0, -1.0])
    with pytest.raises(FitError):
        fit_powerlaw([8], [1.0])
    with pytest.raises(FitError):
        fit_powerlaw([8, 8], [1.0, 2.0])


def test_linear_fit():
    fit = fit_linear([8, 10, 12], [16.0, 20.0, 24.0])
    assert fit.slope == pytest.approx(2.0)
    assert fit.intercept == pytest.approx(0.0, abs=1e-12)
    assert fit.r2 == pytest.approx(1.0)


def test_k_scaling_reports_slope_and_reference():
    n = [8, 10, 12]
    out = k_scaling(n, [5 * x ** -5.0 for x in n])
    assert out["slope"] == pytest.approx(-5.0)
    assert out["reference"] == -5.0
    assert k_scaling([8, 10], [0.1, None])["slope"] is None
