import dataclasses
import math
from types import SimpleNamespace

import numpy as np
import pytest
from scipy import special

from betapress import (
    Dataset,
    FitOptions,
    ModelSpec,
    combined_residual,
    diagnose,
    fit,
    fit_null,
    lambda_intensity,
    leverage,
    one_step_deleted_beta,
    p2_family,
    press,
    press_combined,
    press_plot_data,
    r2_family,
    sst_deleted,
    weighted_residual_1,
)
from betapress import diagnostics
from betapress.diagnostics import (
    deleted_prediction_error,
    flag_components,
    penalized,
    penalty_counts,
    r2_fc,
    score_component_a,
    sst_total,
    working_response,
    zeta,
)
from betapress.errors import NonPositiveZetaError, SingularInformationError, UnitLeverageError, ZeroSSTError
from betapress.simulation import build_scenario, generate_dataset
from betapress.special import random_stream

from support import S4_MEAN, irls_residual, linear_data, loo_correlation, varying_data


@pytest.fixture(scope="module")
def linear_fit():
    data = linear_data(n=40, phi=150.0, seed=31)
    model = ModelSpec.from_formulas(S4_MEAN, "g1", schema=data.schema)
    return fit(model, data)


@pytest.fixture(scope="module")
def varying_fit():
    data = varying_data(n=120, seed=5)
    model = ModelSpec.from_formulas("b1 + b2*x2 + b3*x3", "g1 + g2*z2", schema=data.schema)
    return fit(model, data)


@pytest.fixture(scope="module")
def nonlinear_fit():
    spec = build_scenario("nl-mean", estimated="true")
    data = generate_dataset(spec, 60, random_stream(4, 60), 400)
    return fit(spec.estimated_model(), data, FitOptions(beta_start=list(spec.beta)))


FITS = ["linear_fit", "varying_fit", "nonlinear_fit"]


# residuals


def test_weighted_residual_oracle(varying_fit):
    y, mu, phi = varying_fit.data.response, varying_fit.mu_hat, varying_fit.phi_hat
    a, b = mu * phi, (1 - mu) * phi
    ref = (np.log(y / (1 - y)) - (special.digamma(a) - special.digamma(b))) / np.sqrt(
        special.polygamma(1, a) + special.polygamma(1, b)
    )
    np.testing.assert_allclose(weighted_residual_1(varying_fit), ref, rtol=0, atol=1e-10)
    assert weighted_residual_1(varying_fit, 3) == pytest.approx(ref[3], abs=1e-10)


def test_combined_residual_oracle(varying_fit):
    y, mu, phi = varying_fit.data.response, varying_fit.mu_hat, varying_fit.phi_hat
    a, b = mu * phi, (1 - mu) * phi
    dg, tg = special.digamma, lambda x: special.polygamma(1, x)
    ystar = np.log(y / (1 - y))
    mustar = dg(a) - dg(b)
    at = mu * (ystar - mustar) + np.log(1 - y) - dg(b) + dg(phi)
    z = (1 + mu) ** 2 * tg(a) + mu**2 * tg(b) - tg(phi)
    ref = ((ystar - mustar) + at) / np.sqrt(z)
    np.testing.assert_allclose(combined_residual(varying_fit), ref, rtol=0, atol=1e-10)


def test_zeta_example():
    expected = 2.5 * math.pi**2 / 6 - (math.pi**2 / 6 - 1)
    assert zeta(0.5, 2.0) == pytest.approx(expected, abs=1e-12)


def test_score_component_at_mean_point():
    mu, phi = 0.3, 20.0
    mustar = special.digamma(mu * phi) - special.digamma((1 - mu) * phi)
    y = special.expit(mustar)
    expected = math.log(1 - y) - special.digamma((1 - mu) * phi) + special.digamma(phi)
    assert score_component_a(y, mu, phi) == pytest.approx(expected, abs=1e-12)


def test_residual_zero_at_mean_point(linear_fit):
    state = dataclasses.replace(linear_fit.state, ystar=linear_fit.state.mustar.copy())
    zeroed = dataclasses.replace(linear_fit, state=state)
    assert np.all(weighted_residual_1(zeroed) == 0)


def test_nonpositive_zeta_names_observation(linear_fit, monkeypatch):
    def broken(mu, phi):
        z = zeta(mu, phi)
        z[2] = -1e-3
        return z

    monkeypatch.setattr(diagnostics, "zeta", broken)
    with pytest.raises(NonPositiveZetaError) as info:
        combined_residual(linear_fit)
    assert info.value.row == 2


def test_weighted_residual_variance_is_near_one():
    data = linear_data(n=400, phi=150.0, seed=41)
    model = ModelSpec.from_formulas(S4_MEAN, "g1", schema=data.schema)
    r = weighted_residual_1(fit(model, data))
    assert np.var(r) == pytest.approx(1.0, rel=0.10)


# leverage and deletion


@pytest.mark.parametrize("name", FITS)
def test_leverage_trace_and_range(name, request):
    result = request.getfixturevalue(name)
    h = leverage(result)
    assert np.all((h >= 0) & (h <= 1))
    assert h.sum() == pytest.approx(result.model.k, abs=1e-10)


def test_leverage_idempotence(linear_fit):
    Xw = np.sqrt(linear_fit.weights)[:, None] * linear_fit.state.J1
    H = Xw @ np.linalg.inv(Xw.T @ Xw) @ Xw.T
    assert np.max(np.abs(H @ H - H)) <= 1e-8
    np.testing.assert_allclose(np.diag(H), leverage(linear_fit), atol=1e-12)


def test_intercept_only_leverage():
    data = varying_data(n=50, seed=8)
    result = fit(ModelSpec.from_formulas("b1", "g1 + g2*z2", schema=data.schema), data)
    pw = result.weights
    np.testing.assert_allclose(leverage(result), pw / pw.sum(), rtol=1e-12)


def test_rank_deficient_design_is_rejected(linear_fit):
    J1 = linear_fit.state.J1.copy()
    J1[:, 2] = J1[:, 1]
    patched = dataclasses.replace(linear_fit, state=dataclasses.replace(linear_fit.state, J1=J1))
    with pytest.raises(SingularInformationError):
        leverage(patched)


@pytest.mark.parametrize("name", FITS)
def test_press_shortcut_identity(name, request):
    result = request.getfixturevalue(name)
    r = weighted_residual_1(result)
    h = leverage(result)
    for t in range(result.n):
        assert deleted_prediction_error(result, t) == pytest.approx(r[t] / (1 - h[t]), abs=1e-10)


def test_zero_residual_leaves_beta_unchanged(linear_fit):
    ystar = linear_fit.state.ystar.copy()
    ystar[5] = linear_fit.state.mustar[5]
    patched = dataclasses.replace(linear_fit, state=dataclasses.replace(linear_fit.state, ystar=ystar))
    assert np.array_equal(one_step_deleted_beta(patched, 5), patched.beta_hat)


def test_unit_leverage(linear_fit):
    # a one-hot column gives that observation leverage 1
    data = linear_fit.data
    cols = dict(data.columns)
    cols["spike"] = np.eye(data.n)[0]
    model = ModelSpec.from_formulas(S4_MEAN + " + b6*spike", "g1", schema=list(cols))
    result = fit(model, Dataset(data.response, cols))
    with pytest.raises(UnitLeverageError) as info:
        press(result)
    assert info.value.row == 0


def test_leave_one_out_fidelity():
    assert loo_correlation(n=80, phi=50.0) >= 0.99


# PRESS and P2


def test_press_components_oracle(varying_fit):
    r = weighted_residual_1(varying_fit)
    h = leverage(varying_fit)
    total, comps = press(varying_fit)
    np.testing.assert_allclose(comps, (r / (1 - h)) ** 2, rtol=1e-12)
    assert total == pytest.approx(np.sum((r / (1 - h)) ** 2), rel=1e-12)
    total_bg, comps_bg = press_combined(varying_fit)
    np.testing.assert_allclose(comps_bg, (combined_residual(varying_fit) / (1 - h)) ** 2, rtol=1e-12)
    assert total_bg >= 0


def test_press_arithmetic():
    total, comps = diagnostics._press_from(np.array([0.5]), np.array([0.5]))
    assert total == 1.0
    assert diagnostics._press_from(np.zeros(4), np.full(4, 0.3))[0] == 0.0


def test_p2_arithmetic():
    assert 1 - 0 / 8 == 1.0 and penalized(1.0, 41, 3, 2) == 1.0
    p2 = 1 - 2 / 8
    assert p2 == 0.75
    assert penalized(p2, 41, 3, 2) == pytest.approx(1 - 0.25 * 40 / 36, abs=1e-15)
    assert penalized(p2, 41, 3, 2) == pytest.approx(0.7222222, abs=1e-7)
    assert math.isnan(penalized(0.5, 5, 3, 2))


def test_sst_scale_factor():
    fake = SimpleNamespace(
        n=42,
        model=SimpleNamespace(k=3, q=1),
        weights=np.ones(42),
        u1=np.arange(42.0),
        state=None,
    )
    assert sst_deleted(fake, "linearized") / sst_total(fake, "linearized") == pytest.approx((42 / 38) ** 2)
    assert (42 / 38) ** 2 == pytest.approx(1.2216066, abs=1e-7)
    fake.u1 = np.full(42, 3.0)
    assert sst_total(fake, "linearized") == 0.0


def test_sst_from_stored_working_response(nonlinear_fit):
    ycheck = np.sqrt(nonlinear_fit.weights) * nonlinear_fit.u1
    assert sst_total(nonlinear_fit, "linearized") == pytest.approx(np.sum((ycheck - ycheck.mean()) ** 2), rel=1e-12)


def test_working_responses_agree_for_linear_predictors(varying_fit, nonlinear_fit):
    np.testing.assert_allclose(
        working_response(varying_fit, "predictor"), working_response(varying_fit, "linearized"), rtol=1e-12
    )
    assert not np.allclose(
        working_response(nonlinear_fit, "predictor"), working_response(nonlinear_fit, "linearized")
    )
    with pytest.raises(ValueError):
        working_response(varying_fit, "raw")


def test_zero_sst_error(linear_fit, monkeypatch):
    monkeypatch.setattr(diagnostics, "sst_deleted", lambda fit, response="predictor": 0.0)
    with pytest.raises(ZeroSSTError):
        p2_family(linear_fit)


@pytest.mark.parametrize("name", FITS)
def test_p2_bounds_and_penalty(name, request):
    result = request.getfixturevalue(name)
    p2, p2_c, p2_bg, p2_bg_c = p2_family(result)
    assert p2 <= 1 and p2_bg <= 1
    assert p2_c <= p2 and p2_bg_c <= p2_bg


def test_penalty_counts():
    model = ModelSpec.from_formulas("b1 + x2^b2 + b3*log(x3 - b4) + x3/b5", "g1")
    assert penalty_counts(model) == (2, 0)
    assert penalty_counts(model, "parameters") == (5, 1)
    with pytest.raises(ValueError):
        penalty_counts(model, "other")


def test_combined_press_close_to_press_under_fixed_precision(linear_fit):
    p2, _, p2_bg, _ = p2_family(linear_fit)
    assert abs(p2 - p2_bg) < 0.02


# R2 family


def test_r2_lr_is_zero_for_null_fit():
    data = linear_data(n=40, seed=3)
    null = fit_null(data)
    _, _, lr, _ = r2_family(null, null)
    assert lr == 0.0


def test_r2_fc_perfect_correlation():
    y = np.array([0.2, 0.4, 0.6, 0.7])
    gy = np.log(y / (1 - y))
    fake = SimpleNamespace(
        model=SimpleNamespace(mean_link="logit"),
        data=SimpleNamespace(response=y),
        state=SimpleNamespace(eta1=3.0 * gy - 1.0),
    )
    assert r2_fc(fake) == pytest.approx(1.0, abs=1e-14)
    fake.state.eta1 = np.zeros(4)
    assert r2_fc(fake) == 0.0


def test_r2_lr_penalty_arithmetic(varying_fit):
    null = fit_null(varying_fit.data)
    fc, fc_c, lr, lr_c = r2_family(varying_fit, null)
    n, k1, q1 = varying_fit.n, 2, 1
    expected_lr = 1 - math.exp(2 / n * (null.log_lik - varying_fit.log_lik))
    assert lr == pytest.approx(expected_lr, rel=1e-14)
    assert lr_c == pytest.approx(1 - (1 - lr) * (n - 1) / (n - 1.4 * k1 - 0.6 * q1), rel=1e-14)
    assert fc_c == pytest.approx(1 - (1 - fc) * (n - 1) / (n - k1 - q1), rel=1e-14)
    assert 0 <= fc <= 1


def test_r2_lr_never_decreases_with_extra_covariate():
    data = linear_data(n=80, seed=17)
    cols = dict(data.columns)
    cols["noise"] = np.random.default_rng(0).uniform(size=data.n)
    data = Dataset(data.response, cols)
    null = fit_null(data)
    small = fit(ModelSpec.from_formulas(S4_MEAN, "g1", schema=data.schema), data)
    large = fit(ModelSpec.from_formulas(S4_MEAN + " + b6*noise", "g1", schema=data.schema), data)
    assert r2_family(large, null)[2] >= r2_family(small, null)[2]


# lambda and PRESS plot


def test_lambda_examples(linear_fit, varying_fit):
    assert lambda_intensity(linear_fit) == pytest.approx(1.0, abs=1e-12)
    assert lambda_intensity(varying_fit) == varying_fit.phi_hat.max() / varying_fit.phi_hat.min()
    ratio = lambda_intensity(SimpleNamespace(phi_hat=np.array([242.39, 50.0, 11.45])))
    # 21.169..., reported to two decimals by truncation
    assert math.floor(ratio * 100) / 100 == 21.16


def test_flag_components():
    threshold, flags = flag_components(np.full(20, 2.0))
    assert threshold == 6.0 and not flags.any()
    comps = np.ones(20)
    comps[7] = 19.0  # ten times the mean (19 + 19) / 20
    assert comps[7] == pytest.approx(10 * comps.mean())
    _, flags = flag_components(comps)
    assert flags.tolist() == [t == 7 for t in range(20)]
    _, flags = flag_components(np.zeros(5))
    assert not flags.any()


def test_press_plot_data(varying_fit):
    table = press_plot_data(varying_fit)
    _, comps = press_combined(varying_fit)
    assert table["t"][0] == 1 and table["t"][-1] == varying_fit.n
    np.testing.assert_array_equal(table["component"], comps)
    assert np.all(table["threshold"] == pytest.approx(3 * comps.mean()))
    np.testing.assert_array_equal(table["flagged"], comps > 3 * comps.mean())


# report


@pytest.mark.parametrize("name", FITS)
def test_report_invariants(name, request):
    result = request.getfixturevalue(name)
    report = diagnose(result)
    assert np.all((report.leverage >= 0) & (report.leverage <= 1))
    assert report.leverage.sum() == pytest.approx(result.model.k, abs=1e-10)
    assert report.press >= 0 and report.press_combined >= 0
    assert report.P2 <= 1 and report.P2_bg <= 1
    assert report.lambda_ >= 1
    assert report.p == result.model.k + result.model.q
    assert irls_residual(result)[0] <= 1e-8


def test_report_serialization(varying_fit):
    report = diagnose(varying_fit)
    out = report.to_dict()
    for key in ("PRESS", "PRESS_bg", "SST_deleted", "P2", "P2_c", "P2_bg", "P2_bg_c",
                "R2_FC", "R2_FC_c", "R2_LR", "R2_LR_c", "lambda", "k1", "q1", "p"):
        assert key in out
    assert (out["k1"], out["q1"], out["p"]) == (2, 1, 5)
    rows = list(report.rows())
    assert len(rows) == varying_fit.n
    assert len(rows[0]) == len(report.CSV_COLUMNS)
    assert report.CSV_COLUMNS == (
        "t", "y", "mu_hat", "phi_hat", "r_beta", "r_beta_gamma",
        "leverage", "press_component", "press_bg_component", "flagged",
    )
    assert [r[0] for r in rows] == list(range(1, varying_fit.n + 1))


def test_report_uses_supplied_null(varying_fit):
    null = fit_null(varying_fit.data)
    a = diagnose(varying_fit)
    b = diagnose(varying_fit, null)
    assert a.R2_LR == b.R2_LR
    assert a.log_lik_null == null.log_lik
