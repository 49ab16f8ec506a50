"""Weighted likelihood, score, information, and the Newton fitters."""

import math

import numpy as np
import pytest
from scipy import optimize
from scipy.special import expit

from svyboot.bootstrap import bootstrap_weights
from svyboot.data import DesignKind
from svyboot.errors import DataError, SingularInformationError
from svyboot.models import (GAUSSIAN, LOGISTIC, QUASI_GAUSSIAN, QuasiModel,
                            design_matrix, fit, fit_batch, fit_profile,
                            loglik_batch, weighted_info, weighted_loglik,
                            weighted_score)
from svyboot.rng import substream

from conftest import make_dataset


def _logistic_2cov(n=150, seed=51):
    rng = substream(seed, "models-test-2cov")
    x = rng.standard_normal((n, 2))
    p = expit(-0.3 + 0.8 * x[:, 0] - 0.5 * x[:, 1])
    y = (rng.random(n) < p).astype(float)
    w = rng.uniform(1.0, 3.0, n)
    return make_dataset(y, x, w, design=DesignKind.PPSWR)


# ---------------------------------------------------------------------------
# weighted log-likelihood


def test_loglik_single_unit_at_its_mean():
    data = make_dataset([3.7], np.empty((1, 0)), [5.0],
                        design=DesignKind.PPSWR)
    ll = weighted_loglik(GAUSSIAN, data, np.array([3.7]))
    assert abs(ll - (-0.5 * math.log(2 * math.pi))) < 1e-15
    mfit = fit(GAUSSIAN, data)
    assert abs(mfit.theta[0] - 3.7) < 1e-12


def test_loglik_equal_weights_is_plain_average(logistic_data):
    n, N = logistic_data.n, logistic_data.population_size
    w = np.full(n, N / n)
    theta = np.array([-0.8, 0.4])
    ll = weighted_loglik(LOGISTIC, logistic_data, theta, weights=w)
    eta = design_matrix(logistic_data.x) @ theta
    plain = np.mean(logistic_data.y * eta - np.logaddexp(0.0, eta))
    assert abs(ll - plain) < 1e-12


def test_loglik_replicate_columns_match_per_column_sums(gaussian_data):
    mat = bootstrap_weights(gaussian_data, 10, seed=52)
    theta = np.array([0.9, 1.1])
    Z = design_matrix(gaussian_data.x)
    batch = loglik_batch(GAUSSIAN, Z, gaussian_data.y,
                         mat.weights, np.tile(theta, (10, 1)),
                         gaussian_data.population_size)
    for b in range(10):
        direct = weighted_loglik(GAUSSIAN, gaussian_data, theta,
                                 weights=mat.weights[:, b])
        assert abs(batch[b] - direct) < 1e-13


# ---------------------------------------------------------------------------
# score and information


def test_score_vanishes_at_the_fit(gaussian_data, logistic_data):
    for model, data in ((GAUSSIAN, gaussian_data), (LOGISTIC, logistic_data)):
        mfit = fit(model, data)
        assert mfit.converged
        s = weighted_score(model, data, mfit.theta)
        assert np.max(np.abs(s)) < 1e-10


def test_score_matches_central_differences(gaussian_data, logistic_data):
    points = {
        id(gaussian_data): [np.array([0.5, 0.8]), np.array([1.5, 1.2])],
        id(logistic_data): [np.array([-0.5, 0.2]), np.array([0.3, 0.9])],
    }
    for model, data in ((GAUSSIAN, gaussian_data), (LOGISTIC, logistic_data)):
        for theta in points[id(data)]:
            s = weighted_score(model, data, theta)
            for j in range(len(theta)):
                h = 1e-6 * (1.0 + abs(theta[j]))
                up, dn = theta.copy(), theta.copy()
                up[j] += h
                dn[j] -= h
                fd = (weighted_loglik(model, data, up)
                      - weighted_loglik(model, data, dn)) / (2 * h)
                assert abs(s[j] - fd) <= 1e-6 * max(1.0, abs(fd))


def test_info_matches_negative_score_jacobian(gaussian_data, logistic_data):
    for model, data in ((GAUSSIAN, gaussian_data), (LOGISTIC, logistic_data)):
        theta = np.array([0.4, 0.6])
        info = weighted_info(model, data, theta)
        p = len(theta)
        jac = np.empty((p, p))
        for j in range(p):
            h = 1e-6 * (1.0 + abs(theta[j]))
            up, dn = theta.copy(), theta.copy()
            up[j] += h
            dn[j] -= h
            jac[:, j] = (weighted_score(model, data, up)
                         - weighted_score(model, data, dn)) / (2 * h)
        assert np.max(np.abs(info + jac)) <= 1e-5 * max(1.0, np.max(np.abs(info)))
        assert np.max(np.abs(info - info.T)) < 1e-14


def test_gaussian_score_by_hand_three_points():
    y = [2.0, 1.0, 4.0]
    x = [0.5, 1.5, 2.0]
    w = [3.0, 2.0, 5.0]
    data = make_dataset(y, x, w, design=DesignKind.PPSWR)
    theta = np.array([0.5, 1.0])
    # residuals: 2-(0.5+0.5)=1.0, 1-(0.5+1.5)=-1.0, 4-(0.5+2.0)=1.5
    N = 10.0
    s0 = (3.0 * 1.0 + 2.0 * (-1.0) + 5.0 * 1.5) / N          # 0.85
    s1 = (3.0 * 1.0 * 0.5 + 2.0 * (-1.0) * 1.5 + 5.0 * 1.5 * 2.0) / N
    s = weighted_score(GAUSSIAN, data, theta)
    assert abs(s[0] - s0) < 1e-14
    assert abs(s[1] - s1) < 1e-14
    assert abs(s0 - 0.85) < 1e-15
    assert abs(s1 - 1.35) < 1e-15


def test_logistic_score_literal_transcription(logistic_data):
    theta = np.array([-0.4, 0.7])
    s = weighted_score(LOGISTIC, logistic_data, theta)
    total0 = 0.0
    total1 = 0.0
    for i in range(logistic_data.n):
        eta = theta[0] + theta[1] * logistic_data.x[i, 0]
        p_i = 1.0 / (1.0 + math.exp(-eta))
        r = logistic_data.weights[i] * (logistic_data.y[i] - p_i)
        total0 += r
        total1 += r * logistic_data.x[i, 0]
    N = logistic_data.population_size
    assert abs(s[0] - total0 / N) < 1e-12
    assert abs(s[1] - total1 / N) < 1e-12


# ---------------------------------------------------------------------------
# fitting


def test_gaussian_fit_is_weighted_least_squares(gaussian_data):
    Z = design_matrix(gaussian_data.x)
    w = gaussian_data.weights
    wls = np.linalg.solve(Z.T @ (w[:, None] * Z), Z.T @ (w * gaussian_data.y))
    mfit = fit(GAUSSIAN, gaussian_data)
    assert np.max(np.abs(mfit.theta - wls)) < 1e-10


def test_logistic_equal_weights_matches_direct_minimizer(logistic_data):
    n, N = logistic_data.n, logistic_data.population_size
    w = np.full(n, N / n)
    Z = design_matrix(logistic_data.x)
    y = logistic_data.y

    def nll(theta):
        eta = Z @ theta
        return -np.mean(y * eta - np.logaddexp(0.0, eta))

    opt = optimize.minimize(nll, np.zeros(2), method="BFGS",
                            options={"gtol": 1e-12})
    mfit = fit(LOGISTIC, logistic_data, weights=w)
    assert np.max(np.abs(mfit.theta - opt.x)) < 1e-6


def test_logistic_balanced_symmetric_data_centers_at_zero():
    data = make_dataset([0.0, 1.0, 0.0, 1.0], [-1.0, -1.0, 1.0, 1.0],
                        np.full(4, 2.5), design=DesignKind.PPSWR)
    mfit = fit(LOGISTIC, data)
    assert mfit.converged
    assert np.max(np.abs(mfit.theta)) < 1e-8


def test_fit_invariant_to_weight_rescaling(gaussian_data, logistic_data):
    for model, data in ((GAUSSIAN, gaussian_data), (LOGISTIC, logistic_data)):
        base = fit(model, data)
        scaled = fit(model, data, weights=3.5 * data.weights)
        assert np.max(np.abs(base.theta - scaled.theta)) < 1e-10


def test_fit_batch_matches_per_column_fits(gaussian_data, logistic_data):
    for model, data in ((GAUSSIAN, gaussian_data), (LOGISTIC, logistic_data)):
        full = fit(model, data)
        mat = bootstrap_weights(data, 20, seed=53)
        Z = design_matrix(data.x)
        batch = fit_batch(model, Z, data.y, mat.weights,
                          data.population_size,
                          init=np.tile(full.theta, (20, 1)))
        for b in range(20):
            if not batch.converged[b]:
                continue
            single = fit(model, data, weights=mat.weights[:, b],
                         init=full.theta)
            assert np.max(np.abs(batch.thetas[b] - single.theta)) < 1e-9


def test_newton_score_norms_shrink_with_iteration_budget(logistic_data):
    Z = design_matrix(logistic_data.x)
    W = logistic_data.weights[:, None]
    N = logistic_data.population_size
    norms = []
    for cap in range(1, 6):
        batch = fit_batch(LOGISTIC, Z, logistic_data.y, W, N, max_iter=cap)
        norms.append(batch.score_norms[0])
        if batch.converged[0]:
            break
    for a, b in zip(norms, norms[1:]):
        assert b < a


def test_nonconvergence_is_flagged_not_raised(logistic_data):
    Z = design_matrix(logistic_data.x)
    W = logistic_data.weights[:, None]
    batch = fit_batch(LOGISTIC, Z, logistic_data.y, W,
                      logistic_data.population_size, max_iter=1)
    assert not batch.converged[0]
    assert not batch.singular[0]


def test_collinear_covariates_raise_singular_information():
    rng = substream(54, "models-test-collinear")
    x1 = rng.standard_normal(30)
    x = np.column_stack([x1, x1])
    y = x1 + rng.standard_normal(30)
    data = make_dataset(y, x, np.full(30, 2.0), design=DesignKind.PPSWR)
    with pytest.raises(SingularInformationError):
        fit(GAUSSIAN, data)


# ---------------------------------------------------------------------------
# profile fitting


def test_profile_fixing_nothing_equals_fit(gaussian_data, logistic_data):
    for model, data in ((GAUSSIAN, gaussian_data), (LOGISTIC, logistic_data)):
        full = fit(model, data)
        prof = fit_profile(model, data, (), ())
        assert np.max(np.abs(full.theta - prof.theta)) < 1e-12


def test_profile_pinned_at_full_estimate_recovers_fit(gaussian_data, logistic_data):
    for model, data in ((GAUSSIAN, gaussian_data), (LOGISTIC, logistic_data)):
        full = fit(model, data)
        prof = fit_profile(model, data, (1,), (full.theta[1],))
        assert prof.theta[1] == full.theta[1]
        assert np.max(np.abs(prof.theta - full.theta)) < 1e-8


def test_logistic_profile_at_zero_matches_reduced_refit():
    data = _logistic_2cov()
    prof = fit_profile(LOGISTIC, data, (2,), (0.0,))
    reduced = make_dataset(data.y, data.x[:, :1], data.weights,
                           design=DesignKind.PPSWR,
                           population_size=data.population_size)
    red_fit = fit(LOGISTIC, reduced)
    assert prof.theta[2] == 0.0
    assert np.max(np.abs(prof.theta[:2] - red_fit.theta)) < 1e-8


def test_profile_loglik_never_exceeds_full_fit(gaussian_data, logistic_data):
    rng = substream(55, "models-test-pins")
    for model, data in ((GAUSSIAN, gaussian_data), (LOGISTIC, logistic_data)):
        full = fit(model, data)
        ll_full = weighted_loglik(model, data, full.theta)
        for _ in range(5):
            pin = float(rng.uniform(-1.0, 1.5))
            prof = fit_profile(model, data, (1,), (pin,))
            assert prof.converged
            assert ll_full - prof.loglik >= -1e-12


def test_profile_beats_nearby_points_with_same_pin(logistic_data):
    prof = fit_profile(LOGISTIC, logistic_data, (1,), (0.25,))
    base = prof.loglik
    for d in (-0.05, -0.005, 0.005, 0.05):
        other = prof.theta.copy()
        other[0] += d
        assert base - weighted_loglik(LOGISTIC, logistic_data, other) >= -1e-12


def test_profile_requires_valid_indices(gaussian_data):
    with pytest.raises(DataError):
        fit_profile(GAUSSIAN, gaussian_data, (5,), (0.0,))
    with pytest.raises(DataError):
        fit_profile(GAUSSIAN, gaussian_data, (1, 1), (0.0, 0.0))


# ---------------------------------------------------------------------------
# quasi-likelihood models


def test_quasi_gaussian_scores_match_parametric_gaussian(gaussian_data):
    theta = np.array([0.7, 1.1])
    s_quasi = weighted_score(QUASI_GAUSSIAN, gaussian_data, theta)
    s_full = weighted_score(GAUSSIAN, gaussian_data, theta)
    assert np.max(np.abs(s_quasi - s_full)) < 1e-14
    i_quasi = weighted_info(QUASI_GAUSSIAN, gaussian_data, theta)
    i_full = weighted_info(GAUSSIAN, gaussian_data, theta)
    assert np.max(np.abs(i_quasi - i_full)) < 1e-14


def test_quasi_model_has_no_loglik(gaussian_data):
    with pytest.raises(DataError):
        weighted_loglik(QUASI_GAUSSIAN, gaussian_data, np.array([0.5, 1.0]))
    mfit = fit(QUASI_GAUSSIAN, gaussian_data)
    assert mfit.loglik is None
    wls = fit(GAUSSIAN, gaussian_data)
    assert np.max(np.abs(mfit.theta - wls.theta)) < 1e-10


def test_quasi_logistic_reproduces_parametric_logistic(logistic_data):
    quasi = QuasiModel(
        "quasi-logit",
        inverse_link=expit,
        dmu_deta=lambda eta: expit(eta) * (1.0 - expit(eta)),
        variance=lambda mu: mu * (1.0 - mu),
    )
    ref = fit(LOGISTIC, logistic_data)
    alt = fit(quasi, logistic_data)
    assert np.max(np.abs(ref.theta - alt.theta)) < 1e-8
