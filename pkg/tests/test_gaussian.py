import math

import numpy as np
import pytest
from scipy import integrate

from btc_anomaly.gaussian import (
    EpsilonThreshold,
    QuantileThreshold,
    fit_gaussian,
    flag_anomalies,
    log_density,
    mahalanobis_distance,
)
from conftest import make_matrix


def test_hand_computed_two_point_fit():
    fm = make_matrix([[0.0, 0.0], [2.0, 2.0]], pre_normalized=True)
    model = fit_gaussian(fm, ridge=1e-9)
    assert model.mean == pytest.approx([1.0, 1.0])
    assert model.covariance == pytest.approx(
        np.array([[1.0, 1.0], [1.0, 1.0]]) + 1e-9 * np.eye(2)
    )


def test_identical_rows_gives_ridge_identity():
    fm = make_matrix(np.ones((5, 3)) * 2.5, pre_normalized=True)
    model = fit_gaussian(fm, ridge=0.25)
    assert model.covariance == pytest.approx(0.25 * np.eye(3))
    assert model.mean == pytest.approx([2.5, 2.5, 2.5])


def test_sampling_recovers_parameters_within_3_se():
    rng = np.random.default_rng(11)
    mean = np.array([1.0, -2.0, 0.5])
    cov = np.array([[2.0, 0.3, 0.0], [0.3, 1.0, -0.2], [0.0, -0.2, 0.5]])
    m = 10_000
    X = rng.multivariate_normal(mean, cov, size=m)
    model = fit_gaussian(make_matrix(X, pre_normalized=True), ridge=0.0)
    se_mean = np.sqrt(np.diag(cov) / m)
    assert np.all(np.abs(model.mean - mean) < 3 * se_mean)
    # entrywise covariance standard error approx sqrt((s_ii s_jj + s_ij^2)/m)
    se_cov = np.sqrt(
        (np.outer(np.diag(cov), np.diag(cov)) + cov**2) / m
    )
    assert np.all(np.abs(model.covariance - cov) < 3 * se_cov)


def test_m_below_2_rejected():
    with pytest.raises(ValueError):
        fit_gaussian(make_matrix([[1.0, 2.0]], pre_normalized=True))


def test_log_density_at_mean_identity_cov():
    fm = make_matrix([[1.0, 0.0], [-1.0, 0.0], [0.0, 1.0], [0.0, -1.0]],
                     pre_normalized=True)
    model = fit_gaussian(fm, ridge=0.5)  # raw cov = 0.5 I -> total I
    assert model.covariance == pytest.approx(np.eye(2))
    assert log_density(model, model.mean) == pytest.approx(-math.log(2 * math.pi))


def test_log_density_1d_unit_variance_one_sigma():
    fm = make_matrix([[1.0], [-1.0]], pre_normalized=True)
    model = fit_gaussian(fm, ridge=0.0)  # population var = 1
    x = model.mean + 1.0
    assert log_density(model, x) == pytest.approx(-0.5 * math.log(2 * math.pi) - 0.5)


def test_log_density_matches_independent_dense_solve():
    rng = np.random.default_rng(12)
    fm = make_matrix(rng.normal(size=(50, 3)), normalized=True)
    model = fit_gaussian(fm)
    for _ in range(5):
        x = rng.normal(size=3)
        # independently coded formula: solve instead of the stored precision
        delta = x - model.mean
        d2 = float(delta @ np.linalg.solve(model.covariance, delta))
        expected = (
            -0.5 * 3 * math.log(2 * math.pi)
            - 0.5 * float(np.linalg.slogdet(model.covariance)[1])
            - 0.5 * d2
        )
        assert log_density(model, x) == pytest.approx(expected, abs=1e-10)


def test_mahalanobis_examples():
    fm = make_matrix([[2.0, 0.0], [-2.0, 0.0], [0.0, 1.0], [0.0, -1.0]],
                     pre_normalized=True)
    model = fit_gaussian(fm, ridge=0.0)  # cov = diag(2, 0.5)... use explicit
    assert mahalanobis_distance(model, model.mean) == pytest.approx(0.0)
    # diag covariance (4, 1), offset (2, 0) -> distance 1
    fm2 = make_matrix([[4.0, 1.0], [-4.0, -1.0], [4.0, -1.0], [-4.0, 1.0]],
                      pre_normalized=True)
    model2 = fit_gaussian(fm2, ridge=0.0)
    assert model2.covariance == pytest.approx(np.diag([16.0, 1.0]))
    scaled = mahalanobis_distance(model2, model2.mean + np.array([4.0, 0.0]))
    assert scaled == pytest.approx(1.0)


def test_euclidean_when_identity_cov():
    fm = make_matrix([[1.0, 0.0], [-1.0, 0.0], [0.0, 1.0], [0.0, -1.0]],
                     pre_normalized=True)
    model = fit_gaussian(fm, ridge=0.5)
    x = model.mean + np.array([0.6, -0.8])
    assert mahalanobis_distance(model, x) == pytest.approx(1.0)


def test_precision_covariance_inverse_invariant():
    rng = np.random.default_rng(13)
    model = fit_gaussian(make_matrix(rng.normal(size=(100, 6)), normalized=True))
    assert np.allclose(model.precision @ model.covariance, np.eye(6), atol=1e-8)
    assert np.allclose(model.covariance, model.covariance.T, atol=1e-12)


def test_density_integrates_to_one_in_1d():
    rng = np.random.default_rng(14)
    fm = make_matrix(rng.normal(size=(200, 1)), normalized=True)
    model = fit_gaussian(fm)
    sigma = math.sqrt(model.covariance[0, 0])
    mu = model.mean[0]
    val, _ = integrate.quad(
        lambda x: math.exp(log_density(model, np.array([x]))),
        mu - 8 * sigma,
        mu + 8 * sigma,
    )
    assert val == pytest.approx(1.0, abs=1e-6)


def test_rank_equivalence_log_density_vs_mahalanobis():
    # ascending density == descending distance, exactly
    rng = np.random.default_rng(15)
    fm = make_matrix(rng.normal(size=(200, 6)), normalized=True)
    model = fit_gaussian(fm)
    logp = np.array([log_density(model, x) for x in fm.values])
    d = np.array([mahalanobis_distance(model, x) for x in fm.values])
    assert np.array_equal(np.argsort(logp, kind="stable"), np.argsort(-d, kind="stable"))


def test_affine_equivariance_translation():
    rng = np.random.default_rng(16)
    X = rng.normal(size=(80, 4))
    shift = np.array([5.0, -3.0, 0.25, 100.0])
    m1 = fit_gaussian(make_matrix(X, pre_normalized=True), ridge=1e-8)
    m2 = fit_gaussian(make_matrix(X + shift, pre_normalized=True), ridge=1e-8)
    assert m2.mean == pytest.approx(m1.mean + shift, abs=1e-9)
    q = rng.normal(size=4)
    assert mahalanobis_distance(m2, q + shift) == pytest.approx(
        mahalanobis_distance(m1, q), abs=1e-9
    )


def test_quantile_one_flags_everything():
    rng = np.random.default_rng(17)
    fm = make_matrix(rng.normal(size=(30, 2)), normalized=True)
    model = fit_gaussian(fm)
    ranking = flag_anomalies(model, fm, QuantileThreshold(1.0))
    assert ranking.flagged_count == 30


def test_epsilon_zero_flags_nothing():
    rng = np.random.default_rng(18)
    fm = make_matrix(rng.normal(size=(30, 2)), normalized=True)
    model = fit_gaussian(fm)
    assert flag_anomalies(model, fm, EpsilonThreshold(0.0)).flagged_count == 0


def test_far_outlier_is_rank_one_and_flagged():
    rng = np.random.default_rng(19)
    X = rng.normal(scale=0.5, size=(100, 2))
    X[37] = (50.0, -40.0)
    fm = make_matrix(X, pre_normalized=True)
    model = fit_gaussian(fm)
    ranking = flag_anomalies(model, fm, QuantileThreshold(0.01))
    assert ranking.entries[0][0] == 37
    assert ranking.flagged_count == 1
    assert 37 in ranking.top_ids(ranking.flagged_count)


def test_quantile_validation():
    with pytest.raises(ValueError):
        QuantileThreshold(0.0)
    with pytest.raises(ValueError):
        QuantileThreshold(1.5)
