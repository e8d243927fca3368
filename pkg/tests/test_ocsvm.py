import math

import numpy as np
import pytest

import qp_oracle
from btc_anomaly.ocsvm import (
    OcSvmModel,
    SmoConfig,
    decision_value,
    decision_values,
    fit_ocsvm,
    flag_anomalies,
    load_model,
    rbf_kernel,
    recover_rho,
    save_model,
    tune_nu,
)
from conftest import make_matrix

TIGHT = SmoConfig(tol=1e-10, max_passes=500_000)


def _fit_and_oracle(seed, m, nu, gamma=1.0, n_iter=1_000_000):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(m, 2))
    fm = make_matrix(X, pre_normalized=True)
    model = fit_ocsvm(fm, nu=nu, gamma=gamma, config=TIGHT)
    K = qp_oracle.rbf_matrix(X, gamma)
    alpha, obj = qp_oracle.solve_dual(K, nu, n_iter=n_iter)
    return fm, model, K, alpha, obj


def test_kernel_self_value():
    x = np.array([1.0, -2.0, 3.0])
    assert rbf_kernel(x, x, gamma=0.7) == 1.0


def test_kernel_hand_value():
    assert rbf_kernel(np.array([0.0]), np.array([1.0]), gamma=1.0) == pytest.approx(
        math.exp(-1.0), abs=1e-12
    )


def test_kernel_symmetry_and_range():
    rng = np.random.default_rng(21)
    for _ in range(20):
        x, z = rng.normal(size=4), rng.normal(size=4)
        k1, k2 = rbf_kernel(x, z, 0.3), rbf_kernel(z, x, 0.3)
        assert k1 == k2
        assert 0.0 < k1 <= 1.0


def test_two_points_nu_one_forced_uniform():
    # box [0, 1/2] with the simplex leaves a single feasible point
    fm = make_matrix([[1.0, 0.0], [-1.0, 0.0]], pre_normalized=True)
    model = fit_ocsvm(fm, nu=1.0, gamma=1.0, config=TIGHT)
    assert np.allclose(np.sort(model.support_alphas), [0.5, 0.5])
    expected = 0.25 + 0.25 * math.exp(-4.0)  # 0.5 * a'Ka at a = (1/2, 1/2)
    assert model.dual_objective == pytest.approx(expected, rel=1e-12)


def test_m6_dual_objective_matches_bruteforce_oracle():
    fm, model, K, alpha, obj = _fit_and_oracle(seed=100, m=6, nu=0.5)
    assert model.dual_objective == pytest.approx(obj, abs=1e-6)


def test_m6_rho_matches_oracle():
    fm, model, K, alpha, obj = _fit_and_oracle(seed=101, m=6, nu=0.5)
    rho_oracle = qp_oracle.recover_rho(alpha, K, nu=0.5)
    assert model.rho == pytest.approx(rho_oracle, abs=1e-4)


def test_m6_decision_values_match_oracle():
    fm, model, K, alpha, obj = _fit_and_oracle(seed=102, m=6, nu=0.5)
    rho_oracle = qp_oracle.recover_rho(alpha, K, nu=0.5)
    rng = np.random.default_rng(5)
    queries = rng.normal(size=(8, 2))
    got = decision_values(model, queries)
    want = qp_oracle.decision_values(alpha, rho_oracle, fm.values, 1.0, queries)
    assert np.allclose(got, want, atol=1e-6)


def test_infeasible_nu_rejected():
    fm = make_matrix(np.random.default_rng(0).normal(size=(5, 2)),
                     pre_normalized=True)
    with pytest.raises(ValueError):
        fit_ocsvm(fm, nu=0.1)  # nu*m = 0.5 < 1
    with pytest.raises(ValueError):
        fit_ocsvm(fm, nu=1.5)


def test_alpha_feasibility_invariants():
    rng = np.random.default_rng(23)
    fm = make_matrix(rng.normal(size=(60, 3)), normalized=True)
    model = fit_ocsvm(fm, nu=0.2, config=TIGHT)
    c = model.upper_bound
    assert np.all(model.support_alphas > 1e-12)
    assert np.all(model.support_alphas <= c + 1e-12)
    assert model.support_alphas.sum() == pytest.approx(1.0, abs=1e-8)


def test_dual_objective_non_increasing():
    rng = np.random.default_rng(24)
    fm = make_matrix(rng.normal(size=(80, 3)), normalized=True)
    cfg = SmoConfig(tol=1e-8, max_passes=100_000, record_history=True)
    model = fit_ocsvm(fm, nu=0.25, config=cfg)
    hist = model.objective_history
    assert len(hist) > 2
    assert all(b <= a + 1e-12 for a, b in zip(hist, hist[1:]))


def test_interior_support_vector_decision_near_zero():
    rng = np.random.default_rng(25)
    fm = make_matrix(rng.normal(size=(100, 3)), normalized=True)
    tol = 1e-6
    model = fit_ocsvm(fm, nu=0.2, config=SmoConfig(tol=tol, max_passes=300_000))
    c = model.upper_bound
    interior = (model.support_alphas > 1e-9) & (model.support_alphas < c * (1 - 1e-9))
    assert interior.any()
    vals = decision_values(model, model.support_points[interior])
    assert np.all(np.abs(vals) < 10 * tol)


def test_far_point_decision_tends_to_minus_rho():
    rng = np.random.default_rng(26)
    fm = make_matrix(rng.normal(size=(50, 2)), normalized=True)
    model = fit_ocsvm(fm, nu=0.2, gamma=5.0, config=TIGHT)
    far = np.array([1e3, -1e3])
    assert decision_value(model, far) == pytest.approx(-model.rho, abs=1e-12)
    assert decision_value(model, far) < 0


def test_nu_property_bounds():
    rng = np.random.default_rng(27)
    fm = make_matrix(rng.standard_normal((1000, 6)), normalized=True)
    m = 1000
    for nu in (0.05, 0.10):
        model = fit_ocsvm(fm, nu=nu, config=SmoConfig(tol=1e-4))
        d = decision_values(model, fm.values)
        assert np.mean(d < 0) <= nu + 1.0 / m
        assert len(model.support_alphas) / m >= nu - 1.0 / m


def test_flag_anomalies_places_planted_outliers_first():
    rng = np.random.default_rng(28)
    X = rng.normal(scale=0.5, size=(200, 2))
    X[:5] = rng.normal(scale=0.3, size=(5, 2)) + np.array(
        [[8, 8], [-8, 8], [8, -8], [-8, -8], [11, 0]]
    )
    fm = make_matrix(X, pre_normalized=True)
    model = fit_ocsvm(fm, nu=0.05, gamma=0.5, config=TIGHT)
    ranking = flag_anomalies(model, fm)
    assert set(ranking.top_ids(5)) == {0, 1, 2, 3, 4}
    assert len(ranking) == 200


def test_identical_points_degenerate_flagging():
    fm = make_matrix(np.zeros((20, 2)), pre_normalized=True)
    model = fit_ocsvm(fm, nu=0.5, config=SmoConfig())
    ranking = flag_anomalies(model, fm)
    d = decision_values(model, fm.values)
    assert np.allclose(d, d[0])  # uniform decision values
    assert ranking.flagged_count <= 0.5 * 20 + 1


def test_rho_fallback_when_no_interior():
    # nu = 1 forces every alpha to the bound: no interior recovery point
    rng = np.random.default_rng(29)
    fm = make_matrix(rng.normal(size=(10, 2)), pre_normalized=True)
    model = fit_ocsvm(fm, nu=1.0, config=TIGHT)
    assert model.rho_fallback
    assert np.allclose(model.support_alphas, 0.1)


def test_recover_rho_agreeing_interiors():
    alpha = np.array([0.0, 0.3, 0.3, 0.4])
    gradient = np.array([9.0, 0.5, 0.5, 0.5])
    rho, fallback = recover_rho(alpha, gradient, c_upper=0.5)
    assert rho == 0.5 and not fallback


def test_determinism():
    rng = np.random.default_rng(30)
    fm = make_matrix(rng.normal(size=(50, 3)), normalized=True)
    a = fit_ocsvm(fm, nu=0.2, config=SmoConfig(seed=3))
    b = fit_ocsvm(fm, nu=0.2, config=SmoConfig(seed=3))
    assert np.array_equal(a.support_alphas, b.support_alphas)
    assert a.rho == b.rho and a.dual_objective == b.dual_objective


def test_save_load_round_trip(tmp_path):
    rng = np.random.default_rng(31)
    fm = make_matrix(rng.normal(size=(40, 3)), normalized=True)
    model = fit_ocsvm(fm, nu=0.2, config=TIGHT)
    path = tmp_path / "model.json"
    save_model(model, path)
    loaded = load_model(path)
    queries = rng.normal(size=(7, 3))
    assert np.allclose(decision_values(model, queries),
                       decision_values(loaded, queries), atol=0)
    assert loaded.nu == model.nu and loaded.gamma == model.gamma


def test_tune_nu_single_candidate():
    ranking = flag_anomalies(
        fit_ocsvm(
            make_matrix(np.random.default_rng(1).normal(size=(30, 2)),
                        normalized=True),
            nu=0.2,
            config=SmoConfig(),
        ),
        make_matrix(np.random.default_rng(1).normal(size=(30, 2)), normalized=True),
    )
    from btc_anomaly.evaluation import OwnershipIndex

    ownership = OwnershipIndex(user_to_txs={}, tx_to_users={})
    nu_star, curve = tune_nu(
        lambda nu: ranking, lambda nu: ranking, [0.25], ownership, n_top=5, m_top=5
    )
    assert nu_star == 0.25
    assert len(curve) == 1


def test_kernel_cache_mode_threshold():
    from btc_anomaly.ocsvm import _KernelColumns

    rng = np.random.default_rng(32)
    X = rng.normal(size=(30, 2))
    full = _KernelColumns(X, 1.0, SmoConfig(full_matrix_max=50))
    assert full.full is not None
    lru = _KernelColumns(X, 1.0, SmoConfig(full_matrix_max=10, cache_columns=4))
    assert lru.full is None
    for i in (0, 5, 7, 3, 0, 9, 11):
        col = lru.col(i)
        assert col[i] == pytest.approx(1.0)
        assert np.allclose(col, full.col(i))
    assert len(lru._cache) <= 4
