import math

import numpy as np
import pytest
from hypothesis import assume, given, settings, strategies as st
from scipy.optimize import brentq, minimize_scalar

from conftest import random_problem
from mrvr.baseline import (
    BaselineHyperState,
    BaselineModel,
    alpha_candidates_baseline,
    candidate_stats,
    delta_L_baseline,
    estimate_full_covariance,
    fit_baseline,
    log_marginal_baseline,
    log_marginal_from_posterior,
    posterior_update_j,
    predict_baseline,
    sigma_update_j,
    sq_stats_j,
    stationarity,
    BaselinePosterior,
)
from mrvr.errors import NumericalError
from mrvr.fast import SparsityQuality, alpha_star_fast, delta_L_fast
from mrvr.kernels import KernelConfig
from mrvr.sim import two_output_dataset, true_functions


def _setup(rng, N=20, V=2, M=4):
    _, Phi, T, alpha, _ = random_problem(rng, N=N, V=V, M=M)
    sigma2 = rng.uniform(0.005, 0.05, size=V)
    act = np.flatnonzero(np.isfinite(alpha))
    sig = np.empty((V, M, M))
    mu = np.empty((V, M))
    for j in range(V):
        sig[j], mu[j] = posterior_update_j(Phi[:, act], alpha[act], T[:, j], sigma2[j])
    return Phi, T, alpha, sigma2, act, sig, mu


def _Cj(Phi, alpha, s2, skip=None):
    C = s2 * np.eye(Phi.shape[0])
    for m in np.flatnonzero(np.isfinite(alpha)):
        if m != skip:
            C += np.outer(Phi[:, m], Phi[:, m]) / alpha[m]
    return C


# posterior


def test_posterior_scalar_closed_form():
    sig, mu = posterior_update_j(np.array([[1.0], [1.0]]), np.array([2.0]), np.array([1.0, 1.0]), 1.0)
    assert sig[0, 0] == pytest.approx(0.25, abs=1e-15)
    assert mu[0] == pytest.approx(0.5, abs=1e-15)


def test_posterior_against_dense_inverse(rng):
    Phi, T, alpha, sigma2, act, sig, mu = _setup(rng, N=25, V=3, M=5)
    for j in range(3):
        H = Phi[:, act].T @ Phi[:, act] / sigma2[j] + np.diag(alpha[act])
        inv = np.linalg.inv(H)
        np.testing.assert_allclose(sig[j], inv, rtol=1e-9, atol=1e-12)
        np.testing.assert_allclose(mu[j], inv @ Phi[:, act].T @ T[:, j] / sigma2[j], rtol=1e-9, atol=1e-12)
        np.testing.assert_allclose(sig[j] @ H, np.eye(5), atol=1e-10)


# sparsity / quality


@pytest.mark.parametrize("seed", range(4))
def test_sq_stats_j_against_explicit_leave_one_out_covariance(seed):
    rng = np.random.default_rng(seed)
    Phi, T, alpha, sigma2, act, sig, mu = _setup(rng, N=25, V=2, M=5)
    state = BaselineHyperState(alpha=alpha, sigma2=sigma2)
    post = BaselinePosterior(sig, mu)
    for j in range(2):
        B = Phi[:, act] @ sig[j] @ Phi[:, act].T
        C_inv = np.linalg.inv(_Cj(Phi, alpha, sigma2[j]))
        for i in range(Phi.shape[1]):
            sp, qp, s, q = sq_stats_j(i, j, state, post, Phi, T[:, j], B)
            phi = Phi[:, i]
            assert sp == pytest.approx(phi @ C_inv @ phi, rel=1e-8)
            assert qp == pytest.approx(phi @ C_inv @ T[:, j], rel=1e-8, abs=1e-8)
            Ci = np.linalg.inv(_Cj(Phi, alpha, sigma2[j], skip=i))
            assert s == pytest.approx(phi @ Ci @ phi, rel=1e-8)
            assert q == pytest.approx(phi @ Ci @ T[:, j], rel=1e-8, abs=1e-8)


def test_sq_stats_j_empty_model(rng):
    Phi, T, alpha, sigma2, *_ = _setup(rng)
    state = BaselineHyperState(alpha=np.full(Phi.shape[1], np.inf), sigma2=sigma2)
    sp, qp, s, q = sq_stats_j(3, 1, state, None, Phi, T[:, 1], None)
    assert sp == pytest.approx(Phi[:, 3] @ Phi[:, 3] / sigma2[1], rel=1e-14)
    assert qp == pytest.approx(Phi[:, 3] @ T[:, 1] / sigma2[1], rel=1e-14)
    assert (s, q) == (sp, qp)


def test_candidate_stats_matches_per_candidate_route(rng):
    Phi, T, alpha, sigma2, act, sig, mu = _setup(rng, N=18, V=3, M=4)
    state = BaselineHyperState(alpha=alpha, sigma2=sigma2)
    G, PT = Phi.T @ Phi, Phi.T @ T
    for a_act in (None, alpha[act]):
        sp, qp = candidate_stats(G, PT, act, sigma2, sig, mu, a_act)
        for j in range(3):
            B = Phi[:, act] @ sig[j] @ Phi[:, act].T
            for i in range(Phi.shape[1]):
                e = sq_stats_j(i, j, state, None, Phi, T[:, j], B)
                assert sp[i, j] == pytest.approx(e[0], rel=1e-8, abs=1e-10)
                assert qp[i, j] == pytest.approx(e[1], rel=1e-8, abs=1e-10)


# polynomial root search


@given(st.floats(0.01, 100), st.floats(-50, 50))
def test_v1_candidates_closed_form(s, q):
    roots = alpha_candidates_baseline([s], [q])
    if q * q > s * (1 + 1e-9):
        assert roots.size == 1
        assert roots[0] == pytest.approx(s * s / (q * q - s), rel=1e-10)
    elif q * q < s * (1 - 1e-9):
        assert roots.size == 0


def test_v2_symmetric_case_bisection_oracle():
    roots = alpha_candidates_baseline([1.0, 1.0], [2.0, 2.0])
    assert roots.size == 1
    assert roots[0] == pytest.approx(1.0 / 3.0, rel=1e-12)
    oracle = brentq(lambda a: stationarity(a, [1.0, 1.0], [2.0, 2.0]), 1e-6, 1e6, xtol=1e-15, rtol=1e-15)
    assert roots[0] == pytest.approx(oracle, rel=1e-10)


def _scale(a, s, q):
    return float(np.sum(1 / a + 1 / (a + s) + q * q / (a + s) ** 2))


log_s = st.floats(math.log(0.01), math.log(100))


@given(st.integers(2, 3).flatmap(lambda V: st.tuples(st.lists(log_s, min_size=V, max_size=V),
                                                     st.lists(st.floats(-30, 30), min_size=V, max_size=V))))
@settings(max_examples=300)
def test_roots_stationary_and_cover_every_sign_change(sq):
    s = np.exp(np.array(sq[0]))
    q = np.array(sq[1])
    roots = alpha_candidates_baseline(s, q)
    assert np.all(roots > 0) and np.all(np.diff(roots) > 0)
    for r in roots:
        assert abs(stationarity(r, s, q)) < 1e-8 * (1 + _scale(r, s, q))
    grid = np.logspace(-6, 6, 1500)
    g = np.array([stationarity(a, s, q) for a in grid])
    for k in np.flatnonzero(np.sign(g[:-1]) * np.sign(g[1:]) < 0):
        lo, hi = grid[k], grid[k + 1]
        assert np.any((roots >= lo * (1 - 1e-9)) & (roots <= hi * (1 + 1e-9))), (lo, hi, roots)


def test_roots_reject_nonpositive_sparsity():
    with pytest.raises(ValueError):
        alpha_candidates_baseline([1.0, 0.0], [1.0, 1.0])


# delta L


@pytest.mark.parametrize("seed", range(4))
def test_delta_L_equals_direct_evidence_difference(seed):
    rng = np.random.default_rng(50 + seed)
    Phi, T, alpha, sigma2, act, sig, mu = _setup(rng, N=20, V=2, M=4)
    state = BaselineHyperState(alpha=alpha, sigma2=sigma2)
    base = log_marginal_baseline(T, state, Phi)
    Bs = [Phi[:, act] @ sig[j] @ Phi[:, act].T for j in range(2)]
    checked = set()
    for i in range(Phi.shape[1]):
        stats = np.array([sq_stats_j(i, j, state, None, Phi, T[:, j], Bs[j]) for j in range(2)])
        sp, qp, s, q = stats.T
        a = alpha[i]
        if math.isfinite(a):
            cases = [("reestimate", a * 0.4), ("delete", math.inf)]
        else:
            roots = alpha_candidates_baseline(s, q)
            if roots.size == 0:
                continue
            cases = [("add", roots[0])]
        for action, new in cases:
            dl2 = delta_L_baseline(action, sp, qp, s, q, a, new)
            moved = alpha.copy()
            moved[i] = new
            direct = 2 * (log_marginal_baseline(T, BaselineHyperState(moved, sigma2), Phi) - base)
            assert dl2 == pytest.approx(direct, rel=1e-8, abs=1e-9)
            checked.add(action)
    assert checked == {"reestimate", "delete", "add"}


@given(st.floats(0.01, 10), st.floats(-20, 20), st.floats(0.01, 5), st.floats(0.001, 1))
def test_v1_agrees_with_matrix_normal_formulas(s_b, q_b, a_scale, omega):
    # Same C up to the noise scale: alpha_f = omega alpha_b, s_f = omega s_b, q_f = omega q_b.
    assume(q_b * q_b > s_b * 1.01)
    roots = alpha_candidates_baseline([s_b], [q_b])
    s_f, q_f = omega * s_b, omega * q_b
    theta = q_f * q_f / omega - s_f
    sq = SparsityQuality(s_f, np.array([q_f]), s_f, np.array([q_f]), theta, q_f * q_f / omega, q_f * q_f / omega)
    assert alpha_star_fast(sq) == pytest.approx(omega * roots[0], rel=1e-10)
    dl_b = delta_L_baseline("add", [s_b], [q_b], [s_b], [q_b], math.inf, roots[0])
    dl_f = delta_L_fast("add", sq, math.inf, alpha_star_fast(sq), np.array([[omega]]))
    assert dl_b == pytest.approx(dl_f, rel=1e-9, abs=1e-12)
    a_old = roots[0] * (1 + a_scale)
    sp_b = a_old * s_b / (a_old + s_b)
    qp_b = a_old * q_b / (a_old + s_b)
    sqr = SparsityQuality(omega * sp_b, np.array([omega * qp_b]), s_f, np.array([q_f]), theta, 0.0, 0.0)
    dl_b = delta_L_baseline("reestimate", [sp_b], [qp_b], [s_b], [q_b], a_old, roots[0])
    dl_f = delta_L_fast("reestimate", sqr, omega * a_old, omega * roots[0], np.array([[omega]]))
    assert dl_b == pytest.approx(dl_f, rel=1e-9, abs=1e-12)


def test_delta_L_reestimate_identity_is_zero():
    assert delta_L_baseline("reestimate", [1.0, 2.0], [0.5, 3.0], [2.0, 3.0], [1.0, 4.0], 2.0, 2.0) == 0.0


# noise variance


def test_sigma_update_empty_model(rng):
    tau = rng.standard_normal(9)
    assert sigma_update_j(tau, None, np.zeros(0), np.zeros(0), (), 9) == pytest.approx(tau @ tau / 9)


def test_sigma_update_zero_residual_and_degenerate_dof():
    Phi = np.eye(3)[:, :2]
    mu = np.array([1.0, 2.0])
    tau = Phi @ mu
    assert sigma_update_j(tau, Phi, mu, np.ones(2), np.full(2, 0.5), 3) == 0.0
    with pytest.raises(NumericalError):
        sigma_update_j(tau, Phi, mu, np.ones(2), np.full(2, -1.0), 3)


def _L_sigma(Phi, tau, alpha, s2):
    C = _Cj(Phi, alpha, s2)
    _, ld = np.linalg.slogdet(C)
    return -0.5 * (ld + tau @ np.linalg.solve(C, tau))


@pytest.mark.parametrize("seed", range(3))
def test_sigma_update_is_monotone_and_converges_to_grid_maximum(seed):
    rng = np.random.default_rng(seed)
    Phi, T, alpha, sigma2, act, *_ = _setup(rng, N=30, V=1, M=4)
    tau = T[:, 0]
    s2 = 0.5
    prev = _L_sigma(Phi, tau, alpha, s2)
    for _ in range(200):
        sig, mu = posterior_update_j(Phi[:, act], alpha[act], tau, s2)
        new = sigma_update_j(tau, Phi[:, act], mu, alpha[act], np.diag(sig), 30)
        L = _L_sigma(Phi, tau, alpha, new)
        assert L >= prev - 1e-10
        if abs(new - s2) < 1e-14 * s2:
            break
        prev, s2 = L, new
    res = minimize_scalar(lambda ls: -_L_sigma(Phi, tau, alpha, math.exp(ls)), bounds=(-15, 3),
                          method="bounded", options=dict(xatol=1e-10))
    assert math.log(s2) == pytest.approx(res.x, abs=1e-5)


# evidence


def test_log_marginal_closed_forms(rng):
    N = 7
    Phi = np.ones((N, N + 1))
    empty = np.full(N + 1, np.inf)
    state = BaselineHyperState(empty, np.array([1.0, 1.0]))
    assert log_marginal_baseline(np.zeros((N, 2)), state, Phi) == pytest.approx(-N * math.log(2 * math.pi))
    tau = rng.standard_normal((N, 1))
    s2 = 0.3
    got = log_marginal_baseline(tau, BaselineHyperState(empty, np.array([s2])), Phi)
    assert got == pytest.approx(-0.5 * (N * math.log(2 * math.pi * s2) + float(tau[:, 0] @ tau[:, 0]) / s2))


def test_log_marginal_posterior_form_matches_direct(rng):
    Phi, T, alpha, sigma2, act, sig, mu = _setup(rng, N=25, V=3, M=5)
    direct = log_marginal_baseline(T, BaselineHyperState(alpha, sigma2), Phi)
    cheap = log_marginal_from_posterior(T, alpha[act], sigma2, BaselinePosterior(sig, mu), Phi[:, act].T @ T)
    assert cheap == pytest.approx(direct, rel=1e-10)


# fitting, prediction, covariance reconstruction


@pytest.fixture(scope="module")
def example_model():
    data = two_output_dataset(np.random.default_rng(3))
    return data, fit_baseline(data.X, data.T, KernelConfig(1.6))


def test_fit_two_output_example_tracks_truth(example_model):
    data, model = example_model
    assert model.converged and model.n_relevance <= 40
    x = np.linspace(-10, 10, 400)[:, None]
    mean, _ = model.predict(x)
    assert np.sqrt(np.mean((mean - true_functions(x, 2, "sinc_plus_linear")) ** 2)) < 0.2


def test_predictive_variance_at_least_noise(example_model, rng):
    _, model = example_model
    xs = rng.uniform(-15, 15, size=(1000, 1))
    _, var = model.predict(xs)
    assert np.all(var - model.sigma2_mp[None, :] >= 0)
    m1, v1 = predict_baseline(model, xs[0])
    assert m1.shape == (2,) and v1.shape == (2,)


def test_bias_only_model_predicts_constant():
    model = BaselineModel(kernel=KernelConfig(1.0), active=np.array([0]), has_bias=True,
                          rv_inputs=np.zeros((0, 1)), alpha=np.array([1.0]), sigma_j=np.full((2, 1, 1), 0.01),
                          mu_j=np.array([[0.3], [-0.7]]), sigma2_mp=np.array([0.1, 0.2]), iterations=1,
                          log_marginal=0.0, converged=True, n_train=5)
    mean, var = model.predict(np.linspace(-3, 3, 11)[:, None])
    assert np.all(mean == np.array([0.3, -0.7]))
    np.testing.assert_allclose(var, np.tile([0.11, 0.21], (11, 1)))


def test_v1_fit_is_sparse_and_accurate():
    rmses = []
    for seed in range(5):
        rng = np.random.default_rng(seed)
        X = rng.uniform(-10, 10, size=(100, 1))
        y = true_functions(X, 1)
        T = y + 0.1 * rng.standard_normal(y.shape)
        model = fit_baseline(X, T, KernelConfig(1.6))
        assert model.n_relevance < 30
        x = np.linspace(-10, 10, 500)[:, None]
        rmses.append(np.sqrt(np.mean((model.predict(x)[0] - true_functions(x, 1)) ** 2)))
    assert np.median(rmses) < 0.2


def test_full_covariance_uses_residual_correlation(example_model):
    data, model = example_model
    Phi_a = model.design(data.X)
    omega = estimate_full_covariance(model, data.T, Phi_a)
    np.testing.assert_allclose(np.diag(omega), model.sigma2_mp, rtol=1e-12)
    R = omega / np.sqrt(np.outer(model.sigma2_mp, model.sigma2_mp))
    resid = data.T - Phi_a @ model.weight_mean
    S = resid.T @ resid  # uncentred: residuals are measured from the fit, not their mean
    corr = S / np.sqrt(np.outer(np.diag(S), np.diag(S)))
    np.testing.assert_allclose(R, corr, rtol=1e-10, atol=1e-12)
    assert np.array_equal(omega, omega.T)
    assert np.all(np.abs(R) <= 1.0 + 1e-12)


def test_full_covariance_diagonal_residuals_and_scalar_case():
    sigma2 = np.array([0.5, 2.0])
    model = BaselineModel(kernel=KernelConfig(1.0), active=np.array([0]), has_bias=True,
                          rv_inputs=np.zeros((0, 1)), alpha=np.array([1.0]), sigma_j=np.zeros((2, 1, 1)),
                          mu_j=np.zeros((2, 1)), sigma2_mp=sigma2, iterations=1, log_marginal=0.0,
                          converged=True, n_train=4)
    # orthogonal zero-mean columns give an exactly diagonal residual covariance
    T = np.array([[1.0, 1.0], [-1.0, 1.0], [1.0, -1.0], [-1.0, -1.0]])
    np.testing.assert_allclose(estimate_full_covariance(model, T, np.zeros((4, 1))), np.diag(sigma2), atol=1e-15)
    m1 = BaselineModel(**{**model.__dict__, "sigma2_mp": np.array([0.7]), "mu_j": np.zeros((1, 1)),
                          "sigma_j": np.zeros((1, 1, 1))})
    got = estimate_full_covariance(m1, T[:, :1], np.zeros((4, 1)))
    assert got.shape == (1, 1) and got[0, 0] == pytest.approx(0.7, rel=1e-15)
    with pytest.raises(NumericalError):
        estimate_full_covariance(model, np.column_stack([np.ones(4), np.zeros(4)]), np.zeros((4, 1)))


def test_every_applied_action_improves_evidence(rng):
    data = two_output_dataset(rng, N=40)
    seen = []
    fit_baseline(data.X, data.T, KernelConfig(1.6), callback=lambda d: seen.append(d["dl2"][d["selected"]]))
    assert min(seen) > -1e-12
