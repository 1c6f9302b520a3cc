"""Per-output multi-output RVR (the existing method).

Each output j has its own noise variance sigma_j^2 and its own posterior
(Sigma_j, mu_j); the outputs share only the alpha hyperparameters. Because the
isolated likelihood of a basis sums V per-output terms, the optimal alpha_i is
a positive root of a (2V-1)-degree polynomial, found per candidate by the
compiled core.
"""

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import backend
from ._pure import ADD, DELETE, REESTIMATE
from .common import ACTION_NAMES, INACTIVE, FitOptions, IterationRecord, check_query, prepare_training
from .errors import DataError, FitError, NumericalError
from .kernels import KernelConfig, basis_rows, build_design_matrix
from .linalg import logdet_spd, spd_inverse, symmetrize

LOG_2PI = math.log(2.0 * math.pi)
SIGMA2_FLOOR = 1e-12


@dataclass
class BaselineHyperState:
    alpha: np.ndarray  # (N+1,)
    sigma2: np.ndarray  # (V,)

    @property
    def active_set(self):
        return np.flatnonzero(np.isfinite(self.alpha))


@dataclass
class BaselinePosterior:
    sigma_j: np.ndarray  # (V, M, M)
    mu_j: np.ndarray  # (V, M)


@dataclass
class BaselineModel:
    kernel: KernelConfig
    active: np.ndarray
    has_bias: bool
    rv_inputs: np.ndarray
    alpha: np.ndarray
    sigma_j: np.ndarray
    mu_j: np.ndarray
    sigma2_mp: np.ndarray
    iterations: int
    log_marginal: float
    converged: bool
    n_train: int
    trace: Optional[list] = field(default=None, repr=False)
    seed: Optional[int] = None  # data seed, metadata only

    method_tag = "existing"

    @property
    def n_relevance(self):
        return int(self.active.size)

    @property
    def n_outputs(self):
        return self.sigma2_mp.shape[0]

    @property
    def n_inputs(self):
        return self.rv_inputs.shape[1]

    @property
    def weight_mean(self):
        """Posterior means stacked as an (M, V) matrix."""
        return self.mu_j.T

    def design(self, X):
        return basis_rows(X, self.rv_inputs, self.has_bias, self.kernel)

    def predict(self, X):
        """Per-output predictive means (K, V) and variances (K, V)."""
        Phi = self.design(X)
        mean = Phi @ self.mu_j.T
        var = self.sigma2_mp[None, :] + np.einsum("km,jmn,kn->kj", Phi, self.sigma_j, Phi)
        return mean, var


def posterior_update_j(design_active, A, tau_j, sigma2_j):
    """``Sigma_j = (Phi^T Phi / sigma_j^2 + A)^-1`` and ``mu_j = Sigma_j Phi^T tau_j / sigma_j^2``."""
    Phi = np.asarray(design_active, dtype=float)
    a = np.asarray(A, dtype=float)
    if a.ndim == 2:
        a = np.diag(a)
    if not sigma2_j > 0:
        raise ValueError("sigma2_j must be positive")
    if Phi.shape[1] < 1 or a.shape[0] != Phi.shape[1]:
        raise ValueError("need at least one active basis with matching alphas")
    sigma, _ = spd_inverse(Phi.T @ Phi / sigma2_j + np.diag(a))
    return sigma, sigma @ (Phi.T @ np.asarray(tau_j, dtype=float)) / sigma2_j


def sq_stats_j(i, j, state, posterior, design, tau_j, B_j):
    """(s', q', s, q) of candidate ``i`` for output ``j``.

    ``B_j`` is ``Phi_a Sigma_j Phi_a^T``, or ``None`` for an empty model.
    In-model candidates are read from ``posterior`` when it is given.
    """
    a = state.alpha[i]
    if math.isfinite(a) and posterior is not None:
        # in-model: read off the posterior, free of the cancellation in the B route
        k = int(np.searchsorted(np.flatnonzero(np.isfinite(state.alpha)), i))
        d = posterior.sigma_j[j][k, k]
        m = posterior.mu_j[j][k]
        return a - a * a * d, a * m, 1.0 / d - a, m / d
    phi = design[:, i]
    tau = np.asarray(tau_j, dtype=float)
    s2 = state.sigma2[j]
    if B_j is None:
        sp = float(phi @ phi) / s2
        qp = float(phi @ tau) / s2
    else:
        Bphi = B_j @ phi
        sp = float(phi @ phi) / s2 - float(phi @ Bphi) / s2**2
        qp = float(phi @ tau) / s2 - float(Bphi @ tau) / s2**2
    if not math.isfinite(a):
        return sp, qp, sp, qp
    den = a - sp
    return sp, qp, a * sp / den, a * qp / den


def stationarity(alpha, s, q):
    """Derivative in alpha of the isolated log likelihood, summed over outputs."""
    s = np.asarray(s, dtype=float)
    q = np.asarray(q, dtype=float)
    return 0.5 * float(np.sum(1.0 / alpha - 1.0 / (alpha + s) - q * q / (alpha + s) ** 2))


def alpha_candidates_baseline(s, q):
    """Positive real roots of the stationarity condition, ascending.

    An empty result means no finite alpha maximises the isolated likelihood,
    i.e. the basis should leave (or stay out of) the model.
    """
    s = np.asarray(s, dtype=float)
    q = np.asarray(q, dtype=float)
    if s.shape != q.shape or s.ndim != 1:
        raise ValueError("s and q must be vectors of equal length")
    if not np.all(s > 0):
        raise ValueError("sparsity values must be positive")
    return backend.kernels.stationary_roots(s, q)


def delta_L_baseline(action, sp, qp, s, q, alpha_old, alpha_new):
    """Twice the change in log marginal likelihood, summed over outputs."""
    sp, qp, s, q = (np.asarray(v, dtype=float) for v in (sp, qp, s, q))
    if action == "reestimate":
        if not (math.isfinite(alpha_old) and math.isfinite(alpha_new)):
            raise ValueError("re-estimation needs finite old and new alpha")
        d = 1.0 / alpha_new - 1.0 / alpha_old
        return float(np.sum(qp * qp * d / (1.0 + sp * d) - np.log1p(sp * d)))
    if action == "add":
        if math.isfinite(alpha_old) or not math.isfinite(alpha_new):
            raise ValueError("addition needs alpha_old = inf and a finite alpha_new")
        return float(np.sum(q * q / (alpha_new + s) + np.log(alpha_new / (alpha_new + s))))
    if action == "delete":
        if not math.isfinite(alpha_old):
            raise ValueError("deletion needs a finite alpha_old")
        return float(np.sum(qp * qp / (sp - alpha_old) - np.log1p(-sp / alpha_old)))
    raise ValueError(f"unknown action {action!r}")


def sigma_update_j(tau_j, design_active, mu_j, alpha_active, sigma_j_diag, N):
    """Re-estimated noise variance ``|tau - Phi mu|^2 / (N - sum(1 - alpha Sigma_ii))``.

    Raises NumericalError when the effective degrees of freedom are not positive.
    """
    tau = np.asarray(tau_j, dtype=float)
    if design_active is None or np.size(mu_j) == 0:
        resid = tau
        gamma = 0.0
    else:
        resid = tau - design_active @ mu_j
        gamma = float(np.sum(1.0 - np.asarray(alpha_active) * np.asarray(sigma_j_diag)))
    den = N - gamma
    if not den > 0:
        raise NumericalError(f"degenerate degrees of freedom (N - sum gamma = {den:g})")
    return float(resid @ resid) / den


def log_marginal_baseline(T, state, design):
    """Log evidence from explicit C_j = sigma_j^2 I + Phi A^-1 Phi^T (O(V N^3))."""
    T = np.asarray(T, dtype=float)
    N, V = T.shape
    alpha = state.alpha
    act = np.flatnonzero(np.isfinite(alpha))
    Phi = design[:, act]
    K = (Phi / alpha[act]) @ Phi.T
    total = 0.0
    for j in range(V):
        C_inv, logdet = spd_inverse(state.sigma2[j] * np.eye(N) + K)
        tau = T[:, j]
        total += N * LOG_2PI + logdet + float(tau @ C_inv @ tau)
    return -0.5 * total


def log_marginal_from_posterior(T, alpha_active, sigma2, posterior, PhiT_T):
    """Log evidence from per-output posteriors, O(V M^3) given ``Phi_a^T T``."""
    T = np.asarray(T, dtype=float)
    N, V = T.shape
    M = np.size(alpha_active)
    sum_log_alpha = float(np.sum(np.log(alpha_active))) if M else 0.0
    total = 0.0
    for j in range(V):
        tau = T[:, j]
        s2 = sigma2[j]
        quad = float(tau @ tau)
        logdet = N * math.log(s2)
        if M:
            quad -= float(PhiT_T[:, j] @ posterior.mu_j[j])
            logdet += -logdet_spd(posterior.sigma_j[j]) - sum_log_alpha
        total += N * LOG_2PI + logdet + quad / s2
    return -0.5 * total


def candidate_stats(G, PhiT_T, active, sigma2, sigma_j, mu_j, alpha_active=None):
    """s'_{i,j} and q'_{i,j} for every candidate and output, shape (N+1, V).

    ``alpha_active`` switches in-model rows to the cancellation-free
    ``alpha - alpha^2 Sigma_j,ii`` and ``alpha mu_j,i``.
    """
    K, V = PhiT_T.shape
    diagG = np.diag(G)
    sp = np.empty((K, V))
    qp = np.empty((K, V))
    Ga = G[:, active] if active.size else None
    for j in range(V):
        s2 = sigma2[j]
        if Ga is None:
            sp[:, j] = diagG / s2
            qp[:, j] = PhiT_T[:, j] / s2
        else:
            sp[:, j] = diagG / s2 - np.einsum("km,km->k", Ga @ sigma_j[j], Ga) / (s2 * s2)
            qp[:, j] = (PhiT_T[:, j] - Ga @ mu_j[j]) / s2
            if alpha_active is not None:
                a = np.asarray(alpha_active, dtype=float)
                sp[active, j] = a - a * a * np.diag(sigma_j[j])
                qp[active, j] = a * mu_j[j]
    return sp, qp


def _posteriors(G, PhiT_T, active, alpha, sigma2):
    V = sigma2.shape[0]
    M = active.size
    sig = np.empty((V, M, M))
    mu = np.empty((V, M))
    Gaa = G[np.ix_(active, active)]
    A = np.diag(alpha[active])
    for j in range(V):
        sig[j], _ = spd_inverse(Gaa / sigma2[j] + A)
        mu[j] = sig[j] @ PhiT_T[active, j] / sigma2[j]
    return sig, mu


def fit_baseline(X, T, cfg, opts=None, callback=None):
    """Fit the per-output MRVR model by sequential basis selection.

    Same calling convention as :func:`mrvr.fast.fit_fast`. Noise variances
    are re-estimated (from iteration 2 on) after a candidate is selected and
    before its action is applied.
    """
    opts = opts or FitOptions()
    kern = backend.kernels
    X, T = prepare_training(X, T)
    N, V = T.shape
    var = np.var(T, axis=0, ddof=1)
    if np.any(var <= 0):
        raise DataError("every target column needs nonzero variance")
    floor = SIGMA2_FLOOR * var
    Phi = build_design_matrix(X, cfg)
    G = Phi.T @ Phi
    PhiT_T = Phi.T @ T

    alpha = np.full(N + 1, INACTIVE)
    sigma2 = 0.1 * var
    active = np.empty(0, dtype=np.intp)
    sig = np.zeros((V, 0, 0))
    mu = np.zeros((V, 0))
    trace = [] if opts.record_trace else None
    converged = False
    n = 1
    while n <= opts.max_iterations:
        sp, qp = candidate_stats(G, PhiT_T, active, sigma2, sig, mu, alpha[active])
        alpha_new, dl2, act = kern.baseline_scores(sp, qp, alpha)
        i = int(np.argmax(dl2))
        if dl2[i] == -math.inf:
            raise FitError("no informative basis: no candidate increases the marginal likelihood")
        action = int(act[i])
        if callback is not None:
            callback(dict(n=n, alpha=alpha.copy(), sigma2=sigma2.copy(), active=active.copy(),
                          sigma_j=sig, mu_j=mu, s_prime=sp, q_prime=qp, alpha_new=alpha_new,
                          dl2=dl2, action=act, selected=i))
        sigma2_before = sigma2
        alpha_before = alpha.copy() if trace is not None else None

        if n != 1:
            Phi_a = Phi[:, active] if active.size else None
            new = np.empty(V)
            for j in range(V):
                new[j] = sigma_update_j(T[:, j], Phi_a, mu[j], alpha[active],
                                        np.diag(sig[j]) if active.size else (), N)
            sigma2 = np.maximum(new, floor)

        if action == REESTIMATE:
            dlog = math.log(alpha[i] / alpha_new[i])
            alpha[i] = alpha_new[i]
            if abs(dlog) < opts.tolerance:
                out = ~np.isfinite(alpha)
                converged = not np.any(np.isfinite(alpha_new[out]))
        elif action == ADD:
            alpha[i] = alpha_new[i]
        elif action == DELETE:
            alpha[i] = INACTIVE

        active = np.flatnonzero(np.isfinite(alpha))
        if active.size:
            sig, mu = _posteriors(G, PhiT_T, active, alpha, sigma2)
        else:
            sig, mu = np.zeros((V, 0, 0)), np.zeros((V, 0))
        if trace is not None:
            trace.append(IterationRecord(n, i, ACTION_NAMES[action], alpha_before,
                                         float(alpha_new[i]) if action != DELETE else INACTIVE,
                                         float(dl2[i]), sigma2_before, sigma2.copy()))
        n += 1
        if converged:
            break

    if active.size == 0:
        raise FitError("model ended with no basis functions")
    post = BaselinePosterior(sig, mu)
    log_ml = log_marginal_from_posterior(T, alpha[active], sigma2, post, PhiT_T[active])
    has_bias = bool(active[0] == 0)
    rv_idx = active[1:] - 1 if has_bias else active - 1
    return BaselineModel(
        kernel=cfg,
        active=active,
        has_bias=has_bias,
        rv_inputs=X[rv_idx].copy(),
        alpha=alpha[active].copy(),
        sigma_j=sig,
        mu_j=mu,
        sigma2_mp=sigma2.copy(),
        iterations=n - 1,
        log_marginal=float(log_ml),
        converged=converged,
        n_train=N,
        trace=trace,
    )


def predict_baseline(model, x_star):
    """Per-output predictive mean (V,) and variance (V,) at one input vector."""
    x = check_query(x_star, model.n_inputs)
    mean, var = model.predict(x[None, :])
    return mean[0], var[0]


def estimate_full_covariance(model, T, design_active):
    """Full noise covariance for a per-output model: D R D.

    D holds the fitted noise standard deviations and R is the correlation
    matrix of the training residuals ``T - Phi [mu_1 ... mu_V]``.
    """
    T = np.asarray(T, dtype=float)
    if T.ndim == 1:
        T = T[:, None]
    N = T.shape[0]
    if N < 2:
        raise ValueError("need at least two rows")
    resid = T - design_active @ model.weight_mean
    cov = resid.T @ resid / (N - 1)
    d = np.sqrt(np.diag(cov))
    if np.any(d <= 0):
        raise NumericalError("degenerate residuals: a residual column has zero variance")
    R = symmetrize(cov / np.outer(d, d))
    np.fill_diagonal(R, 1.0)
    D = np.sqrt(model.sigma2_mp)
    return R * np.outer(D, D)
