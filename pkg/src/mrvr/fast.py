"""Matrix-normal multi-output RVR.

The weight matrix W (M x V) gets a matrix-normal prior with row covariance
A^-1 and column covariance Omega, the same Omega as the noise. All outputs
then share one posterior row covariance Sigma, so each EM iteration costs
one M x M factorisation and one V x V inversion regardless of V.
"""

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import backend
from ._pure import ADD, DELETE, REESTIMATE
from .common import ACTION_NAMES, INACTIVE, FitOptions, IterationRecord, check_query, prepare_training
from .errors import FitError
from .kernels import KernelConfig, as_inputs, basis_rows, build_design_matrix
from .linalg import logdet_spd, spd_inverse, spd_inverse_jitter, symmetrize

LOG_2PI = math.log(2.0 * math.pi)


@dataclass
class FastHyperState:
    alpha: np.ndarray  # (N+1,), inf = out of the model
    omega: np.ndarray  # (V, V)

    @property
    def active_set(self):
        return np.flatnonzero(np.isfinite(self.alpha))


@dataclass
class FastPosterior:
    sigma: np.ndarray  # (M, M)
    weight_mean: np.ndarray  # (M, V)


@dataclass
class SparsityQuality:
    s_prime: float
    q_prime: np.ndarray
    s: float
    q: np.ndarray
    theta: float
    quality: float  # tr(Omega^-1 q^T q) / V
    quality_prime: float  # tr(Omega^-1 q'^T q')
    degenerate: bool = False


@dataclass
class FastModel:
    """Fitted matrix-normal MRVR model.

    ``active`` holds design-matrix column indices (0 is the bias), sorted;
    ``rv_inputs`` are the training inputs behind the kernel columns, in the
    same order.
    """

    kernel: KernelConfig
    active: np.ndarray
    has_bias: bool
    rv_inputs: np.ndarray
    alpha: np.ndarray
    sigma: np.ndarray
    weight_mean: np.ndarray
    omega_mp: np.ndarray
    iterations: int
    log_marginal: float
    converged: bool
    n_train: int
    trace: Optional[list] = field(default=None, repr=False)
    seed: Optional[int] = None  # data seed, metadata only

    method_tag = "proposed"

    @property
    def n_relevance(self):
        return int(self.active.size)

    @property
    def n_outputs(self):
        return self.weight_mean.shape[1]

    @property
    def n_inputs(self):
        return self.rv_inputs.shape[1]

    def design(self, X):
        return basis_rows(X, self.rv_inputs, self.has_bias, self.kernel)

    def predict(self, X):
        """Predictive means (K, V) and covariances (K, V, V) at inputs X."""
        Phi = self.design(X)
        mean = Phi @ self.weight_mean
        scale = 1.0 + np.einsum("km,mn,kn->k", Phi, self.sigma, Phi)
        return mean, scale[:, None, None] * self.omega_mp[None, :, :]


def posterior_update(design_active, A, T):
    """Posterior row covariance ``(Phi^T Phi + A)^-1`` and mean ``Sigma Phi^T T``.

    ``A`` may be the diagonal matrix or the vector of active alphas.
    """
    Phi = np.asarray(design_active, dtype=float)
    a = np.asarray(A, dtype=float)
    if a.ndim == 2:
        a = np.diag(a)
    if Phi.shape[1] < 1 or a.shape[0] != Phi.shape[1]:
        raise ValueError("need at least one active basis with matching alphas")
    if not np.all(np.isfinite(a) & (a > 0)):
        raise ValueError("active alphas must be finite and positive")
    H = Phi.T @ Phi + np.diag(a)
    sigma, _ = spd_inverse(H)
    return FastPosterior(sigma=sigma, weight_mean=sigma @ (Phi.T @ np.asarray(T, dtype=float)))


def sq_stats(i, state, posterior, design, T, B):
    """Sparsity/quality statistics of candidate ``i``.

    ``B`` is ``Phi_a Sigma Phi_a^T`` (N x N) for the current active set, or
    ``None`` for an empty model; it does not depend on ``i`` so callers scoring
    many candidates compute it once. In-model candidates are read from
    ``posterior`` when it is given.
    """
    phi = design[:, i]
    T = np.asarray(T, dtype=float)
    a = state.alpha[i]
    if math.isfinite(a) and posterior is not None:
        # in-model: read off the posterior, free of the cancellation in the B route
        k = int(np.searchsorted(state.active_set, i))
        d = posterior.sigma[k, k]
        m = posterior.weight_mean[k]
        sp, qp = a - a * a * d, a * m
    elif B is None:
        sp = float(phi @ phi)
        qp = phi @ T
    else:
        Bphi = B @ phi
        sp = float(phi @ phi - phi @ Bphi)
        qp = phi @ T - Bphi @ T
    omega_inv, _ = spd_inverse_jitter(state.omega)
    V = T.shape[1]
    rp = float(qp @ omega_inv @ qp)
    if not math.isfinite(a):
        s, q = sp, qp.copy()
        degenerate = False
    elif posterior is not None:
        s, q = 1.0 / d - a, m / d
        degenerate = False
    else:
        den = a - sp
        degenerate = not den > 1e-12 * max(1.0, a)
        s = a * sp / den
        q = a * qp / den
    quality = float(q @ omega_inv @ q) / V
    theta = -math.inf if degenerate else quality - s
    return SparsityQuality(sp, qp, s, q, theta, quality, rp, degenerate)


def alpha_star_fast(sq):
    """Maximiser of the isolated likelihood in alpha_i: s^2/theta, or inf if theta <= 0."""
    if sq.theta > 0:
        return sq.s * sq.s / sq.theta
    return INACTIVE


def delta_L_fast(action, sq, alpha_old, alpha_new, omega):
    """Twice the change in log marginal likelihood for one action at fixed Omega."""
    V = omega.shape[0]
    omega_inv, _ = spd_inverse_jitter(omega)
    qp = np.asarray(sq.q_prime, dtype=float)
    r = float(qp @ omega_inv @ qp)
    sp = sq.s_prime
    if action == "reestimate":
        if not (math.isfinite(alpha_old) and math.isfinite(alpha_new)):
            raise ValueError("re-estimation needs finite old and new alpha")
        d = 1.0 / alpha_new - 1.0 / alpha_old
        return r * d / (1.0 + sp * d) - V * math.log1p(sp * d)
    if action == "add":
        if math.isfinite(alpha_old):
            raise ValueError("addition needs alpha_old = inf")
        return (r - V * sp) / sp + V * math.log(V * sp / r)
    if action == "delete":
        if not math.isfinite(alpha_old):
            raise ValueError("deletion needs a finite alpha_old")
        return r / (sp - alpha_old) - V * math.log1p(-sp / alpha_old)
    raise ValueError(f"unknown action {action!r}")


def omega_update(T, design_active, weight_mean, N):
    """Noise covariance ``T^T (T - Phi M) / N``, symmetrised."""
    T = np.asarray(T, dtype=float)
    if design_active is None or np.size(weight_mean) == 0:
        resid = T
    else:
        resid = T - design_active @ weight_mean
    return symmetrize(T.T @ resid / N)


def log_marginal_fast(T, alpha, omega, design):
    """Log evidence built directly from C = I + Phi A^-1 Phi^T.

    O(N^3): intended for checks and diagnostics, never the EM hot path.
    """
    T = np.asarray(T, dtype=float)
    alpha = alpha.alpha if isinstance(alpha, FastHyperState) else np.asarray(alpha, dtype=float)
    N, V = T.shape
    act = np.flatnonzero(np.isfinite(alpha))
    Phi = design[:, act]
    C = np.eye(N) + (Phi / alpha[act]) @ Phi.T
    C_inv, logdet_C = spd_inverse(C)
    omega_inv, logdet_O = spd_inverse(omega)
    quad = np.trace(omega_inv @ T.T @ C_inv @ T)
    return -0.5 * (V * N * LOG_2PI + N * logdet_O + V * logdet_C + quad)


def log_marginal_from_posterior(T, alpha_active, sigma, weight_mean, PhiT_T, omega):
    """Log evidence from the current posterior, O(M^3 + V^3) given ``Phi^T T``.

    Uses log|C| = -log|Sigma| - sum(log alpha) and
    T^T C^-1 T = T^T T - (Phi^T T)^T M.
    """
    T = np.asarray(T, dtype=float)
    N, V = T.shape
    omega_inv, logdet_O = spd_inverse(omega)
    S = T.T @ T
    logdet_C = 0.0
    if np.size(alpha_active):
        S = S - PhiT_T.T @ weight_mean
        logdet_C = -logdet_spd(sigma) - float(np.sum(np.log(alpha_active)))
    quad = float(np.sum(omega_inv * S))
    return -0.5 * (V * N * LOG_2PI + N * logdet_O + V * logdet_C + quad)


def _matrix_normal_logpdf(X, mean, rowcov_logdet, rowcov_inv, colcov_logdet, colcov_inv):
    n, p = X.shape
    D = X - mean
    quad = float(np.sum((rowcov_inv @ D) * (D @ colcov_inv)))
    return -0.5 * (n * p * LOG_2PI + p * rowcov_logdet + n * colcov_logdet + quad)


def log_likelihood_fast(T, design_active, W, omega):
    """log p(T | W, Omega) of the matrix-normal likelihood."""
    T = np.asarray(T, dtype=float)
    N = T.shape[0]
    o_inv, o_ld = spd_inverse(omega)
    return _matrix_normal_logpdf(T, design_active @ W, 0.0, np.eye(N), o_ld, o_inv)


def log_prior_fast(W, alpha_active, omega):
    """log p(W | alpha, Omega) with row precisions alpha and column covariance Omega."""
    a = np.asarray(alpha_active, dtype=float)
    o_inv, o_ld = spd_inverse(omega)
    return _matrix_normal_logpdf(
        np.asarray(W, dtype=float), 0.0, -float(np.sum(np.log(a))), np.diag(a), o_ld, o_inv
    )


def log_posterior_fast(W, posterior, omega):
    """log p(W | T, alpha, Omega) for the matrix-normal posterior (M, Sigma, Omega)."""
    s_inv, s_ld = spd_inverse(posterior.sigma)
    o_inv, o_ld = spd_inverse(omega)
    return _matrix_normal_logpdf(
        np.asarray(W, dtype=float), posterior.weight_mean, s_ld, s_inv, o_ld, o_inv
    )


def candidate_stats(G, PhiT_T, active, sigma, weight_mean, alpha_active=None):
    """s'_i and q'_i for every candidate, from the Gram matrix ``G = Phi^T Phi``.

    With ``alpha_active`` given, in-model rows use ``alpha - alpha^2 Sigma_ii``
    and ``alpha m_i`` instead; same values, but no cancellation when the
    noise is small next to the signal.
    """
    if active.size == 0:
        return np.diag(G).copy(), PhiT_T.copy()
    Ga = G[:, active]
    sp = np.diag(G) - np.einsum("km,km->k", Ga @ sigma, Ga)
    qp = PhiT_T - Ga @ weight_mean
    if alpha_active is not None:
        a = np.asarray(alpha_active, dtype=float)
        sp[active] = a - a * a * np.diag(sigma)
        qp[active] = a[:, None] * weight_mean
    return sp, qp


def fit_fast(X, T, cfg, opts=None, callback=None):
    """Fit the matrix-normal MRVR model by sequential basis selection.

    Parameters
    ----------
    X : (N, U) or (N,) array
        Training inputs.
    T : (N, V) or (N,) array
        Training targets.
    cfg : KernelConfig
    opts : FitOptions, optional
    callback : callable, optional
        Called once per iteration, before the selected action is applied,
        with a dict of the current state and all candidate statistics.

    Returns
    -------
    FastModel

    Raises
    ------
    FitError
        If no basis can enter the empty model.
    """
    opts = opts or FitOptions()
    kern = backend.kernels
    X, T = prepare_training(X, T)
    N, V = T.shape
    Phi = build_design_matrix(X, cfg)
    G = Phi.T @ Phi
    PhiT_T = Phi.T @ T

    alpha = np.full(N + 1, INACTIVE)
    centred = T - T.mean(axis=0)
    omega = symmetrize(0.1 / (N - 1) * (centred.T @ centred))
    active = np.empty(0, dtype=np.intp)
    sigma = np.zeros((0, 0))
    mean = np.zeros((0, V))
    trace = [] if opts.record_trace else None
    converged = False
    n = 1
    while n <= opts.max_iterations:
        omega_inv, _ = spd_inverse_jitter(omega)
        sp, qp = candidate_stats(G, PhiT_T, active, sigma, mean, alpha[active])
        rp = np.einsum("kv,kv->k", qp @ omega_inv, qp)
        theta, alpha_new, dl2, act = kern.fast_scores(sp, rp, alpha, V)
        i = int(np.argmax(dl2))
        if dl2[i] == -math.inf:
            raise FitError("no informative basis: no candidate increases the marginal likelihood")
        action = int(act[i])
        if callback is not None:
            callback(dict(n=n, alpha=alpha.copy(), omega=omega.copy(), active=active.copy(),
                          sigma=sigma, weight_mean=mean, s_prime=sp, q_prime=qp, theta=theta,
                          alpha_new=alpha_new, dl2=dl2, action=act, selected=i))
        omega_before = omega
        alpha_before = alpha.copy() if trace is not None else None

        if action == REESTIMATE:
            dlog = math.log(alpha[i] / alpha_new[i])
            alpha[i] = alpha_new[i]
            if abs(dlog) < opts.tolerance:
                out = ~np.isfinite(alpha)
                converged = not np.any(theta[out] > 0)
        elif action == ADD:
            alpha[i] = alpha_new[i]
        elif action == DELETE:
            alpha[i] = INACTIVE

        if n != 1:
            omega = omega_update(T, Phi[:, active] if active.size else None, mean, N)

        active = np.flatnonzero(np.isfinite(alpha))
        if active.size:
            sigma, _ = spd_inverse(G[np.ix_(active, active)] + np.diag(alpha[active]))
            mean = sigma @ PhiT_T[active]
        else:
            sigma = np.zeros((0, 0))
            mean = np.zeros((0, V))
        if trace is not None:
            trace.append(IterationRecord(n, i, ACTION_NAMES[action], alpha_before,
                                         float(alpha_new[i]) if action != DELETE else INACTIVE,
                                         float(dl2[i]), omega_before, omega))
        n += 1
        if converged:
            break

    if active.size == 0:
        raise FitError("model ended with no basis functions")
    log_ml = log_marginal_from_posterior(T, alpha[active], sigma, mean, PhiT_T[active], omega)
    has_bias = bool(active[0] == 0)
    rv_idx = active[1:] - 1 if has_bias else active - 1
    return FastModel(
        kernel=cfg,
        active=active,
        has_bias=has_bias,
        rv_inputs=X[rv_idx].copy(),
        alpha=alpha[active].copy(),
        sigma=sigma,
        weight_mean=mean,
        omega_mp=omega,
        iterations=n - 1,
        log_marginal=float(log_ml),
        converged=converged,
        n_train=N,
        trace=trace,
    )


def predict_fast(model, x_star):
    """Predictive mean (V,) and covariance (V, V) at a single input vector."""
    x = check_query(x_star, model.n_inputs)
    mean, cov = model.predict(x[None, :])
    return mean[0], cov[0]
