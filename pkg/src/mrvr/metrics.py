"""Covariance losses, prediction error and the two test statistics used when
comparing solvers across Monte Carlo replications."""

import math
from dataclasses import asdict, dataclass

import numpy as np
from scipy.special import ndtr

from .linalg import cholesky_lower, spd_inverse
from .errors import NumericalError


@dataclass
class EvalReport:
    method_tag: str
    seed: int
    runtime_seconds: float
    iterations: int
    entropy_loss: float
    quadratic_loss: float
    rmse: float
    rv_count: int

    def as_dict(self):
        return asdict(self)


MEASURES = ("runtime_seconds", "entropy_loss", "quadratic_loss", "rmse", "rv_count")


def _relative(omega_true, omega_hat, name):
    omega_true = np.atleast_2d(np.asarray(omega_true, dtype=float))
    omega_hat = np.atleast_2d(np.asarray(omega_hat, dtype=float))
    if omega_true.shape != omega_hat.shape or omega_true.shape[0] != omega_true.shape[1]:
        raise ValueError(f"{name}: shapes {omega_true.shape} and {omega_hat.shape} must be equal and square")
    try:
        inv, logdet = spd_inverse(omega_true)
    except NumericalError as err:
        raise ValueError(f"{name}: true covariance is not positive definite") from err
    return omega_hat @ inv, logdet, omega_hat


def entropy_loss(omega_true, omega_hat):
    """``tr(Oh O^-1) - log|Oh O^-1| - V``; zero iff the matrices agree."""
    P, logdet_true, omega_hat = _relative(omega_true, omega_hat, "entropy_loss")
    try:
        logdet_hat = 2.0 * float(np.sum(np.log(np.diag(cholesky_lower(omega_hat)))))
    except NumericalError as err:
        raise ValueError("entropy_loss: estimate is not positive definite") from err
    return float(np.trace(P) - (logdet_hat - logdet_true) - P.shape[0])


def quadratic_loss(omega_true, omega_hat):
    """``tr((Oh O^-1 - I)^2)``."""
    P, _, _ = _relative(omega_true, omega_hat, "quadratic_loss")
    D = P - np.eye(P.shape[0])
    return float(np.trace(D @ D))


def rmse(true_values, predicted):
    a = np.asarray(true_values, dtype=float)
    b = np.asarray(predicted, dtype=float)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    return float(np.sqrt(np.mean((a - b) ** 2)))


def jarque_bera(samples):
    """Jarque-Bera statistic ``n/6 (S^2 + (K-3)^2/4)`` from population moments."""
    x = np.asarray(samples, dtype=float).ravel()
    n = x.size
    if n < 4:
        raise ValueError("need at least 4 samples")
    d = x - x.mean()
    m2 = float(np.mean(d**2))
    if m2 <= 0:
        raise ValueError("samples have zero variance")
    skew = float(np.mean(d**3)) / m2**1.5
    kurt = float(np.mean(d**4)) / m2**2
    return n / 6.0 * (skew**2 + 0.25 * (kurt - 3.0) ** 2)


def _midranks(values):
    order = np.argsort(values, kind="mergesort")
    ranks = np.empty(values.size)
    sorted_vals = values[order]
    i = 0
    ties = []
    while i < values.size:
        j = i
        while j + 1 < values.size and sorted_vals[j + 1] == sorted_vals[i]:
            j += 1
        ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0
        if j > i:
            ties.append(j - i + 1)
        i = j + 1
    return ranks, ties


def rank_sum_pvalue(a, b):
    """Two-sided Wilcoxon rank-sum p-value.

    Normal approximation with midranks, tie-corrected variance and a 0.5
    continuity correction. Symmetric in its arguments.
    """
    a = np.asarray(a, dtype=float).ravel()
    b = np.asarray(b, dtype=float).ravel()
    n1, n2 = a.size, b.size
    if n1 == 0 or n2 == 0:
        raise ValueError("both samples must be nonempty")
    ranks, ties = _midranks(np.concatenate([a, b]))
    n = n1 + n2
    U = float(np.sum(ranks[:n1])) - n1 * (n1 + 1) / 2.0
    mu = n1 * n2 / 2.0
    tie_term = sum(t**3 - t for t in ties)
    var = n1 * n2 / 12.0 * ((n + 1) - tie_term / (n * (n - 1))) if n > 1 else 0.0
    if var <= 0:
        return 1.0
    z = max(abs(U - mu) - 0.5, 0.0) / math.sqrt(var)
    return float(min(1.0, 2.0 * ndtr(-z)))
