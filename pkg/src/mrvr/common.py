"""Options and bookkeeping shared by both EM solvers."""

import math
from dataclasses import dataclass, field

import numpy as np

from ._pure import ADD, DELETE, NONE, REESTIMATE
from .errors import DataError
from .kernels import as_inputs

INACTIVE = math.inf

ACTION_NAMES = {NONE: "none", REESTIMATE: "reestimate", ADD: "add", DELETE: "delete"}


@dataclass
class FitOptions:
    """Stopping rules for the EM loop.

    ``tolerance`` bounds |log(alpha_old / alpha_new)| on a re-estimation
    step; 0.1 is the customary value. ``record_trace`` keeps one
    :class:`IterationRecord` per iteration on the fitted model.
    """

    max_iterations: int = 1000
    tolerance: float = 0.1
    record_trace: bool = False

    def __post_init__(self):
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if not self.tolerance > 0:
            raise ValueError("tolerance must be positive")


@dataclass
class IterationRecord:
    """What one EM iteration did.

    ``alpha_before`` is the full (N+1) alpha vector before the action and
    ``noise_before``/``noise_after`` the noise parameter (Omega for the
    matrix-normal method, the sigma^2 vector for the per-output method)
    used to score candidates and the value after this iteration's update.
    """

    n: int
    index: int
    action: str
    alpha_before: np.ndarray
    alpha_new: float
    dl2: float
    noise_before: np.ndarray
    noise_after: np.ndarray
    extra: dict = field(default_factory=dict)


def prepare_training(X, T):
    X = as_inputs(X)
    T = np.asarray(T, dtype=float)
    if T.ndim == 1:
        T = T[:, None]
    if T.ndim != 2 or T.shape[0] != X.shape[0]:
        raise DataError(f"targets shape {T.shape} does not match {X.shape[0]} inputs")
    if X.shape[0] < 2:
        raise DataError("need at least two training samples")
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(T))):
        raise DataError("inputs and targets must be finite")
    return X, T


def check_query(x_star, U):
    x = np.asarray(x_star, dtype=float)
    if x.ndim == 0:
        x = x[None]
    if x.ndim != 1 or x.shape[0] != U:
        raise ValueError(f"expected an input vector of length {U}, got shape {x.shape}")
    return x
