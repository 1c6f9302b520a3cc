"""Gaussian kernel and the bias-augmented design matrix."""

import enum
import math
from dataclasses import dataclass

import numpy as np

from . import backend


class KernelKind(str, enum.Enum):
    GAUSSIAN = "gaussian"


@dataclass(frozen=True)
class KernelConfig:
    """Kernel family and width (lambda). Only the Gaussian kernel exists today."""

    width: float
    kind: KernelKind = KernelKind.GAUSSIAN

    def __post_init__(self):
        if not (math.isfinite(self.width) and self.width > 0):
            raise ValueError(f"kernel width must be a positive finite number, got {self.width}")
        object.__setattr__(self, "kind", KernelKind(self.kind))


def kernel_eval(x, x_prime, cfg):
    """``exp(-|x - x'|^2 / (2 width^2))`` for two single input vectors."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    xp = np.atleast_1d(np.asarray(x_prime, dtype=float))
    if x.shape != xp.shape or x.ndim != 1:
        raise ValueError(f"input dimension mismatch: {x.shape} vs {xp.shape}")
    d2 = 0.0
    for a, b in zip(x.tolist(), xp.tolist()):
        diff = a - b
        d2 = d2 + diff * diff
    return math.exp(-(d2 / (2.0 * cfg.width * cfg.width)))


def as_inputs(X):
    """Coerce inputs to an (N, U) float array; 1-D input means U = 1."""
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    if X.ndim != 2:
        raise ValueError(f"inputs must be 1-D or 2-D, got shape {X.shape}")
    return X


def gram(XA, XB, cfg):
    """Kernel matrix between two input sets."""
    XA, XB = as_inputs(XA), as_inputs(XB)
    if XA.shape[1] != XB.shape[1]:
        raise ValueError(f"input dimension mismatch: U={XA.shape[1]} vs U={XB.shape[1]}")
    return backend.kernels.gaussian_gram(XA, XB, float(cfg.width))


def build_design_matrix(X, cfg):
    """N x (N+1) design matrix: a ones column, then column i = K(x_i, x_n) over rows n."""
    X = as_inputs(X)
    N = X.shape[0]
    if N < 1:
        raise ValueError("need at least one input")
    Phi = np.empty((N, N + 1))
    Phi[:, 0] = 1.0
    Phi[:, 1:] = gram(X, X, cfg)
    return Phi


def basis_rows(X_star, rv_inputs, has_bias, cfg):
    """Rows of active basis functions evaluated at new inputs.

    Column order is the bias (if present) followed by the kernel columns of
    ``rv_inputs`` in order, which is the model's active-set order.
    """
    X_star = as_inputs(X_star)
    rv_inputs = np.asarray(rv_inputs, dtype=float).reshape(-1, X_star.shape[1])
    parts = []
    if has_bias:
        parts.append(np.ones((X_star.shape[0], 1)))
    if rv_inputs.shape[0]:
        parts.append(gram(X_star, rv_inputs, cfg))
    if not parts:
        return np.zeros((X_star.shape[0], 0))
    return np.hstack(parts)
