"""Small dense linear-algebra helpers built on LAPACK Cholesky routines."""

import numpy as np
from scipy.linalg import lapack

from .errors import NumericalError


def cholesky_lower(A):
    """Lower Cholesky factor of a symmetric positive-definite matrix.

    Raises
    ------
    NumericalError
        If ``A`` is not numerically positive definite. The error carries the
        zero-based index of the failing pivot.
    """
    A = np.asarray(A, dtype=float)
    c, info = lapack.dpotrf(A, lower=1, clean=1)
    if info > 0:
        raise NumericalError(
            f"matrix not positive definite (pivot {info - 1} failed)", pivot=info - 1
        )
    if info < 0:
        raise ValueError(f"illegal argument to dpotrf ({info})")
    return c


def spd_inverse(A):
    """Inverse and log-determinant of an SPD matrix via Cholesky.

    Returns ``(inv, logdet)``. The inverse is exactly symmetric.
    """
    L = cholesky_lower(A)
    inv, info = lapack.dpotri(L, lower=1)
    if info != 0:
        raise NumericalError(f"dpotri failed ({info})", pivot=info - 1 if info > 0 else None)
    inv = np.tril(inv) + np.tril(inv, -1).T
    logdet = 2.0 * np.sum(np.log(np.diag(L)))
    return inv, float(logdet)


def spd_inverse_jitter(A, tries=3):
    """Like :func:`spd_inverse` but retries with diagonal jitter.

    The jitter starts at ``1e-10 * tr(A) / n`` and grows tenfold per retry,
    up to ``tries`` retries.
    """
    A = np.asarray(A, dtype=float)
    try:
        return spd_inverse(A)
    except NumericalError as err:
        last = err
    n = A.shape[0]
    scale = np.trace(A) / n
    if not np.isfinite(scale) or scale <= 0:
        scale = 1.0
    eps = 1e-10 * scale
    for _ in range(tries):
        try:
            return spd_inverse(A + eps * np.eye(n))
        except NumericalError as err:
            last = err
        eps *= 10.0
    raise last


def logdet_spd(A):
    L = cholesky_lower(A)
    return float(2.0 * np.sum(np.log(np.diag(L))))


def symmetrize(A):
    return 0.5 * (A + A.T)
