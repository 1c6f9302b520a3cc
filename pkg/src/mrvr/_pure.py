"""Pure numpy implementation of the hot kernels.

This module and the compiled ``_core`` extension expose the same functions
with the same semantics; :mod:`mrvr.backend` picks one at import time.

Action codes returned by the scoring kernels::

    0  NONE        candidate out of the model and not worth adding
    1  REESTIMATE  in-model basis gets a new finite alpha
    2  ADD         out-of-model basis enters with a finite alpha
    3  DELETE      in-model basis is pruned (alpha -> inf)
"""

import math

import numpy as np

NONE, REESTIMATE, ADD, DELETE = 0, 1, 2, 3

# Root filters. Imaginary dust is judged in the normalised variable u = alpha/c.
IMAG_TOL = 1e-8
MIN_ROOT = 1e-12
DEDUP_RTOL = 1e-8
LEAD_RTOL = 1e-14
DEN_RTOL = 1e-12

NAME = "pure"


def gaussian_gram(XA, XB, width):
    """Gaussian kernel matrix ``K[a, b] = exp(-|XA[a] - XB[b]|^2 / (2 width^2))``.

    The squared distance is accumulated one input dimension at a time, in
    order, and the exponential is libm's, so every entry is bit-identical to
    :func:`mrvr.kernels.kernel_eval` on the same pair.
    """
    XA = np.asarray(XA, dtype=float)
    XB = np.asarray(XB, dtype=float)
    d2 = np.zeros((XA.shape[0], XB.shape[0]))
    for u in range(XA.shape[1]):
        diff = XA[:, u][:, None] - XB[:, u][None, :]
        d2 += diff * diff
    denom = 2.0 * width * width
    arg = -(d2 / denom)
    # math.exp, not np.exp: numpy's SIMD exp may differ from libm by an ulp
    return np.fromiter(map(math.exp, arg.ravel()), dtype=float, count=arg.size).reshape(arg.shape)


def fast_scores(sp, rp, alpha, V):
    """Score every candidate for the matrix-normal method.

    Parameters
    ----------
    sp : (K,) array
        s'_i = phi_i^T C^-1 phi_i.
    rp : (K,) array
        tr(Omega^-1 q'_i^T q'_i), i.e. the Omega^-1 quadratic form of q'_i.
    alpha : (K,) array
        Current alphas, ``inf`` for bases out of the model.
    V : int
        Number of outputs.

    Returns
    -------
    theta, alpha_new, dl2, action : arrays of shape (K,)
        ``dl2`` is twice the change in log marginal likelihood of the
        proposed action, ``-inf`` when there is no action.
    """
    sp = np.asarray(sp, dtype=float)
    rp = np.asarray(rp, dtype=float)
    alpha = np.asarray(alpha, dtype=float)
    K = sp.shape[0]
    V = float(V)
    active = np.isfinite(alpha)
    theta = np.full(K, -np.inf)
    alpha_new = np.full(K, np.inf)
    dl2 = np.full(K, -np.inf)
    action = np.zeros(K, dtype=np.int8)

    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        # out of the model: s = s', q = q'
        out = ~active & (sp > 0)
        th = rp[out] / V - sp[out]
        theta[out] = th
        add = np.flatnonzero(out)[th > 0]
        s, r = sp[add], rp[add]
        alpha_new[add] = s * s / (r / V - s)
        dl2[add] = (r - V * s) / s + V * np.log(V * s / r)
        action[add] = ADD

        # in the model: promote s', q' to s, q
        idx = np.flatnonzero(active)
        a, s1, r1 = alpha[idx], sp[idx], rp[idx]
        den = a - s1
        ok = den > DEN_RTOL * np.maximum(1.0, a)
        f = a / den
        s = f * s1
        th = np.where(ok, f * f * r1 / V - s, -np.inf)
        theta[idx] = th
        re = ok & (th > 0)
        # re-estimate
        ri = idx[re]
        anew = s[re] ** 2 / th[re]
        alpha_new[ri] = anew
        d = 1.0 / anew - 1.0 / a[re]
        dl2[ri] = r1[re] * d / (1.0 + s1[re] * d) - V * np.log1p(s1[re] * d)
        action[ri] = REESTIMATE
        # delete
        de = ~re
        di = idx[de]
        dd = r1[de] / (s1[de] - a[de]) - V * np.log1p(-s1[de] / a[de])
        dl2[di] = np.where(np.isfinite(dd), dd, -np.inf)
        action[di] = DELETE
    return theta, alpha_new, dl2, action


def _stationary_coeffs(s, q2):
    """Descending coefficients of sum_j (a_j u + b_j) prod_{k != j} (u + s_k)^2."""
    V = s.shape[0]
    total = np.zeros(2 * V)
    for j in range(V):
        p = np.array([s[j] - q2[j], s[j] * s[j]])
        for k in range(V):
            if k != j:
                p = np.convolve(p, np.array([1.0, 2.0 * s[k], s[k] * s[k]]))
        total[-p.size:] += p
    return total


def _stationary_value(u, s, q2):
    """Value, derivative and term-magnitude of sum_j d/du of the isolated likelihood (times 2)."""
    f = 0.0
    df = 0.0
    mag = 0.0
    for j in range(s.shape[0]):
        us = u + s[j]
        a = s[j] - q2[j]
        b = s[j] * s[j]
        num = a * u + b
        D = u * us * us
        dD = us * (3.0 * u + s[j])
        f += num / D
        df += (a * D - num * dD) / (D * D)
        mag += abs(s[j] / (u * us)) + abs(q2[j] / (us * us))
    return f, df, mag


def stationary_roots(s, q):
    """Positive real roots in alpha of the per-basis stationarity condition.

    Solves ``sum_j (1/a - 1/(a+s_j) - q_j^2/(a+s_j)^2) = 0`` by companion
    matrix eigenvalues of the cleared (2V-1)-degree polynomial, then polishes
    each real root with Newton steps on the rational form. Returned roots are
    sorted ascending; an empty array means no finite maximiser.
    """
    s = np.asarray(s, dtype=float)
    q = np.asarray(q, dtype=float)
    c = float(np.mean(s))
    sn = s / c
    q2n = q * q / c
    coeffs = _stationary_coeffs(sn, q2n)
    big = np.max(np.abs(coeffs))
    if big == 0.0:
        return np.empty(0)
    lead = 0
    while lead < coeffs.size and abs(coeffs[lead]) <= LEAD_RTOL * big:
        lead += 1
    coeffs = coeffs[lead:]
    deg = coeffs.size - 1
    if deg < 1:
        return np.empty(0)
    changes = _sign_changes(coeffs)
    if changes == 0:
        return np.empty(0)
    if deg == 1:
        cand = np.array([-coeffs[1] / coeffs[0]])
    elif changes == 1:
        cand = np.array([_unique_positive_root(coeffs)])
    else:
        comp = np.zeros((deg, deg))
        comp[0, :] = -coeffs[1:] / coeffs[0]
        comp[np.arange(1, deg), np.arange(deg - 1)] = 1.0
        ev = np.linalg.eigvals(comp)
        keep = np.abs(ev.imag) <= IMAG_TOL * np.maximum(1.0, np.abs(ev.real))
        cand = ev.real[keep]
    out = []
    for u in cand:
        if u <= 0.0:
            continue
        u = _polish(u, sn, q2n)
        alpha = u * c
        if alpha <= MIN_ROOT or not math.isfinite(alpha):
            continue
        if any(abs(alpha - r) <= DEDUP_RTOL * max(abs(alpha), abs(r)) for r in out):
            continue
        out.append(alpha)
    out.sort()
    return np.array(out)


def _sign_changes(coeffs):
    """Descartes count: an upper bound on positive roots, exact when 0 or 1."""
    changes = 0
    prev = 0.0
    for c in coeffs:
        if c == 0.0:
            continue
        if prev != 0.0 and (c > 0.0) != (prev > 0.0):
            changes += 1
        prev = c
    return changes


def _horner(coeffs, x):
    p = 0.0
    dp = 0.0
    for c in coeffs:
        dp = dp * x + p
        p = p * x + c
    return p, dp


def _unique_positive_root(coeffs):
    """The single positive root of a polynomial with one coefficient sign change.

    Safeguarded Newton inside Cauchy-type bounds, bisecting geometrically
    whenever a Newton step leaves the bracket.
    """
    big = max(abs(c) for c in coeffs[1:])
    lo = abs(coeffs[-1]) / (abs(coeffs[-1]) + max(abs(c) for c in coeffs[:-1]))
    hi = 1.0 + big / abs(coeffs[0])
    p_lo, _ = _horner(coeffs, lo)
    if p_lo == 0.0:
        return lo
    sign_lo = p_lo > 0.0
    x = math.sqrt(lo * hi)
    for _ in range(200):
        p, dp = _horner(coeffs, x)
        if p == 0.0:
            return x
        if (p > 0.0) == sign_lo:
            lo = x
        else:
            hi = x
        if hi - lo <= 4e-16 * hi:
            break
        xn = x - p / dp if dp != 0.0 else -1.0
        if not lo < xn < hi:
            xn = math.sqrt(lo * hi)
        x = xn
    return x


def _polish(u, s, q2, steps=4):
    f, df, _ = _stationary_value(u, s, q2)
    for _ in range(steps):
        if df == 0.0 or not math.isfinite(df):
            break
        un = u - f / df
        if not un > 0.0:
            break
        fn, dfn, _ = _stationary_value(un, s, q2)
        if not abs(fn) < abs(f):
            break
        u, f, df = un, fn, dfn
    return u


def baseline_scores(sp, qp, alpha):
    """Score every candidate for the per-output (existing) method.

    Parameters
    ----------
    sp, qp : (K, V) arrays
        s'_{i,j} and q'_{i,j}.
    alpha : (K,) array
        Current alphas, ``inf`` out of the model.

    Returns
    -------
    alpha_new, dl2, action : arrays of shape (K,)
        ``alpha_new`` is ``inf`` when the polynomial has no positive root.
    """
    sp = np.asarray(sp, dtype=float)
    qp = np.asarray(qp, dtype=float)
    alpha = np.asarray(alpha, dtype=float)
    K = sp.shape[0]
    alpha_new = np.full(K, np.inf)
    dl2 = np.full(K, -np.inf)
    action = np.zeros(K, dtype=np.int8)
    for i in range(K):
        a = alpha[i]
        s1, q1 = sp[i], qp[i]
        if np.any(s1 <= 0):
            continue
        if math.isfinite(a):
            den = a - s1
            if np.any(den <= DEN_RTOL * max(1.0, a)):
                # degenerate: deletion only
                with np.errstate(divide="ignore", invalid="ignore"):
                    dd = float(np.sum(q1 * q1 / (s1 - a) - np.log1p(-s1 / a)))
                dl2[i] = dd if math.isfinite(dd) else -np.inf
                action[i] = DELETE
                continue
            s = a * s1 / den
            q = a * q1 / den
        else:
            s, q = s1, q1
        roots = stationary_roots(s, q)
        if roots.size == 0:
            if math.isfinite(a):
                dl2[i] = float(np.sum(q1 * q1 / (s1 - a) - np.log1p(-s1 / a)))
                action[i] = DELETE
            continue
        best = -np.inf
        best_root = roots[0]
        for r in roots:
            if math.isfinite(a):
                d = 1.0 / r - 1.0 / a
                val = float(np.sum(q1 * q1 * d / (1.0 + s1 * d) - np.log1p(s1 * d)))
            else:
                val = float(np.sum(q * q / (r + s) + np.log(r / (r + s))))
            if val > best:
                best = val
                best_root = r
        alpha_new[i] = best_root
        dl2[i] = best
        action[i] = REESTIMATE if math.isfinite(a) else ADD
    return alpha_new, dl2, action
