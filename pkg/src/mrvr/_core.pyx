# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot kernels. Semantics mirror :mod:`mrvr._pure` exactly."""

import numpy as np
cimport numpy as cnp
from libc.math cimport exp, log, log1p, fabs, INFINITY, isfinite, sqrt
from scipy.linalg.cython_lapack cimport dgeev

cnp.import_array()

DEF NONE = 0
DEF REESTIMATE = 1
DEF ADD = 2
DEF DELETE = 3

cdef double IMAG_TOL = 1e-8
cdef double MIN_ROOT = 1e-12
cdef double DEDUP_RTOL = 1e-8
cdef double LEAD_RTOL = 1e-14
cdef double DEN_RTOL = 1e-12

NAME = "compiled"


def gaussian_gram(XA, XB, double width):
    cdef double[:, ::1] A = np.ascontiguousarray(XA, dtype=np.float64)
    cdef double[:, ::1] B = np.ascontiguousarray(XB, dtype=np.float64)
    cdef Py_ssize_t na = A.shape[0], nb = B.shape[0], U = A.shape[1]
    if B.shape[1] != U:
        raise ValueError("input dimension mismatch")
    out = np.empty((na, nb))
    cdef double[:, ::1] K = out
    cdef double denom = 2.0 * width * width
    cdef double d2, diff
    cdef Py_ssize_t a, b, u
    with nogil:
        for a in range(na):
            for b in range(nb):
                d2 = 0.0
                for u in range(U):
                    diff = A[a, u] - B[b, u]
                    d2 = d2 + diff * diff
                K[a, b] = exp(-(d2 / denom))
    return out


def fast_scores(sp, rp, alpha, int V):
    cdef double[::1] s1 = np.ascontiguousarray(sp, dtype=np.float64)
    cdef double[::1] r1 = np.ascontiguousarray(rp, dtype=np.float64)
    cdef double[::1] al = np.ascontiguousarray(alpha, dtype=np.float64)
    cdef Py_ssize_t K = s1.shape[0], i
    theta_a = np.full(K, -np.inf)
    anew_a = np.full(K, np.inf)
    dl2_a = np.full(K, -np.inf)
    act_a = np.zeros(K, dtype=np.int8)
    cdef double[::1] theta = theta_a
    cdef double[::1] anew = anew_a
    cdef double[::1] dl2 = dl2_a
    cdef signed char[::1] act = act_a
    cdef double Vd = V, a, s, r, den, f, th, d, val
    with nogil:
        for i in range(K):
            a = al[i]
            s = s1[i]
            r = r1[i]
            if not isfinite(a):
                if not s > 0.0:
                    continue
                th = r / Vd - s
                theta[i] = th
                if th > 0.0:
                    anew[i] = s * s / th
                    dl2[i] = (r - Vd * s) / s + Vd * log(Vd * s / r)
                    act[i] = ADD
                continue
            den = a - s
            act[i] = DELETE
            if den > DEN_RTOL * (a if a > 1.0 else 1.0):
                f = a / den
                th = f * f * r / Vd - f * s
                theta[i] = th
                if th > 0.0:
                    anew[i] = (f * s) * (f * s) / th
                    d = 1.0 / anew[i] - 1.0 / a
                    dl2[i] = r * d / (1.0 + s * d) - Vd * log1p(s * d)
                    act[i] = REESTIMATE
                    continue
            val = r / (s - a) - Vd * log1p(-s / a)
            dl2[i] = val if isfinite(val) else -INFINITY
    return theta_a, anew_a, dl2_a, act_a


cdef class _RootWorkspace:
    cdef public object comp, wr, wi, work, coeffs, tmp, roots
    cdef int cap

    def __init__(self, int V):
        cdef int deg = 2 * V - 1
        self.cap = deg if deg > 1 else 1
        self.comp = np.zeros((self.cap, self.cap), order="F")
        self.wr = np.zeros(self.cap)
        self.wi = np.zeros(self.cap)
        self.work = np.zeros(4 * self.cap + 8)
        self.coeffs = np.zeros(2 * V)
        self.tmp = np.zeros(2 * V + 2)
        self.roots = np.zeros(self.cap)


cdef void _stationary_value(double u, double[::1] s, double[::1] q2, Py_ssize_t V,
                            double *f, double *df) noexcept nogil:
    cdef double us, a, b, num, D, dD
    cdef Py_ssize_t j
    f[0] = 0.0
    df[0] = 0.0
    for j in range(V):
        us = u + s[j]
        a = s[j] - q2[j]
        b = s[j] * s[j]
        num = a * u + b
        D = u * us * us
        dD = us * (3.0 * u + s[j])
        f[0] += num / D
        df[0] += (a * D - num * dD) / (D * D)


cdef double _polish(double u, double[::1] s, double[::1] q2, Py_ssize_t V) noexcept nogil:
    cdef double f, df, fn, dfn, un
    cdef int it
    _stationary_value(u, s, q2, V, &f, &df)
    for it in range(4):
        if df == 0.0 or not isfinite(df):
            break
        un = u - f / df
        if not un > 0.0:
            break
        _stationary_value(un, s, q2, V, &fn, &dfn)
        if not fabs(fn) < fabs(f):
            break
        u = un
        f = fn
        df = dfn
    return u


cdef int _sign_changes(const double* c, int n) noexcept nogil:
    cdef int k, changes = 0
    cdef double prev = 0.0
    for k in range(n):
        if c[k] == 0.0:
            continue
        if prev != 0.0 and (c[k] > 0.0) != (prev > 0.0):
            changes += 1
        prev = c[k]
    return changes


cdef inline void _horner(const double* c, int n, double x, double* p, double* dp) noexcept nogil:
    cdef double pv = 0.0, dv = 0.0
    cdef int k
    for k in range(n):
        dv = dv * x + pv
        pv = pv * x + c[k]
    p[0] = pv
    dp[0] = dv


cdef double _unique_positive_root(const double* c, int n) noexcept nogil:
    # safeguarded Newton between Cauchy-type bounds, geometric bisection fallback
    cdef double big = 0.0, head = 0.0, lo, hi, x, xn, p, dp
    cdef int k, it
    cdef bint sign_lo
    for k in range(1, n):
        if fabs(c[k]) > big:
            big = fabs(c[k])
    for k in range(n - 1):
        if fabs(c[k]) > head:
            head = fabs(c[k])
    lo = fabs(c[n - 1]) / (fabs(c[n - 1]) + head)
    hi = 1.0 + big / fabs(c[0])
    _horner(c, n, lo, &p, &dp)
    if p == 0.0:
        return lo
    sign_lo = p > 0.0
    x = sqrt(lo * hi)
    for it in range(200):
        _horner(c, n, x, &p, &dp)
        if p == 0.0:
            return x
        if (p > 0.0) == sign_lo:
            lo = x
        else:
            hi = x
        if hi - lo <= 4e-16 * hi:
            break
        xn = x - p / dp if dp != 0.0 else -1.0
        if not (lo < xn and xn < hi):
            xn = sqrt(lo * hi)
        x = xn
    return x


cdef int _roots(double[::1] s, double[::1] q, _RootWorkspace ws, double[::1] sn,
                double[::1] q2n) except -1:
    """Fill ws.roots with positive stationary roots; return their count."""
    cdef Py_ssize_t V = s.shape[0], j, k, m, plen, n
    cdef double c = 0.0, big, x
    cdef double[::1] coeffs = ws.coeffs
    cdef double[::1] tmp = ws.tmp
    cdef double[::1] roots = ws.roots
    cdef double[::1, :] comp = ws.comp
    cdef double[::1] wr = ws.wr
    cdef double[::1] wi = ws.wi
    cdef double[::1] work = ws.work
    cdef double p0, p1, p2
    cdef int lead, deg, nroots = 0, info, ldv = 1, lwork, dn, changes
    cdef char jobv = b'N'
    cdef double dummy = 0.0
    cdef double u, alpha
    cdef bint dup

    for j in range(V):
        c += s[j]
    c /= V
    for j in range(V):
        sn[j] = s[j] / c
        q2n[j] = q[j] * q[j] / c
    for k in range(2 * V):
        coeffs[k] = 0.0
    # coefficients, descending powers, built by repeated convolution
    for j in range(V):
        tmp[0] = sn[j] - q2n[j]
        tmp[1] = sn[j] * sn[j]
        plen = 2
        for k in range(V):
            if k == j:
                continue
            p0 = 1.0
            p1 = 2.0 * sn[k]
            p2 = sn[k] * sn[k]
            tmp[plen] = 0.0
            tmp[plen + 1] = 0.0
            for m in range(plen + 1, -1, -1):
                x = p0 * tmp[m] if m < plen else 0.0
                if m >= 1 and m - 1 < plen:
                    x += p1 * tmp[m - 1]
                if m >= 2:
                    x += p2 * tmp[m - 2]
                tmp[m] = x
            plen += 2
        for m in range(plen):
            coeffs[2 * V - plen + m] += tmp[m]
    big = 0.0
    for k in range(2 * V):
        if fabs(coeffs[k]) > big:
            big = fabs(coeffs[k])
    if big == 0.0:
        return 0
    lead = 0
    while lead < 2 * V and fabs(coeffs[lead]) <= LEAD_RTOL * big:
        lead += 1
    deg = 2 * V - 1 - lead
    if deg < 1:
        return 0
    changes = _sign_changes(&coeffs[lead], deg + 1)
    if changes == 0:
        return 0
    if deg == 1:
        wr[0] = -coeffs[lead + 1] / coeffs[lead]
        wi[0] = 0.0
    elif changes == 1:
        wr[0] = _unique_positive_root(&coeffs[lead], deg + 1)
        wi[0] = 0.0
        deg = 1
    else:
        for j in range(deg):
            for k in range(deg):
                comp[j, k] = 0.0
        for k in range(deg):
            comp[0, k] = -coeffs[lead + 1 + k] / coeffs[lead]
        for k in range(1, deg):
            comp[k, k - 1] = 1.0
        dn = deg
        lwork = work.shape[0]
        ldv = 1
        dgeev(&jobv, &jobv, &dn, &comp[0, 0], &dn, &wr[0], &wi[0], &dummy, &ldv,
              &dummy, &ldv, &work[0], &lwork, &info)
        if info != 0:
            raise ArithmeticError(f"dgeev failed ({info})")
    for n in range(deg):
        x = fabs(wr[n])
        if fabs(wi[n]) > IMAG_TOL * (x if x > 1.0 else 1.0):
            continue
        u = wr[n]
        if u <= 0.0:
            continue
        u = _polish(u, sn, q2n, V)
        alpha = u * c
        if alpha <= MIN_ROOT or not isfinite(alpha):
            continue
        dup = False
        for m in range(nroots):
            x = fabs(alpha) if fabs(alpha) > fabs(roots[m]) else fabs(roots[m])
            if fabs(alpha - roots[m]) <= DEDUP_RTOL * x:
                dup = True
                break
        if dup:
            continue
        roots[nroots] = alpha
        nroots += 1
    # insertion sort, nroots is tiny
    for n in range(1, nroots):
        x = roots[n]
        m = n - 1
        while m >= 0 and roots[m] > x:
            roots[m + 1] = roots[m]
            m -= 1
        roots[m + 1] = x
    return nroots


def stationary_roots(s, q):
    cdef double[::1] sv = np.ascontiguousarray(s, dtype=np.float64)
    cdef double[::1] qv = np.ascontiguousarray(q, dtype=np.float64)
    cdef Py_ssize_t V = sv.shape[0]
    ws = _RootWorkspace(V)
    sn = np.empty(V)
    q2n = np.empty(V)
    n = _roots(sv, qv, ws, sn, q2n)
    return np.array(ws.roots[:n])


def baseline_scores(sp, qp, alpha):
    cdef double[:, ::1] S1 = np.ascontiguousarray(sp, dtype=np.float64)
    cdef double[:, ::1] Q1 = np.ascontiguousarray(qp, dtype=np.float64)
    cdef double[::1] al = np.ascontiguousarray(alpha, dtype=np.float64)
    cdef Py_ssize_t K = S1.shape[0], V = S1.shape[1], i, j, n
    anew_a = np.full(K, np.inf)
    dl2_a = np.full(K, -np.inf)
    act_a = np.zeros(K, dtype=np.int8)
    cdef double[::1] anew = anew_a
    cdef double[::1] dl2 = dl2_a
    cdef signed char[::1] act = act_a
    s_a = np.empty(V)
    q_a = np.empty(V)
    cdef double[::1] s = s_a
    cdef double[::1] q = q_a
    sn_a = np.empty(V)
    q2n_a = np.empty(V)
    cdef double[::1] sn = sn_a
    cdef double[::1] q2n = q2n_a
    ws = _RootWorkspace(V)
    cdef double[::1] roots = ws.roots
    cdef double a, den, val, best, best_root, d, r, thr
    cdef bint finite, degenerate, skip
    cdef int nroots
    for i in range(K):
        a = al[i]
        finite = isfinite(a)
        skip = False
        for j in range(V):
            if not S1[i, j] > 0.0:
                skip = True
        if skip:
            continue
        degenerate = False
        if finite:
            thr = DEN_RTOL * (a if a > 1.0 else 1.0)
            for j in range(V):
                den = a - S1[i, j]
                if den <= thr:
                    degenerate = True
                s[j] = a * S1[i, j] / den
                q[j] = a * Q1[i, j] / den
        else:
            for j in range(V):
                s[j] = S1[i, j]
                q[j] = Q1[i, j]
        if degenerate:
            nroots = 0
        else:
            nroots = _roots(s, q, ws, sn, q2n)
        if nroots == 0:
            if finite:
                val = 0.0
                for j in range(V):
                    val += Q1[i, j] * Q1[i, j] / (S1[i, j] - a) - log1p(-S1[i, j] / a)
                dl2[i] = val if isfinite(val) else -INFINITY
                act[i] = DELETE
            continue
        best = -INFINITY
        best_root = roots[0]
        for n in range(nroots):
            r = roots[n]
            val = 0.0
            if finite:
                d = 1.0 / r - 1.0 / a
                for j in range(V):
                    val += Q1[i, j] * Q1[i, j] * d / (1.0 + S1[i, j] * d) - log1p(S1[i, j] * d)
            else:
                for j in range(V):
                    val += q[j] * q[j] / (r + s[j]) + log(r / (r + s[j]))
            if val > best:
                best = val
                best_root = r
        anew[i] = best_root
        dl2[i] = best
        act[i] = REESTIMATE if finite else ADD
    return anew_a, dl2_a, act_a
