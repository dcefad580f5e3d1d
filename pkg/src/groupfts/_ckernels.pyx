# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled versions of the kernels in ``_pykernels``."""
import numpy as np
cimport numpy as cnp

cnp.import_array()


def pava(y, w):
    cdef const double[:] yv = np.ascontiguousarray(y, dtype=np.float64)
    cdef const double[:] wv = np.ascontiguousarray(w, dtype=np.float64)
    cdef Py_ssize_t m = yv.shape[0]
    cdef double[:] mean = np.empty(m)
    cdef double[:] wt = np.empty(m)
    cdef Py_ssize_t[:] size = np.empty(m, dtype=np.intp)
    cdef Py_ssize_t nb = 0, i, j, k
    cdef double tot
    for i in range(m):
        mean[nb] = yv[i]
        wt[nb] = wv[i]
        size[nb] = 1
        nb += 1
        while nb > 1 and mean[nb - 2] > mean[nb - 1]:
            tot = wt[nb - 2] + wt[nb - 1]
            mean[nb - 2] = (wt[nb - 2] * mean[nb - 2] + wt[nb - 1] * mean[nb - 1]) / tot
            wt[nb - 2] = tot
            size[nb - 2] += size[nb - 1]
            nb -= 1
    out = np.empty(m)
    cdef double[:] ov = out
    k = 0
    for j in range(nb):
        for i in range(size[j]):
            ov[k] = mean[j]
            k += 1
    return out


def lag_weighted_crossprod(xc, lag_weights):
    cdef const double[:, :] x = np.ascontiguousarray(xc, dtype=np.float64)
    cdef const double[:] lw = np.ascontiguousarray(lag_weights, dtype=np.float64)
    cdef Py_ssize_t n = x.shape[0], p = x.shape[1]
    cdef Py_ssize_t s, t, i, lag, reach = 0
    cdef double wl
    # only lags inside the kernel support contribute
    for lag in range(1, n):
        if lw[lag] != 0.0:
            reach = lag
    # y[s] = sum_{t != s} w_|s-t| x[t]
    cdef double[:, :] y = np.zeros((n, p))
    for s in range(n):
        for t in range(max(0, s - reach), min(n, s + reach + 1)):
            lag = s - t if s > t else t - s
            if lag == 0:
                continue
            wl = lw[lag]
            if wl == 0.0:
                continue
            for i in range(p):
                y[s, i] += wl * x[t, i]
    # the dense p x p product is left to BLAS
    return np.asarray(x).T @ np.asarray(y)


def solve_pentadiagonal(d0, d1, d2, rhs):
    cdef const double[:] a0 = np.ascontiguousarray(d0, dtype=np.float64)
    cdef Py_ssize_t m = a0.shape[0]
    b1 = np.zeros(max(m - 1, 1))
    b2 = np.zeros(max(m - 2, 1))
    if m > 1:
        b1[: m - 1] = np.asarray(d1, dtype=np.float64)
    if m > 2:
        b2[: m - 2] = np.asarray(d2, dtype=np.float64)
    cdef double[:] a1 = b1
    cdef double[:] a2 = b2
    # LDL^T factorisation with unit lower bidiagonal-band factor
    cdef double[:] dd = np.empty(m)
    cdef double[:] l1 = np.zeros(max(m, 1))
    cdef double[:] l2 = np.zeros(max(m, 1))
    cdef Py_ssize_t i
    cdef double v
    for i in range(m):
        v = a0[i]
        if i >= 1:
            v -= l1[i] * l1[i] * dd[i - 1]
        if i >= 2:
            v -= l2[i] * l2[i] * dd[i - 2]
        if v <= 0.0:
            raise np.linalg.LinAlgError("pentadiagonal system is not positive definite")
        dd[i] = v
        if i + 2 < m:
            l2[i + 2] = a2[i] / dd[i]
        if i + 1 < m:
            v = a1[i]
            if i >= 1:
                v -= l1[i] * l2[i + 1] * dd[i - 1]
            l1[i + 1] = v / dd[i]
    b = np.array(rhs, dtype=np.float64)
    cdef double[:] z = b
    for i in range(1, m):
        z[i] -= l1[i] * z[i - 1]
        if i >= 2:
            z[i] -= l2[i] * z[i - 2]
    for i in range(m):
        z[i] /= dd[i]
    for i in range(m - 2, -1, -1):
        z[i] -= l1[i + 1] * z[i + 1]
        if i + 2 < m:
            z[i] -= l2[i + 2] * z[i + 2]
    return b


def ar_fit(z, order, start):
    cdef const double[:] y = np.ascontiguousarray(z, dtype=np.float64)
    cdef Py_ssize_t n = y.shape[0], p = order, st = start
    cdef Py_ssize_t i, j, k, t, piv
    cdef double[:, :] a = np.zeros((p, p + 1))
    cdef double acc, tmp, big, scale = 0.0
    # normal equations [X'X | X'y] over targets t = p..n-1
    for i in range(p):
        for j in range(i, p):
            acc = 0.0
            for t in range(p, n):
                acc += y[t - i - 1] * y[t - j - 1]
            a[i, j] = acc
            a[j, i] = acc
        acc = 0.0
        for t in range(p, n):
            acc += y[t - i - 1] * y[t]
        a[i, p] = acc
        if a[i, i] > scale:
            scale = a[i, i]
    # Gaussian elimination with partial pivoting
    for k in range(p):
        piv = k
        big = abs(a[k, k])
        for i in range(k + 1, p):
            if abs(a[i, k]) > big:
                big = abs(a[i, k])
                piv = i
        if big <= 1e-13 * scale or big == 0.0:
            from groupfts._pykernels import ar_fit as _fallback
            return _fallback(z, order, start)
        if piv != k:
            for j in range(p + 1):
                tmp = a[k, j]
                a[k, j] = a[piv, j]
                a[piv, j] = tmp
        for i in range(k + 1, p):
            tmp = a[i, k] / a[k, k]
            for j in range(k, p + 1):
                a[i, j] -= tmp * a[k, j]
    coef = np.empty(p)
    cdef double[:] c = coef
    for i in range(p - 1, -1, -1):
        acc = a[i, p]
        for j in range(i + 1, p):
            acc -= a[i, j] * c[j]
        c[i] = acc / a[i, i]
    cdef double rss = 0.0, r
    for t in range(st, n):
        r = y[t]
        for i in range(p):
            r -= c[i] * y[t - i - 1]
        rss += r * r
    return coef, rss
