"""Reference numpy implementations of the numerical kernels.

These are the fallbacks used when the compiled ``_ckernels`` extension is
not available. Both modules expose the same four functions with the same
signatures.
"""
import numpy as np
from scipy.linalg import solveh_banded


def pava(y, w):
    """Weighted least-squares non-decreasing fit (pool adjacent violators).

    Parameters
    ----------
    y : ndarray, shape (m,)
    w : ndarray, shape (m,)
        Strictly positive weights.

    Returns
    -------
    ndarray, shape (m,)
    """
    y = np.asarray(y, dtype=float)
    w = np.asarray(w, dtype=float)
    m = y.shape[0]
    # blocks as parallel lists: weighted mean, weight, length
    means, weights, sizes = [], [], []
    for i in range(m):
        means.append(y[i])
        weights.append(w[i])
        sizes.append(1)
        while len(means) > 1 and means[-2] > means[-1]:
            wt = weights[-2] + weights[-1]
            mu = (weights[-2] * means[-2] + weights[-1] * means[-1]) / wt
            sz = sizes[-2] + sizes[-1]
            del means[-1], weights[-1], sizes[-1]
            means[-1], weights[-1], sizes[-1] = mu, wt, sz
    return np.repeat(np.array(means, dtype=float), sizes)


def lag_weighted_crossprod(xc, lag_weights):
    r"""Sum of kernel-weighted lagged cross products.

    Computes :math:`\sum_{l \ge 1} w_l (A_l + A_l^\top)` with
    :math:`A_l = \sum_t x_t x_{t+l}^\top`, i.e. the non-zero-lag part of a
    kernel sandwich estimator before division by ``n``.

    Parameters
    ----------
    xc : ndarray, shape (n, p)
        Centred observations.
    lag_weights : ndarray, shape (n,)
        ``lag_weights[l]`` multiplies lag ``l``; entry 0 is ignored.
    """
    xc = np.asarray(xc, dtype=float)
    n = xc.shape[0]
    w = np.asarray(lag_weights, dtype=float).copy()
    w[0] = 0.0
    nz = np.flatnonzero(w)
    reach = int(nz[-1]) if nz.size else 0
    if reach * xc.shape[1] < n:
        # short kernel support: sum the lagged products directly
        out = np.zeros((xc.shape[1], xc.shape[1]))
        for lag in nz:
            a = xc[: n - lag].T @ xc[lag:]
            out += w[lag] * (a + a.T)
        return out
    idx = np.arange(n)
    toeplitz = w[np.abs(idx[:, None] - idx[None, :])]
    return xc.T @ (toeplitz @ xc)


def solve_pentadiagonal(d0, d1, d2, rhs):
    """Solve a symmetric positive definite pentadiagonal system.

    ``d0`` is the main diagonal (length m), ``d1`` the first super-diagonal
    (length m-1) and ``d2`` the second super-diagonal (length m-2).
    """
    m = len(d0)
    ab = np.zeros((3, m))
    ab[2] = d0
    if m > 1:
        ab[1, 1:] = d1
    if m > 2:
        ab[0, 2:] = d2
    return solveh_banded(ab, np.asarray(rhs, dtype=float))


def ar_fit(z, order, start):
    """Least-squares AR(``order``) fit without intercept.

    Coefficients are estimated from all available targets ``z[order:]``;
    the residual sum of squares is reported over targets ``z[start:]`` so
    different orders can be compared on a common sample.

    Returns
    -------
    coef : ndarray, shape (order,)
        ``coef[0]`` multiplies lag 1.
    rss : float
    """
    z = np.asarray(z, dtype=float)
    n = z.size
    lagged = np.column_stack([z[order - i - 1 : n - i - 1] for i in range(order)])
    coef, *_ = np.linalg.lstsq(lagged, z[order:], rcond=None)
    fit_part = lagged[start - order :] @ coef
    resid = z[start:] - fit_part
    return coef, float(resid @ resid)
