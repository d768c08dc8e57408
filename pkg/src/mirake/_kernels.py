"""Hot numeric loops, compiled with numba when available.

Every kernel has a pure-numpy twin with identical semantics. Set the
environment variable ``MIRAKE_DISABLE_NUMBA=1`` to force the numpy path
(also used automatically when numba cannot be imported). Both paths are
always importable so the benchmark and the tests can compare them.
"""

import os

import numpy as np

try:
    from numba import njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover
    HAVE_NUMBA = False

USE_NUMBA = HAVE_NUMBA and os.environ.get("MIRAKE_DISABLE_NUMBA", "") not in ("1", "true", "yes")

_BLOCK = 512


# --------------------------------------------------------------------- #
# Nadaraya-Watson sums with a Gaussian kernel
# --------------------------------------------------------------------- #


def _nw_sums_numpy(x_eval, x, y, h, exclude_self):
    m = x_eval.shape[0]
    num = np.empty(m)
    den = np.empty(m)
    for start in range(0, m, _BLOCK):
        stop = min(start + _BLOCK, m)
        u = (x_eval[start:stop, None] - x[None, :]) / h
        k = np.exp(-0.5 * u * u)
        if exclude_self:
            idx = np.arange(start, stop)
            k[idx - start, idx] = 0.0
        num[start:stop] = k @ y
        den[start:stop] = k.sum(axis=1)
    return num, den


def _em_estep_numpy(y, support, logq, alpha, beta, sigma):
    # log f(y_i | x_j) + log q_j up to the shared constant
    mu = alpha + beta * support
    r = (y[:, None] - mu[None, :]) / sigma
    a = -0.5 * r * r + logq[None, :]
    amax = a.max(axis=1)
    w = np.exp(a - amax[:, None])
    s = w.sum(axis=1)
    w /= s[:, None]
    loglik = np.sum(amax + np.log(s)) - y.shape[0] * (np.log(sigma) + 0.5 * np.log(2.0 * np.pi))
    return loglik, w.sum(axis=0), w.T @ y


if HAVE_NUMBA:

    @njit(cache=True, fastmath=True)
    def _nw_self_numba(x, y, h, self_weight):
        # symmetric kernel on the training points: visit each pair once
        n = x.shape[0]
        num = np.empty(n)
        den = np.empty(n)
        for i in range(n):
            num[i] = self_weight * y[i]
            den[i] = self_weight
        c = -0.5 / (h * h)
        for i in range(n):
            xi = x[i]
            yi = y[i]
            sn = 0.0
            sd = 0.0
            for j in range(i + 1, n):
                d = xi - x[j]
                k = np.exp(c * d * d)
                sn += k * y[j]
                sd += k
                num[j] += k * yi
                den[j] += k
            num[i] += sn
            den[i] += sd
        return num, den

    @njit(cache=True)
    def _nw_sums_numba(x_eval, x, y, h, exclude_self):
        m = x_eval.shape[0]
        n = x.shape[0]
        num = np.empty(m)
        den = np.empty(m)
        for i in range(m):
            sn = 0.0
            sd = 0.0
            xi = x_eval[i]
            for j in range(n):
                if exclude_self and i == j:
                    continue
                u = (xi - x[j]) / h
                k = np.exp(-0.5 * u * u)
                sn += k * y[j]
                sd += k
            num[i] = sn
            den[i] = sd
        return num, den

    @njit(cache=True, fastmath=True)
    def _em_estep_numba(y, support, logq, alpha, beta, sigma):
        n = y.shape[0]
        J = support.shape[0]
        mu = alpha + beta * support
        c = np.zeros(J)
        d = np.zeros(J)
        a = np.empty(J)
        loglik = 0.0
        for i in range(n):
            amax = -np.inf
            for j in range(J):
                r = (y[i] - mu[j]) / sigma
                a[j] = -0.5 * r * r + logq[j]
                if a[j] > amax:
                    amax = a[j]
            s = 0.0
            for j in range(J):
                a[j] = np.exp(a[j] - amax)
                s += a[j]
            loglik += amax + np.log(s)
            for j in range(J):
                wij = a[j] / s
                c[j] += wij
                d[j] += wij * y[i]
        loglik -= n * (np.log(sigma) + 0.5 * np.log(2.0 * np.pi))
        return loglik, c, d

else:  # pragma: no cover
    _nw_self_numba = None
    _nw_sums_numba = None
    _em_estep_numba = None


def nw_sums(x_eval, x, y, h, exclude_self=False):
    """Kernel-weighted sums ``sum_j K((x_eval_i - x_j)/h) y_j`` and ``sum_j K(.)``.

    With ``exclude_self`` the term ``j == i`` is dropped, which requires
    ``x_eval`` to be the training points themselves.
    """
    x_eval = np.ascontiguousarray(x_eval, dtype=np.float64)
    x = np.ascontiguousarray(x, dtype=np.float64)
    y = np.ascontiguousarray(y, dtype=np.float64)
    if USE_NUMBA:
        if x_eval is x or (x_eval.shape == x.shape and np.array_equal(x_eval, x)):
            return _nw_self_numba(x, y, float(h), 0.0 if exclude_self else 1.0)
        return _nw_sums_numba(x_eval, x, y, float(h), bool(exclude_self))
    return _nw_sums_numpy(x_eval, x, y, float(h), bool(exclude_self))


def em_estep(y, support, logq, alpha, beta, sigma):
    """Posterior support weights for incomplete units of one stratum.

    Returns the observed-data log-likelihood contribution and the column
    sums ``c_j = sum_i w_ij`` and ``d_j = sum_i w_ij y_i``; the weight
    matrix itself is never materialised on the numba path.
    """
    y = np.ascontiguousarray(y, dtype=np.float64)
    support = np.ascontiguousarray(support, dtype=np.float64)
    logq = np.ascontiguousarray(logq, dtype=np.float64)
    args = (y, support, logq, float(alpha), float(beta), float(sigma))
    if USE_NUMBA:
        return _em_estep_numba(*args)
    return _em_estep_numpy(*args)
