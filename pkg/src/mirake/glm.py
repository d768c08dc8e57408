"""Linear and logistic estimating-equation fits.

Fits expose the per-unit score contributions ``U_i``, the bread matrix
``A = -(sum w)^-1 sum w_i dU_i/dtheta`` and the influence functions
``Delta_i = A^-1 U_i`` that the calibration step uses as auxiliaries.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg
from scipy.special import expit

from .errors import InvalidInput, NonConvergence, SingularDesign

FAMILIES = ("linear", "logistic")

MAX_ITER = 100
GRAD_TOL = 1e-8
_RANK_TOL = 1e-10
_SEPARATION_ETA = 30.0


@dataclass(frozen=True)
class DesignMatrix:
    """An ``N x p`` regressor matrix with column labels."""

    rows: np.ndarray
    column_names: tuple = ()

    def __post_init__(self):
        rows = np.atleast_2d(np.asarray(self.rows, dtype=float))
        if rows.ndim != 2 or rows.shape[1] < 1:
            raise InvalidInput("design must be a 2-d array with at least one column")
        if rows.shape[0] < rows.shape[1]:
            raise InvalidInput(f"design has {rows.shape[0]} rows but {rows.shape[1]} columns")
        if not np.all(np.isfinite(rows)):
            raise InvalidInput("design contains non-finite entries")
        names = tuple(self.column_names) or tuple(f"x{j}" for j in range(rows.shape[1]))
        if len(names) != rows.shape[1]:
            raise InvalidInput("column_names length does not match the number of columns")
        object.__setattr__(self, "rows", rows)
        object.__setattr__(self, "column_names", names)

    @classmethod
    def from_columns(cls, columns, intercept=True):
        """Build a design from a mapping ``name -> N-vector``."""
        names = list(columns)
        cols = [np.asarray(columns[k], dtype=float) for k in names]
        if intercept:
            n = len(cols[0]) if cols else 0
            cols.insert(0, np.ones(n))
            names.insert(0, "(Intercept)")
        return cls(np.column_stack(cols), tuple(names))

    @property
    def shape(self):
        return self.rows.shape


@dataclass(frozen=True)
class GlmFit:
    family: str
    theta_hat: np.ndarray
    score_contribs: np.ndarray
    bread: np.ndarray
    influence: np.ndarray
    weights: np.ndarray
    converged: bool
    iterations: int
    sandwich_cov: np.ndarray
    residuals: np.ndarray
    column_names: tuple = field(default=())

    @property
    def coef(self):
        return dict(zip(self.column_names, self.theta_hat))


def _as_design(design):
    if isinstance(design, DesignMatrix):
        return design.rows, design.column_names
    rows = np.asarray(design, dtype=float)
    if rows.ndim == 1:
        rows = rows[:, None]
    return rows, tuple(f"x{j}" for j in range(rows.shape[1]))


def _validate(family, X, y, w):
    if family not in FAMILIES:
        raise InvalidInput(f"unknown family {family!r}; expected one of {FAMILIES}")
    N, p = X.shape
    if y.shape != (N,) or w.shape != (N,):
        raise InvalidInput(f"response/weights must have length {N}")
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y)) and np.all(np.isfinite(w))):
        raise InvalidInput("non-finite values in design, response or weights")
    if np.any(w < 0):
        raise InvalidInput("weights must be nonnegative")
    if np.count_nonzero(w > 0) < p:
        raise InvalidInput(f"need at least {p} units with positive weight")
    if family == "logistic" and not np.all((y == 0) | (y == 1)):
        raise InvalidInput("logistic responses must be 0 or 1")


def _solve_wls(X, y, w):
    """Weighted least squares through a pivoted QR; rank deficiency raises."""
    sw = np.sqrt(w)
    Q, R, piv = linalg.qr(X * sw[:, None], mode="economic", pivoting=True)
    d = np.abs(np.diag(R))
    if d.size == 0 or d[-1] <= _RANK_TOL * max(d[0], 1.0):
        raise SingularDesign("design is rank deficient on the positively weighted units")
    beta = np.empty(X.shape[1])
    beta[piv] = linalg.solve_triangular(R, Q.T @ (y * sw))
    return beta


def _loglik(X, y, w, theta):
    eta = X @ theta
    # sum w [y eta - log(1 + e^eta)]
    return np.sum(w * (y * eta - np.logaddexp(0.0, eta)))


def _fit_logistic(X, y, w, max_iter, tol):
    p = X.shape[1]
    theta = np.zeros(p)
    ybar = np.sum(w * y) / np.sum(w)
    if 0.0 < ybar < 1.0 and np.allclose(X[:, 0], 1.0):
        theta[0] = np.log(ybar / (1.0 - ybar))
    ll = _loglik(X, y, w, theta)
    scale = 1.0 + np.sum(w)
    for it in range(1, max_iter + 1):
        mu = expit(X @ theta)
        grad = X.T @ (w * (y - mu))
        if np.max(np.abs(grad)) <= tol * scale * 1e-2:
            return theta, it - 1, True
        info = (X * (w * mu * (1.0 - mu))[:, None]).T @ X
        try:
            with warnings.catch_warnings():
                warnings.simplefilter("error", linalg.LinAlgWarning)
                step = linalg.solve(info, grad, assume_a="pos")
        except (linalg.LinAlgError, linalg.LinAlgWarning, ValueError):
            raise SingularDesign("logistic information matrix is singular") from None
        t = 1.0
        for _ in range(60):
            cand = theta + t * step
            ll_new = _loglik(X, y, w, cand)
            if ll_new >= ll - 1e-12 * (1.0 + abs(ll)):
                break
            t *= 0.5
        theta, ll = cand, ll_new
        if np.max(np.abs(t * step)) < 1e-14 * (1.0 + np.max(np.abs(theta))):
            mu = expit(X @ theta)
            grad = X.T @ (w * (y - mu))
            return theta, it, bool(np.max(np.abs(grad)) <= tol * scale)
    mu = expit(X @ theta)
    grad = X.T @ (w * (y - mu))
    if np.max(np.abs(grad)) <= tol * scale:
        return theta, max_iter, True
    raise NonConvergence(
        f"logistic fit did not converge in {max_iter} iterations (possible separation)",
        state=theta,
    )


def _finish(family, X, y, w, theta, iterations, converged, names):
    if family == "linear":
        resid = y - X @ theta
        curv = np.ones_like(y)
    else:
        mu = expit(X @ theta)
        resid = y - mu
        curv = mu * (1.0 - mu)
    U = X * resid[:, None]
    wsum = np.sum(w)
    A = (X * (w * curv)[:, None]).T @ X / wsum
    A = 0.5 * (A + A.T)
    try:
        cho = linalg.cho_factor(A)
    except linalg.LinAlgError:
        raise SingularDesign("bread matrix is not positive definite") from None
    infl = linalg.cho_solve(cho, U.T).T
    wi = w[:, None] * infl
    cov = wi.T @ wi / wsum**2
    for arr in (theta, U, A, infl, w, cov, resid):
        arr.setflags(write=False)
    return GlmFit(family, theta, U, A, infl, w, converged, iterations, cov, resid, names)


def fit_glm(family, design, response, weights=None, *, max_iter=MAX_ITER, tol=GRAD_TOL):
    """Solve the (weighted) estimating equation ``sum_i w_i U_i(theta) = 0``.

    Parameters
    ----------
    family : {"linear", "logistic"}
    design : DesignMatrix or array_like, shape (N, p)
    response : array_like, shape (N,)
    weights : array_like, shape (N,), optional
        Nonnegative fitting weights, e.g. ``R_i / pi_i`` for a
        Horvitz-Thompson fit. Unit weights when omitted.

    Returns
    -------
    GlmFit

    Raises
    ------
    InvalidInput, SingularDesign, NonConvergence
    """
    X, names = _as_design(design)
    y = np.asarray(response, dtype=float)
    w = np.ones(X.shape[0]) if weights is None else np.array(weights, dtype=float)
    _validate(family, X, y, w)
    if family == "linear":
        theta = _solve_wls(X, y, w)
        iterations, converged = 1, True
    else:
        yw = y[w > 0]
        if yw.size and (yw.min() == yw.max()):
            raise NonConvergence("constant binary response: the MLE is at infinity")
        theta, iterations, converged = _fit_logistic(X, y, w, max_iter, tol)
        # separated data drive the gradient to zero while eta diverges
        if np.max(np.abs(X[w > 0] @ theta)) > _SEPARATION_ETA:
            raise NonConvergence("fitted probabilities numerically 0 or 1 (separation)", state=theta)
    return _finish(family, X, y, w, theta, iterations, converged, names)


def influence_functions(fit):
    """Rows ``A^-1 U_i``; their weighted sum is zero at a converged fit."""
    if not fit.converged:
        raise NonConvergence("influence functions need a converged fit")
    return fit.influence


def sandwich_covariance(fit):
    """Robust covariance ``(sum w)^-2 sum w_i^2 Delta_i Delta_i^T``."""
    if not fit.converged:
        raise NonConvergence("sandwich covariance needs a converged fit")
    return fit.sandwich_cov


def model_covariance(fit):
    """Model-based covariance: the inverse observed information.

    The linear family is scaled by the weighted residual variance.
    """
    wsum = np.sum(fit.weights)
    cov = linalg.inv(fit.bread) / wsum
    if fit.family == "linear":
        p = fit.theta_hat.shape[0]
        cov = cov * np.sum(fit.weights * fit.residuals**2) / (wsum - p)
    return cov
