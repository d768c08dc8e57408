"""Imputation engines for the phase-two covariate, Rubin's rules, and the
multiply-imputed calibration variable."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import linalg
from scipy.special import expit

from .calibration import AuxiliaryMatrix
from .designs import outcome_design, outcome_family
from .errors import (
    DegenerateVariance,
    DimensionMismatch,
    EmptySource,
    InvalidInput,
    NonConvergence,
    SingularDesign,
)
from .glm import fit_glm

ENGINES = ("parametric_normal", "empirical", "wild_bootstrap", "bayesian", "bootstrap_binary")

GOLDEN = (1.0 + math.sqrt(5.0)) / 2.0
WILD_HI = GOLDEN
WILD_LO = (1.0 - math.sqrt(5.0)) / 2.0
WILD_P_HI = (math.sqrt(5.0) - 1.0) / (2.0 * math.sqrt(5.0))

BOOTSTRAP_RETRIES = 5


@dataclass(frozen=True)
class ImputationDraw:
    """A completed covariate column: observed on the sample, imputed elsewhere.

    ``x_full`` holds the imputed value for every cohort unit, sampled ones
    included; the calibration variable is built from it so that it stays a
    function of phase-one data.
    """

    x_star: np.ndarray
    engine: str
    m: int = 0
    x_full: np.ndarray | None = None


@dataclass(frozen=True)
class MIEstimate:
    theta_bar: np.ndarray
    within_var: np.ndarray
    between_var: np.ndarray
    total_var: np.ndarray
    M: int


def _complete(cohort, sample, values, engine):
    # values: one imputed value per cohort unit
    x_full = np.asarray(values, dtype=float)
    x_star = np.where(sample.R, cohort.x, x_full)
    return ImputationDraw(x_star, engine, x_full=x_full)


def wild_multiplier(rng, size=None):
    """Two-point multiplier with mean 0 and variance 1.

    Takes ``(1 + sqrt 5)/2`` with probability ``(sqrt 5 - 1)/(2 sqrt 5)``
    and ``(1 - sqrt 5)/2`` otherwise.
    """
    u = rng.random(size)
    return np.where(u < WILD_P_HI, WILD_HI, WILD_LO) if size is not None else (WILD_HI if u < WILD_P_HI else WILD_LO)


# --------------------------------------------------------------------- #
# Case-control engines
# --------------------------------------------------------------------- #


def normal_imputation_params(x, y):
    """Class means and pooled within-class variance of ``x`` given binary ``y``."""
    x0, x1 = x[y == 0], x[y == 1]
    if x0.size == 0 or x1.size == 0:
        raise DegenerateVariance("both outcome classes are needed in the phase-two sample")
    mu = x0.mean()
    eta = x1.mean() - mu
    dof = x.size - 2
    ss = np.sum((x0 - mu) ** 2) + np.sum((x1 - x1.mean()) ** 2)
    sigma2 = ss / dof if dof > 0 else 0.0
    if not sigma2 > 0:
        raise DegenerateVariance("pooled variance of the phase-two covariate is zero")
    return mu, eta, sigma2


def impute_parametric_normal(cohort, sample, rng):
    """Draw missing ``X`` from ``N(mu + eta Y, sigma^2)`` fitted on phase two."""
    idx = sample.index
    mu, eta, sigma2 = normal_imputation_params(cohort.x[idx], cohort.y[idx])
    y = cohort.y
    vals = mu + eta * y + math.sqrt(sigma2) * rng.standard_normal(y.size)
    return _complete(cohort, sample, vals, "parametric_normal")


def impute_empirical(cohort, sample, rng):
    """Resample missing ``X`` with replacement from phase-two controls."""
    idx = sample.index
    source = cohort.x[idx][cohort.y[idx] == 0]
    if source.size == 0:
        raise EmptySource("no phase-two controls to resample from")
    vals = source[rng.integers(0, source.size, cohort.N)]
    return _complete(cohort, sample, vals, "empirical")


# --------------------------------------------------------------------- #
# Surrogate engines: X ~ (1, Y, Z)
# --------------------------------------------------------------------- #


def _xyz(cohort, rows=None):
    y, z = cohort.y, cohort.z
    if z is None:
        raise InvalidInput("the imputation regression needs a surrogate column")
    if rows is not None:
        y, z = y[rows], z[rows]
    return np.column_stack([np.ones_like(y), y, z])


def linear_imputation_fit(cohort, sample, x=None):
    """OLS of ``X`` on ``(1, Y, Z)`` over the phase-two units.

    Returns ``(coef, fitted, resid, rss, design)`` for the sampled units.
    """
    idx = sample.index
    Xi = _xyz(cohort, idx)
    x = cohort.x[idx] if x is None else x
    if idx.size <= Xi.shape[1]:
        raise SingularDesign("phase-two sample too small for the imputation regression")
    coef, _, rank, _ = linalg.lstsq(Xi, x, lapack_driver="gelsy")
    if rank < Xi.shape[1]:
        raise SingularDesign("imputation design (1, Y, Z) is rank deficient")
    fitted = Xi @ coef
    resid = x - fitted
    return coef, fitted, resid, float(resid @ resid), Xi


def impute_wild_bootstrap(cohort, sample, rng):
    """Wild-bootstrap perturbation of the imputation model, then normal draws.

    Phase-two fitted values are perturbed by wild multipliers times the
    residuals, the regression is refitted to the perturbed values, and
    missing ``X`` are drawn from ``N(nu(Y, Z), tau^2)`` with the refit's
    mean and (homoskedastic) residual variance.
    """
    _, fitted, resid, _, Xi = linear_imputation_fit(cohort, sample)
    x_pert = fitted + wild_multiplier(rng, fitted.size) * resid
    coef_b, _, _, rss_b, _ = linear_imputation_fit(cohort, sample, x_pert)
    dof = Xi.shape[0] - Xi.shape[1]
    tau2 = rss_b / dof
    if not tau2 >= 0:
        raise DegenerateVariance("negative residual variance in the wild refit")
    mean = _xyz(cohort) @ coef_b
    vals = mean + math.sqrt(tau2) * rng.standard_normal(mean.size)
    return _complete(cohort, sample, vals, "wild_bootstrap")


def bayesian_posterior_draw(Xi, x, rng):
    """One draw of ``(coef, tau^2)`` under the prior ``p ∝ 1/tau^2``."""
    n, p = Xi.shape
    a_n = n - p
    if a_n <= 0:
        raise InvalidInput(f"need more than {p} phase-two units, have {n}")
    coef, _, rank, _ = linalg.lstsq(Xi, x, lapack_driver="gelsy")
    if rank < p:
        raise SingularDesign("imputation design (1, Y, Z) is rank deficient")
    resid = x - Xi @ coef
    b_n = float(resid @ resid)
    # inverse-gamma(a_n/2, b_n/2)
    tau2 = (0.5 * b_n) / rng.gamma(0.5 * a_n)
    XtX = Xi.T @ Xi
    L = linalg.cholesky(linalg.inv(XtX), lower=True)
    coef_star = coef + math.sqrt(tau2) * (L @ rng.standard_normal(p))
    return coef_star, tau2


def impute_bayesian(cohort, sample, rng):
    """Posterior-predictive draws from the normal linear imputation model."""
    idx = sample.index
    Xi = _xyz(cohort, idx)
    coef_star, tau2 = bayesian_posterior_draw(Xi, cohort.x[idx], rng)
    mean = _xyz(cohort) @ coef_star
    vals = mean + math.sqrt(tau2) * rng.standard_normal(mean.size)
    return _complete(cohort, sample, vals, "bayesian")


# --------------------------------------------------------------------- #
# Binary covariate (NWTS central histology)
# --------------------------------------------------------------------- #


def nwts_imputation_design(cohort):
    """Age, diameter and the full relapse x stage x local-histology factorial."""
    c = cohort.covariates
    r, s, h = cohort.y, c["stage_bin"], cohort.z
    one = np.ones_like(r)
    return np.column_stack([one, c["age"], c["diameter"], r, s, h, r * s, r * h, s * h, r * s * h])


def binary_imputation_fit(cohort, sample, model_spec=None, rows=None):
    """Logistic fit of the binary ``X`` on phase-two units (or ``rows`` of them)."""
    design_fn = model_spec or nwts_imputation_design
    D = design_fn(cohort)
    rows = sample.index if rows is None else rows
    return fit_glm("logistic", D[rows], cohort.x[rows]), D


def impute_bootstrap_binary(cohort, sample, rng, model_spec=None):
    """Bootstrap the phase-two sample, refit the logistic imputation model,
    and draw missing ``X ~ Bernoulli(p_hat)``.

    Resamples whose refit separates are redrawn up to five times.
    """
    idx = sample.index
    last = None
    for _ in range(BOOTSTRAP_RETRIES + 1):
        rows = idx[rng.integers(0, idx.size, idx.size)]
        try:
            fit, D = binary_imputation_fit(cohort, sample, model_spec, rows)
            break
        except (NonConvergence, SingularDesign) as exc:
            last = exc
    else:
        raise NonConvergence(f"bootstrap imputation refit failed {BOOTSTRAP_RETRIES + 1} times: {last}")
    p = expit(D @ fit.theta_hat)
    vals = (rng.random(p.size) < p).astype(float)
    return _complete(cohort, sample, vals, "bootstrap_binary")


_ENGINE_FUNCS = {
    "parametric_normal": impute_parametric_normal,
    "empirical": impute_empirical,
    "wild_bootstrap": impute_wild_bootstrap,
    "bayesian": impute_bayesian,
    "bootstrap_binary": impute_bootstrap_binary,
}


def get_engine(engine):
    """Resolve an engine tag (or pass through a callable engine)."""
    if callable(engine):
        return engine
    try:
        return _ENGINE_FUNCS[engine]
    except KeyError:
        raise InvalidInput(f"unknown imputation engine {engine!r}; expected one of {ENGINES}") from None


def draw_imputations(engine, cohort, sample, streams):
    """One draw per RNG stream, tagged with its index."""
    fn = get_engine(engine)
    draws = []
    for m, rng in enumerate(streams):
        d = fn(cohort, sample, rng)
        draws.append(ImputationDraw(d.x_star, d.engine, m, d.x_full))
    return draws


# --------------------------------------------------------------------- #
# Combining
# --------------------------------------------------------------------- #


def rubin_combine(estimates):
    """Combine per-imputation ``(theta, diag variance)`` pairs.

    ``total = W + (1 + 1/M) B`` with ``B`` the divisor-``M-1`` variance of
    the point estimates (zero when ``M = 1``).
    """
    estimates = list(estimates)
    if not estimates:
        raise InvalidInput("need at least one imputation")
    thetas = [np.atleast_1d(np.asarray(t, dtype=float)) for t, _ in estimates]
    vars_ = [np.atleast_1d(np.asarray(v, dtype=float)) for _, v in estimates]
    p = thetas[0].shape
    if any(t.shape != p for t in thetas) or any(v.shape != p for v in vars_):
        raise DimensionMismatch("all imputations must report estimates of equal dimension")
    T = np.vstack(thetas)
    M = T.shape[0]
    theta_bar = T.mean(axis=0)
    W = np.vstack(vars_).mean(axis=0)
    B = T.var(axis=0, ddof=1) if M > 1 else np.zeros_like(theta_bar)
    return MIEstimate(theta_bar, W, B, W + (1.0 + 1.0 / M) * B, M)


def completed_fits(draws, cohort, family=None, design_fn=None, fully_imputed=False):
    """Fit the working outcome model on each completed cohort.

    With ``fully_imputed`` the fits use ``x_full`` (imputed values for
    sampled units too) when the draw carries it.
    """
    family = family or outcome_family(cohort)
    design_fn = design_fn or (lambda x: outcome_design(cohort, x))
    fits = []
    for d in draws:
        x = d.x_full if fully_imputed and d.x_full is not None else d.x_star
        if x.shape != (cohort.N,):
            raise DimensionMismatch("each imputation must cover the full cohort")
        fits.append(fit_glm(family, design_fn(x), cohort.y))
    return fits


def mi_calibration_variable(draws, cohort, family=None, design_fn=None, fits=None, kind="influence"):
    """Average over imputations of the per-unit influence contributions.

    ``kind="influence"`` averages ``A_m^-1 U_i^(m)``; ``kind="score"``
    averages the raw score contributions ``U_i^(m)``. The constant column
    is added downstream by the raking step. ``fits`` must come from the
    fully imputed columns (``completed_fits(..., fully_imputed=True)``).
    """
    if fits is None:
        fits = completed_fits(draws, cohort, family, design_fn, fully_imputed=True)
    if kind not in ("influence", "score"):
        raise InvalidInput("kind must be 'influence' or 'score'")
    attr = "influence" if kind == "influence" else "score_contribs"
    H = np.zeros_like(getattr(fits[0], attr), dtype=float)
    for f in fits:
        H += getattr(f, attr)
    return AuxiliaryMatrix(H / len(fits))
