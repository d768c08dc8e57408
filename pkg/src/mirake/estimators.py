"""End-to-end estimators of the working-model coefficients.

Each estimator takes a cohort (with ``x`` treated as unknown off the
phase-two sample) and a ``TwoPhaseSample`` and returns a ``ThetaEstimate``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import linalg
from scipy.special import expit

from . import _kernels
from .calibration import AuxiliaryMatrix, ht_solve, raking_estimator
from .designs import outcome_design, outcome_family, outcome_terms
from .errors import EmptySupport, InvalidInput, NonConvergence, SingularDesign
from .glm import fit_glm, model_covariance
from .imputation import (
    binary_imputation_fit,
    completed_fits,
    draw_imputations,
    linear_imputation_fit,
    mi_calibration_variable,
    normal_imputation_params,
    rubin_combine,
)
from .rng import streams as make_streams

KINDS = ("mle_casecontrol", "spml_twophase", "ipw", "regression_calibration", "mi", "raking_single", "mir")

EM_TOL = 1e-8
EM_MAX_ITER = 500


@dataclass(frozen=True)
class EstimatorSpec:
    kind: str
    engine: str | None = None
    M: int | None = None
    family: str | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise InvalidInput(f"unknown estimator kind {self.kind!r}")
        needs_engine = self.kind in ("mi", "mir")
        if needs_engine != (self.engine is not None):
            raise InvalidInput("an imputation engine is required exactly for 'mi' and 'mir'")
        if needs_engine and (self.M is None or self.M < 1):
            raise InvalidInput("M must be at least 1")


@dataclass(frozen=True)
class ThetaEstimate:
    theta: np.ndarray
    variance: np.ndarray
    estimator: EstimatorSpec
    terms: tuple = ()
    diagnostics: dict = field(default_factory=dict)

    def __post_init__(self):
        if not (np.all(np.isfinite(self.theta)) and np.all(np.isfinite(self.variance))):
            raise NonConvergence(f"{self.estimator.kind}: non-finite estimate")
        if np.any(self.variance < 0):
            raise NonConvergence(f"{self.estimator.kind}: negative variance")


def _estimate(theta, variance, spec, cohort, **diag):
    return ThetaEstimate(
        np.asarray(theta, dtype=float),
        np.clip(np.asarray(variance, dtype=float), 0.0, None),
        spec,
        outcome_terms(cohort),
        diag,
    )


def _sampled_design(cohort, sample):
    idx = sample.index
    X = outcome_design(cohort)[idx]
    return X, cohort.y[idx], idx


# --------------------------------------------------------------------- #
# Complete-case and design-weighted
# --------------------------------------------------------------------- #


def estimate_mle_casecontrol(cohort, sample):
    """Unweighted logistic fit on the phase-two units (complete-case MLE)."""
    X, y, _ = _sampled_design(cohort, sample)
    fit = fit_glm(outcome_family(cohort), X, y)
    spec = EstimatorSpec("mle_casecontrol", family=fit.family)
    return _estimate(fit.theta_hat, np.diag(model_covariance(fit)), spec, cohort,
                     converged=fit.converged, iterations=fit.iterations)


def estimate_ipw(cohort, sample):
    """Horvitz-Thompson fit with the known inclusion probabilities."""
    X, y, idx = _sampled_design(cohort, sample)
    fit = ht_solve(outcome_family(cohort), X, y, sample.pi[idx])
    spec = EstimatorSpec("ipw", family=fit.family)
    return _estimate(fit.theta_hat, np.diag(fit.sandwich_cov), spec, cohort,
                     converged=fit.converged, iterations=fit.iterations)


def estimate_rc(cohort, sample):
    """Regression calibration: unsampled ``X`` replaced by ``E[X | Z]``."""
    idx = sample.index
    Zd = np.column_stack([np.ones(cohort.N), cohort.z])
    cal = fit_glm("linear", Zd[idx], cohort.x[idx])
    x_hat = np.where(sample.R, cohort.x, Zd @ cal.theta_hat)
    fit = fit_glm(outcome_family(cohort), outcome_design(cohort, x_hat), cohort.y)
    spec = EstimatorSpec("regression_calibration", family=fit.family)
    return _estimate(fit.theta_hat, np.diag(fit.sandwich_cov), spec, cohort, converged=fit.converged)


# --------------------------------------------------------------------- #
# Semiparametric maximum likelihood (stratified two-phase, Gaussian outcome)
# --------------------------------------------------------------------- #


@dataclass
class _Stratum:
    support: np.ndarray
    counts: np.ndarray  # complete units at each support point
    y_inc: np.ndarray
    n_total: int
    q: np.ndarray


def _spml_setup(cohort, sample, strata):
    R = sample.R
    strata = cohort.stratum if strata is None else np.asarray(strata)
    if strata.shape != (cohort.N,):
        raise InvalidInput("strata must label every cohort unit")
    blocks = []
    const = 0.0  # sum over complete units of log q in fully observed strata
    for s in np.unique(strata):
        in_s = strata == s
        comp = in_s & R
        inc = in_s & ~R
        support, counts = np.unique(cohort.x[comp], return_counts=True)
        if not inc.any():
            if counts.size:
                const += np.sum(counts * np.log(counts / counts.sum()))
            continue
        if support.size == 0:
            raise EmptySupport(f"stratum {s} has incomplete units but no phase-two observations")
        n_total = int(in_s.sum())
        blocks.append(_Stratum(support, counts.astype(float), cohort.y[inc], n_total, counts / counts.sum()))
    return blocks, const


def _spml_estep(blocks, const, yc, xc, params):
    """Observed-data log-likelihood at ``params`` and the E-step statistics."""
    alpha, beta, sigma, qs = params
    r = (yc - alpha - beta * xc) / sigma
    ll = const - 0.5 * np.sum(r * r) - yc.size * (np.log(sigma) + 0.5 * np.log(2 * np.pi))
    stats = []
    for b, q in zip(blocks, qs):
        with np.errstate(divide="ignore"):
            logq = np.log(q)
        ll_s, c, d = _kernels.em_estep(b.y_inc, b.support, logq, alpha, beta, sigma)
        ll += ll_s + np.sum(b.counts * logq)
        stats.append((c, d))
    return ll, stats


def _spml_mstep(blocks, stats, yc, xc, y_all_sq, y_inc_sum, N):
    S0 = float(yc.size)
    S1 = xc.sum()
    S2 = xc @ xc
    Sy = yc.sum() + y_inc_sum
    Sxy = xc @ yc
    qs = []
    for b, (c, d) in zip(blocks, stats):
        S0 += c.sum()
        S1 += c @ b.support
        S2 += c @ b.support**2
        Sxy += d @ b.support
        qs.append((b.counts + c) / b.n_total)
    det = S0 * S2 - S1 * S1
    if not det > 0:
        raise SingularDesign("degenerate covariate support in the EM update")
    alpha = (S2 * Sy - S1 * Sxy) / det
    beta = (S0 * Sxy - S1 * Sy) / det
    rss = y_all_sq - 2 * alpha * Sy - 2 * beta * Sxy + alpha**2 * S0 + 2 * alpha * beta * S1 + beta**2 * S2
    sigma = float(np.sqrt(max(rss, 1e-300) / N))
    return alpha, beta, sigma, qs


def estimate_spml_twophase(cohort, sample, strata=None, *, tol=EM_TOL, max_iter=EM_MAX_ITER,
                           accelerate=True, trace=None):
    """Semiparametric MLE of ``E(Y|X) = alpha + beta X`` (Gaussian errors).

    The within-stratum distribution of ``X`` is profiled over the
    phase-two support of each stratum and the likelihood maximised by EM.
    With ``accelerate`` a squared-extrapolation step is tried each cycle
    and kept only if it does not lower the likelihood, so the accepted
    log-likelihood sequence stays non-decreasing.

    Parameters
    ----------
    strata : array_like, optional
        Stratum labels for every cohort unit; defaults to ``cohort.stratum``.
    trace : list, optional
        Receives the accepted log-likelihood values.

    Raises
    ------
    EmptySupport, NonConvergence
    """
    if outcome_family(cohort) != "linear":
        raise InvalidInput("SPML estimator needs a Gaussian (linear) outcome model")
    blocks, const = _spml_setup(cohort, sample, strata)
    idx = sample.index
    yc, xc = cohort.y[idx], cohort.x[idx]
    N = cohort.N
    y_all_sq = float(cohort.y @ cohort.y)
    y_inc_sum = float(sum(b.y_inc.sum() for b in blocks))

    init = fit_glm("linear", np.column_stack([np.ones(idx.size), xc]), yc)
    sigma = float(np.sqrt(np.mean(init.residuals**2)))
    params = (*init.theta_hat, sigma if sigma > 0 else 1.0, [b.q for b in blocks])

    def estep(p):
        return _spml_estep(blocks, const, yc, xc, p)

    def mstep(st):
        return _spml_mstep(blocks, st, yc, xc, y_all_sq, y_inc_sum, N)

    ll, st = estep(params)
    if trace is not None:
        trace.append(ll)
    converged = False
    it = 0
    while it < max_iter:
        it += 1
        p1 = mstep(st)
        ll1, st1 = estep(p1)
        accepted = [ll1]
        nxt, ll_new, st_new = p1, ll1, st1
        if accelerate:
            p2 = mstep(st1)
            ll2, st2 = estep(p2)
            accepted.append(ll2)
            nxt, ll_new, st_new = p2, ll2, st2
            cand = _squarem(params, p1, p2)
            if cand is not None:
                llc, stc = estep(cand)
                if np.isfinite(llc) and llc >= ll2:
                    accepted.append(llc)
                    nxt, ll_new, st_new = cand, llc, stc
        prev = ll
        for v in accepted:
            if v < prev - 1e-10 * (1.0 + abs(prev)):
                raise AssertionError(f"EM log-likelihood decreased: {prev!r} -> {v!r}")
            if trace is not None:
                trace.append(v)
            prev = v
        gain = ll_new - ll
        params, ll, st = nxt, ll_new, st_new
        if gain < tol:
            converged = True
            break
    if not converged:
        raise NonConvergence(f"EM did not converge in {max_iter} iterations")

    alpha, beta, sigma, qs = params
    theta = np.array([alpha, beta])
    var = _spml_variance(yc, xc, sigma)
    spec = EstimatorSpec("spml_twophase", family="linear")
    return _estimate(theta, var, spec, cohort, converged=True, iterations=it, loglik=ll, sigma=sigma,
                     support_weights=qs)


def _squarem(p0, p1, p2):
    """SQUAREM-S3 extrapolation; support weights are renormalised to the simplex."""
    v0 = _flatten(p0)
    r = _flatten(p1) - v0
    v = _flatten(p2) - _flatten(p1) - r
    vv = v @ v
    if vv == 0:
        return None
    a = min(-np.sqrt((r @ r) / vv), -1.0)
    return _unflatten(v0 - 2 * a * r + a * a * v, p0)


def _flatten(p):
    a, b, s, qs = p
    return np.concatenate([[a, b, np.log(s)], *qs])


def _unflatten(vec, like):
    a, b, ls = vec[:3]
    qs = []
    pos = 3
    for q in like[3]:
        seg = np.clip(vec[pos:pos + q.size], 1e-300, None)
        tot = seg.sum()
        if not tot > 0:
            return None
        qs.append(seg / tot)
        pos += q.size
    return (float(a), float(b), float(np.exp(ls)), qs)


def _spml_variance(yc, xc, sigma):
    # complete-case model variance; a conservative scale, not the efficient one
    X = np.column_stack([np.ones_like(xc), xc])
    return np.diag(linalg.inv(X.T @ X)) * sigma**2


# --------------------------------------------------------------------- #
# Imputation-based
# --------------------------------------------------------------------- #


def mean_imputation(cohort, sample):
    """Single regression imputation ``X_hat`` for every cohort unit."""
    kind = cohort.scenario.kind
    idx = sample.index
    if cohort.scenario.is_surrogate:
        coef, *_ = linear_imputation_fit(cohort, sample)
        return np.column_stack([np.ones(cohort.N), cohort.y, cohort.z]) @ coef
    if kind == "nwts":
        fit, D = binary_imputation_fit(cohort, sample)
        return expit(D @ fit.theta_hat)
    mu, eta, _ = normal_imputation_params(cohort.x[idx], cohort.y[idx])
    return mu + eta * cohort.y


def _rake_and_fit(cohort, sample, H):
    X = outcome_design(cohort)
    return raking_estimator(outcome_family(cohort), X, cohort.y, sample.R, sample.pi, H)


def estimate_raking_single(cohort, sample, rng=None):
    """Raking on influence functions from one fully imputed cohort.

    The imputation model is fitted on phase two; the working model is
    fitted to ``(Y, X_hat)`` for all units; its influence functions are
    the auxiliaries for raking the design weights.
    """
    x_hat = mean_imputation(cohort, sample)
    fit_imp = fit_glm(outcome_family(cohort), outcome_design(cohort, x_hat), cohort.y)
    H = AuxiliaryMatrix(fit_imp.influence)
    fit, cw = _rake_and_fit(cohort, sample, H)
    spec = EstimatorSpec("raking_single", family=fit.family)
    return _estimate(fit.theta_hat, np.diag(fit.sandwich_cov), spec, cohort,
                     converged=fit.converged and cw.converged, raking_iterations=cw.iterations,
                     calibration_residual=float(np.max(np.abs(cw.constraint_residual))))


def mi_and_mir(cohort, sample, engine, M, rng, kinds=("mi", "mir")):
    """Standard MI and MI-raking estimates sharing one set of imputations.

    Returns a dict ``kind -> ThetaEstimate`` (or the raised exception for
    a kind that failed after the shared imputations succeeded).
    """
    streams = make_streams(rng, M)
    draws = draw_imputations(engine, cohort, sample, streams)
    fits = completed_fits(draws, cohort)
    engine_tag = engine if isinstance(engine, str) else draws[0].engine
    out = {}
    if "mi" in kinds:
        comb = rubin_combine([(f.theta_hat, np.diag(f.sandwich_cov)) for f in fits])
        spec = EstimatorSpec("mi", engine=engine_tag, M=M, family=fits[0].family)
        out["mi"] = _estimate(comb.theta_bar, comb.total_var, spec, cohort,
                              within=comb.within_var, between=comb.between_var)
    if "mir" in kinds:
        try:
            H = mi_calibration_variable(draws, cohort)
            fit, cw = _rake_and_fit(cohort, sample, H)
            spec = EstimatorSpec("mir", engine=engine_tag, M=M, family=fit.family)
            out["mir"] = _estimate(fit.theta_hat, np.diag(fit.sandwich_cov), spec, cohort,
                                   converged=fit.converged and cw.converged,
                                   raking_iterations=cw.iterations,
                                   calibration_residual=float(np.max(np.abs(cw.constraint_residual))))
        except (NonConvergence, SingularDesign, InvalidInput) as exc:
            out["mir"] = exc
    return out


def _unwrap(result):
    if isinstance(result, Exception):
        raise result
    return result


def estimate_mi(cohort, sample, engine, M, rng):
    """Rubin-combined fits of the working model over ``M`` imputations."""
    return _unwrap(mi_and_mir(cohort, sample, engine, M, rng, kinds=("mi",))["mi"])


def estimate_mir(cohort, sample, engine, M, rng):
    """Raking with the imputation-averaged influence functions as auxiliaries."""
    return _unwrap(mi_and_mir(cohort, sample, engine, M, rng, kinds=("mir",))["mir"])


def run_estimator(spec, cohort, sample, rng=None):
    """Dispatch on an ``EstimatorSpec``."""
    if spec.kind == "mle_casecontrol":
        return estimate_mle_casecontrol(cohort, sample)
    if spec.kind == "spml_twophase":
        return estimate_spml_twophase(cohort, sample)
    if spec.kind == "ipw":
        return estimate_ipw(cohort, sample)
    if spec.kind == "regression_calibration":
        return estimate_rc(cohort, sample)
    if spec.kind == "raking_single":
        return estimate_raking_single(cohort, sample)
    if spec.kind == "mi":
        return estimate_mi(cohort, sample, spec.engine, spec.M, rng)
    return estimate_mir(cohort, sample, spec.engine, spec.M, rng)
