"""Pseudo-true limits of the working models under the simulation scenarios."""

from __future__ import annotations

import functools

import numpy as np
from numpy.polynomial.hermite_e import hermegauss
from scipy import integrate, stats
from scipy.special import expit

from .designs import casecontrol_prob
from .errors import InvalidInput, NonConvergence

GH_NODES = 64
MC_DRAWS = 10_000_000
MC_SEED = 20_240_101
_CHUNK = 1_000_000


def _casecontrol_theta_star(scenario, nodes=GH_NODES, tol=1e-12, max_iter=50):
    # probabilists' Gauss-Hermite: integrates against exp(-x^2 / 2)
    x, w = hermegauss(nodes)
    w = w / np.sqrt(2.0 * np.pi)
    p0 = casecontrol_prob(scenario, x)
    X = np.column_stack([np.ones_like(x), x])
    theta = np.array([scenario.alpha0, scenario.beta0], dtype=float)
    for _ in range(max_iter):
        p = expit(X @ theta)
        score = X.T @ (w * (p0 - p))
        info = (X * (w * p * (1 - p))[:, None]).T @ X
        step = np.linalg.solve(info, score)
        theta = theta + step
        if np.max(np.abs(step)) < tol:
            return theta
    raise NonConvergence("pseudo-true Newton iteration did not converge")


def _casecontrol_theta_star_quad(scenario, tol=1e-12, max_iter=50):
    # adaptive quadrature split at the spline knot, where the integrand kinks
    opts = dict(points=[scenario.knot], limit=200, epsabs=1e-14, epsrel=1e-12)

    def expect(f):
        return integrate.quad(lambda x: f(x) * stats.norm.pdf(x), -12, 12, **opts)[0]

    theta = np.array([scenario.alpha0, scenario.beta0], dtype=float)
    for _ in range(max_iter):
        a, b = theta

        def resid(x):
            return casecontrol_prob(scenario, x) - expit(a + b * x)

        def curv(x):
            p = expit(a + b * x)
            return p * (1 - p)

        score = np.array([expect(resid), expect(lambda x: x * resid(x))])
        i0, i1, i2 = (expect(lambda x, k=k: x**k * curv(x)) for k in range(3))
        step = np.linalg.solve([[i0, i1], [i1, i2]], score)
        theta = theta + step
        if np.max(np.abs(step)) < tol:
            return theta
    raise NonConvergence("pseudo-true Newton iteration did not converge")


def _region(scenario, z):
    inner = np.abs(z) <= scenario.knot
    return inner if scenario.interaction == "inner" else ~inner


@functools.lru_cache(maxsize=None)
def surrogate_moments(scenario, method="mc", draws=MC_DRAWS, seed=MC_SEED):
    """``(E[X 1_A], E[X^2 1_A])`` with ``A`` the interaction region.

    ``method="mc"`` uses ``draws`` Monte Carlo draws from a fixed stream;
    ``"quadrature"`` integrates the conditional probability of ``A`` given
    ``X`` numerically.
    """
    if not scenario.is_surrogate:
        raise InvalidInput("not a surrogate scenario")
    if method == "quadrature":
        return _surrogate_moments_quad(scenario)
    if method != "mc":
        raise InvalidInput(f"unknown method {method!r}")
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(seed)))
    m1 = m2 = 0.0
    left = int(draws)
    while left > 0:
        n = min(_CHUNK, left)
        x = rng.standard_normal(n)
        if scenario.kind == "surrogate_additive":
            z = x + rng.standard_normal(n)
        else:
            z = rng.gamma(4.0, 0.25, n) * x
        a = _region(scenario, z)
        m1 += np.sum(x[a])
        m2 += np.sum(x[a] ** 2)
        left -= n
    return m1 / draws, m2 / draws


def _surrogate_moments_quad(scenario):
    zeta = scenario.knot

    def p_inner(x):
        if scenario.kind == "surrogate_additive":
            return stats.norm.cdf(zeta - x) - stats.norm.cdf(-zeta - x)
        if x == 0.0:
            return 1.0
        return stats.gamma.cdf(zeta / abs(x), 4.0, scale=0.25)

    def p_region(x):
        p = p_inner(x)
        return p if scenario.interaction == "inner" else 1.0 - p

    phi = stats.norm.pdf
    opts = dict(limit=200, epsabs=1e-13, epsrel=1e-12)
    m1 = integrate.quad(lambda x: x * p_region(x) * phi(x), -12, 12, **opts)[0]
    m2 = integrate.quad(lambda x: x * x * p_region(x) * phi(x), -12, 12, **opts)[0]
    return m1, m2


def pseudo_true_oracle(scenario, method=None):
    """Limit ``(alpha*, beta*)`` of the full-cohort working-model fit.

    Case-control: root of the expected logistic score under the spline
    model by 64-node Gauss-Hermite quadrature and Newton. Surrogate
    scenarios: least-squares projection using Monte Carlo moments.
    ``method="quadrature"`` switches either case to adaptive quadrature
    (split at the knot for the case-control spline).
    """
    if scenario.kind == "case_control":
        if method == "quadrature":
            return _casecontrol_theta_star_quad(scenario)
        return _casecontrol_theta_star(scenario)
    if scenario.is_surrogate:
        m1, m2 = surrogate_moments(scenario, method or "mc")
        return np.array([scenario.alpha0 + scenario.delta0 * m1, scenario.beta0 + scenario.delta0 * m2])
    raise InvalidInput("no pseudo-true oracle for NWTS; use the full-cohort fit")


def pseudo_true_sigma(scenario, method=None):
    """Residual standard deviation of the surrogate working model at its limit."""
    m1, m2 = surrogate_moments(scenario, method or "mc")
    d = scenario.delta0
    return float(np.sqrt(1.0 + d * d * (m2 - m2 * m2 - m1 * m1)))


def _expect(f, points=None):
    opts = dict(limit=200, epsabs=1e-14, epsrel=1e-12)
    if points:
        opts["points"] = points
    return integrate.quad(lambda x: f(x) * stats.norm.pdf(x), -12, 12, **opts)[0]


def _p_inner(scenario, x):
    zeta = scenario.knot
    if scenario.kind == "surrogate_additive":
        return stats.norm.cdf(zeta - x) - stats.norm.cdf(-zeta - x)
    if x == 0.0:
        return 1.0
    return stats.gamma.cdf(zeta / abs(x), 4.0, scale=0.25)


def phase2_pseudo_true(scenario, tol=1e-12, max_iter=50):
    """Limit of the unweighted working-model fit on the phase-two units.

    Case-control: returns ``(alpha_c, beta)`` on the cohort scale, i.e.
    the phase-two intercept minus the log ratio of case to control
    sampling rates, so that the phase-two logit is ``alpha_c + beta x``
    plus the realised sampling offset. Surrogate scenarios: returns
    ``(alpha, beta, sigma)`` of the least-squares projection under the
    stratified sampling weights.
    """
    if scenario.kind == "case_control":
        P1 = _expect(lambda x: casecontrol_prob(scenario, x), [scenario.knot])
        n_ctrl = scenario.n_controls
        pi0 = P1 / (1 - P1) if n_ctrl is None else n_ctrl / (scenario.N * (1 - P1))
        theta = _casecontrol_theta_star(scenario)
        theta[0] -= np.log(pi0)
        for _ in range(max_iter):
            a, b = theta

            def resid(x):
                p0 = casecontrol_prob(scenario, x)
                q = expit(a + b * x)
                return p0 * (1 - q) - pi0 * (1 - p0) * q

            def curv(x):
                p0 = casecontrol_prob(scenario, x)
                q = expit(a + b * x)
                return (p0 + pi0 * (1 - p0)) * q * (1 - q)

            pts = [scenario.knot]
            score = np.array([_expect(resid, pts), _expect(lambda x: x * resid(x), pts)])
            i0, i1, i2 = (_expect(lambda x, k=k: x**k * curv(x), pts) for k in range(3))
            step = np.linalg.solve([[i0, i1], [i1, i2]], score)
            theta = theta + step
            if np.max(np.abs(step)) < tol:
                return np.array([theta[0] + np.log(pi0), theta[1]])
        raise NonConvergence("phase-two pseudo-true Newton iteration did not converge")

    if not scenario.is_surrogate:
        raise InvalidInput("no phase-two oracle for NWTS")
    s = scenario
    r = s.rate
    inner_has_delta = s.interaction == "inner"

    def parts(x):
        # (probability, sampling weight, conditional mean) for the two regions
        pin = _p_inner(s, x)
        base = s.alpha0 + s.beta0 * x
        m_in = base + (s.delta0 * x if inner_has_delta else 0.0)
        m_out = base + (0.0 if inner_has_delta else s.delta0 * x)
        return ((pin, r, m_in), (1 - pin, 1.0, m_out))

    def ew(f):
        return _expect(lambda x: sum(p * w * f(x, m) for p, w, m in parts(x)))

    S0 = ew(lambda x, m: 1.0)
    S1 = ew(lambda x, m: x)
    S2 = ew(lambda x, m: x * x)
    Sy = ew(lambda x, m: m)
    Sxy = ew(lambda x, m: x * m)
    a, b = np.linalg.solve([[S0, S1], [S1, S2]], [Sy, Sxy])
    mse = ew(lambda x, m: (m - a - b * x) ** 2) / S0
    return np.array([a, b, np.sqrt(1.0 + mse)])
