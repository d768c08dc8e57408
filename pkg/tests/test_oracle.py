import numpy as np
import pytest

from mirake.designs import GRIDS, make_scenario
from mirake.errors import InvalidInput
from mirake.oracle import phase2_pseudo_true, pseudo_true_oracle, pseudo_true_sigma, surrogate_moments

# exact case-control limits by adaptive quadrature; frozen from the oracle
CASE_CONTROL_BETA_STAR = {
    (0.844, 0.7): 0.981213,
    (0.692, 1.4): 0.979596,
    (0.541, 2.1): 0.986590,
    (0.381, 2.8): 0.980545,
}


@pytest.mark.parametrize("kind", ["case_control", "surrogate_additive", "surrogate_multiplicative"])
def test_no_interaction_gives_beta0(kind):
    ts = pseudo_true_oracle(make_scenario(kind, 1.3, 0.0))
    assert ts[1] == pytest.approx(1.3, abs=1e-10)


def test_casecontrol_quadrature_rules_agree():
    for b, d in GRIDS["case_control"]:
        sc = make_scenario("case_control", b, d)
        gh = pseudo_true_oracle(sc)
        quad = pseudo_true_oracle(sc, method="quadrature")
        # 64 Gauss-Hermite nodes do not resolve the spline kink exactly
        np.testing.assert_allclose(gh, quad, atol=5e-3)


def test_casecontrol_frozen_limits():
    for (b, d), beta in CASE_CONTROL_BETA_STAR.items():
        ts = pseudo_true_oracle(make_scenario("case_control", b, d), method="quadrature")
        assert ts[1] == pytest.approx(beta, abs=1e-6)


def test_casecontrol_limit_matches_big_sample_fit():
    from mirake.designs import gen_casecontrol_cohort, outcome_design
    from mirake.glm import fit_glm, model_covariance

    sc = make_scenario("case_control", 0.541, 2.1, alpha0=-1.0, N=2_000_000)
    c = gen_casecontrol_cohort(sc, np.random.default_rng(0))
    fit = fit_glm("logistic", outcome_design(c), c.y)
    ts = pseudo_true_oracle(sc, method="quadrature")
    se = np.sqrt(np.diag(model_covariance(fit)))
    assert np.all(np.abs(fit.theta_hat - ts) < 4 * se)


@pytest.mark.parametrize("kind", ["surrogate_additive", "surrogate_multiplicative"])
def test_surrogate_grid_targets_one(kind):
    for b, d in GRIDS[kind]:
        ts = pseudo_true_oracle(make_scenario(kind, b, d))
        assert abs(ts[1] - 1) <= 0.01


@pytest.mark.parametrize("kind", ["surrogate_additive", "surrogate_multiplicative"])
def test_surrogate_mc_matches_quadrature(kind):
    sc = make_scenario(kind, 0.9, 0.2)
    mc = np.array(surrogate_moments(sc))
    quad = np.array(surrogate_moments(sc, method="quadrature"))
    # 1e7 draws: standard error of the second moment is below 1e-3
    np.testing.assert_allclose(mc, quad, atol=2e-3)


def test_surrogate_sigma_without_interaction():
    assert pseudo_true_sigma(make_scenario("surrogate_additive")) == pytest.approx(1.0)


def test_phase2_limit_without_interaction():
    sc = make_scenario("case_control")
    a, b = phase2_pseudo_true(sc)
    assert (a, b) == pytest.approx((sc.alpha0, sc.beta0), abs=1e-8)


def test_nwts_has_no_oracle():
    with pytest.raises(InvalidInput):
        pseudo_true_oracle(make_scenario("nwts"))


def _casecontrol_slope_se(sc, n_cases):
    """Asymptotic SE of the logistic slope fitted to a 1:1 case-control sample."""
    from scipy import integrate, stats
    from scipy.special import expit

    def expect(f):
        return integrate.quad(lambda x: f(x) * stats.norm.pdf(x), -12, 12, limit=200)[0]

    p = lambda x: expit(sc.alpha0 + sc.beta0 * x)  # noqa: E731
    P1 = expect(p)
    # the sampled logit is shifted by -log(control sampling fraction)
    c = sc.alpha0 - np.log(n_cases / (sc.N - n_cases))
    info = np.zeros((2, 2))
    for dens in (lambda x: p(x) / P1, lambda x: (1 - p(x)) / (1 - P1)):
        for i in range(2):
            for j in range(2):
                q = lambda x: expit(c + x)  # noqa: E731
                info[i, j] += n_cases * expect(lambda x: dens(x) * q(x) * (1 - q(x)) * x ** (i + j))
    return float(np.sqrt(np.linalg.inv(info)[1, 1])), sc.N * P1


def test_casecontrol_mle_spread_matches_information():
    from mirake.designs import draw_sample, generate_cohort
    from mirake.estimators import estimate_mle_casecontrol
    from mirake.rng import generator, seed_sequence

    sc = make_scenario("case_control")
    se, cases = _casecontrol_slope_se(sc, 108)
    assert cases == pytest.approx(108.0, abs=0.5)
    assert se == pytest.approx(0.16873, abs=5e-5)
    slopes = []
    for k in range(400):
        g = generator(seed_sequence(5, (k, 0)))
        c = generate_cohort(sc, g)
        slopes.append(estimate_mle_casecontrol(c, draw_sample(c, g)).theta[1])
    sd = np.std(slopes, ddof=1)
    # sd of a sample sd is about sd / sqrt(2 K); small-sample inflation is a few percent
    assert abs(sd - se) < 4 * se / np.sqrt(800) + 0.01
