import numpy as np
import pytest
from conftest import synthetic_nwts, write_nwts_csv
from scipy.special import expit, roots_hermitenorm
from scipy.stats import norm

from mirake.designs import (
    NWTS_N,
    Cohort,
    ParseError,
    SchemaError,
    census,
    gen_casecontrol_cohort,
    gen_surrogate_cohort,
    load_nwts,
    make_scenario,
    outcome_design,
    sample_balanced_casecontrol,
    sample_nwts_design,
    sample_stratified_z,
    save_nwts,
    surrogate_knot,
)
from mirake.errors import InsufficientControls, InvalidInput
from mirake.glm import fit_glm


def test_case_count_matches_quadrature():
    sc = make_scenario("case_control")
    nodes, w = roots_hermitenorm(80)
    p = np.sum(w * expit(-5 + nodes)) / np.sqrt(2 * np.pi)
    assert 105 < sc.N * p < 115
    counts = [gen_casecontrol_cohort(sc, np.random.default_rng(s)).y.sum() for s in range(200)]
    se = np.std(counts) / np.sqrt(200)
    assert abs(np.mean(counts) - sc.N * p) < 3 * se


def test_vanishing_intercept_has_no_cases():
    c = gen_casecontrol_cohort(make_scenario("case_control", alpha0=-30.0), np.random.default_rng(0))
    assert c.y.sum() == 0


def test_case_probability_by_bin():
    sc = make_scenario("case_control", 0.541, 2.1, N=1_000_000, alpha0=-2.0)
    c = gen_casecontrol_cohort(sc, np.random.default_rng(1))
    edges = np.quantile(c.x, np.linspace(0, 1, 21))
    b = np.clip(np.searchsorted(edges, c.x, side="right") - 1, 0, 19)
    from mirake.designs import casecontrol_prob

    p = casecontrol_prob(sc, c.x)
    for k in range(20):
        m = b == k
        expect = p[m].mean()
        se = np.sqrt(expect * (1 - expect) / m.sum())
        assert abs(c.y[m].mean() - expect) < 3 * se + 1e-12


def test_balanced_sample_composition(cc_pair):
    c, s = cc_pair
    n_cases = int(c.y.sum())
    assert np.sum(s.R & (c.y == 1)) == n_cases
    assert np.sum(s.R & (c.y == 0)) == n_cases
    assert np.all(s.pi[c.y == 1] == 1)
    np.testing.assert_allclose(s.pi[c.y == 0], n_cases / (c.N - n_cases))
    assert s.S2_size == 2 * n_cases


def test_srs_inclusion_frequency_six_units():
    sc = make_scenario("case_control", N=6)
    y = np.array([1, 1, 0, 0, 0, 0.0])
    c = Cohort(y=y, x=np.arange(6.0), z=None, stratum=y.astype(np.int64), scenario=sc)
    rng = np.random.default_rng(2)
    hits = np.zeros(6)
    for _ in range(100_000):
        hits += sample_balanced_casecontrol(c, rng).R
    np.testing.assert_allclose(hits[2:] / 100_000, 0.5, atol=0.005)


def test_ht_control_total_unbiased(cc_pair):
    c, _ = cc_pair
    rng = np.random.default_rng(3)
    ctrl = c.y == 0
    est = []
    for _ in range(10_000):
        s = sample_balanced_casecontrol(c, rng)
        m = s.R & ctrl
        est.append(np.sum(c.x[m] / s.pi[m]))
    est = np.asarray(est)
    assert abs(est.mean() - c.x[ctrl].sum()) < 3 * est.std() / 100


def test_insufficient_controls():
    sc = make_scenario("case_control", N=4)
    y = np.array([1, 1, 1, 0.0])
    c = Cohort(y=y, x=np.zeros(4), z=None, stratum=y.astype(np.int64), scenario=sc)
    with pytest.raises(InsufficientControls):
        sample_balanced_casecontrol(c, np.random.default_rng(0))
    none = Cohort(y=np.zeros(4), x=np.zeros(4), z=None, stratum=np.zeros(4, np.int64), scenario=sc)
    with pytest.raises(InsufficientControls):
        sample_balanced_casecontrol(none, np.random.default_rng(0))


def test_additive_knot_and_tail_rate():
    zeta = surrogate_knot("surrogate_additive")
    assert zeta == pytest.approx(np.sqrt(2) * norm.ppf(0.95), abs=0.01)
    c = gen_surrogate_cohort(make_scenario("surrogate_additive", N=100_000), np.random.default_rng(4))
    assert abs(np.mean(np.abs(c.z) > zeta) - 0.10) < 0.01


def test_multiplicative_knot_matches_quantile():
    rng = np.random.default_rng(5)
    z = rng.gamma(4.0, 0.25, 10_000_000) * rng.standard_normal(10_000_000)
    q = np.quantile(z, 0.95)
    assert abs(q - 1.8) < 0.02
    assert surrogate_knot("surrogate_multiplicative") == pytest.approx(q, abs=0.02)


def test_no_interaction_slope_is_one():
    c = gen_surrogate_cohort(make_scenario("surrogate_additive", N=1_000_000), np.random.default_rng(6))
    slope = fit_glm("linear", outcome_design(c), c.y).theta_hat[1]
    assert abs(slope - 1) < 0.003


def test_phase_two_size_additive():
    sc = make_scenario("surrogate_additive")
    rng = np.random.default_rng(7)
    sizes = [sample_stratified_z(gen_surrogate_cohort(sc, rng), rng).S2_size for _ in range(100)]
    assert 715 < np.mean(sizes) < 760


def test_full_rate_is_census(add_pair):
    c, _ = add_pair
    s = sample_stratified_z(c, np.random.default_rng(0), rate=1.0)
    assert s.R.all() and np.all(s.pi == 1)


def test_intermediate_inclusion_rate(add_pair):
    c, _ = add_pair
    rng = np.random.default_rng(8)
    inner = c.stratum == 0
    freq = np.mean([sample_stratified_z(c, rng).R[inner].mean() for _ in range(10_000)])
    assert abs(freq - 0.05) < 0.002
    s = sample_stratified_z(c, rng)
    assert np.all(s.R[~inner]) and np.all(s.pi[~inner] == 1)


def test_srs_method_fixed_size(add_pair):
    c, _ = add_pair
    n_inner = int(np.sum(c.stratum == 0))
    s = sample_stratified_z(c, np.random.default_rng(9), method="srs")
    assert np.sum(s.R[c.stratum == 0]) == round(0.05 * n_inner)


def test_scenario_validation():
    with pytest.raises(InvalidInput):
        make_scenario("nope")
    with pytest.raises(InvalidInput):
        make_scenario("case_control", N=0)
    with pytest.raises(InvalidInput):
        make_scenario("surrogate_additive", rate=0.0)
    with pytest.raises(InvalidInput):
        make_scenario("case_control", knot=float("inf"))


def test_census_and_sample_invariants():
    with pytest.raises(InvalidInput):
        from mirake.designs import TwoPhaseSample

        TwoPhaseSample(np.array([False, True]), np.array([1.0, 0.5]))
    c = gen_casecontrol_cohort(make_scenario("case_control", N=50), np.random.default_rng(0))
    s = census(c)
    assert s.S2_size == 50


def test_nwts_loader(nwts_file):
    c = load_nwts(nwts_file)
    assert c.N == NWTS_N
    assert set(np.unique(c.x)) <= {0.0, 1.0}
    assert set(np.unique(c.covariates["stage_bin"])) == {0.0, 1.0}
    np.testing.assert_array_equal(c.covariates["stage_bin"], c.covariates["stage"] >= 3)


def test_nwts_roundtrip_bit_identical(nwts_file, tmp_path):
    c = load_nwts(nwts_file)
    out = tmp_path / "copy.csv"
    save_nwts(c, out)
    assert out.read_bytes() == nwts_file.read_bytes()


def test_nwts_schema_and_parse_errors(tmp_path):
    cols = synthetic_nwts(N=20)
    missing = {k: v for k, v in cols.items() if k != "tumdiam"}
    with pytest.raises(SchemaError):
        load_nwts(write_nwts_csv(tmp_path / "a.csv", missing))
    bad = write_nwts_csv(tmp_path / "b.csv", cols)
    lines = bad.read_text().splitlines()
    lines[5] = lines[5].replace(lines[5].split(",")[4], "abc", 1)
    bad.write_text("\n".join(lines) + "\n")
    with pytest.raises(ParseError) as err:
        load_nwts(bad)
    assert err.value.line == 6
    cols["histol"] = cols["histol"] + 5
    with pytest.raises(SchemaError):
        load_nwts(write_nwts_csv(tmp_path / "c.csv", cols))


def test_nwts_column_mapping(tmp_path):
    cols = synthetic_nwts(N=30)
    cols["months"] = cols.pop("age") * 12
    c = load_nwts(write_nwts_csv(tmp_path / "m.csv", cols), columns={"age": "months"}, age_divisor=12)
    np.testing.assert_allclose(c.covariates["age"], synthetic_nwts(N=30)["age"])


def test_nwts_design_rules(nwts_file):
    c = load_nwts(nwts_file)
    rng = np.random.default_rng(10)
    stage = c.covariates["stage"]
    freq = np.zeros(c.N)
    reps = 2000
    for _ in range(reps):
        s = sample_nwts_design(c, rng)
        assert np.all(s.R[c.y == 1]) and np.all(s.R[c.z == 1])
        freq += s.R
    s = sample_nwts_design(c, rng)
    for st in np.unique(stage):
        pool = (c.y == 0) & (c.z == 0) & (stage == st)
        p = s.pi[pool][0]
        assert p == pytest.approx(np.sum((c.y == 1) & (stage == st)) / pool.sum())
        f = freq[pool].mean() / reps
        # averaged over the pool, so the binomial error shrinks by its size
        assert abs(f - p) < 3 * np.sqrt(p * (1 - p) / (reps * pool.sum()))


def test_nwts_design_short_stratum_warns():
    sc = make_scenario("nwts", N=6)
    y = np.array([1, 1, 1, 0, 0, 0.0])
    z = np.zeros(6)
    stage = np.array([1, 1, 1, 1, 2, 2])
    c = Cohort(y=y, x=np.zeros(6), z=z, stratum=stage.copy(), scenario=sc,
               covariates={"stage": stage})
    with pytest.warns(UserWarning):
        s = sample_nwts_design(c, np.random.default_rng(0))
    assert s.R[3] and s.pi[3] == 1
