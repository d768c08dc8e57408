import numpy as np
import pytest

from mirake.designs import Cohort, Scenario, TwoPhaseSample, draw_sample, generate_cohort, make_scenario
from mirake.rng import generator, seed_sequence


def make_pair(kind, beta0=1.0, delta0=0.0, seed=1, **overrides):
    sc = make_scenario(kind, beta0, delta0, **overrides)
    g = generator(seed_sequence(seed, (0,)))
    c = generate_cohort(sc, g)
    return c, draw_sample(c, g)


@pytest.fixture
def cc_pair():
    return make_pair("case_control")


@pytest.fixture
def add_pair():
    return make_pair("surrogate_additive")


@pytest.fixture
def mult_pair():
    return make_pair("surrogate_multiplicative")


def synthetic_nwts(N=3915, seed=7):
    """Cohort shaped like the NWTS data (columns, strata and rough rates)."""
    rng = np.random.default_rng(seed)
    stage = rng.choice([1, 2, 3, 4], N, p=[0.4, 0.3, 0.2, 0.1])
    age = rng.gamma(2.0, 1.8, N)
    diam = rng.gamma(6.0, 2.2, N)
    histol = (rng.random(N) < 0.1).astype(float)
    instit = np.where(rng.random(N) < 0.75, histol, (rng.random(N) < 0.08)).astype(float)
    sb = (stage >= 3).astype(float)
    eta = -2.6 + 1.2 * histol + 0.3 * sb + 0.09 * age + 0.03 * diam + 0.8 * histol * sb
    y = (rng.random(N) < 1 / (1 + np.exp(-eta))).astype(float)
    return {"relaps": y, "instit": instit + 1, "histol": histol + 1, "stage": stage,
            "age": age, "tumdiam": diam}


def write_nwts_csv(path, cols):
    names = list(cols)
    lines = [",".join(names)]
    n = len(cols[names[0]])
    for i in range(n):
        lines.append(",".join(_fmt(cols[k][i]) for k in names))
    path.write_text("\n".join(lines) + "\n")
    return path


def _fmt(v):
    v = float(v)
    return str(int(v)) if v.is_integer() else repr(v)


@pytest.fixture
def nwts_file(tmp_path):
    return write_nwts_csv(tmp_path / "nwts.csv", synthetic_nwts())


# one line per acceptance criterion, repeated in the terminal summary
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
