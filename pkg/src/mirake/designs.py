"""Synthetic cohorts, two-phase sampling schemes and NWTS ingestion."""

from __future__ import annotations

import csv
import functools
import math
import warnings
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy import integrate, optimize, stats
from scipy.special import expit

from .errors import InsufficientControls, InvalidInput, ParseError, SchemaError

KINDS = ("case_control", "surrogate_additive", "surrogate_multiplicative", "nwts")

# (beta0, delta0) grids whose working-model slope is 1
CASECONTROL_GRID = ((1.0, 0.0), (0.844, 0.7), (0.692, 1.4), (0.541, 2.1), (0.381, 2.8))
ADDITIVE_GRID = ((1.0, 0.0), (0.951, 0.068), (0.904, 0.131), (0.861, 0.191), (0.820, 0.247), (0.781, 0.3))
MULTIPLICATIVE_GRID = ((1.0, 0.0), (1.045, -0.068), (1.087, -0.131), (1.127, -0.191), (1.165, -0.247), (1.2, -0.3))

GRIDS = {
    "case_control": CASECONTROL_GRID,
    "surrogate_additive": ADDITIVE_GRID,
    "surrogate_multiplicative": MULTIPLICATIVE_GRID,
}

CASE_CONTROL_ALPHA0 = -5.0
CASE_CONTROL_KNOT = 1.8
CASE_CONTROL_N = 10_000
SURROGATE_N = 5_000
INTERMEDIATE_RATE = 0.05


@functools.cache
def surrogate_knot(kind):
    """The 0.95 quantile of the surrogate ``Z`` (exact, not simulated).

    Additive: ``Z ~ N(0, 2)``. Multiplicative: ``Z = eta X`` with
    ``eta ~ Gamma(4, rate 4)``, so ``P(Z <= z) = E_eta[Phi(z / eta)]``.
    """
    if kind == "surrogate_additive":
        return math.sqrt(2.0) * stats.norm.ppf(0.95)
    if kind == "surrogate_multiplicative":
        g = stats.gamma(a=4.0, scale=0.25)

        def cdf(z):
            val, _ = integrate.quad(lambda e: stats.norm.cdf(z / e) * g.pdf(e), 0.0, np.inf, epsabs=1e-13)
            return val

        return optimize.brentq(lambda z: cdf(z) - 0.95, 0.5, 5.0, xtol=1e-12)
    raise InvalidInput(f"no surrogate knot for kind {kind!r}")


@dataclass(frozen=True)
class Scenario:
    """Data-generating and sampling parameters for one experiment cell.

    ``interaction`` selects where the surrogate scenarios' departure from
    linearity acts: ``"inner"`` (``|Z| <= zeta0``, the default, which is
    the region that makes the tabulated grids have pseudo-true slope 1)
    or ``"outer"`` (``|Z| > zeta0``).
    """

    kind: str
    alpha0: float = 0.0
    beta0: float = 1.0
    delta0: float = 0.0
    knot: float = 0.0
    N: int = 0
    n_controls: int | None = None
    rate: float = INTERMEDIATE_RATE
    target_beta: float = 1.0
    sampling: str = "bernoulli"
    interaction: str = "inner"

    def __post_init__(self):
        if self.kind not in KINDS:
            raise InvalidInput(f"unknown scenario kind {self.kind!r}")
        if self.kind != "nwts" and self.N < 1:
            raise InvalidInput("cohort size N must be positive")
        if not (0.0 < self.rate <= 1.0):
            raise InvalidInput("sampling rate must lie in (0, 1]")
        if not math.isfinite(self.knot):
            raise InvalidInput("knot must be finite")
        if self.sampling not in ("bernoulli", "srs"):
            raise InvalidInput("sampling must be 'bernoulli' or 'srs'")
        if self.interaction not in ("inner", "outer"):
            raise InvalidInput("interaction must be 'inner' or 'outer'")

    @property
    def is_surrogate(self):
        return self.kind.startswith("surrogate")


def make_scenario(kind, beta0=1.0, delta0=0.0, **overrides):
    """Scenario with the simulation-study defaults for ``kind``."""
    kind = kind.replace("-", "_")
    if kind == "case_control":
        base = dict(alpha0=CASE_CONTROL_ALPHA0, knot=CASE_CONTROL_KNOT, N=CASE_CONTROL_N)
    elif kind in ("surrogate_additive", "surrogate_multiplicative"):
        base = dict(alpha0=0.0, knot=surrogate_knot(kind), N=SURROGATE_N)
    elif kind == "nwts":
        base = dict()
    else:
        raise InvalidInput(f"unknown scenario kind {kind!r}")
    base.update(overrides)
    return Scenario(kind=kind, beta0=float(beta0), delta0=float(delta0), **base)


def grid_scenarios(kind, **overrides):
    kind = kind.replace("-", "_")
    return [make_scenario(kind, b, d, **overrides) for b, d in GRIDS[kind]]


@dataclass(frozen=True)
class Cohort:
    """Phase-one data plus the ground-truth ``x`` (masked by sampling).

    ``z`` is the surrogate (surrogate scenarios) or local histology (NWTS);
    ``stratum`` holds the design strata.
    """

    y: np.ndarray
    x: np.ndarray
    z: np.ndarray | None
    stratum: np.ndarray
    scenario: Scenario
    covariates: dict = field(default_factory=dict)
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        N = self.y.shape[0]
        for name in ("x", "stratum"):
            if getattr(self, name).shape != (N,):
                raise InvalidInput(f"cohort field {name} must have length {N}")
        if self.z is not None and self.z.shape != (N,):
            raise InvalidInput(f"cohort field z must have length {N}")
        for arr in (self.y, self.x, self.z, self.stratum, *self.covariates.values()):
            if arr is not None:
                arr.setflags(write=False)

    @property
    def N(self):
        return self.y.shape[0]


@dataclass(frozen=True)
class TwoPhaseSample:
    R: np.ndarray
    pi: np.ndarray

    def __post_init__(self):
        R = np.asarray(self.R, dtype=bool)
        pi = np.asarray(self.pi, dtype=float)
        if R.shape != pi.shape:
            raise InvalidInput("R and pi must have equal length")
        if np.any(R & ~(pi > 0)) or np.any(pi > 1) or np.any(pi < 0):
            raise InvalidInput("sampled units need pi in (0, 1]")
        if np.any((pi == 1) & ~R):
            raise InvalidInput("units with pi = 1 must be sampled")
        R.setflags(write=False)
        pi.setflags(write=False)
        object.__setattr__(self, "R", R)
        object.__setattr__(self, "pi", pi)

    @property
    def S2_size(self):
        return int(self.R.sum())

    @property
    def index(self):
        return np.flatnonzero(self.R)


def census(cohort):
    """Degenerate design: every unit sampled with probability one."""
    return TwoPhaseSample(np.ones(cohort.N, dtype=bool), np.ones(cohort.N))


# --------------------------------------------------------------------- #
# Case-control study
# --------------------------------------------------------------------- #


def casecontrol_prob(scenario, x):
    """``P(Y = 1 | x)`` under the linear-spline logistic model."""
    s = scenario
    return expit(s.alpha0 + s.beta0 * x + s.delta0 * (x - s.knot) * (x > s.knot))


def gen_casecontrol_cohort(scenario, rng):
    if scenario.kind != "case_control":
        raise InvalidInput("scenario is not a case-control scenario")
    x = rng.standard_normal(scenario.N)
    y = (rng.random(scenario.N) < casecontrol_prob(scenario, x)).astype(float)
    return Cohort(y=y, x=x, z=None, stratum=y.astype(np.int64), scenario=scenario)


def sample_balanced_casecontrol(cohort, rng, n_controls=None):
    """All cases plus a simple random sample of as many controls."""
    y = cohort.y
    cases = np.flatnonzero(y == 1)
    controls = np.flatnonzero(y == 0)
    n = len(cases) if n_controls is None else int(n_controls)
    if len(cases) < 1:
        raise InsufficientControls("cohort has no cases")
    if n > len(controls):
        raise InsufficientControls(f"need {n} controls, cohort has {len(controls)}")
    R = np.zeros(cohort.N, dtype=bool)
    R[cases] = True
    R[rng.choice(controls, size=n, replace=False)] = True
    pi = np.ones(cohort.N)
    pi[controls] = n / len(controls)
    return TwoPhaseSample(R, pi)


# --------------------------------------------------------------------- #
# Linear regression with a continuous surrogate
# --------------------------------------------------------------------- #


def surrogate_mean(scenario, x, z):
    """``E(Y | x, z)`` for the surrogate scenarios."""
    s = scenario
    if s.interaction == "inner":
        region = np.abs(z) <= s.knot
    else:
        region = np.abs(z) > s.knot
    return s.alpha0 + s.beta0 * x + s.delta0 * x * region


def gen_surrogate_cohort(scenario, rng):
    if not scenario.is_surrogate:
        raise InvalidInput("scenario is not a surrogate scenario")
    N = scenario.N
    x = rng.standard_normal(N)
    if scenario.kind == "surrogate_additive":
        z = x + rng.standard_normal(N)
    else:
        z = rng.gamma(4.0, 0.25, N) * x
    y = surrogate_mean(scenario, x, z) + rng.standard_normal(N)
    stratum = (np.abs(z) > scenario.knot).astype(np.int64)
    return Cohort(y=y, x=x, z=z, stratum=stratum, scenario=scenario, meta={"zeta0": scenario.knot})


def sample_stratified_z(cohort, rng, rate=None, method=None):
    """Take every unit with ``|Z| > zeta0``; sample the rest at ``rate``.

    ``method="bernoulli"`` (default) samples units independently;
    ``"srs"`` draws a fixed ``round(rate * N_intermediate)`` units.
    """
    sc = cohort.scenario
    rate = sc.rate if rate is None else float(rate)
    method = sc.sampling if method is None else method
    if not (0.0 < rate <= 1.0):
        raise InvalidInput("rate must lie in (0, 1]")
    outer = cohort.stratum == 1
    inner = np.flatnonzero(~outer)
    R = outer.copy()
    pi = np.ones(cohort.N)
    if method == "bernoulli":
        R[inner] = rng.random(inner.size) < rate
        pi[inner] = rate
    elif method == "srs":
        n = int(round(rate * inner.size))
        R[rng.choice(inner, size=n, replace=False)] = True
        pi[inner] = n / inner.size if inner.size else 1.0
    else:
        raise InvalidInput(f"unknown sampling method {method!r}")
    return TwoPhaseSample(R, pi)


def generate_cohort(scenario, rng):
    if scenario.kind == "case_control":
        return gen_casecontrol_cohort(scenario, rng)
    if scenario.is_surrogate:
        return gen_surrogate_cohort(scenario, rng)
    raise InvalidInput("NWTS cohorts are loaded from file, not generated")


def draw_sample(cohort, rng):
    kind = cohort.scenario.kind
    if kind == "case_control":
        return sample_balanced_casecontrol(cohort, rng, cohort.scenario.n_controls)
    if kind == "nwts":
        return sample_nwts_design(cohort, rng)
    return sample_stratified_z(cohort, rng)


# --------------------------------------------------------------------- #
# National Wilms Tumor Study
# --------------------------------------------------------------------- #

NWTS_COLUMNS = {
    "relapse": "relaps",
    "instit": "instit",
    "histol": "histol",
    "stage": "stage",
    "age": "age",
    "diameter": "tumdiam",
}
_ALIASES = {
    "relapse": ("relaps", "rel", "relapse"),
    "diameter": ("tumdiam", "diameter", "diam"),
}
NWTS_N = 3915


def _to_binary_histology(values, name):
    levels = set(np.unique(values).tolist())
    if levels <= {1.0, 2.0}:
        return (values == 2).astype(float)
    if levels <= {0.0, 1.0}:
        return values.astype(float)
    raise SchemaError(f"column {name!r} must be coded 0/1 or 1/2 (unfavorable = 1 or 2)")


def load_nwts(path, columns=None, age_divisor=1.0):
    """Read the NWTS cohort from a comma-delimited file with a header.

    Parameters
    ----------
    path : str or Path
    columns : dict, optional
        Maps the keys ``relapse, instit, histol, stage, age, diameter`` to
        file column names; defaults follow the public ``nwtsco`` file.
    age_divisor : float
        Divide the age column by this (12 for files recording months).

    Returns
    -------
    Cohort
        ``y`` relapse, ``x`` central histology (unfavorable = 1), ``z``
        local histology; covariates ``stage`` (raw 1-4), ``stage_bin``
        (III/IV = 1), ``age`` and ``diameter``.
    """
    mapping = dict(NWTS_COLUMNS)
    if columns:
        mapping.update(columns)
    path = Path(path)
    text = path.read_text()
    rows = list(csv.reader(text.splitlines()))
    if not rows:
        raise SchemaError(f"{path} is empty")
    header = [h.strip() for h in rows[0]]
    col_index = {}
    for key, name in mapping.items():
        candidates = (name,) if columns and key in columns else (name, *_ALIASES.get(key, ()))
        found = next((c for c in candidates if c in header), None)
        if found is None:
            raise SchemaError(f"missing column for {key!r} (looked for {', '.join(candidates)})")
        col_index[key] = header.index(found)
    data = {k: [] for k in mapping}
    for lineno, row in enumerate(rows[1:], start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != len(header):
            raise ParseError(f"expected {len(header)} fields, found {len(row)}", line=lineno)
        for key, j in col_index.items():
            try:
                data[key].append(float(row[j]))
            except ValueError:
                raise ParseError(f"column {header[j]!r}: cannot parse {row[j]!r}", line=lineno) from None
    arr = {k: np.asarray(v, dtype=float) for k, v in data.items()}
    for k, v in arr.items():
        if not np.all(np.isfinite(v)):
            raise ParseError(f"column {k!r} has non-finite values")
    y = arr["relapse"]
    if not np.all((y == 0) | (y == 1)):
        raise SchemaError("relapse must be coded 0/1")
    x = _to_binary_histology(arr["histol"], "histol")
    z = _to_binary_histology(arr["instit"], "instit")
    stage = arr["stage"].astype(np.int64)
    covs = {
        "stage": stage,
        "stage_bin": (stage >= 3).astype(float),
        "age": arr["age"] / age_divisor,
        "diameter": arr["diameter"],
    }
    stratum = _nwts_strata(y, z, stage)
    scenario = Scenario(kind="nwts", N=len(y))
    meta = {"path": str(path), "text": text, "columns": mapping}
    return Cohort(y=y, x=x, z=z, stratum=stratum, scenario=scenario, covariates=covs, meta=meta)


def save_nwts(cohort, path):
    """Write a loaded NWTS cohort back out, byte for byte."""
    text = cohort.meta.get("text")
    if text is None:
        raise InvalidInput("cohort was not loaded from a file")
    Path(path).write_text(text)


def _nwts_strata(y, z, stage):
    # 0 = mandatory (relapsed or local unfavorable); s = controls at raw stage s
    return np.where((y == 1) | (z == 1), 0, stage).astype(np.int64)


def sample_nwts_design(cohort, rng):
    """1:1 case-control sample of non-relapsed favourable units per stage.

    Relapsed or locally unfavourable units are always taken. Within each
    raw stage, as many non-relapsed locally favourable units are drawn
    (without replacement) as there are relapsed units at that stage.
    """
    y, z = cohort.y, cohort.z
    stage = cohort.covariates["stage"]
    R = (y == 1) | (z == 1)
    pi = np.ones(cohort.N)
    for s in np.unique(stage):
        pool = np.flatnonzero((y == 0) & (z == 0) & (stage == s))
        n_cases = int(np.sum((y == 1) & (stage == s)))
        if pool.size == 0:
            continue
        if n_cases >= pool.size:
            if n_cases > pool.size:
                warnings.warn(
                    f"stage {s}: {pool.size} controls for {n_cases} cases; taking all", stacklevel=2
                )
            R[pool] = True
            continue
        R[rng.choice(pool, size=n_cases, replace=False)] = True
        pi[pool] = n_cases / pool.size
    return TwoPhaseSample(R, pi)


def with_x(cohort, x):
    """Copy of ``cohort`` with a different ``x`` column."""
    return replace(cohort, x=np.asarray(x, dtype=float))


# --------------------------------------------------------------------- #
# Working (nearly-true) outcome models
# --------------------------------------------------------------------- #

NWTS_TERMS = ("(Intercept)", "Hstg", "Stage", "Age", "Diam", "H*S")


def outcome_family(cohort):
    return "linear" if cohort.scenario.is_surrogate else "logistic"


def outcome_design(cohort, x=None):
    """Regressors of the working outcome model with ``x`` substituted.

    Simulation scenarios use ``(1, x)``; NWTS uses intercept, histology,
    dichotomised stage, age, diameter and histology-by-stage.
    """
    x = cohort.x if x is None else np.asarray(x, dtype=float)
    if cohort.scenario.kind == "nwts":
        c = cohort.covariates
        st = c["stage_bin"]
        return np.column_stack([np.ones_like(x), x, st, c["age"], c["diameter"], x * st])
    return np.column_stack([np.ones_like(x), x])


def outcome_terms(cohort):
    if cohort.scenario.kind == "nwts":
        return NWTS_TERMS
    return ("alpha", "beta")


def target_index(cohort):
    """Position of the coefficient the simulation tables report."""
    return 1
