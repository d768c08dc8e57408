"""Monte Carlo driver, summary metrics and report writers.

Randomness is addressed by position: replicate ``k`` draws its cohort and
sample from the stream ``(seed, k, 0)``, imputation ``m`` of engine ``e``
from ``(seed, k, 1 + e, m)``, and the bootstrap diagnostics from
``(seed, k, 100, b)``. Results therefore do not depend on the number of
worker processes or on scheduling.
"""

from __future__ import annotations

import configparser
import csv
import functools
import io
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import diagnostics as diag
from .designs import (
    GRIDS,
    NWTS_TERMS,
    draw_sample,
    generate_cohort,
    load_nwts,
    make_scenario,
    outcome_design,
    outcome_family,
)
from .errors import ConfigError, InvalidInput, MirakeError
from .estimators import (
    estimate_ipw,
    estimate_mle_casecontrol,
    estimate_raking_single,
    estimate_rc,
    estimate_spml_twophase,
    mi_and_mir,
)
from .glm import fit_glm
from .imputation import ENGINES
from .oracle import pseudo_true_oracle  # noqa: F401  (part of the public surface)
from .rng import generator, seed_sequence

SCENARIOS = ("case_control", "surrogate_additive", "surrogate_multiplicative", "nwts")
DIAGNOSTICS = ("mp", "gof")

# report label -> (kind, engine)
ESTIMATORS = {
    "MLE": ("mle", None),
    "IPW": ("ipw", None),
    "RC": ("regression_calibration", None),
    "Raking": ("raking_single", None),
    "MI-P": ("mi", "parametric_normal"),
    "MI-B": ("mi", "empirical"),
    "MIR-P": ("mir", "parametric_normal"),
    "MIR-B": ("mir", "empirical"),
    "MI-Boot": ("mi", "wild_bootstrap"),
    "MI-Bayes": ("mi", "bayesian"),
    "MIR-Boot": ("mir", "wild_bootstrap"),
    "MIR-Bayes": ("mir", "bayesian"),
    "MI": ("mi", "bootstrap_binary"),
    "MIR": ("mir", "bootstrap_binary"),
}

DEFAULT_ESTIMATORS = {
    "case_control": ("MLE", "IPW", "MI-P", "MI-B"),
    "surrogate_additive": ("MLE", "Raking", "RC", "MI-Boot", "MI-Bayes", "MIR-Boot", "MIR-Bayes"),
    "surrogate_multiplicative": ("MLE", "Raking", "RC", "MI-Boot", "MI-Bayes", "MIR-Boot", "MIR-Bayes"),
    "nwts": ("MLE", "Raking", "MI", "MIR"),
}

# design-based reference for relative-efficiency curves
REFERENCE = {"case_control": "IPW", "surrogate_additive": "Raking", "surrogate_multiplicative": "Raking"}

DATA_KEY = 0
GOF_KEY = 100
# the case-control lack-of-fit test looks at the full cohort; the
# surrogate designs sample on Z only, so phase two suffices there
GOF_SCOPE = {"case_control": "cohort"}
MP_KEY = 101

MP_LABEL = "MP test"
GOF_LABEL = "Lin. test"
CORR_LABEL = "Abs Corr"
SUMSQ = "SumSq"


def normalise_kind(kind):
    k = str(kind).strip().replace("-", "_")
    if k not in SCENARIOS:
        raise ConfigError(f"unknown scenario {kind!r}; expected one of {', '.join(SCENARIOS)}")
    return k


# --------------------------------------------------------------------- #
# Configuration
# --------------------------------------------------------------------- #


@dataclass(frozen=True)
class ExperimentConfig:
    """One Monte Carlo experiment over a list of grid points."""

    scenario: str
    grid: tuple = ()
    K: int = 1000
    M: int = 100
    B: int = diag.DEFAULT_B
    seed: int = 1
    estimators: tuple = ()
    diagnostics: tuple = ()
    workers: int = 1
    out: str | None = None
    nwts_data: str | None = None
    null_reps: int = diag.NULL_REPS
    overrides: tuple = ()  # (name, value) pairs passed to make_scenario
    gof_scope: str | None = None  # "cohort" or "phase2"; None picks per scenario

    def __post_init__(self):
        kind = normalise_kind(self.scenario)
        object.__setattr__(self, "scenario", kind)
        if kind != "nwts":
            grid = tuple((float(b), float(d)) for b, d in (self.grid or GRIDS[kind]))
            if not grid:
                raise ConfigError("grid must contain at least one (beta0, delta0) point")
        else:
            grid = ()
            if not self.nwts_data:
                raise ConfigError("the nwts scenario needs a data file")
        object.__setattr__(self, "grid", grid)
        est = tuple(self.estimators) or DEFAULT_ESTIMATORS[kind]
        for e in est:
            if e not in ESTIMATORS:
                raise ConfigError(f"unknown estimator {e!r}")
        object.__setattr__(self, "estimators", est)
        dg = tuple(self.diagnostics)
        for d in dg:
            if d not in DIAGNOSTICS:
                raise ConfigError(f"unknown diagnostic {d!r}")
        if kind == "nwts" and dg:
            raise ConfigError("diagnostics are defined for simulation scenarios only")
        object.__setattr__(self, "diagnostics", dg)
        if self.K < 2:
            raise ConfigError("K must be at least 2")
        if self.M < 1:
            raise ConfigError("M must be at least 1")
        if "gof" in dg and self.B < diag.MIN_B:
            raise ConfigError(f"B must be at least {diag.MIN_B}")
        if not (0 <= int(self.seed) < 2**64):
            raise ConfigError("seed must be a 64-bit non-negative integer")
        if self.workers < 1:
            raise ConfigError("workers must be positive")
        if self.null_reps < 100:
            raise ConfigError("null_reps must be at least 100")
        object.__setattr__(self, "overrides", tuple(sorted(dict(self.overrides).items())))
        scope = self.gof_scope or GOF_SCOPE.get(kind, "phase2")
        if scope not in diag.SCOPES:
            raise ConfigError(f"gof_scope must be one of {diag.SCOPES}")
        object.__setattr__(self, "gof_scope", scope)

    def scenarios(self):
        kw = dict(self.overrides)
        if self.scenario == "nwts":
            return [make_scenario("nwts", **kw)]
        return [make_scenario(self.scenario, b, d, **kw) for b, d in self.grid]

    @classmethod
    def from_ini(cls, path):
        """Read an INI file with an ``[experiment]`` section.

        Keys: ``scenario``, ``grid`` (``b,d; b,d``) or ``grid_rows``
        (``0, 3``), ``reps``, ``imputations``, ``bootstrap``, ``seed``,
        ``estimators``, ``diagnostics``, ``workers``, ``null_reps``,
        ``gof_scope``;
        ``[output] dir``; ``[data] nwts``; ``[scenario]`` overrides.
        """
        cp = configparser.ConfigParser()
        try:
            with open(path) as fh:
                cp.read_file(fh)
        except (OSError, configparser.Error) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        if not cp.has_section("experiment"):
            raise ConfigError("config needs an [experiment] section")
        ex = cp["experiment"]
        try:
            kind = normalise_kind(ex.get("scenario", ""))
            grid = ()
            if "grid" in ex:
                grid = tuple(
                    tuple(float(v) for v in pt.split(",")) for pt in ex["grid"].split(";") if pt.strip()
                )
            elif "grid_rows" in ex and kind != "nwts":
                grid = tuple(GRIDS[kind][int(i)] for i in _split(ex["grid_rows"]))
            overrides = ()
            if cp.has_section("scenario"):
                overrides = tuple((k, _scalar(v)) for k, v in cp["scenario"].items())
            return cls(
                scenario=kind,
                grid=grid,
                K=ex.getint("reps", 1000),
                M=ex.getint("imputations", 100),
                B=ex.getint("bootstrap", diag.DEFAULT_B),
                seed=ex.getint("seed", 1),
                estimators=tuple(_split(ex.get("estimators", ""))),
                diagnostics=tuple(_split(ex.get("diagnostics", ""))),
                workers=ex.getint("workers", 1),
                null_reps=ex.getint("null_reps", diag.NULL_REPS),
                gof_scope=ex.get("gof_scope", None),
                out=cp.get("output", "dir", fallback=None),
                nwts_data=cp.get("data", "nwts", fallback=None),
                overrides=overrides,
            )
        except (ValueError, IndexError, KeyError) as exc:
            raise ConfigError(f"invalid config value: {exc}") from None


def _split(s):
    return [t.strip() for t in s.split(",") if t.strip()]


def _scalar(v):
    for conv in (int, float):
        try:
            return conv(v)
        except ValueError:
            pass
    return v


# --------------------------------------------------------------------- #
# Metrics
# --------------------------------------------------------------------- #


def compute_metrics(estimates, target):
    """Root-MSE, bias and root-variance (divisor ``K``) of replicate estimates.

    Returns
    -------
    (rmse, bias, sd)
    """
    b = np.asarray(estimates, dtype=float).ravel()
    if b.size < 2:
        raise InvalidInput("need at least two replicate estimates")
    mean = b.mean()
    bias = mean - target
    var = np.mean((b - mean) ** 2)
    mse = np.mean((b - target) ** 2)
    return float(np.sqrt(mse)), float(bias), float(np.sqrt(var))


# --------------------------------------------------------------------- #
# One replicate
# --------------------------------------------------------------------- #


@dataclass(frozen=True)
class _Context:
    config: ExperimentConfig
    scenario: object
    mp_threshold: tuple | None = None
    mp_theta: tuple | None = None
    cohort: object = None  # fixed NWTS cohort


def _engine_key(engine):
    return 1 + ENGINES.index(engine)


def _run_estimators(ctx, cohort, sample, k):
    cfg = ctx.config
    kind = cfg.scenario
    thetas, failures = {}, {}

    def attempt(label, fn):
        try:
            thetas[label] = np.asarray(fn().theta, dtype=float)
        except (MirakeError, np.linalg.LinAlgError, AssertionError) as exc:
            failures[label] = f"{type(exc).__name__}: {exc}"

    by_engine = {}
    for label in cfg.estimators:
        what, engine = ESTIMATORS[label]
        if engine is not None:
            by_engine.setdefault(engine, []).append((label, what))
            continue
        if what == "mle":
            fn = estimate_spml_twophase if kind.startswith("surrogate") else estimate_mle_casecontrol
            attempt(label, lambda fn=fn: fn(cohort, sample))
        elif what == "ipw":
            attempt(label, lambda: estimate_ipw(cohort, sample))
        elif what == "regression_calibration":
            attempt(label, lambda: estimate_rc(cohort, sample))
        elif what == "raking_single":
            attempt(label, lambda: estimate_raking_single(cohort, sample))

    for engine, items in by_engine.items():
        ss = seed_sequence(cfg.seed, (k, _engine_key(engine)))
        kinds = tuple(what for _, what in items)
        try:
            out = mi_and_mir(cohort, sample, engine, cfg.M, ss, kinds=kinds)
        except (MirakeError, np.linalg.LinAlgError) as exc:
            for label, _ in items:
                failures[label] = f"{type(exc).__name__}: {exc}"
            continue
        for label, what in items:
            res = out[what]
            if isinstance(res, Exception):
                failures[label] = f"{type(res).__name__}: {res}"
            else:
                thetas[label] = np.asarray(res.theta, dtype=float)
    return thetas, failures


def _run_diagnostics(ctx, cohort, sample, k):
    cfg = ctx.config
    out = {}
    if "mp" in cfg.diagnostics:
        g = generator(seed_sequence(cfg.seed, (k, MP_KEY)))
        r = diag.mp_test(cohort, sample, theta_star=ctx.mp_theta, threshold=ctx.mp_threshold, rng=g)
        out["mp_reject"] = bool(r.reject)
        out["mp_stat"] = r.statistic
    if "gof" in cfg.diagnostics:
        idx = sample.index if cfg.gof_scope == "phase2" else slice(None)
        fam = outcome_family(cohort)
        try:
            r = diag.gof_linearity_test(
                cohort.x[idx], cohort.y[idx], cfg.B, seed_sequence(cfg.seed, (k, GOF_KEY)), family=fam
            )
            out["gof_reject"] = bool(r.reject)
            out["gof_p"] = r.p_value
        except MirakeError as exc:
            out["gof_error"] = f"{type(exc).__name__}: {exc}"
    return out


def run_replicate(ctx, k):
    """Estimates and diagnostics of replicate ``k``; never raises for
    estimator failures, which are returned as messages."""
    cfg = ctx.config
    rng = generator(seed_sequence(cfg.seed, (k, DATA_KEY)))
    try:
        cohort = ctx.cohort if ctx.cohort is not None else generate_cohort(ctx.scenario, rng)
        sample = draw_sample(cohort, rng)
    except MirakeError as exc:
        msg = f"{type(exc).__name__}: {exc}"
        return {"k": k, "theta": {}, "failures": {e: msg for e in cfg.estimators}, "diag": {}}
    thetas, failures = _run_estimators(ctx, cohort, sample, k)
    return {"k": k, "theta": thetas, "failures": failures,
            "diag": _run_diagnostics(ctx, cohort, sample, k), "S2": sample.S2_size}


# --------------------------------------------------------------------- #
# Reports
# --------------------------------------------------------------------- #


@dataclass(frozen=True)
class ReportRow:
    scenario: str
    beta0: float | None
    delta0: float | None
    estimator: str
    metric: str
    value: float
    replicates: int
    failures: int


@dataclass(frozen=True)
class MonteCarloReport:
    """Summary rows plus (not round-tripped) per-replicate records."""

    scenario: str
    rows: tuple
    replicates: dict = field(default_factory=dict, compare=False, repr=False)

    def value(self, estimator, metric, beta0=None, delta0=None):
        for r in self.rows:
            if r.estimator == estimator and r.metric == metric and _same_point(r, beta0, delta0):
                return r.value
        raise KeyError((estimator, metric, beta0, delta0))

    def row(self, estimator, metric, beta0=None, delta0=None):
        for r in self.rows:
            if r.estimator == estimator and r.metric == metric and _same_point(r, beta0, delta0):
                return r
        raise KeyError((estimator, metric, beta0, delta0))

    def points(self):
        seen = []
        for r in self.rows:
            p = (r.beta0, r.delta0)
            if p not in seen:
                seen.append(p)
        return seen

    def estimators(self):
        seen = []
        for r in self.rows:
            if r.estimator not in seen and r.estimator not in (MP_LABEL, GOF_LABEL, CORR_LABEL):
                seen.append(r.estimator)
        return seen


def _same_point(r, b, d):
    if b is None and d is None:
        return True
    return r.beta0 is not None and math.isclose(r.beta0, b) and math.isclose(r.delta0, d)


def _metric_rows(kind, b0, d0, label, values, target, terms, K):
    """Rows for one estimator at one grid point."""
    rows = []
    n_ok = len(values)
    fails = K - n_ok
    if n_ok < 2:
        for t in terms:
            for m in ("rmse", "bias", "sd"):
                rows.append(ReportRow(kind, b0, d0, label, _mname(m, t, terms), float("nan"), n_ok, fails))
        return rows
    V = np.vstack(values)
    sums = np.zeros(3)
    for j, t in terms.items():
        rmse, bias, sd = compute_metrics(V[:, j], target[j])
        for m, v in (("rmse", rmse), ("bias", bias), ("sd", sd)):
            rows.append(ReportRow(kind, b0, d0, label, _mname(m, t, terms), v, n_ok, fails))
        sums += (rmse**2, bias**2, sd**2)
    if len(terms) > 1:
        for m, v in zip(("mse", "bias2", "var"), sums):
            rows.append(ReportRow(kind, b0, d0, label, f"{m}:{SUMSQ}", float(v), n_ok, fails))
    return rows


def _mname(m, t, terms):
    return m if len(terms) == 1 else f"{m}:{t}"


def _summarise(cfg, sc, records, target, terms):
    kind = cfg.scenario
    b0, d0 = (None, None) if kind == "nwts" else (sc.beta0, sc.delta0)
    K = len(records)
    rows = []
    for label in cfg.estimators:
        vals = [r["theta"][label] for r in records if label in r["theta"]]
        rows.extend(_metric_rows(kind, b0, d0, label, vals, target, terms, K))
    if "mp" in cfg.diagnostics:
        rej = [r["diag"]["mp_reject"] for r in records if "mp_reject" in r["diag"]]
        rows.append(ReportRow(kind, b0, d0, MP_LABEL, "power", float(np.mean(rej)), len(rej), K - len(rej)))
    if "gof" in cfg.diagnostics:
        rej = [r["diag"]["gof_reject"] for r in records if "gof_reject" in r["diag"]]
        val = float(np.mean(rej)) if rej else float("nan")
        rows.append(ReportRow(kind, b0, d0, GOF_LABEL, "power", val, len(rej), K - len(rej)))
    if "mp" in cfg.diagnostics and "MLE" in cfg.estimators and "Raking" in cfg.estimators and d0:
        keep = [r for r in records if "MLE" in r["theta"] and "Raking" in r["theta"] and "mp_stat" in r["diag"]]
        j = next(iter(terms))
        try:
            val = diag.mle_raking_lr_correlation(
                [r["theta"]["MLE"][j] for r in keep],
                [r["theta"]["Raking"][j] for r in keep],
                [-r["diag"]["mp_stat"] for r in keep],
            )
        except MirakeError:
            val = float("nan")
        rows.append(ReportRow(kind, b0, d0, CORR_LABEL, "value", val, len(keep), K - len(keep)))
    return rows


def _map(fn, items, workers):
    if workers == 1:
        return [fn(i) for i in items]
    chunk = max(1, len(items) // (4 * workers))
    with ProcessPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(fn, items, chunksize=chunk))


def nwts_target(cohort):
    """Full-cohort fit of the working model: the NWTS reference values."""
    return fit_glm("logistic", outcome_design(cohort), cohort.y)


def run_monte_carlo(config, progress=None):
    """Run every grid point of ``config``; returns a ``MonteCarloReport``.

    Parameters
    ----------
    progress : callable, optional
        Called as ``progress(point_index, n_points)`` after each grid point.
    """
    cfg = config
    rows = []
    replicates = {}
    scenarios = cfg.scenarios()
    base_cohort = None
    if cfg.scenario == "nwts":
        base_cohort = load_nwts(cfg.nwts_data)
    for i, sc in enumerate(scenarios):
        mp_thr = mp_theta = None
        if "mp" in cfg.diagnostics:
            mp_theta = diag.default_theta_star(sc)
            mp_thr = diag.mp_null_threshold(sc, mp_theta, null_reps=cfg.null_reps, seed=cfg.seed)
        if base_cohort is not None:
            target = nwts_target(base_cohort).theta_hat
            terms = {j: t for j, t in enumerate(NWTS_TERMS) if j > 0}
        else:
            target = np.array([0.0, sc.target_beta])
            terms = {1: "beta"}
        ctx = _Context(cfg, sc, mp_thr, mp_theta, base_cohort)
        records = _map(functools.partial(run_replicate, ctx), list(range(cfg.K)), cfg.workers)
        records.sort(key=lambda r: r["k"])
        replicates[(None, None) if cfg.scenario == "nwts" else (sc.beta0, sc.delta0)] = records
        rows.extend(_summarise(cfg, sc, records, target, terms))
        if progress is not None:
            progress(i, len(scenarios))
    return MonteCarloReport(cfg.scenario, tuple(rows), replicates)


# --------------------------------------------------------------------- #
# Output
# --------------------------------------------------------------------- #

CSV_FIELDS = ("scenario", "beta0", "delta0", "estimator", "metric", "value", "replicates", "failures")


def _fmt(v):
    return "" if v is None else repr(float(v))


def report_to_csv(report):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_FIELDS)
    for r in report.rows:
        w.writerow([r.scenario, _fmt(r.beta0), _fmt(r.delta0), r.estimator, r.metric,
                    _fmt(r.value), r.replicates, r.failures])
    return buf.getvalue()


def read_report_csv(path_or_text):
    """Parse a report CSV (path or text) back into a ``MonteCarloReport``."""
    text = path_or_text
    if isinstance(path_or_text, os.PathLike) or (isinstance(path_or_text, str) and "\n" not in path_or_text):
        text = Path(path_or_text).read_text()
    rd = csv.reader(io.StringIO(text))
    header = next(rd, None)
    if header is None or tuple(header) != CSV_FIELDS:
        raise InvalidInput(f"report CSV must have header {','.join(CSV_FIELDS)}")
    rows = []
    for line in rd:
        if not line:
            continue
        s, b, d, e, m, v, n, f = line
        rows.append(ReportRow(s, float(b) if b else None, float(d) if d else None, e, m,
                              float(v), int(n), int(f)))
    if not rows:
        raise InvalidInput("report CSV has no rows")
    return MonteCarloReport(rows[0].scenario, tuple(rows))


def _cell(v, nd=3):
    return "-" if v is None or (isinstance(v, float) and math.isnan(v)) else f"{v:.{nd}f}"


def report_to_markdown(report):
    """Blocks per grid point (rows sqrt-MSE / Bias / sqrt-Var), or per
    method with one column per coefficient for NWTS."""
    if report.scenario == "nwts":
        return _markdown_nwts(report)
    ests = report.estimators()
    diags = [lab for lab in (MP_LABEL, GOF_LABEL, CORR_LABEL)
             if any(r.estimator == lab for r in report.rows)]
    head = ["(beta0, delta0)", "Criterion", *ests, *diags]
    lines = ["| " + " | ".join(head) + " |", "|" + "---|" * len(head)]
    for b, d in report.points():
        for i, (name, metric) in enumerate((("sqrt(MSE)", "rmse"), ("Bias", "bias"), ("sqrt(Var)", "sd"))):
            cells = [f"({b:g}, {d:g})" if i == 0 else "", name]
            for e in ests:
                try:
                    cells.append(_cell(report.value(e, metric, b, d)))
                except KeyError:
                    cells.append("-")
            for lab in diags:
                if i:
                    cells.append("")
                    continue
                try:
                    cells.append(_cell(report.value(lab, "power" if lab != CORR_LABEL else "value", b, d)))
                except KeyError:
                    cells.append("-")
            lines.append("| " + " | ".join(cells) + " |")
    fails = [(r.estimator, r.beta0, r.delta0, r.failures) for r in report.rows
             if r.failures and r.metric in ("rmse", "power", "value")]
    if fails:
        lines.append("")
        lines.append("Failed replicates: " + "; ".join(f"{e} at ({b:g}, {d:g}): {n}" for e, b, d, n in fails))
    return "\n".join(lines) + "\n"


def _markdown_nwts(report):
    terms = [t for t in NWTS_TERMS[1:]]
    head = ["Method", "Criterion", *terms, "Sum of Squares"]
    lines = ["| " + " | ".join(head) + " |", "|" + "---|" * len(head)]
    for e in report.estimators():
        for i, (name, m, sm) in enumerate((("sqrt(MSE)", "rmse", "mse"), ("Bias", "bias", "bias2"),
                                           ("sqrt(Var)", "sd", "var"))):
            cells = [e if i == 0 else "", name]
            cells += [_cell(report.value(e, f"{m}:{t}")) for t in terms]
            cells.append(_cell(report.value(e, f"{sm}:{SUMSQ}")))
            lines.append("| " + " | ".join(cells) + " |")
    return "\n".join(lines) + "\n"


def relative_efficiency(report, reference=None):
    """Rows ``(delta0, estimator, mse_ratio)``: each estimator's MSE over
    the reference (design-based) estimator's MSE at every grid point."""
    ref = reference or REFERENCE.get(report.scenario)
    if ref is None:
        raise InvalidInput("no reference estimator for this scenario")
    out = []
    for b, d in report.points():
        try:
            ref_mse = report.value(ref, "rmse", b, d) ** 2
        except KeyError:
            raise InvalidInput(f"reference estimator {ref!r} missing from the report") from None
        for e in report.estimators():
            if e == ref:
                continue
            out.append((b, d, f"{e}/{ref}", report.value(e, "rmse", b, d) ** 2 / ref_mse))
    return out


def emit_report(report, out_dir, formats=("csv", "md")):
    """Write ``report.csv``, ``report.md`` and (for simulations)
    ``relative_efficiency.csv`` into ``out_dir``; returns the paths."""
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        paths = []
        if "csv" in formats:
            p = out / "report.csv"
            p.write_text(report_to_csv(report))
            paths.append(p)
        if "md" in formats:
            p = out / "report.md"
            p.write_text(report_to_markdown(report))
            paths.append(p)
        if report.scenario in REFERENCE and "csv" in formats:
            p = out / "relative_efficiency.csv"
            with p.open("w", newline="") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(("beta0", "delta0", "ratio", "mse_ratio"))
                for row in relative_efficiency(report):
                    w.writerow((repr(row[0]), repr(row[1]), row[2], repr(float(row[3]))))
            paths.append(p)
    except OSError as exc:
        raise OSError(f"cannot write report to {out}: {exc}") from exc
    return paths


def config_dict(config):
    d = asdict(config)
    d["grid"] = [list(p) for p in config.grid]
    return d


__all__ = [
    "ExperimentConfig", "MonteCarloReport", "ReportRow", "compute_metrics", "emit_report",
    "pseudo_true_oracle", "read_report_csv", "relative_efficiency", "report_to_csv",
    "report_to_markdown", "run_monte_carlo", "run_replicate", "nwts_target",
]
