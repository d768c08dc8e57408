"""Misspecification diagnostics: most-powerful likelihood-ratio test,
kernel-smoothing lack-of-fit test with the wild bootstrap, and the
correlation between the MLE-minus-raking gap and the log-likelihood ratio.
"""

from __future__ import annotations

import functools
from dataclasses import dataclass, field

import numpy as np
from scipy import fft, optimize
from scipy.special import expit, log_expit

from . import _kernels
from .designs import Cohort, draw_sample, surrogate_mean
from .errors import DegenerateKernel, DegenerateVariance, InvalidInput
from .glm import fit_glm
from .imputation import wild_multiplier
from .rng import streams as make_streams

LEVEL = 0.05
NULL_REPS = 10_000
DEFAULT_B = 200
MIN_B = 50
GRID_SIZE = 40
GRID_SPAN = (0.05, 5.0)
EXACT_MAX_N = 2000  # larger samples use the binned kernel
N_BINS = 1024
_TRUNCATE = 8.0  # kernel support in bandwidths for the binned path


@dataclass(frozen=True)
class TestResult:
    statistic: float
    p_value: float
    reject: bool
    method: str
    bootstrap_reps: int = 0
    level: float = LEVEL

    __test__ = False  # not a pytest class

    def __post_init__(self):
        if not (0.0 <= self.p_value <= 1.0):
            raise InvalidInput("p-value outside [0, 1]")


@dataclass(frozen=True)
class KernelFit:
    bandwidth: float
    fitted: np.ndarray
    cv_score: float
    degenerate: np.ndarray  # points where the nearest-neighbour fallback was used
    method: str = "exact"

    def __post_init__(self):
        if not self.bandwidth > 0:
            raise InvalidInput("bandwidth must be positive")
        if not np.all(np.isfinite(self.fitted)):
            raise InvalidInput("kernel fit has non-finite values")


# --------------------------------------------------------------------- #
# Nadaraya-Watson regression
# --------------------------------------------------------------------- #


def _nearest_other(x, exclude_self):
    """Index of each point's nearest neighbour (excluding itself if asked)."""
    order = np.argsort(x, kind="stable")
    xs = x[order]
    n = xs.size
    pos = np.empty(n, dtype=np.int64)
    pos[order] = np.arange(n)
    left = np.maximum(pos - 1, 0)
    right = np.minimum(pos + 1, n - 1)
    if exclude_self:
        dl = np.where(pos > 0, xs[pos] - xs[left], np.inf)
        dr = np.where(pos < n - 1, xs[right] - xs[pos], np.inf)
        pick = np.where(dl <= dr, left, right)
    else:
        pick = pos
    return order[pick]


@dataclass
class _Binned:
    counts: np.ndarray
    sy: np.ndarray
    ss: np.ndarray  # within-bin sum of squares about the bin mean
    where: np.ndarray  # bin of each observation
    delta: float
    # per-bandwidth kernel transforms and count sums, shared by rebinned copies
    cache: dict = field(default_factory=dict)
    sy_fft: np.ndarray | None = None

    @property
    def mean(self):
        out = np.zeros_like(self.sy)
        occ = self.counts > 0
        out[occ] = self.sy[occ] / self.counts[occ]
        return out


def _bin(x, y, n_bins, base=None):
    """Bin ``(x, y)`` on an even grid; ``base`` reuses the grid of the same ``x``."""
    if base is None:
        lo, hi = x.min(), x.max()
        delta = (hi - lo) / (n_bins - 1) if hi > lo else 1.0
        where = np.rint((x - lo) / delta).astype(np.int64)
        counts = np.bincount(where, minlength=n_bins).astype(float)
        cache = {}
    else:
        where, counts, delta, cache = base.where, base.counts, base.delta, base.cache
    sy = np.bincount(where, weights=y, minlength=n_bins)
    b = _Binned(counts, sy, None, where, delta, cache)
    dev = y - b.mean[where]
    b.ss = np.bincount(where, weights=dev * dev, minlength=n_bins)
    return b


def _fft_conv(vf, kf, n, L, G):
    # circular convolution of length n >= G + L equals the "same" part
    return fft.irfft(vf * kf, n)[L:L + G]


def _neighbour_sums(b, h):
    """Kernel sums over the other bins (the bin itself excluded)."""
    G = b.counts.size
    L = int(min(G - 1, np.ceil(_TRUNCATE * h / b.delta)))
    hit = b.cache.get(h)
    if hit is None:
        k = np.exp(-0.5 * (np.arange(-L, L + 1) * b.delta / h) ** 2)
        k[L] = 0.0
        if L <= 64:
            hit = (k, None, np.convolve(b.counts, k, mode="same"))
        else:
            n = fft.next_fast_len(2 * G)
            kf = fft.rfft(k, n)
            hit = (k, kf, _fft_conv(fft.rfft(b.counts, n), kf, n, L, G))
        b.cache[h] = hit
    k, kf, D = hit
    if kf is None:
        return np.convolve(b.sy, k, mode="same"), D
    n = fft.next_fast_len(2 * G)
    if b.sy_fft is None:
        b.sy_fft = fft.rfft(b.sy, n)
    A = _fft_conv(b.sy_fft, kf, n, L, G)
    D = D.copy()
    # FFT round-off swamps sums that are tiny; redo those directly
    occ = np.flatnonzero(b.counts > 0)
    low = occ[D[occ] < 1e-6]
    for g in low:
        off = occ - g
        keep = (off != 0) & (np.abs(off) <= L)
        w = k[off[keep] + L]
        A[g] = w @ b.sy[occ[keep]]
        D[g] = w @ b.counts[occ[keep]]
    return A, D


def _binned_nn(b, target_bins):
    # mean of the nearest other non-empty bin
    occ = np.flatnonzero(b.counts > 0)
    means = b.sy[occ] / b.counts[occ]
    out = np.empty(target_bins.size)
    for i, g in enumerate(target_bins):
        d = np.abs(occ - g).astype(float)
        d[occ == g] = np.inf
        out[i] = means[np.argmin(d)] if np.isfinite(d.min()) else means[occ == g][0]
    return out


def _binned_fit(b, h):
    """In-sample fit on the bin grid and the leave-one-out criterion.

    For a point in bin ``g`` with ``n`` points, neighbour sums ``A``, ``D``
    and bin mean ``ybar``, the leave-one-out residual is
    ``(E + 1)/E (y - ybar) + (D ybar - A)/E`` with ``E = D + n - 1``, so the
    bin total is ``((E + 1)/E)^2 SS + n ((D ybar - A)/E)^2``.
    """
    A, D = _neighbour_sums(b, h)
    n = b.counts
    occ = n > 0
    ybar = b.mean
    m = np.zeros_like(A)
    m[occ] = (A[occ] + b.sy[occ]) / (D[occ] + n[occ])
    E = D + n - 1.0
    ok = occ & (E > 1e-300)
    c = (D[ok] * ybar[ok] - A[ok]) / E[ok]
    cv = np.sum(((E[ok] + 1.0) / E[ok]) ** 2 * b.ss[ok] + n[ok] * c * c)
    bad = np.flatnonzero(occ & ~ok)
    if bad.size:
        r = ybar[bad] - _binned_nn(b, bad)
        cv += np.sum(r * r)
    return m, float(cv), bad


def _exact_fit(x, y, h, x_eval=None):
    xe = x if x_eval is None else x_eval
    num, den = _kernels.nw_sums(xe, x, y, h)
    fitted = np.empty(xe.size)
    ok = den > 0
    fitted[ok] = num[ok] / den[ok]
    degenerate = ~ok
    if degenerate.any():
        if x_eval is None:
            fitted[degenerate] = y[degenerate]
        else:
            idx = np.searchsorted(np.sort(x), xe[degenerate])
            order = np.argsort(x)
            xs = x[order]
            lo = np.clip(idx - 1, 0, xs.size - 1)
            hi = np.clip(idx, 0, xs.size - 1)
            pick = np.where(np.abs(xe[degenerate] - xs[lo]) <= np.abs(xs[hi] - xe[degenerate]), lo, hi)
            fitted[degenerate] = y[order][pick]
    return fitted, degenerate


def _exact_cv(x, y, h):
    num, den = _kernels.nw_sums(x, x, y, h, exclude_self=True)
    pred = np.empty(x.size)
    ok = den > 0
    pred[ok] = num[ok] / den[ok]
    if not ok.all():
        nn = _nearest_other(x, True)
        pred[~ok] = y[nn[~ok]]
    r = y - pred
    return float(r @ r)


def _resolve_method(method, n):
    if method == "auto":
        return "exact" if n <= EXACT_MAX_N else "binned"
    if method not in ("exact", "binned"):
        raise InvalidInput(f"unknown kernel method {method!r}")
    return method


def _check_xy(x, y, min_n):
    x = np.asarray(x, dtype=float).ravel()
    y = np.asarray(y, dtype=float).ravel()
    if x.shape != y.shape:
        raise InvalidInput("x and y must have equal length")
    if x.size < min_n:
        raise InvalidInput(f"need at least {min_n} observations")
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
        raise InvalidInput("x and y must be finite")
    return x, y


def kernel_regression(x, y, bandwidth, *, method="auto", n_bins=N_BINS, strict=False):
    """Nadaraya-Watson fit with a Gaussian kernel, evaluated at ``x``.

    Parameters
    ----------
    method : {"auto", "exact", "binned"}
        ``"exact"`` sums over all pairs; ``"binned"`` approximates ``x`` by
        the nearest of ``n_bins`` equally spaced centres and convolves.
        ``"auto"`` uses exact sums up to 2000 points.
    strict : bool
        Raise ``DegenerateKernel`` instead of falling back to the nearest
        neighbour where all kernel weights underflow.

    Returns
    -------
    KernelFit
        ``cv_score`` is the leave-one-out squared-error sum at ``bandwidth``.
    """
    x, y = _check_xy(x, y, 2)
    h = float(bandwidth)
    if not h > 0:
        raise InvalidInput("bandwidth must be positive")
    method = _resolve_method(method, x.size)
    if method == "exact":
        fitted, degenerate = _exact_fit(x, y, h)
        cv = _exact_cv(x, y, h)
    else:
        b = _bin(x, y, n_bins)
        m, cv, _ = _binned_fit(b, h)
        fitted = m[b.where]
        degenerate = np.zeros(x.size, dtype=bool)
    if strict and degenerate.any():
        raise DegenerateKernel(f"kernel weights underflow at {int(degenerate.sum())} points")
    return KernelFit(h, fitted, cv, degenerate, method)


def reference_bandwidth(x):
    """Silverman's rule of thumb ``0.9 min(sd, IQR/1.34) n^(-1/5)``."""
    x = np.asarray(x, dtype=float)
    sd = x.std(ddof=1) if x.size > 1 else 0.0
    q75, q25 = np.percentile(x, [75, 25])
    spread = min(sd, (q75 - q25) / 1.34)
    if not spread > 0:
        spread = sd if sd > 0 else 1.0
    return 0.9 * spread * x.size ** (-0.2)


def bandwidth_grid(x, size=GRID_SIZE, span=GRID_SPAN):
    return reference_bandwidth(x) * np.geomspace(span[0], span[1], size)


def loo_bandwidth(x, y, *, grid_size=GRID_SIZE, span=GRID_SPAN, method="auto", n_bins=N_BINS):
    """Leave-one-out cross-validated bandwidth.

    Minimises the leave-one-out squared error over a log-spaced grid
    around the reference bandwidth, then refines once by golden-section
    search between the neighbours of the grid minimum. A flat criterion
    returns the reference bandwidth.
    """
    x, y = _check_xy(x, y, 3)
    method = _resolve_method(method, x.size)
    if method == "exact":
        def cv(h):
            return _exact_cv(x, y, h)
    else:
        b = _bin(x, y, n_bins)

        def cv(h):
            return _binned_fit(b, h)[1]

    return _select_bandwidth(cv, x, bandwidth_grid(x, grid_size, span))


def _select_bandwidth(cv, x, grid):
    scores = np.array([cv(h) for h in grid])
    lo, hi = scores.min(), scores.max()
    if hi - lo <= 1e-12 * (1.0 + abs(lo)):
        return float(reference_bandwidth(x))
    k = int(np.argmin(scores))
    if k == 0 or k == grid.size - 1:
        return float(grid[k])
    lg = np.log(grid)
    res = optimize.minimize_scalar(
        lambda t: cv(np.exp(t)), bracket=(lg[k - 1], lg[k], lg[k + 1]), method="golden",
        options={"xtol": 1e-3},
    )
    t = float(res.x)
    if not (lg[k - 1] <= t <= lg[k + 1]) or res.fun > scores[k]:
        return float(grid[k])
    return float(np.exp(t))


# --------------------------------------------------------------------- #
# Lack-of-fit test
# --------------------------------------------------------------------- #


def _lof_statistic(x, y, fitted_param, method, n_bins, base=None):
    if method == "exact":
        h = loo_bandwidth(x, y, method=method)
        fitted = kernel_regression(x, y, h, method=method).fitted
    else:
        b = _bin(x, y, n_bins, base)
        h = _select_bandwidth(lambda h: _binned_fit(b, h)[1], x, bandwidth_grid(x))
        fitted = _binned_fit(b, h)[0][b.where]
    mse_param = np.mean((y - fitted_param) ** 2)
    mse_kernel = np.mean((y - fitted) ** 2)
    return mse_param - mse_kernel


def _param_fit(family, X, y):
    fit = fit_glm(family, X, y)
    eta = X @ fit.theta_hat
    return eta if family == "linear" else expit(eta)


def gof_linearity_test(x, y, B=DEFAULT_B, rng=None, *, family="linear", level=LEVEL,
                       method="auto", n_bins=N_BINS):
    """Bootstrap test of a linear (or linear-logistic) mean in ``x``.

    The statistic is the in-sample mean squared error of the parametric
    fit minus that of the kernel fit with a cross-validated bandwidth.
    Null resamples keep ``x`` and draw ``Y*`` from the fitted parametric
    model: wild-bootstrap residuals for ``family="linear"``, Bernoulli
    draws at the fitted probabilities for ``family="logistic"``. The
    bandwidth is re-selected for every resample.

    Returns
    -------
    TestResult
        ``p_value = (1 + #{stat* > stat}) / (B + 1)``.
    """
    x, y = _check_xy(x, y, 10)
    if B < MIN_B:
        raise InvalidInput(f"at least {MIN_B} bootstrap replicates are required")
    if family not in ("linear", "logistic"):
        raise InvalidInput("family must be 'linear' or 'logistic'")
    if rng is None:
        rng = np.random.SeedSequence(0)
    method = _resolve_method(method, x.size)
    X = np.column_stack([np.ones_like(x), x])
    fitted = _param_fit(family, X, y)
    base = _bin(x, y, n_bins) if method == "binned" else None
    stat = _lof_statistic(x, y, fitted, method, n_bins, base)
    resid = y - fitted
    exceed = 0
    for g in make_streams(rng, B):
        if family == "linear":
            y_star = fitted + wild_multiplier(g, x.size) * resid
        else:
            y_star = (g.random(x.size) < fitted).astype(float)
        fitted_star = _param_fit(family, X, y_star)
        if _lof_statistic(x, y_star, fitted_star, method, n_bins, base) > stat:
            exceed += 1
    p = (1 + exceed) / (B + 1)
    return TestResult(float(stat), p, p <= level, f"kernel-lof-{family}", B, level)


# --------------------------------------------------------------------- #
# Most powerful (Neyman-Pearson) test
# --------------------------------------------------------------------- #


SCOPES = ("phase2", "cohort")


def _cc_eta(scenario, x):
    s = scenario
    return s.alpha0 + s.beta0 * x + s.delta0 * (x - s.knot) * (x > s.knot)


def _bernoulli_loglik(y, eta):
    return y * log_expit(eta) + (1 - y) * log_expit(-eta)


def _casecontrol_offset(y, pi):
    # logit P(Y = 1 | X, sampled) = eta(X) + log(pi_case / pi_control)
    p1 = pi[y == 1]
    p0 = pi[y == 0]
    if p1.size == 0 or p0.size == 0:
        return 0.0
    return float(np.log(p1[0] / p0[0]))


def mp_statistic(cohort, theta_star, sample=None):
    """``log P_n - log Q_n`` over the cohort, or over the phase-two units.

    ``P_n`` is the likelihood of ``Y`` given the covariates under the
    data-generating model of ``cohort.scenario``; ``Q_n`` is the working
    model at ``theta_star`` (``(alpha*, beta*)``, plus ``sigma*`` for a
    Gaussian outcome). With ``sample``, both are conditional on selection;
    for outcome-dependent sampling this shifts both logits by the log ratio
    of case to control inclusion probabilities.
    """
    sc = cohort.scenario
    x, y, z = cohort.x, cohort.y, cohort.z
    if sample is not None:
        idx = sample.index
        x, y = x[idx], y[idx]
        z = None if z is None else z[idx]
    if sc.kind == "case_control":
        off = 0.0 if sample is None else _casecontrol_offset(y, sample.pi[sample.index])
        alt = _bernoulli_loglik(y, _cc_eta(sc, x) + off)
        null = _bernoulli_loglik(y, theta_star[0] + theta_star[1] * x + off)
    else:
        a, b, s = theta_star
        r0 = y - surrogate_mean(sc, x, z)
        r1 = (y - a - b * x) / s
        alt = -0.5 * r0 * r0
        null = -0.5 * r1 * r1 - np.log(s)
    return float(np.sum(alt - null))


def default_theta_star(scenario, scope="phase2"):
    """Simple null for the MP test: the working model closest to the truth.

    For ``scope="phase2"`` this is the limit of the working-model fit on
    the phase-two units (cohort-scale intercept for case-control); for
    ``"cohort"`` the full-cohort pseudo-true value. Gaussian outcomes get
    the matching residual standard deviation as a third entry.
    """
    from .oracle import phase2_pseudo_true, pseudo_true_oracle, pseudo_true_sigma

    if scope == "phase2":
        return tuple(float(t) for t in phase2_pseudo_true(scenario))
    ts = pseudo_true_oracle(scenario)
    if scenario.is_surrogate:
        return (float(ts[0]), float(ts[1]), pseudo_true_sigma(scenario))
    return (float(ts[0]), float(ts[1]))


def _null_cohort(scenario, theta_star, rng):
    n = scenario.N
    x = rng.standard_normal(n)
    if scenario.kind == "case_control":
        y = (rng.random(n) < expit(theta_star[0] + theta_star[1] * x)).astype(float)
        return Cohort(y=y, x=x, z=None, stratum=y.astype(np.int64), scenario=scenario)
    if scenario.kind == "surrogate_additive":
        z = x + rng.standard_normal(n)
    else:
        z = rng.gamma(4.0, 0.25, n) * x
    a, b, s = theta_star
    y = a + b * x + s * rng.standard_normal(n)
    stratum = (np.abs(z) > scenario.knot).astype(np.int64)
    return Cohort(y=y, x=x, z=z, stratum=stratum, scenario=scenario)


@functools.lru_cache(maxsize=64)
def mp_null_distribution(scenario, theta_star, scope="phase2", null_reps=NULL_REPS, seed=0):
    """Sorted null sample of the MP statistic.

    ``null_reps`` cohorts of the scenario's size are drawn from the
    working model at ``theta_star`` and, for ``scope="phase2"``, sampled
    with the scenario's phase-two design.
    """
    if scope not in SCOPES:
        raise InvalidInput(f"scope must be one of {SCOPES}")
    theta_star = tuple(float(t) for t in theta_star)
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(seed, spawn_key=(0x4D50,))))
    T = np.empty(null_reps)
    for r in range(null_reps):
        c = _null_cohort(scenario, theta_star, rng)
        s = draw_sample(c, rng) if scope == "phase2" else None
        T[r] = mp_statistic(c, theta_star, s)
    T.sort()
    T.flags.writeable = False
    return T


def mp_null_threshold(scenario, theta_star, scope="phase2", level=LEVEL, null_reps=NULL_REPS, seed=0):
    """Critical value ``c`` and tie-randomisation probability ``gamma``.

    Reject when the statistic exceeds ``c``, and with probability
    ``gamma`` when it equals ``c``, so the simulated size is ``level``.
    """
    T = mp_null_distribution(scenario, tuple(float(t) for t in theta_star), scope, null_reps, seed)
    c = float(np.quantile(T, 1.0 - level, method="higher"))
    above = np.mean(T > c)
    at = np.mean(T == c)
    gamma = float(np.clip((level - above) / at, 0.0, 1.0)) if at > 0 else 0.0
    return c, gamma


def mp_test(cohort, sample=None, *, theta_star=None, scope="phase2", level=LEVEL,
            null_reps=NULL_REPS, threshold=None, rng=None, seed=0):
    """Neyman-Pearson test of the working model at ``theta_star`` against
    the data-generating model of ``cohort.scenario``.

    The covariate is treated as observed (an oracle diagnostic). With
    ``scope="phase2"`` (default) the likelihoods cover the phase-two units
    of ``sample``; ``scope="cohort"`` uses every unit.

    Parameters
    ----------
    theta_star : tuple, optional
        ``(alpha*, beta*)`` (plus ``sigma*`` for Gaussian outcomes);
        defaults to ``default_theta_star(scenario, scope)``.
    threshold : (c, gamma), optional
        Precomputed output of ``mp_null_threshold``; skips the null
        simulation (the reported p-value is then only the decision).
    rng : numpy Generator, optional
        Used only to randomise at ties with the critical value.
    """
    scenario = cohort.scenario
    if scenario.kind == "nwts":
        raise InvalidInput("the MP test needs a simulation scenario")
    if scope not in SCOPES:
        raise InvalidInput(f"scope must be one of {SCOPES}")
    if scope == "phase2" and sample is None:
        raise InvalidInput("scope='phase2' needs the phase-two sample")
    if theta_star is None:
        theta_star = default_theta_star(scenario, scope)
    theta_star = tuple(float(t) for t in theta_star)
    need = 3 if scenario.is_surrogate else 2
    if len(theta_star) != need:
        raise InvalidInput(f"theta_star must have {need} entries for this scenario")
    stat = mp_statistic(cohort, theta_star, sample if scope == "phase2" else None)
    p_value = None
    if threshold is None:
        threshold = mp_null_threshold(scenario, theta_star, scope, level, null_reps, seed)
        T = mp_null_distribution(scenario, theta_star, scope, null_reps, seed)
        p_value = float(np.mean(T >= stat))
    c, gamma = threshold
    if stat > c:
        reject = True
    elif stat == c and gamma > 0:
        g = rng if rng is not None else np.random.Generator(np.random.Philox(seed))
        reject = bool(g.random() < gamma)
    else:
        reject = False
    if p_value is None:
        p_value = level if reject else 1.0
    return TestResult(stat, p_value, reject, f"mp-{scope}", 0, level)


# --------------------------------------------------------------------- #
# Correlation diagnostic
# --------------------------------------------------------------------- #


def mle_raking_lr_correlation(beta_mle, beta_raking, log_lr):
    """``|corr(beta_MLE - beta_Raking, log Q_n - log P_n)|`` across replicates."""
    a = np.asarray(beta_mle, dtype=float) - np.asarray(beta_raking, dtype=float)
    b = np.asarray(log_lr, dtype=float)
    if a.shape != b.shape or a.ndim != 1:
        raise InvalidInput("series must be 1-d and of equal length")
    if a.size < 3:
        raise InvalidInput("need at least 3 replicates")
    if np.ptp(a) == 0 or np.ptp(b) == 0:
        raise DegenerateVariance("a correlation series is constant")
    return float(abs(np.corrcoef(a, b)[0, 1]))
