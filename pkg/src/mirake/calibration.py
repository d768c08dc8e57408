"""Generalized raking of design weights and the weighted estimators built on it."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import linalg

from .errors import CollinearAuxiliaries, InvalidInput, NonConvergence
from .glm import fit_glm

MAX_ITER = 50
TOL = 1e-8
RIDGE = 1e-10
COND_FLOOR = 1e-13  # smallest/largest eigenvalue ratio treated as singular


@dataclass(frozen=True)
class AuxiliaryMatrix:
    """Auxiliary values ``H_i`` known for every cohort unit."""

    H: np.ndarray
    includes_constant: bool = False

    def __post_init__(self):
        H = np.asarray(self.H, dtype=float)
        if H.ndim == 1:
            H = H[:, None]
        if H.ndim != 2 or H.shape[1] < 1:
            raise InvalidInput("auxiliary matrix must be N x q with q >= 1")
        if not np.all(np.isfinite(H)):
            raise InvalidInput("auxiliary matrix has non-finite entries")
        object.__setattr__(self, "H", H)

    def with_constant(self):
        if self.includes_constant:
            return self
        return AuxiliaryMatrix(np.column_stack([np.ones(self.H.shape[0]), self.H]), True)


@dataclass(frozen=True)
class CalibratedWeights:
    """Raking adjustments ``g`` for the sampled units, in cohort order."""

    g: np.ndarray
    lam: np.ndarray
    constraint_residual: np.ndarray
    iterations: int
    converged: bool
    index: np.ndarray  # cohort positions of the sampled units

    def weights(self, pi):
        """Calibrated weights ``g_i / pi_i`` for the sampled units."""
        return self.g / np.asarray(pi, dtype=float)[self.index]


def _sampled_index(sampled, N):
    R = np.asarray(sampled)
    if R.shape != (N,):
        raise InvalidInput(f"sampling indicator must have length {N}")
    return np.flatnonzero(R.astype(bool))


def rake_weights(H, sampled, pi, *, add_constant=True, max_iter=MAX_ITER, tol=TOL):
    """Calibrate design weights with the raking distance.

    Finds ``g_i = exp(H_i^T lambda)`` for sampled units such that
    ``sum_{sampled} g_i H_i / pi_i = sum_{all} H_i`` by damped Newton
    iteration on the multipliers.

    Parameters
    ----------
    H : AuxiliaryMatrix or array_like, shape (N, q)
    sampled : array_like of bool, shape (N,)
    pi : array_like, shape (N,)
        Inclusion probabilities; only sampled entries are used.
    add_constant : bool
        Prepend a column of ones (so the weights sum to N) unless ``H``
        already declares one.

    Returns
    -------
    CalibratedWeights

    Raises
    ------
    NonConvergence
        Constraints infeasible for positive weights, or the iteration cap.
    CollinearAuxiliaries
        The Newton system is singular even after ridging.
    """
    aux = H if isinstance(H, AuxiliaryMatrix) else AuxiliaryMatrix(H)
    if add_constant:
        aux = aux.with_constant()
    Hm = aux.H
    N, q = Hm.shape
    idx = _sampled_index(sampled, N)
    pi = np.asarray(pi, dtype=float)
    if pi.shape != (N,):
        raise InvalidInput(f"pi must have length {N}")
    p_s = pi[idx]
    if idx.size == 0 or np.any(~(p_s > 0)) or np.any(p_s > 1):
        raise InvalidInput("sampled units need inclusion probabilities in (0, 1]")
    d = 1.0 / p_s
    totals = Hm.sum(axis=0)

    # Newton runs on a column-standardised copy; g is invariant to H -> H B
    B = _standardiser(Hm, aux.includes_constant)
    Hs = Hm[idx] @ B
    Ts = totals @ B
    tol_vec = tol * (1.0 + np.abs(totals))

    lam_s = np.zeros(q)
    g = np.ones(idx.size)
    resid = (d * g) @ Hs - Ts
    norm = np.linalg.norm(resid)
    it = 0
    converged = _ok(resid, B, tol_vec)
    while not converged and it < max_iter:
        it += 1
        J = (Hs * (d * g)[:, None]).T @ Hs
        step, ridged = _newton_step(J, resid)
        t = 1.0
        for _ in range(50):
            lam_new = lam_s - t * step
            eta = Hs @ lam_new
            if np.all(eta < 700):
                g_new = np.exp(eta)
                r_new = (d * g_new) @ Hs - Ts
                n_new = np.linalg.norm(r_new)
                if n_new < norm:
                    break
            t *= 0.5
        else:
            if ridged:
                raise CollinearAuxiliaries("auxiliaries are collinear on the sample and the ridged step stalls")
            break
        lam_s, g, resid, norm = lam_new, g_new, r_new, n_new
        converged = _ok(resid, B, tol_vec)

    lam = B @ lam_s
    raw_resid = (d * g) @ Hm[idx] - totals
    cw = CalibratedWeights(g, lam, raw_resid, it, bool(converged), idx)
    if not converged:
        raise NonConvergence(
            f"raking did not reach the calibration totals after {it} iterations", state=cw
        )
    return cw


def _standardiser(H, has_constant):
    """Matrix B with ``H @ B`` centred/scaled; invertible by construction."""
    q = H.shape[1]
    B = np.eye(q)
    sd = H.std(axis=0)
    mean = H.mean(axis=0)
    const_col = None
    if has_constant:
        const_col = 0
    else:
        for j in range(q):
            if sd[j] == 0.0 and mean[j] != 0.0:
                const_col = j
                break
    for j in range(q):
        if j == const_col:
            continue
        s = sd[j] if sd[j] > 0 else 1.0
        B[j, j] = 1.0 / s
        if const_col is not None:
            B[const_col, j] = -mean[j] / (s * H[0, const_col])
    return B


def _ok(resid_std, B, tol_vec):
    # back-transform: residual in original coordinates is resid_std @ B^-1
    r = linalg.solve(B.T, resid_std)
    return bool(np.all(np.abs(r) <= tol_vec))


def _newton_step(J, resid):
    """Newton direction and whether the system needed a ridge."""
    ev = np.linalg.eigvalsh(J)
    if ev[0] > COND_FLOOR * ev[-1]:
        try:
            return linalg.solve(J, resid, assume_a="pos"), False
        except (linalg.LinAlgError, ValueError):
            pass
    ridge = RIDGE * np.trace(J)
    try:
        step = linalg.solve(J + ridge * np.eye(J.shape[0]), resid, assume_a="pos")
    except (linalg.LinAlgError, ValueError):
        raise CollinearAuxiliaries("calibration Newton system is singular") from None
    if not np.all(np.isfinite(step)):
        raise CollinearAuxiliaries("calibration Newton system is singular")
    return step, True


def ht_solve(family, design, response, pi):
    """Horvitz-Thompson fit: weights ``1/pi_i`` on the sampled units.

    ``design``, ``response`` and ``pi`` cover the sampled units only.
    """
    pi = np.asarray(pi, dtype=float)
    if np.any(~(pi > 0)) or np.any(pi > 1):
        raise InvalidInput("inclusion probabilities must lie in (0, 1]")
    return fit_glm(family, design, response, 1.0 / pi)


def raking_estimator(family, design, response, sampled, pi, H, *, add_constant=True):
    """Weighted fit with raking-calibrated weights ``g_i / pi_i``.

    ``design``/``response`` may cover the whole cohort (rows of unsampled
    units are ignored and may hold NaN) or only the sampled units, in
    cohort order.

    Returns
    -------
    (GlmFit, CalibratedWeights)
    """
    sampled = np.asarray(sampled).astype(bool)
    pi = np.asarray(pi, dtype=float)
    cw = rake_weights(H, sampled, pi, add_constant=add_constant)
    X = np.asarray(design.rows if hasattr(design, "rows") else design, dtype=float)
    y = np.asarray(response, dtype=float)
    if X.shape[0] == sampled.shape[0]:
        X, y = X[cw.index], y[cw.index]
    elif X.shape[0] != cw.index.size:
        raise InvalidInput("design rows match neither the cohort nor the sample")
    fit = fit_glm(family, X, y, cw.weights(pi))
    return fit, cw
