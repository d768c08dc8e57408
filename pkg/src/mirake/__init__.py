"""Design-based and imputation estimators for two-phase studies.

Raking (generalized calibration) of sampling weights with auxiliaries
built from multiple imputation, alongside the usual competitors, and a
Monte Carlo harness for comparing them under mildly misspecified models.
"""

from .calibration import AuxiliaryMatrix, CalibratedWeights, ht_solve, rake_weights, raking_estimator
from .designs import Cohort, Scenario, TwoPhaseSample, draw_sample, generate_cohort, load_nwts, make_scenario
from .diagnostics import gof_linearity_test, kernel_regression, loo_bandwidth, mp_test
from .errors import *  # noqa: F401,F403
from .estimators import (
    EstimatorSpec,
    ThetaEstimate,
    estimate_ipw,
    estimate_mi,
    estimate_mir,
    estimate_mle_casecontrol,
    estimate_raking_single,
    estimate_rc,
    estimate_spml_twophase,
    run_estimator,
)
from .glm import GlmFit, fit_glm
from .harness import ExperimentConfig, MonteCarloReport, compute_metrics, emit_report, run_monte_carlo
from .imputation import draw_imputations, mi_calibration_variable, rubin_combine
from .oracle import pseudo_true_oracle

__version__ = "0.1.0"
