"""Inverse-probability-weighted estimators of conditional average treatment effects."""

from .bandwidth import BandwidthPlan, plan_bandwidths, plan_for_group, rate_conditions
from .data import Dataset
from .dimred import affiliation_count, mave_fit, subspace_distance
from .estimators import (ESTIMATORS, CateCurve, CurveFit, confidence_interval, estimate_cate,
                         fit_curve, pseudo_outcomes, select_ci_form, variance_hat)
from .kernels import KernelSpec, kernel_eval, kernel_l2_norm_sq, kernel_moment
from .nonparam import SmootherConfig, kde, nw_regress
from .propensity import (ConvergenceError, PropensityFit, fit_nonparametric, fit_oracle,
                         fit_parametric, fit_semiparametric, trim)
from .simulate import DgpSpec, generate, run_monte_carlo, true_cate

__version__ = "0.1.0"
