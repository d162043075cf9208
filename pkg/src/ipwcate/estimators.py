"""IPW estimators of the conditional average treatment effect.

``tau(z)`` is estimated by Nadaraya-Watson regression of the IPW pseudo
outcome ``psi = D Y / p - (1 - D) Y / (1 - p)`` on ``Z``. The four
estimators differ only in the propensity fit (``O`` true, ``P`` logistic,
``N`` nonparametric, ``S`` reduced-index). Pointwise intervals use either the
plain pseudo outcome or its augmented version ``psi*`` depending on whether
Z is recovered by the propensity arguments.
"""

from dataclasses import dataclass, replace
from typing import NamedTuple, Optional

import numpy as np
from scipy.stats import norm

from . import propensity as ps
from .bandwidth import BandwidthPlan
from .dimred import AffiliationResult, MaveResult, affiliation_count, mave_fit
from .kernels import KernelSpec, kernel_l2_norm_sq
from .nonparam import DEFAULT_GUARD, kernel_matrix

ESTIMATORS = ("O", "P", "N", "S")
KIND_OF = {"O": "oracle", "P": "parametric", "N": "nonparametric", "S": "semiparametric"}
CODE_OF = {v: k for k, v in KIND_OF.items()}
PSI_FORM = "psi_form"
PSI_STAR_FORM = "psi_star_form"


class PseudoOutcome(NamedTuple):
    psi: np.ndarray
    psi_star: Optional[np.ndarray] = None


@dataclass
class CateCurve:
    grid: np.ndarray
    tau_hat: np.ndarray
    estimator_kind: str
    n: int
    h: float
    l: int
    k_norm_sq: float
    sigma_hat_sq: Optional[np.ndarray] = None
    f_hat: Optional[np.ndarray] = None
    avar: Optional[np.ndarray] = None
    ci_lo: Optional[np.ndarray] = None
    ci_hi: Optional[np.ndarray] = None
    alpha: Optional[float] = None
    variance_form: Optional[str] = None
    unstable: Optional[np.ndarray] = None

    @property
    def rate(self):
        """``n h^l``, the effective local sample size."""
        return self.n * self.h ** self.l

    @property
    def std_error(self):
        return np.sqrt(self.avar / self.rate)


def _grid(grid, l):
    g = np.asarray(grid, dtype=float)
    if g.ndim == 1:
        g = g[:, None] if l == 1 else g[None, :]
    if g.shape[1] != l:
        raise ValueError(f"grid has {g.shape[1]} columns but dim(Z) = {l}")
    return g


def pseudo_outcomes(D, Y, scores, outcome=None):
    """``psi`` and, given outcome regressions, the augmented ``psi*``."""
    D = np.asarray(D, dtype=float)
    Y = np.asarray(Y, dtype=float)
    p = np.asarray(scores, dtype=float)
    psi = D * Y / p - (1 - D) * Y / (1 - p)
    psi_star = None
    if outcome is not None:
        m1, m0 = outcome.m1_hat, outcome.m0_hat
        psi_star = D * (Y - m1) / p - (1 - D) * (Y - m0) / (1 - p) + m1 - m0
    return PseudoOutcome(psi, psi_star)


def estimate_cate(dataset, fit, kernel, h, grid, denom_guard=DEFAULT_GUARD):
    """Point estimates ``tau_hat(z)`` on ``grid``."""
    if fit.scores.shape[0] != dataset.n:
        raise ValueError("propensity scores are not aligned with the dataset rows")
    kernel = kernel.with_dim(dataset.l) if kernel.dim != dataset.l else kernel
    g = _grid(grid, dataset.l)
    psi = pseudo_outcomes(dataset.D, dataset.Y, fit.scores).psi
    W = kernel_matrix(dataset.Z, g, kernel, h)
    den = W.sum(axis=1)
    tau = (W @ psi) / (den + denom_guard)
    return CateCurve(grid=g, tau_hat=tau, estimator_kind=CODE_OF.get(fit.kind, fit.kind),
                     n=dataset.n, h=float(h), l=dataset.l, k_norm_sq=kernel_l2_norm_sq(kernel),
                     unstable=np.abs(den) < 10 * denom_guard)


def variance_hat(dataset, fit, curve, form=PSI_FORM, outcome_reg=None, kernel=None,
                 denom_guard=DEFAULT_GUARD):
    """Plug-in asymptotic variance ``Sigma(z) = ||K||^2 sigma^2(z) / f(z)``.

    ``sigma^2(z) = (n h^l)^-1 sum_i (psi_i - tau_hat(z))^2 K_i / f_hat(z)`` with
    ``psi`` replaced by ``psi*`` for the augmented form. Higher-order kernels
    can make the weighted sum negative in sparse regions; such points are set
    to zero and flagged unstable.
    """
    if form not in (PSI_FORM, PSI_STAR_FORM):
        raise ValueError(f"unknown variance form {form!r}")
    if form == PSI_STAR_FORM and outcome_reg is None:
        raise ValueError("the psi* variance form needs outcome regressions")
    po = pseudo_outcomes(dataset.D, dataset.Y, fit.scores,
                         outcome_reg if form == PSI_STAR_FORM else None)
    psi = po.psi_star if form == PSI_STAR_FORM else po.psi
    if kernel is None:
        raise ValueError("the CATE kernel is required")
    kernel = kernel.with_dim(dataset.l) if kernel.dim != dataset.l else kernel
    W = kernel_matrix(dataset.Z, curve.grid, kernel, curve.h)
    f_hat = W.sum(axis=1) / dataset.n
    resid_sq = (psi[None, :] - curve.tau_hat[:, None]) ** 2
    sigma_sq = (W * resid_sq).sum(axis=1) / (dataset.n * f_hat)
    unstable = (f_hat < 10 * denom_guard) | ~np.isfinite(sigma_sq) | (sigma_sq < 0)
    sigma_sq = np.where(np.isfinite(sigma_sq), np.maximum(sigma_sq, 0.0), np.nan)
    with np.errstate(divide="ignore", invalid="ignore"):
        avar = curve.k_norm_sq * sigma_sq / f_hat
    avar = np.where(f_hat > 0, avar, np.nan)
    prev = curve.unstable if curve.unstable is not None else np.zeros_like(unstable)
    return replace(curve, sigma_hat_sq=sigma_sq, f_hat=f_hat, avar=avar, variance_form=form,
                   unstable=prev | unstable)


def critical_value(alpha):
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must lie in (0, 1), got {alpha}")
    return float(norm.ppf(1.0 - alpha / 2.0))


def confidence_interval(curve, alpha=0.05):
    """``tau_hat(z) -/+ c_{alpha/2} sqrt(Sigma(z) / (n h^l))``."""
    if curve.avar is None:
        raise ValueError("variance estimates are missing; run variance_hat first")
    half = critical_value(alpha) * np.sqrt(curve.avar / curve.rate)
    return replace(curve, ci_lo=curve.tau_hat - half, ci_hi=curve.tau_hat + half, alpha=alpha)


def select_ci_form(estimator_kind, affiliation, l):
    """Augmented form when every Z coordinate is recovered, plain form otherwise."""
    code = CODE_OF.get(estimator_kind, estimator_kind)
    if code not in ESTIMATORS:
        raise ValueError(f"unknown estimator {estimator_kind!r}")
    if code in ("O", "P") or affiliation is None:
        return PSI_FORM
    return PSI_STAR_FORM if affiliation.t == l else PSI_FORM


@dataclass
class CurveFit:
    curve: CateCurve
    fit: ps.PropensityFit
    affiliation: Optional[AffiliationResult] = None
    mave: Optional[MaveResult] = None
    outcome_reg: Optional[ps.OutcomeRegressions] = None


def fit_curve(dataset, estimator, plan, grid, alpha=0.1, *, x_tilde_cols=None, V=None,
              p_oracle=None, affiliation_tol=0.05, variance_form=None, trim_bounds=ps.TRIM_BOUNDS,
              mave_kwargs=None):
    """Run the full estimation procedure for one estimator.

    For ``S``: estimate V by MAVE (unless given), fit the reduced-index
    propensity, estimate tau, pick the interval form from the affiliation of Z
    with span(V_hat), and build the interval. ``N`` follows the same steps
    with the active covariates ``x_tilde_cols`` in place of V_hat'X.
    """
    code = CODE_OF.get(estimator, estimator)
    if code not in ESTIMATORS:
        raise ValueError(f"unknown estimator {estimator!r}; expected one of {ESTIMATORS}")
    if not isinstance(plan, BandwidthPlan):
        raise TypeError("plan must be a BandwidthPlan")
    K = KernelSpec(order=plan.s, dim=dataset.l)
    affiliation = mave = outcome = None
    index = index_kernel = index_h = None

    if code == "O":
        p = dataset.p_true if p_oracle is None else p_oracle
        if p is None:
            raise ValueError("the oracle estimator needs the true propensity score")
        fit = ps.fit_oracle(p, trim_bounds)
    elif code == "P":
        fit = ps.fit_parametric(dataset.D, dataset.X, trim_bounds=trim_bounds)
    elif code == "N":
        if plan.h1 is None:
            raise ValueError("the bandwidth plan has no h1; supply k_tilde when planning")
        cols = list(range(dataset.k)) if x_tilde_cols is None else list(x_tilde_cols)
        index = dataset.X[:, cols]
        index_kernel = KernelSpec(order=plan.s1, dim=len(cols))
        index_h = plan.h1
        fit = ps.fit_nonparametric(dataset.D, index, index_kernel, index_h, trim_bounds)
        basis = np.eye(dataset.k)[:, cols]
        affiliation = affiliation_count(basis, dataset.l, affiliation_tol, dataset.z_cols)
    else:
        if plan.h2 is None:
            raise ValueError("the bandwidth plan has no h2; supply r when planning")
        r = plan.r
        index_kernel = KernelSpec(order=plan.s2, dim=r)
        index_h = plan.h2
        if V is None:
            mave = mave_fit(dataset.D, dataset.X, r, kernel=index_kernel, h2=plan.h2,
                            **(mave_kwargs or {}))
            V = mave.V
        V = np.asarray(V, dtype=float).reshape(dataset.k, -1)
        index = dataset.X @ V
        fit = ps.fit_semiparametric(dataset.D, dataset.X, V, index_kernel, index_h, trim_bounds)
        affiliation = affiliation_count(V, dataset.l, affiliation_tol, dataset.z_cols)

    curve = estimate_cate(dataset, fit, K, plan.h, grid)
    form = variance_form or select_ci_form(code, affiliation, dataset.l)
    if form == PSI_STAR_FORM:
        if index is None:
            raise ValueError(f"estimator {code} has no index for the psi* form")
        outcome = ps.fit_outcome_regressions(
            dataset.Y, dataset.D, index, index_kernel, index_h,
            index_used="x_tilde" if code == "N" else "reduced_index")
    curve = variance_hat(dataset, fit, curve, form, outcome, kernel=K)
    curve = confidence_interval(curve, alpha)
    return CurveFit(curve=curve, fit=fit, affiliation=affiliation, mave=mave, outcome_reg=outcome)
