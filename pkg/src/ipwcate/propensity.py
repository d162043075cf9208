"""Propensity-score fits: oracle, logistic, nonparametric and dimension-reduced."""

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.special import expit

from .kernels import KernelSpec
from .nonparam import DEFAULT_GUARD, SmootherConfig, nw_regress

TRIM_BOUNDS = (0.005, 0.995)
KINDS = ("oracle", "parametric", "nonparametric", "semiparametric")


class ConvergenceError(RuntimeError):
    """Raised when an iterative fit stops without converging."""

    def __init__(self, message, last_iterate=None):
        super().__init__(message)
        self.last_iterate = last_iterate


@dataclass
class PropensityFit:
    scores: np.ndarray
    kind: str
    trim_bounds: tuple = TRIM_BOUNDS
    raw_scores: Optional[np.ndarray] = None
    coefficients: Optional[np.ndarray] = None
    covariance: Optional[np.ndarray] = None
    projection: Optional[np.ndarray] = None
    kernel: Optional[KernelSpec] = None
    bandwidth: Optional[float] = None
    separated: bool = False
    n_iter: int = 0
    meta: dict = field(default_factory=dict)

    @property
    def n_trimmed(self):
        raw = self.scores if self.raw_scores is None else self.raw_scores
        lo, hi = self.trim_bounds
        return int(np.sum((raw < lo) | (raw > hi)))


@dataclass
class OutcomeRegressions:
    m1_hat: np.ndarray
    m0_hat: np.ndarray
    index_used: str


def trim(p, bounds=TRIM_BOUNDS):
    lo, hi = bounds
    if not 0.0 < lo < hi < 1.0:
        raise ValueError(f"trim bounds must satisfy 0 < lo < hi < 1, got {bounds}")
    p = np.asarray(p, dtype=float)
    # NaN from a vanishing denominator is treated as no information
    p = np.where(np.isnan(p), 0.5, p)
    return np.clip(p, lo, hi)


def _binary(D):
    D = np.asarray(D, dtype=float)
    if D.ndim != 1:
        raise ValueError("treatment must be a vector")
    if not np.all((D == 0) | (D == 1)):
        raise ValueError("treatment must be binary (0/1)")
    return D


def _matrix(X, n=None):
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    if n is not None and X.shape[0] != n:
        raise ValueError(f"covariates have {X.shape[0]} rows, expected {n}")
    return X


def fit_oracle(p_true, trim_bounds=TRIM_BOUNDS):
    p_true = np.asarray(p_true, dtype=float)
    return PropensityFit(scores=trim(p_true, trim_bounds), kind="oracle",
                         trim_bounds=trim_bounds, raw_scores=p_true)


def fit_parametric(D, X, max_iter=100, tol=1e-8, trim_bounds=TRIM_BOUNDS):
    """Logistic regression with intercept, fitted by IRLS.

    Complete or quasi-complete separation is not an error: the fit stops once
    fitted probabilities saturate, is flagged ``separated`` and the scores are
    trimmed. Failure to converge otherwise raises :class:`ConvergenceError`.
    """
    D = _binary(D)
    X = _matrix(X, D.shape[0])
    n, k = X.shape
    if n < k + 2:
        raise ValueError(f"need at least {k + 2} observations for {k} covariates, got {n}")
    A = np.column_stack([np.ones(n), X])
    mean_d = D.mean()
    if mean_d in (0.0, 1.0):
        raw = np.full(n, mean_d)
        return PropensityFit(scores=trim(raw, trim_bounds), kind="parametric",
                             trim_bounds=trim_bounds, raw_scores=raw,
                             coefficients=None, separated=True)

    beta = np.zeros(k + 1)
    beta[0] = np.log(mean_d / (1 - mean_d))
    separated = False
    for it in range(1, max_iter + 1):
        eta = A @ beta
        p = expit(eta)
        w = p * (1 - p)
        if np.all(np.abs(D - p) < 1e-6):
            separated = True
            break
        H = A.T @ (A * w[:, None])
        g = A.T @ (D - p)
        try:
            step = np.linalg.solve(H, g)
        except np.linalg.LinAlgError:
            step = np.linalg.lstsq(H, g, rcond=None)[0]
        beta = beta + step
        if np.max(np.abs(step)) < tol:
            break
        if np.max(np.abs(beta)) > 1e6:
            separated = True
            break
    else:
        # quasi-separation drifts instead of converging; saturated fits are flagged
        if np.max(np.abs(A @ beta)) > 30:
            separated = True
        else:
            raise ConvergenceError(f"IRLS did not converge in {max_iter} iterations",
                                   last_iterate=beta)

    raw = expit(A @ beta)
    cov = None
    if not separated:
        w = raw * (1 - raw)
        try:
            cov = np.linalg.inv(A.T @ (A * w[:, None]))
        except np.linalg.LinAlgError:
            cov = None
    return PropensityFit(scores=trim(raw, trim_bounds), kind="parametric",
                         trim_bounds=trim_bounds, raw_scores=raw, coefficients=beta,
                         covariance=cov, separated=separated, n_iter=it)


def fit_nonparametric(D, X_tilde, kernel, h1, trim_bounds=TRIM_BOUNDS,
                      denom_guard=DEFAULT_GUARD):
    """Leave-one-out kernel regression of D on the active covariates."""
    D = _binary(D)
    Xt = _matrix(X_tilde, D.shape[0])
    if D.shape[0] < 2:
        raise ValueError("leave-one-out fit needs at least two observations")
    cfg = SmootherConfig(kernel=kernel, bandwidth=h1, leave_one_out=True, denom_guard=denom_guard)
    res = nw_regress(D, Xt, None, cfg, return_info=True)
    return PropensityFit(scores=trim(res.values, trim_bounds), kind="nonparametric",
                         trim_bounds=trim_bounds, raw_scores=res.values, kernel=kernel,
                         bandwidth=h1, meta={"n_unstable": int(res.unstable.sum())})


def fit_semiparametric(D, X, V_hat, kernel, h2, trim_bounds=TRIM_BOUNDS,
                       denom_guard=DEFAULT_GUARD):
    """Leave-one-out kernel regression of D on the reduced index ``X @ V_hat``."""
    X = _matrix(X)
    V = np.asarray(V_hat, dtype=float)
    if V.ndim == 1:
        V = V[:, None]
    if V.shape[0] != X.shape[1]:
        raise ValueError(f"projection has {V.shape[0]} rows but X has {X.shape[1]} columns")
    if kernel.dim != V.shape[1]:
        raise ValueError(f"kernel dimension {kernel.dim} != projection rank {V.shape[1]}")
    fit = fit_nonparametric(D, X @ V, kernel, h2, trim_bounds, denom_guard)
    fit.kind = "semiparametric"
    fit.projection = V
    return fit


def fit_outcome_regressions(Y, D, index_covariates, kernel, h, index_used="reduced_index",
                            denom_guard=DEFAULT_GUARD):
    """Per-arm kernel regressions ``m_j(v) = E[Y | index = v, D = j]`` at every row."""
    D = _binary(D)
    Y = np.asarray(Y, dtype=float)
    idx = _matrix(index_covariates, D.shape[0])
    cfg = SmootherConfig(kernel=kernel, bandwidth=h, denom_guard=denom_guard)
    out = {}
    for arm in (1, 0):
        mask = D == arm
        if not mask.any():
            group = "treated" if arm == 1 else "control"
            raise ValueError(f"{group} group (D={arm}) is empty")
        out[arm] = nw_regress(Y[mask], idx[mask], idx, cfg)
    return OutcomeRegressions(m1_hat=out[1], m0_hat=out[0], index_used=index_used)
