"""Nadaraya-Watson regression and kernel density estimation."""

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .kernels import KernelSpec, univariate

DEFAULT_GUARD = 1e-12
# rows of the m x n weight matrix built at once; bounds memory for large n
_CHUNK_ELEMS = 4_000_000


@dataclass(frozen=True)
class SmootherConfig:
    kernel: KernelSpec
    bandwidth: float
    leave_one_out: bool = False
    denom_guard: float = DEFAULT_GUARD

    def __post_init__(self):
        if not self.bandwidth > 0:
            raise ValueError(f"bandwidth must be positive, got {self.bandwidth!r}")
        if self.denom_guard < 0:
            raise ValueError("denom_guard must be nonnegative")


class Smoothed(NamedTuple):
    values: np.ndarray
    weight_sums: np.ndarray
    unstable: np.ndarray


def _as_matrix(a, name):
    a = np.asarray(a, dtype=float)
    if a.ndim == 1:
        a = a[:, None]
    if a.ndim != 2:
        raise ValueError(f"{name} must be a vector or a 2-d matrix")
    return a


def _check(points, eval_points, kernel):
    points = _as_matrix(points, "covariates")
    eval_points = points if eval_points is None else _as_matrix(eval_points, "eval_points")
    if points.shape[0] == 0:
        raise ValueError("no observations supplied")
    if points.shape[1] != kernel.dim or eval_points.shape[1] != kernel.dim:
        raise ValueError(
            f"data dimension {points.shape[1]} / eval dimension {eval_points.shape[1]} "
            f"do not match kernel dimension {kernel.dim}")
    return points, eval_points


def kernel_matrix(points, eval_points, kernel, h):
    """Scaled kernel weights ``K_h(x_i - z)`` with shape ``(m, n)``.

    ``K_h(u) = h**-d * prod_j K(u_j / h)``.
    """
    points, eval_points = _check(points, eval_points, kernel)
    n, d = points.shape
    out = np.ones((eval_points.shape[0], n))
    for j in range(d):
        out *= univariate(kernel.order, (points[None, :, j] - eval_points[:, None, j]) / h)
    return out / h ** d


def _chunks(m, n):
    step = max(1, _CHUNK_ELEMS // max(n, 1))
    for start in range(0, m, step):
        yield slice(start, min(m, start + step))


def nw_regress(responses, covariates, eval_points=None, cfg=None, *, return_info=False):
    """Nadaraya-Watson estimate of ``E[response | covariates = z]``.

    ``eval_points=None`` evaluates at the covariates themselves, which is
    required when ``cfg.leave_one_out`` is set: the i-th estimate then drops
    observation i from both sums.
    """
    if cfg is None:
        raise ValueError("a SmootherConfig is required")
    responses = np.asarray(responses, dtype=float)
    if responses.ndim != 1:
        raise ValueError("responses must be a vector")
    same = eval_points is None
    points, evals = _check(covariates, eval_points, cfg.kernel)
    if responses.shape[0] != points.shape[0]:
        raise ValueError("responses and covariates have different lengths")
    if cfg.leave_one_out and not same:
        if not (np.shape(eval_points) == points.shape
                and np.array_equal(_as_matrix(eval_points, "eval_points"), points)):
            raise ValueError("leave-one-out evaluation requires eval_points equal to covariates")
        same = True

    m, n = evals.shape[0], points.shape[0]
    num = np.empty(m)
    den = np.empty(m)
    for sl in _chunks(m, n):
        W = kernel_matrix(points, evals[sl], cfg.kernel, cfg.bandwidth)
        if cfg.leave_one_out:
            rows = np.arange(sl.start, sl.stop)
            W[rows - sl.start, rows] = 0.0
        num[sl] = W @ responses
        den[sl] = W.sum(axis=1)
    values = num / (den + cfg.denom_guard)
    unstable = np.abs(den) < 10.0 * cfg.denom_guard
    if return_info:
        return Smoothed(values, den, unstable)
    return values


def kde(points, eval_points, cfg):
    """Kernel density estimate ``(1/n) sum_i K_h(z_i - z)``."""
    points, evals = _check(points, eval_points, cfg.kernel)
    n = points.shape[0]
    out = np.empty(evals.shape[0])
    for sl in _chunks(evals.shape[0], n):
        out[sl] = kernel_matrix(points, evals[sl], cfg.kernel, cfg.bandwidth).sum(axis=1) / n
    return out
