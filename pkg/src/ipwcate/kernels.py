"""Gaussian-derived kernels of arbitrary even order.

The order-``s`` kernel is ``K_s(u) = P_s(u) * phi(u)`` where ``phi`` is the
standard normal density and ``P_s`` is the even polynomial of degree ``s - 2``
chosen so that ``K_s`` integrates to one and its moments ``1 .. s-1`` vanish.
Multivariate kernels are products of the univariate one.
"""

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import integrate

SQRT_2PI = np.sqrt(2.0 * np.pi)
MAX_ORDER = 6


def _double_factorial_odd(q):
    """(2q - 1)!!, the 2q-th moment of a standard normal."""
    out = 1
    for j in range(1, 2 * q, 2):
        out *= j
    return out


@dataclass(frozen=True)
class KernelSpec:
    """Kernel family, order and product dimension."""

    order: int = 2
    dim: int = 1
    family: str = "gaussian_derived"

    def __post_init__(self):
        if self.family != "gaussian_derived":
            raise ValueError(f"unsupported kernel family {self.family!r}")
        if not isinstance(self.order, (int, np.integer)) or self.order < 2 or self.order % 2:
            raise ValueError(f"kernel order must be an even integer >= 2, got {self.order!r}")
        if self.order > MAX_ORDER:
            raise ValueError(f"kernel order {self.order} exceeds supported maximum {MAX_ORDER}")
        if not isinstance(self.dim, (int, np.integer)) or self.dim < 1:
            raise ValueError(f"kernel dimension must be a positive integer, got {self.dim!r}")

    def with_dim(self, dim):
        return KernelSpec(order=self.order, dim=int(dim), family=self.family)


@lru_cache(maxsize=None)
def poly_coefficients(order):
    """Coefficients ``c_m`` of ``P_s(u) = sum_m c_m u**(2m)``, m = 0 .. s/2 - 1.

    Solves the moment system ``sum_m c_m mu_{2m+2p} = [p == 0]`` for
    p = 0 .. s/2 - 1 against the standard normal moments ``mu``.
    """
    half = order // 2
    A = np.array([[_double_factorial_odd(m + p) for m in range(half)] for p in range(half)],
                 dtype=float)
    rhs = np.zeros(half)
    rhs[0] = 1.0
    coef = np.linalg.solve(A, rhs)
    coef.setflags(write=False)
    return coef


def univariate(order, u):
    """Evaluate the univariate order-``order`` kernel elementwise."""
    u = np.asarray(u, dtype=float)
    u2 = u * u
    coef = poly_coefficients(order)
    poly = np.zeros_like(u2)
    for c in coef[::-1]:
        poly = poly * u2 + c
    return poly * np.exp(-0.5 * u2) / SQRT_2PI


def product_kernel(spec, u):
    """Product kernel over the last axis of ``u`` (shape ``(..., dim)``)."""
    u = np.asarray(u, dtype=float)
    if u.shape[-1] != spec.dim:
        raise ValueError(f"expected last axis of length {spec.dim}, got {u.shape[-1]}")
    return np.prod(univariate(spec.order, u), axis=-1)


def kernel_eval(spec, u):
    """Kernel value at a single point ``u`` of length ``spec.dim``."""
    u = np.atleast_1d(np.asarray(u, dtype=float))
    if u.ndim != 1 or u.shape[0] != spec.dim:
        raise ValueError(f"point has length {u.shape[-1]} but kernel dimension is {spec.dim}")
    return float(product_kernel(spec, u))


def kernel_moment(spec, p):
    """``int u**p K(u) du`` for a univariate kernel, by adaptive quadrature."""
    if spec.dim != 1:
        raise ValueError("kernel_moment is defined for univariate kernels only")
    if p < 0:
        raise ValueError("moment index must be nonnegative")
    if p % 2:
        return 0.0
    # integrand is even; integrate one half-line and double
    val, _ = integrate.quad(lambda x: x ** p * univariate(spec.order, x), 0.0, np.inf,
                            epsabs=1e-13, epsrel=1e-12, limit=200)
    return 2.0 * val


def _l2_univariate(order):
    # int u^(2q) phi(u)^2 du = (2q-1)!! / (2^q * 2 sqrt(pi))
    coef = poly_coefficients(order)
    total = 0.0
    for a, ca in enumerate(coef):
        for b, cb in enumerate(coef):
            q = a + b
            total += ca * cb * _double_factorial_odd(q) / 2.0 ** q
    return total / (2.0 * np.sqrt(np.pi))


def kernel_l2_norm_sq(spec):
    """``int K(u)**2 du`` over ``R**dim``."""
    return _l2_univariate(spec.order) ** spec.dim
