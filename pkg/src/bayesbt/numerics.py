"""Special functions and the generalized logistic prior family.

Everything here is a pure function of its arguments. Densities are exposed
in log space only.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable

import numpy as np
from scipy import special

__all__ = [
    "DomainError",
    "GLParams",
    "digamma",
    "trigamma",
    "log_beta",
    "log_sum_exp",
    "gl_log_density",
    "gl_cdf",
    "gl_moments",
    "gl_sample",
]


class DomainError(ValueError):
    """Argument outside the domain of a special function or distribution."""


# B_2, B_4, ..., B_16
_BERNOULLI_EVEN = (
    1.0 / 6.0,
    -1.0 / 30.0,
    1.0 / 42.0,
    -1.0 / 30.0,
    5.0 / 66.0,
    -691.0 / 2730.0,
    7.0 / 6.0,
    -3617.0 / 510.0,
)

# below this, shift upward with the recurrence before using the asymptotic series
_ASYMPTOTIC_FROM = 6.0


def _positive_array(x, name: str) -> np.ndarray:
    arr = np.asarray(x, dtype=float)
    if np.any(~np.isfinite(arr)) or np.any(arr <= 0):
        raise DomainError(f"{name} requires finite positive arguments, got {x!r}")
    return arr


def _scalar_or_array(arr: np.ndarray):
    arr = np.asarray(arr)
    return float(arr) if arr.ndim == 0 else arr


def digamma(x):
    """Digamma function psi(x) for x > 0.

    Shifts x upward with psi(x) = psi(x + 1) - 1/x until x >= 6, then applies
    the Bernoulli asymptotic series. Accepts scalars or arrays.
    """
    x0 = _positive_array(x, "digamma")
    z = x0.copy()
    # extended precision for the recurrence terms, which dominate for small x
    zl = x0.astype(np.longdouble)
    shift = np.zeros_like(zl)
    while True:
        small = z < _ASYMPTOTIC_FROM
        if not small.any():
            break
        shift = shift + np.where(small, 1.0 / zl, 0.0)
        z = np.where(small, z + 1.0, z)
        zl = np.where(small, zl + 1, zl)
    inv2 = 1.0 / (z * z)
    series = np.zeros_like(z)
    # Horner evaluation from the highest-order term down
    for k in range(len(_BERNOULLI_EVEN), 0, -1):
        series = (series + _BERNOULLI_EVEN[k - 1] / (2 * k)) * inv2
    result = ((np.log(z) - 0.5 / z - series) - shift).astype(float)
    return _scalar_or_array(result)


def trigamma(x):
    """Trigamma function psi'(x) for x > 0."""
    x0 = _positive_array(x, "trigamma")
    z = x0.copy()
    zl = x0.astype(np.longdouble)
    shift = np.zeros_like(zl)
    while True:
        small = z < _ASYMPTOTIC_FROM
        if not small.any():
            break
        shift = shift + np.where(small, 1.0 / (zl * zl), 0.0)
        z = np.where(small, z + 1.0, z)
        zl = np.where(small, zl + 1, zl)
    inv = 1.0 / z
    inv2 = inv * inv
    series = np.zeros_like(z)
    for k in range(len(_BERNOULLI_EVEN), 0, -1):
        series = (series + _BERNOULLI_EVEN[k - 1]) * inv2
    result = ((inv + 0.5 * inv2 + series * inv) + shift).astype(float)
    return _scalar_or_array(result)


def log_beta(a, b):
    """log B(a, b) = lgamma(a) + lgamma(b) - lgamma(a + b)."""
    a_arr = _positive_array(a, "log_beta")
    b_arr = _positive_array(b, "log_beta")
    result = special.gammaln(a_arr) + special.gammaln(b_arr) - special.gammaln(a_arr + b_arr)
    return _scalar_or_array(result)


def log_sum_exp(values: Iterable[float]) -> float:
    """Stable log(sum(exp(values))); -inf entries contribute nothing."""
    v = np.asarray(list(values) if not isinstance(values, np.ndarray) else values, dtype=float).ravel()
    if v.size == 0:
        raise DomainError("log_sum_exp of an empty sequence")
    if np.any(np.isnan(v)) or np.any(v == np.inf):
        raise DomainError("log_sum_exp requires values in [-inf, inf)")
    m = v.max()
    if m == -np.inf:
        return -math.inf
    return float(m + math.log(np.exp(v - m).sum()))


@dataclass(frozen=True)
class GLParams:
    """Parameters of the three-parameter generalized logistic distribution.

    The density is ``phi * exp(-phi*eta*x) / (1 + exp(-phi*x))**(eta+gamma) / B(gamma, eta)``.
    """

    phi: float
    eta: float
    gamma: float

    def __post_init__(self):
        for name in ("phi", "eta", "gamma"):
            value = getattr(self, name)
            if not (isinstance(value, (int, float, np.floating, np.integer)) and math.isfinite(value) and value > 0):
                raise DomainError(f"GLParams.{name} must be a finite positive number, got {value!r}")

    @classmethod
    def gl3(cls, eta: float) -> "GLParams":
        """Type-III (symmetric) member, GL(1, eta, eta)."""
        return cls(phi=1.0, eta=eta, gamma=eta)


def _check_params(params) -> GLParams:
    if not isinstance(params, GLParams):
        raise DomainError(f"expected GLParams, got {type(params).__name__}")
    return params


def gl_log_density(lam, params: GLParams):
    """Log density of GL(phi, eta, gamma) at ``lam``.

    Written with ``logaddexp`` so that |lam| in the hundreds never overflows.
    """
    p = _check_params(params)
    x = p.phi * np.asarray(lam, dtype=float)
    out = (
        math.log(p.phi)
        - p.eta * x
        - (p.eta + p.gamma) * np.logaddexp(0.0, -x)
        - log_beta(p.gamma, p.eta)
    )
    return _scalar_or_array(out)


def gl_cdf(lam, params: GLParams):
    """CDF of GL(phi, eta, gamma).

    logistic(phi * lam) is Beta(gamma, eta) distributed, so the CDF is a
    regularized incomplete beta function.
    """
    p = _check_params(params)
    zeta = special.expit(p.phi * np.asarray(lam, dtype=float))
    return _scalar_or_array(special.betainc(p.gamma, p.eta, zeta))


def gl_moments(params: GLParams) -> tuple[float, float]:
    """Mean and variance: (psi(gamma) - psi(eta))/phi, (psi'(gamma) + psi'(eta))/phi**2."""
    p = _check_params(params)
    mean = (digamma(p.gamma) - digamma(p.eta)) / p.phi
    var = (trigamma(p.gamma) + trigamma(p.eta)) / p.phi**2
    return mean, var


def gl_sample(params: GLParams, size: int, rng: np.random.Generator, *, table_size: int = 4097,
              cdf_tol: float = 1e-9) -> np.ndarray:
    """Draw from GL(phi, eta, gamma) by inverse transform.

    The CDF is tabulated on a grid to bracket each uniform draw, then each
    bracket is bisected against the exact CDF until it is narrower in CDF
    space than ``cdf_tol``.
    """
    p = _check_params(params)
    u = rng.uniform(size=size)
    # quantiles far enough out that the tails beyond carry < 1e-12 mass
    lo_edge = special.logit(special.betaincinv(p.gamma, p.eta, 1e-13)) / p.phi
    # upper edge via 1 - X ~ Beta(eta, gamma); betaincinv near 1 rounds to 1
    hi_edge = -special.logit(special.betaincinv(p.eta, p.gamma, 1e-13)) / p.phi
    grid = np.linspace(lo_edge, hi_edge, table_size)
    table = gl_cdf(grid, p)
    k = np.clip(np.searchsorted(table, u), 1, table_size - 1)
    lo = grid[k - 1].copy()
    hi = grid[k].copy()
    f_lo = table[k - 1].copy()
    f_hi = table[k].copy()
    for _ in range(64):
        active = (f_hi - f_lo) > cdf_tol
        if not active.any():
            break
        idx = np.nonzero(active)[0]
        mid = 0.5 * (lo[idx] + hi[idx])
        f_mid = gl_cdf(mid, p)
        left = f_mid >= u[idx]
        hi[idx[left]] = mid[left]
        f_hi[idx[left]] = f_mid[left]
        lo[idx[~left]] = mid[~left]
        f_lo[idx[~left]] = f_mid[~left]
    # linear interpolation inside the final bracket
    width = np.where(f_hi > f_lo, f_hi - f_lo, 1.0)
    return lo + (hi - lo) * np.clip((u - f_lo) / width, 0.0, 1.0)
