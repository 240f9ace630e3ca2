"""Bradley-Terry likelihood, Gaussian log-strength posterior, MLE/MAP solvers
and the Gamma hyperprior built from a previous season.

Notation: ``lam`` is the vector of log-strengths, ``V[i, j]`` the wins of i
over j, ``n = V + V.T`` the games per pair and ``sigma`` the common prior
scale of the log-strengths.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import TextIO

import numpy as np
from scipy import special
from scipy.sparse.csgraph import connected_components

from .numerics import DomainError
from .schedule import DataError, TeamIndex, WinMatrix

__all__ = [
    "Normalization",
    "Strengths",
    "HyperPrior",
    "MapEstimate",
    "MapMode",
    "PriorSpec",
    "PathologyError",
    "ConvergenceError",
    "log_likelihood",
    "log_posterior",
    "grad_log_posterior",
    "hessian",
    "ford_violations",
    "fit_mle",
    "fit_map",
    "fit_map_fixed_sigma",
    "sigma_hat_of",
    "varsigma_hat_of",
    "hyperprior_from",
    "season_hyperprior",
    "write_strengths_table",
]


class PathologyError(DataError):
    """The maximum-likelihood estimate does not exist (Ford's condition fails)."""

    def __init__(self, message: str, teams: list[int]):
        super().__init__(message)
        self.teams = teams


class ConvergenceError(RuntimeError):
    def __init__(self, message: str, residuals: list[float]):
        super().__init__(message)
        self.residuals = residuals


class Normalization(str, enum.Enum):
    SUM_ZERO = "sum-zero"
    RAW = "raw"


@dataclass(frozen=True)
class Strengths:
    """Team log-strengths, ordered like the ``TeamIndex`` they were fitted with."""

    values: np.ndarray
    normalization: Normalization = Normalization.RAW
    iterations: int | None = None
    residual: float | None = None

    def __post_init__(self):
        v = np.array(self.values, dtype=float, copy=True).ravel()
        v.setflags(write=False)
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "normalization", Normalization(self.normalization))
        if self.normalization is Normalization.SUM_ZERO and abs(v.sum()) >= 1e-9:
            raise DomainError(f"sum-zero strengths sum to {v.sum():.3g}")

    def __len__(self):
        return self.values.size

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.values, dtype=dtype)


@dataclass(frozen=True)
class HyperPrior:
    """Gamma(shape, rate) prior on sigma."""

    shape: float
    rate: float

    def __post_init__(self):
        for name in ("shape", "rate"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value > 0):
                raise DomainError(f"HyperPrior.{name} must be finite and positive, got {value!r}")

    @property
    def mean(self) -> float:
        return self.shape / self.rate

    @property
    def var(self) -> float:
        return self.shape / self.rate**2

    @property
    def sd(self) -> float:
        return math.sqrt(self.var)

    def log_density(self, sigma):
        sigma = np.asarray(sigma, dtype=float)
        return (self.shape * math.log(self.rate) - special.gammaln(self.shape)
                + (self.shape - 1.0) * np.log(sigma) - self.rate * sigma)


class MapMode(str, enum.Enum):
    COUPLED = "coupled"
    MLE_PLUGIN = "plugin"


@dataclass(frozen=True)
class MapEstimate:
    lambda_hat: Strengths
    sigma_hat: float
    varsigma_hat: float
    mode: MapMode
    degenerate: bool = False
    iterations: int = 0


@dataclass(frozen=True)
class PriorSpec:
    """Which of the two log-strength prior families is in use.

    ``family`` is ``"gaussian"`` (parameter sigma) or ``"gl3"`` (parameter
    eta). Only the Gaussian family is fitted hierarchically.
    """

    family: str
    parameter: float

    def __post_init__(self):
        if self.family not in ("gaussian", "gl3"):
            raise DomainError(f"unknown prior family {self.family!r}")
        if not (math.isfinite(self.parameter) and self.parameter > 0):
            raise DomainError("prior parameter must be positive")


# ---------------------------------------------------------------------------
# likelihood and derivatives


def _lam(lam) -> np.ndarray:
    return np.asarray(getattr(lam, "values", lam), dtype=float)


def _V(V) -> np.ndarray:
    if isinstance(V, WinMatrix):
        return V.V.astype(float)
    return np.asarray(V, dtype=float)


def _check_dims(lam: np.ndarray, V: np.ndarray) -> None:
    if V.ndim != 2 or V.shape[0] != V.shape[1] or lam.shape[-1] != V.shape[0]:
        raise DataError(f"strengths of length {lam.shape[-1]} do not match win matrix {V.shape}")


def _check_sigma(sigma) -> float:
    sigma = float(sigma)
    if not (math.isfinite(sigma) and sigma > 0):
        raise DomainError(f"sigma must be finite and positive, got {sigma!r}")
    return sigma


def _loglik(lam: np.ndarray, V: np.ndarray) -> np.ndarray:
    # log p_ij = lam_i - log(e^lam_i + e^lam_j) = log_expit(lam_i - lam_j)
    diff = lam[..., :, None] - lam[..., None, :]
    return (V * special.log_expit(diff)).sum(axis=(-2, -1))


def _score(lam: np.ndarray, V: np.ndarray, n: np.ndarray) -> np.ndarray:
    diff = lam[..., :, None] - lam[..., None, :]
    return V.sum(axis=1) - (n * special.expit(diff)).sum(axis=-1)


def log_likelihood(lam, V) -> float:
    """Sum over i, j of V_ij * [lam_i - log(e^lam_i + e^lam_j)].

    Drops the binomial coefficients, which do not depend on ``lam``.
    """
    lam, V = _lam(lam), _V(V)
    _check_dims(lam, V)
    return float(_loglik(lam, V))


def log_posterior(lam, sigma, V, hyperprior: HyperPrior | None = None) -> float:
    """log p(lam, sigma | V) up to a constant.

    With no hyperprior this is the flat-in-sigma form
    ``loglik - sum(lam**2)/(2 sigma**2) - N log sigma``; a ``HyperPrior`` adds
    its Gamma log-density in sigma.
    """
    sigma = _check_sigma(sigma)
    lam, V = _lam(lam), _V(V)
    _check_dims(lam, V)
    N = lam.size
    out = _loglik(lam, V) - lam @ lam / (2 * sigma**2) - N * math.log(sigma)
    if hyperprior is not None:
        out += hyperprior.log_density(sigma)
    return float(out)


def grad_log_posterior(lam, sigma, V, hyperprior: HyperPrior | None = None) -> tuple[np.ndarray, float]:
    """Gradient of ``log_posterior`` as ``(d/dlam, d/dsigma)``.

    d/dlam_i = sum_j (V_ij - n_ij p_ij) - lam_i / sigma**2 with
    p_ij = logistic(lam_i - lam_j). The expected-wins term enters with a
    minus sign; a plus sign would not vanish at the MAP equations.
    """
    sigma = _check_sigma(sigma)
    lam, V = _lam(lam), _V(V)
    _check_dims(lam, V)
    N = lam.size
    dlam = _score(lam, V, V + V.T) - lam / sigma**2
    dsigma = lam @ lam / sigma**3 - N / sigma
    if hyperprior is not None:
        dsigma += (hyperprior.shape - 1.0) / sigma - hyperprior.rate
    return dlam, float(dsigma)


def hessian(lam, sigma, V, hyperprior: HyperPrior | None = None) -> np.ndarray:
    """Negative Hessian of ``log_posterior`` in the order (sigma, lam_1..lam_N).

    H_ll[i, j] = delta_ij (sigma^-2 + sum_k n_ik p_ik p_ki) - n_ij p_ij p_ji,
    where p_ij p_ji = e^(lam_i + lam_j) / (e^lam_i + e^lam_j)**2 (squared
    denominator). H_ss = 3 sigma^-4 sum lam^2 - N sigma^-2 and
    H_sl[i] = -2 lam_i sigma^-3.
    """
    sigma = _check_sigma(sigma)
    lam, V = _lam(lam), _V(V)
    _check_dims(lam, V)
    N = lam.size
    n = V + V.T
    p = special.expit(lam[:, None] - lam[None, :])
    w = n * (p * p.T)
    H = np.empty((N + 1, N + 1))
    H[0, 0] = 3.0 * (lam @ lam) / sigma**4 - N / sigma**2
    if hyperprior is not None:
        H[0, 0] += (hyperprior.shape - 1.0) / sigma**2
    H[0, 1:] = H[1:, 0] = -2.0 * lam / sigma**3
    H[1:, 1:] = -w
    H[1:, 1:][np.diag_indices(N)] = w.sum(axis=1) + 1.0 / sigma**2
    return H


# ---------------------------------------------------------------------------
# maximum likelihood


def ford_violations(V) -> list[int]:
    """Teams responsible for a failure of Ford's condition; empty if it holds.

    The condition holds when the directed "beat" graph is strongly connected.
    Winless and lossless teams are reported first; if there are none, every
    team outside the largest strongly connected component is reported.
    """
    V = _V(V)
    N = V.shape[0]
    if N < 2:
        return list(range(N))
    wins, losses = V.sum(axis=1), V.sum(axis=0)
    bad = sorted(set(np.flatnonzero(wins == 0)) | set(np.flatnonzero(losses == 0)))
    if bad:
        return [int(i) for i in bad]
    ncomp, labels = connected_components(V > 0, directed=True, connection="strong")
    if ncomp == 1:
        return []
    biggest = np.bincount(labels).argmax()
    return [int(i) for i in np.flatnonzero(labels != biggest)]


def _describe_teams(teams, index: TeamIndex | None) -> str:
    if index is None:
        return ", ".join(str(t) for t in teams)
    return ", ".join(index[t] for t in teams)


def _ford_map(lam: np.ndarray, log_wins: np.ndarray, n: np.ndarray, mask: np.ndarray) -> np.ndarray:
    # log of V_i / sum_j n_ij / (e^lam_i + e^lam_j), evaluated in log space
    log_terms = -np.logaddexp(lam[:, None], lam[None, :])
    log_terms = np.where(mask, log_terms, -np.inf)
    log_denom = special.logsumexp(log_terms, b=np.where(mask, n, 1.0), axis=1)
    return log_wins - log_denom


def fit_mle(V, tol: float = 1e-10, max_iter: int = 10_000, *, index: TeamIndex | None = None) -> Strengths:
    """Maximum-likelihood log-strengths by Ford's fixed-point iteration.

    Each sweep replaces every lam_i by log(V_i / sum_j n_ij/(e^lam_i + e^lam_j))
    and re-centers to sum zero. If the fixed-point residual grows, the update
    step is halved. Raises ``PathologyError`` when Ford's condition fails,
    since the estimate then runs off to infinity.
    """
    V = _V(V)
    N = V.shape[0]
    bad = ford_violations(V)
    if bad:
        raise PathologyError(
            "maximum-likelihood strengths do not exist: Ford's condition fails "
            f"(every team needs a win and a loss, linked through the schedule); offending teams: "
            f"{_describe_teams(bad, index)}",
            bad,
        )
    n = V + V.T
    mask = n > 0
    log_wins = np.log(V.sum(axis=1))
    lam = np.zeros(N)
    step = 1.0
    residuals: list[float] = []
    prev = math.inf
    for it in range(1, max_iter + 1):
        target = _ford_map(lam, log_wins, n, mask)
        target -= target.mean()
        resid = float(np.max(np.abs(target - lam)))
        residuals.append(resid)
        if resid < tol:
            lam = target - target.mean()
            return Strengths(lam, Normalization.SUM_ZERO, iterations=it, residual=resid)
        if resid > prev:
            step *= 0.5
        prev = resid
        lam = lam + step * (target - lam)
        lam -= lam.mean()
    raise ConvergenceError(
        f"Ford iteration did not converge in {max_iter} sweeps (residual {residuals[-1]:.3g})", residuals
    )


def fixed_point_residual(lam, V) -> float:
    """Largest |lam_i - log(V_i / sum_j n_ij/(e^lam_i + e^lam_j))| after centering both."""
    lam, V = _lam(lam), _V(V)
    n = V + V.T
    with np.errstate(divide="ignore"):
        target = _ford_map(lam, np.log(V.sum(axis=1)), n, n > 0)
    target = target - target.mean()
    return float(np.max(np.abs(target - (lam - lam.mean()))))


# ---------------------------------------------------------------------------
# maximum a posteriori


def fit_map_fixed_sigma(V, sigma: float, lam0=None, tol: float = 1e-10, max_iter: int = 200) -> Strengths:
    """Mode of p(lam | V, sigma) by damped Newton steps.

    The objective is strictly concave for any sigma > 0, so this always
    exists, winless and lossless teams included.
    """
    sigma = _check_sigma(sigma)
    V = _V(V)
    N = V.shape[0]
    n = V + V.T
    lam = np.zeros(N) if lam0 is None else np.array(_lam(lam0), dtype=float)
    inv_s2 = 1.0 / sigma**2

    def objective(x):
        return _loglik(x, V) - 0.5 * inv_s2 * (x @ x)

    f = objective(lam)
    for it in range(1, max_iter + 1):
        g = _score(lam, V, n) - inv_s2 * lam
        gmax = float(np.max(np.abs(g))) if N else 0.0
        if gmax < tol:
            return Strengths(lam, Normalization.RAW, iterations=it, residual=gmax)
        p = special.expit(lam[:, None] - lam[None, :])
        w = n * (p * p.T)
        H = -w
        H[np.diag_indices(N)] = w.sum(axis=1) + inv_s2
        delta = np.linalg.solve(H, g)
        t = 1.0
        while True:
            cand = lam + t * delta
            f_new = objective(cand)
            if f_new >= f - 1e-12 * abs(f) or t < 1e-10:
                break
            t *= 0.5
        lam, f = cand, f_new
    raise ConvergenceError(f"Newton solve at sigma={sigma:.4g} did not converge", [gmax])


def _coupled_map(V: np.ndarray, tol: float, max_iter: int) -> tuple[np.ndarray, float, bool, int]:
    N = V.shape[0]
    if not ford_violations(V):
        sigma = sigma_hat_of(fit_mle(V))
    else:
        sigma = 3.0
    if sigma <= 0:
        return np.zeros(N), 0.0, True, 0
    lam = np.zeros(N)
    for it in range(1, max_iter + 1):
        lam = fit_map_fixed_sigma(V, sigma, lam0=lam, tol=min(tol, 1e-12)).values
        new_sigma = sigma_hat_of(lam)
        if new_sigma < 1e-8:
            return np.zeros(N), 0.0, True, it
        if abs(new_sigma - sigma) < tol * max(1.0, sigma):
            sigma = new_sigma
            lam = fit_map_fixed_sigma(V, sigma, lam0=lam, tol=min(tol, 1e-12)).values
            return lam, sigma, False, it
        sigma = new_sigma
    raise ConvergenceError(f"coupled MAP iteration did not converge in {max_iter} sweeps", [sigma])


def fit_map(V, mode: MapMode | str = MapMode.MLE_PLUGIN, tol: float = 1e-10, max_iter: int = 10_000,
            *, index: TeamIndex | None = None) -> MapEstimate:
    """Joint mode in (lam, sigma) under a flat prior on sigma.

    ``coupled`` alternates between the lam-mode at fixed sigma and
    sigma = rms(lam) until both stationarity equations hold. When the data
    are too weak for an interior mode, sigma collapses to zero and the
    estimate is returned with ``degenerate=True``.

    ``plugin`` takes sigma from the root-mean-square of the MLE and then
    solves the lam equations at that fixed sigma.
    """
    mode = MapMode(mode)
    Vf = _V(V)
    N = Vf.shape[0]
    if mode is MapMode.MLE_PLUGIN:
        mle = fit_mle(Vf, tol=tol, max_iter=max_iter, index=index)
        sigma = sigma_hat_of(mle)
        if sigma == 0.0:
            return MapEstimate(Strengths(np.zeros(N), Normalization.SUM_ZERO), 0.0, math.nan, mode,
                               degenerate=True, iterations=mle.iterations or 0)
        lam = fit_map_fixed_sigma(Vf, sigma, lam0=mle.values, tol=min(tol, 1e-12))
        iterations = (mle.iterations or 0) + (lam.iterations or 0)
        lam_values = lam.values
    else:
        lam_values, sigma, degenerate, iterations = _coupled_map(Vf, tol, max_iter)
        if degenerate:
            return MapEstimate(Strengths(np.zeros(N), Normalization.SUM_ZERO), 0.0, math.nan, mode,
                               degenerate=True, iterations=iterations)
    # the Gaussian prior makes the MAP sum to zero exactly; remove rounding drift
    lam_values = lam_values - lam_values.mean()
    return MapEstimate(Strengths(lam_values, Normalization.SUM_ZERO), sigma, varsigma_hat_of(sigma, N),
                       mode, iterations=iterations)


# ---------------------------------------------------------------------------
# hyperprior construction


def sigma_hat_of(lam) -> float:
    """Root-mean-square of the log-strengths."""
    lam = _lam(lam)
    return float(math.sqrt(lam @ lam / lam.size)) if lam.size else 0.0


def varsigma_hat_of(sigma_hat: float, N: int) -> float:
    """sigma_hat**2 / (2N): inverse of the sigma-sigma curvature at the mode.

    Uses the block-diagonal approximation of the Hessian, under which
    H_ss = 2N / sigma_hat**2.
    """
    if not (isinstance(N, (int, np.integer)) and N >= 2):
        raise DomainError(f"need N >= 2 teams, got {N!r}")
    sigma_hat = float(sigma_hat)
    if not (math.isfinite(sigma_hat) and sigma_hat > 0):
        raise DomainError(f"sigma_hat must be positive, got {sigma_hat!r}")
    return sigma_hat**2 / (2 * N)


def hyperprior_from(sigma_hat: float, varsigma_hat: float, convention: str = "moment") -> HyperPrior:
    """Gamma hyperprior on sigma from ``sigma_hat`` and ``varsigma_hat``.

    ``convention="moment"`` gives Gamma(sigma_hat**2/varsigma_hat,
    sigma_hat/varsigma_hat). ``convention="squared"`` keeps the shape but
    uses rate 1/varsigma_hat, i.e. Gamma(2N, 2N/sigma_hat**2) when
    varsigma_hat = sigma_hat**2/(2N); its mean is sigma_hat**2, not sigma_hat.
    """
    for name, value in (("sigma_hat", sigma_hat), ("varsigma_hat", varsigma_hat)):
        if not (math.isfinite(value) and value > 0):
            raise DomainError(f"{name} must be positive, got {value!r}")
    shape = sigma_hat**2 / varsigma_hat
    if convention == "moment":
        rate = sigma_hat / varsigma_hat
    elif convention == "squared":
        rate = 1.0 / varsigma_hat
    else:
        raise DomainError(f"unknown hyperprior convention {convention!r}")
    return HyperPrior(shape, rate)


@dataclass(frozen=True)
class HyperPriorReport:
    hyperprior: HyperPrior
    sigma_hat: float
    varsigma_hat: float
    mle: Strengths
    convention: str = "moment"
    extra: dict = field(default_factory=dict)

    def as_dict(self) -> dict:
        return {
            "sigma_hat": self.sigma_hat,
            "sqrt_varsigma_hat": math.sqrt(self.varsigma_hat),
            "varsigma_hat": self.varsigma_hat,
            "shape": self.hyperprior.shape,
            "rate": self.hyperprior.rate,
            "mean": self.hyperprior.mean,
            "sd": self.hyperprior.sd,
            "convention": self.convention,
            "mle_iterations": self.mle.iterations,
            **self.extra,
        }


def season_hyperprior(V, convention: str = "moment", *, index: TeamIndex | None = None) -> HyperPriorReport:
    """MLE -> sigma_hat -> varsigma_hat -> Gamma hyperprior for the following season."""
    Vf = _V(V)
    mle = fit_mle(Vf, index=index)
    s = sigma_hat_of(mle)
    vs = varsigma_hat_of(s, Vf.shape[0])
    return HyperPriorReport(hyperprior_from(s, vs, convention), s, vs, mle, convention)


def write_strengths_table(index: TeamIndex, lam: Strengths, stream: TextIO, *, header_lines=()) -> None:
    for line in header_lines:
        stream.write(f"# {line}\n")
    stream.write("team,lambda_hat,normalization\n")
    for code, value in zip(index, lam.values):
        stream.write(f"{code},{value:.10f},{lam.normalization.value}\n")
