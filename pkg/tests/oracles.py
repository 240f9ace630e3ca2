"""Independent reference computations used by the tests.

Nothing here imports the package: these are brute-force numerical answers
(dense grids, exhaustive enumeration) written directly from the model.
"""

from __future__ import annotations

import itertools

import numpy as np
from scipy.special import gammaln, log_expit
from scipy.stats import binom


def _gamma_logpdf(sigma, shape, rate):
    return shape * np.log(rate) - gammaln(shape) + (shape - 1) * np.log(sigma) - rate * sigma


def _sum_zero_basis(N):
    # orthonormal basis of {x : sum(x) = 0}, as columns
    q, _ = np.linalg.qr(np.eye(N) - 1.0 / N)
    return q[:, : N - 1]


def grid_posterior(V, shape, rate, *, half_width=6.0, n_coord=161, sigma_range=(0.3, 2.2), n_sigma=240):
    """Posterior means of lambda differences and sigma by dense quadrature (N = 2 or 3).

    The likelihood only sees contrasts, so the Gaussian prior's mean direction
    integrates out exactly and the grid runs over the N-1 orthonormal contrast
    coordinates plus sigma.

    Returns
    -------
    dict with ``diff`` (E[lambda_i - lambda_{i+1}] for consecutive teams),
    ``sigma`` (E[sigma]) and ``sd_diff``/``sd_sigma``.
    """
    V = np.asarray(V, dtype=float)
    N = V.shape[0]
    if N not in (2, 3):
        raise ValueError("grid oracle supports N = 2 or 3")
    Q = _sum_zero_basis(N)
    axis = np.linspace(-half_width, half_width, n_coord)
    coords = np.stack(np.meshgrid(*([axis] * (N - 1)), indexing="ij"), axis=-1).reshape(-1, N - 1)
    lam = coords @ Q.T
    iu = np.triu_indices(N, 1)
    d = lam[:, iu[0]] - lam[:, iu[1]]
    loglik = (V[iu] * log_expit(d) + V.T[iu] * log_expit(-d)).sum(axis=1)
    sq = (coords ** 2).sum(axis=1)
    sig = np.linspace(*sigma_range, n_sigma)
    logp = (loglik[:, None] - 0.5 * sq[:, None] / sig[None, :] ** 2 - (N - 1) * np.log(sig)[None, :]
            + _gamma_logpdf(sig, shape, rate)[None, :])
    w = np.exp(logp - logp.max())
    w /= w.sum()
    diffs = lam[:, :-1] - lam[:, 1:]
    w_lam = w.sum(axis=1)
    w_sig = w.sum(axis=0)
    mean_diff = diffs.T @ w_lam
    mean_sig = float(sig @ w_sig)
    return {
        "diff": mean_diff,
        "sigma": mean_sig,
        "sd_diff": np.sqrt(((diffs - mean_diff) ** 2).T @ w_lam),
        "sd_sigma": float(np.sqrt(((sig - mean_sig) ** 2) @ w_sig)),
    }


def two_team_expected_wins(V, shape, rate, n_future, **grid):
    """E[future wins of team 0] by enumerating every outcome 0..n_future.

    Each outcome's probability is the binomial pmf integrated over the
    quadrature posterior of the strength difference.
    """
    V = np.asarray(V, dtype=float)
    half_width = grid.get("half_width", 6.0)
    n_coord = grid.get("n_coord", 801)
    sig = np.linspace(*grid.get("sigma_range", (0.3, 2.2)), grid.get("n_sigma", 240))
    u = np.linspace(-half_width, half_width, n_coord)
    d = u * np.sqrt(2.0)
    loglik = V[0, 1] * log_expit(d) + V[1, 0] * log_expit(-d)
    logp = (loglik[:, None] - 0.5 * u[:, None] ** 2 / sig[None, :] ** 2 - np.log(sig)[None, :]
            + _gamma_logpdf(sig, shape, rate)[None, :])
    w = np.exp(logp - logp.max()).sum(axis=1)
    w /= w.sum()
    p = 1.0 / (1.0 + np.exp(-d))
    outcomes = np.arange(n_future + 1)
    probs = np.array([binom.pmf(k, n_future, p) @ w for k in outcomes])
    return float(outcomes @ probs), float(probs.sum())


def mle_two_team(wins, losses):
    """Closed-form Bradley-Terry estimate for two teams, sum-zero normalized."""
    half = 0.5 * np.log(wins / losses)
    return np.array([half, -half])


def brute_force_outcomes(p, n):
    """All binary game outcomes for small n: (mean wins, count of sequences)."""
    total = 0.0
    count = 0
    for seq in itertools.product((0, 1), repeat=n):
        k = sum(seq)
        total += k * p ** k * (1 - p) ** (n - k)
        count += 1
    return total, count
