"""MCMC for the hierarchical model

    sigma ~ Gamma(shape, rate)
    lam | sigma ~ Normal(0, sigma^2 I)
    V | lam ~ Bradley-Terry(exp(lam))

sampled jointly on the unconstrained space (lam, log sigma), plus
convergence diagnostics, posterior summaries and ranking tables.

All chains are advanced together as one batch for speed, but each chain has
its own random stream seeded from (seed, chain) and its own step size and
metric, so a chain's draws do not depend on how many other chains run.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Sequence, TextIO

import numpy as np
from scipy import special

from .inference import HyperPrior, fit_map_fixed_sigma
from .schedule import DataError, TeamIndex, WinMatrix

logger = logging.getLogger(__name__)

__all__ = [
    "SamplerConfig",
    "SamplerError",
    "PosteriorDraws",
    "PosteriorSummary",
    "RankRow",
    "sample_posterior",
    "summarize",
    "split_rhat",
    "ess",
    "mcse",
    "rank_table",
    "write_draws",
    "write_summary",
    "write_ranking",
]

RHAT_WARN = 1.01


class SamplerError(RuntimeError):
    def __init__(self, message: str, diagnostics: dict | None = None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


@dataclass(frozen=True)
class SamplerConfig:
    """MCMC settings.

    ``trajectory_length`` is the HMC integration time in units of the adapted
    metric (roughly posterior standard deviations). ``algorithm`` is
    ``"hmc"`` or ``"rwm"`` (adaptive random-walk Metropolis, for debugging).
    """

    chains: int = 4
    warmup: int = 1000
    draws: int = 1000
    seed: int = 0
    target_accept: float = 0.8
    initial_step_size: float = 0.1
    trajectory_length: float = 2.0
    max_leapfrog: int = 256
    algorithm: str = "hmc"
    init_jitter: float = 0.1
    max_divergent_fraction: float = 0.02

    def __post_init__(self):
        if self.chains < 2:
            raise ValueError("need at least 2 chains for R-hat")
        if self.warmup < 0 or self.draws < 1:
            raise ValueError("warmup must be >= 0 and draws >= 1")
        if not 0 < self.target_accept < 1:
            raise ValueError("target_accept must lie in (0, 1)")
        if self.initial_step_size <= 0 or self.trajectory_length <= 0 or self.max_leapfrog < 1:
            raise ValueError("step size, trajectory length and max_leapfrog must be positive")
        if self.algorithm not in ("hmc", "rwm"):
            raise ValueError(f"unknown algorithm {self.algorithm!r}")


@dataclass
class PosteriorDraws:
    """Post-warmup draws with shape (chains, draws, N + 1); the last column is sigma."""

    draws: np.ndarray
    accept_rate: np.ndarray
    step_size: np.ndarray
    divergences: np.ndarray
    mean_leapfrog: np.ndarray
    config: SamplerConfig
    hyperprior: HyperPrior
    warnings: list[str] = field(default_factory=list)

    @property
    def n_chains(self) -> int:
        return self.draws.shape[0]

    @property
    def n_draws(self) -> int:
        return self.draws.shape[1]

    @property
    def N(self) -> int:
        return self.draws.shape[2] - 1

    @property
    def lam(self) -> np.ndarray:
        return self.draws[..., :-1]

    @property
    def sigma(self) -> np.ndarray:
        return self.draws[..., -1]

    @property
    def chain_labels(self) -> np.ndarray:
        return np.repeat(np.arange(self.n_chains), self.n_draws)

    def flat(self) -> np.ndarray:
        return self.draws.reshape(-1, self.draws.shape[2])


class _Target:
    """log p(lam, u | V) with u = log sigma, Jacobian included, batched over rows."""

    def __init__(self, V: np.ndarray, hyperprior: HyperPrior):
        self.V = V
        self.n = V + V.T
        self.wins = V.sum(axis=1)
        self.N = V.shape[0]
        self.has_data = bool(V.any())
        self.a = hyperprior.shape
        self.b = hyperprior.rate

    def __call__(self, q: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        N = self.N
        lam = q[:, :N]
        u = q[:, N]
        with np.errstate(over="ignore", invalid="ignore"):
            sigma = np.exp(u)
            inv_s2 = np.exp(-2.0 * u)
            ss = np.einsum("ci,ci->c", lam, lam)
            grad = np.empty_like(q)
            if self.has_data:
                diff = lam[:, :, None] - lam[:, None, :]
                loglik = np.einsum("ij,cij->c", self.V, special.log_expit(diff))
                grad[:, :N] = self.wins - np.einsum("ij,cij->ci", self.n, special.expit(diff))
            else:
                loglik = 0.0
                grad[:, :N] = 0.0
            grad[:, :N] -= lam * inv_s2[:, None]
            # Gaussian prior + Gamma hyperprior in sigma + log-Jacobian u
            logp = loglik - 0.5 * ss * inv_s2 - N * u + self.a * u - self.b * sigma
            grad[:, N] = ss * inv_s2 - N + self.a - self.b * sigma
        bad = ~np.isfinite(logp) | ~np.all(np.isfinite(grad), axis=1)
        logp = np.where(bad, -np.inf, logp)
        return logp, grad


class _DualAveraging:
    """Per-chain step-size adaptation toward a target acceptance rate."""

    gamma, t0, kappa = 0.05, 10.0, 0.75

    def __init__(self, eps: np.ndarray, target: float):
        self.target = target
        self.restart(eps)

    def restart(self, eps: np.ndarray) -> None:
        self.mu = np.log(10.0 * eps)
        self.h_bar = np.zeros_like(eps)
        self.log_eps_bar = np.zeros_like(eps)
        self.t = 0

    def update(self, accept_prob: np.ndarray) -> np.ndarray:
        self.t += 1
        w = 1.0 / (self.t + self.t0)
        self.h_bar = (1 - w) * self.h_bar + w * (self.target - accept_prob)
        log_eps = self.mu - math.sqrt(self.t) / self.gamma * self.h_bar
        eta = self.t ** -self.kappa
        self.log_eps_bar = eta * log_eps + (1 - eta) * self.log_eps_bar
        return np.exp(log_eps)

    def final(self) -> np.ndarray:
        return np.exp(self.log_eps_bar)


def _warmup_windows(warmup: int) -> tuple[int, list[int]]:
    """First metric-collection iteration and the (exclusive) ends of each window."""
    if warmup < 20:
        return warmup, []
    if warmup >= 150:
        init, term, base = 75, 50, 25
    else:
        init, term = int(0.15 * warmup), int(0.1 * warmup)
        base = warmup - init - term
    ends = []
    start, size = init, base
    last = warmup - term
    while start < last:
        end = start + size
        if end + 2 * size > last:
            end = last
        ends.append(end)
        start, size = end, 2 * size
    return init, ends


class _Chains:
    """State of all chains plus per-chain adaptation."""

    def __init__(self, target: _Target, q0: np.ndarray, config: SamplerConfig, rngs):
        self.target = target
        self.config = config
        self.rngs = rngs
        self.q = q0
        self.logp, self.grad = target(q0)
        C, D = q0.shape
        self.inv_metric = np.ones((C, D))
        self.eps = np.full(C, config.initial_step_size)

    def _normals(self, D: int) -> np.ndarray:
        return np.stack([r.standard_normal(D) for r in self.rngs])

    def _uniforms(self) -> np.ndarray:
        return np.array([r.uniform() for r in self.rngs])

    def hmc_step(self, eps: np.ndarray, n_steps: np.ndarray | None = None):
        C, D = self.q.shape
        p = self._normals(D) / np.sqrt(self.inv_metric)
        if n_steps is None:
            jitter = 0.9 + 0.2 * self._uniforms()
            eps = eps * jitter
            n_steps = np.clip(np.ceil(self.config.trajectory_length / eps), 1, self.config.max_leapfrog).astype(int)
        h0 = -self.logp + 0.5 * np.einsum("cd,cd,cd->c", p, p, self.inv_metric)
        q, grad, logp = self.q.copy(), self.grad.copy(), self.logp.copy()
        alive = np.ones(C, dtype=bool)
        e = eps[:, None]
        for k in range(int(n_steps.max())):
            active = alive & (k < n_steps)
            if not active.any():
                break
            a = active[:, None]
            p_half = np.where(a, p + 0.5 * e * grad, p)
            q_new = np.where(a, q + e * self.inv_metric * p_half, q)
            logp_new, grad_new = self.target(q_new)
            p_new = np.where(a, p_half + 0.5 * e * grad_new, p_half)
            q, p = q_new, p_new
            logp = np.where(active, logp_new, logp)
            grad = np.where(a, grad_new, grad)
            alive &= np.isfinite(logp)
        with np.errstate(invalid="ignore", over="ignore"):
            h1 = -logp + 0.5 * np.einsum("cd,cd,cd->c", p, p, self.inv_metric)
            dh = h1 - h0
        divergent = ~alive | ~np.isfinite(dh) | (dh > 1000.0)
        accept_prob = np.where(divergent, 0.0, np.exp(np.minimum(0.0, -np.nan_to_num(dh, nan=np.inf))))
        accept = self._uniforms() < accept_prob
        self.q = np.where(accept[:, None], q, self.q)
        self.logp = np.where(accept, logp, self.logp)
        self.grad = np.where(accept[:, None], grad, self.grad)
        return accept_prob, divergent, n_steps

    def rwm_step(self, eps: np.ndarray):
        C, D = self.q.shape
        z = self._normals(D)
        q = self.q + eps[:, None] * np.sqrt(self.inv_metric) * z
        logp, grad = self.target(q)
        with np.errstate(invalid="ignore", over="ignore"):
            accept_prob = np.where(np.isfinite(logp), np.exp(np.minimum(0.0, logp - self.logp)), 0.0)
        accept = self._uniforms() < accept_prob
        self.q = np.where(accept[:, None], q, self.q)
        self.logp = np.where(accept, logp, self.logp)
        self.grad = np.where(accept[:, None], grad, self.grad)
        return accept_prob, np.zeros(C, dtype=bool), np.ones(C, dtype=int)

    def step(self, eps: np.ndarray):
        if self.config.algorithm == "hmc":
            return self.hmc_step(eps)
        return self.rwm_step(eps)

    def reasonable_step_size(self) -> None:
        """Double or halve each chain's step size until one leapfrog step accepts ~half the time."""
        if self.config.algorithm != "hmc":
            self.eps = np.full_like(self.eps, 2.38 / math.sqrt(self.q.shape[1]))
            return
        C, D = self.q.shape
        eps = self.eps.copy()
        saved = (self.q.copy(), self.logp.copy(), self.grad.copy())
        direction = None
        for _ in range(50):
            # probe without moving the chains
            p = self._normals(D) / np.sqrt(self.inv_metric)
            h0 = -self.logp + 0.5 * np.einsum("cd,cd,cd->c", p, p, self.inv_metric)
            e = eps[:, None]
            p_half = p + 0.5 * e * self.grad
            q1 = self.q + e * self.inv_metric * p_half
            logp1, grad1 = self.target(q1)
            with np.errstate(invalid="ignore", over="ignore"):
                p1 = p_half + 0.5 * e * grad1
                h1 = -logp1 + 0.5 * np.einsum("cd,cd,cd->c", p1, p1, self.inv_metric)
                ratio = np.nan_to_num(h0 - h1, nan=-np.inf)
            up = ratio > math.log(0.8)
            if direction is None:
                direction = up
            done = up != direction
            if done.all():
                break
            eps = np.where(done, eps, np.where(direction, eps * 2.0, eps * 0.5))
        self.q, self.logp, self.grad = saved
        self.eps = np.clip(eps, 1e-6, 10.0)


def _initial_points(V: np.ndarray, hyperprior: HyperPrior, config: SamplerConfig, rngs, init) -> np.ndarray:
    N = V.shape[0]
    if init is None:
        sigma0 = hyperprior.mean
        lam0 = fit_map_fixed_sigma(V, sigma0).values
    else:
        init = np.asarray(init, dtype=float)
        if init.shape != (N + 1,) or init[-1] <= 0:
            raise ValueError("init must be (lam_1..lam_N, sigma) with sigma > 0")
        lam0, sigma0 = init[:N], init[N]
    base = np.concatenate([lam0, [math.log(sigma0)]])
    return np.stack([base + config.init_jitter * r.standard_normal(N + 1) for r in rngs])


def sample_posterior(V, hyperprior: HyperPrior, config: SamplerConfig = SamplerConfig(), *,
                     init=None) -> PosteriorDraws:
    """Draw from p(lam, sigma | V) for the Gaussian hierarchy with a Gamma hyperprior on sigma.

    Chains start at the mode of p(lam | V, sigma = hyperprior mean), jittered
    per chain. Warmup adapts a per-chain step size (dual averaging) and a
    diagonal metric over doubling windows. Raises ``SamplerError`` if more
    than ``config.max_divergent_fraction`` of the kept transitions diverge.
    """
    Vf = (V.V if isinstance(V, WinMatrix) else np.asarray(V)).astype(float)
    if Vf.ndim != 2 or Vf.shape[0] != Vf.shape[1] or Vf.shape[0] < 1:
        raise DataError(f"win matrix must be square and nonempty, got shape {Vf.shape}")
    N = Vf.shape[0]
    D = N + 1
    C = config.chains
    rngs = [np.random.default_rng([config.seed, c]) for c in range(C)]
    target = _Target(Vf, hyperprior)
    chains = _Chains(target, _initial_points(Vf, hyperprior, config, rngs, init), config, rngs)
    if not np.all(np.isfinite(chains.logp)):
        raise SamplerError("initial point has non-finite log density")

    target_accept = config.target_accept if config.algorithm == "hmc" else 0.234
    chains.reasonable_step_size()
    adapt = _DualAveraging(chains.eps, target_accept)
    win_start, windows = _warmup_windows(config.warmup)
    count = 0
    mean = np.zeros((C, D))
    m2 = np.zeros((C, D))
    eps = chains.eps.copy()
    window_iter = iter(windows)
    next_end = next(window_iter, None)

    for it in range(config.warmup):
        accept_prob, _, _ = chains.step(eps)
        eps = adapt.update(accept_prob)
        if next_end is not None and it >= win_start:
            count += 1
            delta = chains.q - mean
            mean += delta / count
            m2 += delta * (chains.q - mean)
            if it + 1 == next_end:
                var = m2 / max(count - 1, 1)
                chains.inv_metric = (count / (count + 5.0)) * var + 1e-3 * (5.0 / (count + 5.0))
                count = 0
                mean[:] = 0.0
                m2[:] = 0.0
                chains.eps = eps
                chains.reasonable_step_size()
                adapt.restart(chains.eps)
                eps = chains.eps.copy()
                next_end = next(window_iter, None)
    if config.warmup > 0:
        eps = adapt.final()

    out = np.empty((C, config.draws, D))
    acc_sum = np.zeros(C)
    div = np.zeros(C, dtype=int)
    steps = np.zeros(C)
    for it in range(config.draws):
        accept_prob, divergent, n_steps = chains.step(eps)
        acc_sum += accept_prob
        div += divergent
        steps += n_steps
        out[:, it, :N] = chains.q[:, :N]
        out[:, it, N] = np.exp(chains.q[:, N])

    diagnostics = {
        "accept_rate": (acc_sum / config.draws).tolist(),
        "step_size": eps.tolist(),
        "divergences": div.tolist(),
    }
    if not np.all(np.isfinite(out)) or np.any(out[..., N] <= 0):
        raise SamplerError("non-finite or nonpositive draws", diagnostics)
    if div.sum() > config.max_divergent_fraction * C * config.draws:
        raise SamplerError(f"{div.sum()} divergent transitions after warmup", diagnostics)

    result = PosteriorDraws(
        draws=out,
        accept_rate=acc_sum / config.draws,
        step_size=eps,
        divergences=div,
        mean_leapfrog=steps / config.draws,
        config=config,
        hyperprior=hyperprior,
    )
    if config.draws >= 4:
        rhat = np.array([split_rhat(out[:, :, d]) for d in range(D)])
        worst = np.nanmax(rhat) if np.any(np.isfinite(rhat)) else np.nan
        if worst > RHAT_WARN:
            msg = f"split R-hat {worst:.3f} exceeds {RHAT_WARN} (parameter {int(np.nanargmax(rhat))})"
            result.warnings.append(msg)
            logger.warning(msg)
    return result


# ---------------------------------------------------------------------------
# diagnostics


def _split(x: np.ndarray) -> np.ndarray:
    x = np.atleast_2d(np.asarray(x, dtype=float))
    half = x.shape[1] // 2
    return np.concatenate([x[:, :half], x[:, x.shape[1] - half:]], axis=0)


def split_rhat(x: np.ndarray) -> float:
    """Split R-hat for one parameter from draws of shape (chains, draws).

    Returns NaN when the within-chain variance is zero.
    """
    s = _split(x)
    m, n = s.shape
    if m < 2 or n < 2:
        return math.nan
    W = s.var(axis=1, ddof=1).mean()
    if W <= 0:
        return math.nan
    B = n * s.mean(axis=1).var(ddof=1)
    var_plus = (n - 1) / n * W + B / n
    return float(math.sqrt(var_plus / W))


def _autocov(x: np.ndarray) -> np.ndarray:
    n = x.shape[-1]
    size = 2 ** int(math.ceil(math.log2(2 * n)))
    xc = x - x.mean(axis=-1, keepdims=True)
    f = np.fft.rfft(xc, size, axis=-1)
    acov = np.fft.irfft(f * np.conj(f), size, axis=-1)[..., :n]
    return acov / n


def ess(x: np.ndarray) -> float:
    """Effective sample size of one parameter from draws of shape (chains, draws).

    Split chains, FFT autocovariances and Geyer's initial monotone sequence.
    """
    s = _split(x)
    m, n = s.shape
    if n < 4:
        return math.nan
    acov = _autocov(s)
    chain_var = acov[:, 0] * n / (n - 1)
    W = chain_var.mean()
    if W <= 0:
        return math.nan
    var_plus = W * (n - 1) / n + (s.mean(axis=1).var(ddof=1) if m > 1 else 0.0)
    rho = 1.0 - (W - acov.mean(axis=0)) / var_plus
    rho[0] = 1.0
    # Geyer: sum adjacent pairs while positive, enforcing monotone decrease
    tau = -1.0
    prev = math.inf
    for t in range(0, n - 1, 2):
        pair = rho[t] + rho[t + 1]
        if pair <= 0:
            break
        pair = min(pair, prev)
        tau += 2.0 * pair
        prev = pair
    tau = max(tau, 1.0 / math.log10(m * n))
    return float(m * n / tau)


def mcse(x: np.ndarray) -> float:
    """Monte Carlo standard error of the mean: sd / sqrt(ESS)."""
    x = np.asarray(x, dtype=float)
    e = ess(x)
    sd = x.std(ddof=1)
    if sd == 0:
        return 0.0
    return float(sd / math.sqrt(e))


@dataclass(frozen=True)
class PosteriorSummary:
    """Per-parameter summaries; index N (the last) is sigma."""

    mean: np.ndarray
    sd: np.ndarray
    q05: np.ndarray
    q25: np.ndarray
    q75: np.ndarray
    q95: np.ndarray
    rhat: np.ndarray
    ess: np.ndarray
    n_chains: int
    n_draws: int

    @property
    def N(self) -> int:
        return self.mean.size - 1

    @property
    def lambda_mean(self) -> np.ndarray:
        return self.mean[:-1]

    @property
    def mcse(self) -> np.ndarray:
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.where(self.sd > 0, self.sd / np.sqrt(self.ess), 0.0)

    @property
    def rhat_defined(self) -> np.ndarray:
        return np.isfinite(self.rhat)


def summarize(draws: PosteriorDraws | np.ndarray) -> PosteriorSummary:
    """Moments, central 50%/90% intervals, split R-hat and ESS for every parameter."""
    x = draws.draws if isinstance(draws, PosteriorDraws) else np.asarray(draws, dtype=float)
    if x.ndim != 3:
        raise ValueError("draws must have shape (chains, draws, parameters)")
    C, S, D = x.shape
    if C < 2:
        raise ValueError("R-hat is unavailable with fewer than 2 chains")
    if S < 100:
        raise ValueError(f"need at least 100 draws per chain for a summary, got {S}")
    flat = x.reshape(-1, D)
    q = np.quantile(flat, [0.05, 0.25, 0.75, 0.95], axis=0)
    rhat = np.array([split_rhat(x[:, :, d]) for d in range(D)])
    n_eff = np.array([ess(x[:, :, d]) for d in range(D)])
    return PosteriorSummary(
        mean=flat.mean(axis=0),
        sd=flat.std(axis=0, ddof=1),
        q05=q[0], q25=q[1], q75=q[2], q95=q[3],
        rhat=rhat, ess=n_eff, n_chains=C, n_draws=S,
    )


@dataclass(frozen=True)
class RankRow:
    rank: int
    team: str
    mean: float
    wins: int


def rank_table(summary: PosteriorSummary, index: TeamIndex, wins: Sequence[int]) -> list[RankRow]:
    """Teams by descending posterior mean log-strength, ties by team code."""
    means = summary.lambda_mean
    if len(index) != means.size or len(wins) != means.size:
        raise DataError("summary, index and wins disagree on team count")
    order = sorted(range(means.size), key=lambda i: (-means[i], index[i]))
    return [RankRow(r + 1, index[i], float(means[i]), int(wins[i])) for r, i in enumerate(order)]


def _comment(stream: TextIO, header_lines) -> None:
    for line in header_lines:
        stream.write(f"# {line}\n")


def write_draws(draws: PosteriorDraws, index: TeamIndex, stream: TextIO, *, header_lines=()) -> None:
    _comment(stream, header_lines)
    stream.write(",".join(["chain", "iteration", *index.codes, "sigma"]) + "\n")
    for c in range(draws.n_chains):
        for s in range(draws.n_draws):
            row = draws.draws[c, s]
            stream.write(f"{c},{s}," + ",".join(f"{v:.8f}" for v in row) + "\n")


def write_summary(summary: PosteriorSummary, index: TeamIndex, stream: TextIO, *, header_lines=()) -> None:
    _comment(stream, header_lines)
    stream.write("parameter,mean,sd,q05,q25,q75,q95,rhat,ess,mcse\n")
    names = [*index.codes, "sigma"]
    se = summary.mcse
    for d, name in enumerate(names):
        stream.write(
            f"{name},{summary.mean[d]:.6f},{summary.sd[d]:.6f},{summary.q05[d]:.6f},{summary.q25[d]:.6f},"
            f"{summary.q75[d]:.6f},{summary.q95[d]:.6f},{summary.rhat[d]:.4f},{summary.ess[d]:.1f},{se[d]:.6f}\n"
        )


def write_ranking(rows: Sequence[RankRow], stream: TextIO, *, header_lines=()) -> None:
    _comment(stream, header_lines)
    stream.write("rank,team,posterior_mean,wins\n")
    for r in rows:
        stream.write(f"{r.rank},{r.team},{r.mean:.6f},{r.wins}\n")
