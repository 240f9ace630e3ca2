"""Hierarchical Bayesian Bradley-Terry ratings with an empirical hyperprior.

Modules
-------
numerics
    Special functions and the generalized-logistic prior family.
schedule
    Game logs, team indexing, win/schedule matrices and season simulation.
inference
    Likelihood, posterior derivatives, MLE, MAP and the Gamma hyperprior.
sampler
    Gradient-based posterior sampling and convergence diagnostics.
predict
    Rest-of-season forecasts and partition sweeps.
cli
    ``bayesbt`` command-line tool.
"""

__version__ = "0.1.0"

from .inference import (HyperPrior, MapMode, Strengths, fit_map, fit_mle, hyperprior_from,  # noqa: E402
                        season_hyperprior)
from .sampler import SamplerConfig, sample_posterior, summarize  # noqa: E402
from .schedule import DataError, Game, TeamIndex, WinMatrix, parse_game_log  # noqa: E402

__all__ = [
    "__version__",
    "DataError",
    "Game",
    "HyperPrior",
    "MapMode",
    "SamplerConfig",
    "Strengths",
    "TeamIndex",
    "WinMatrix",
    "fit_map",
    "fit_mle",
    "hyperprior_from",
    "parse_game_log",
    "sample_posterior",
    "season_hyperprior",
    "summarize",
]
