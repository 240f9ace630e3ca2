"""Rest-of-season win forecasts: posterior predictive vs. MLE plug-in.

A season is cut at a partition date; both methods are fitted on the games
before it and scored on the games from that date on.
"""

from __future__ import annotations

import datetime as dt
import logging
import math
import re
from dataclasses import dataclass, field
from typing import Sequence, TextIO

import numpy as np
from scipy.special import expit

from .inference import HyperPrior, Normalization, Strengths, fit_map_fixed_sigma, fit_mle, ford_violations
from .sampler import PosteriorDraws, SamplerConfig, sample_posterior
from .schedule import DataError, Game, ScheduleMatrix, TeamIndex, build_win_matrix, schedule_of, split_by_date

logger = logging.getLogger(__name__)

__all__ = [
    "DEFAULT_PARTITIONS",
    "ErrorMetrics",
    "PredictionReport",
    "PartitionResult",
    "SweepRow",
    "SweepReport",
    "expected_wins_bayes",
    "expected_wins_mle",
    "error_metrics",
    "resolve_partition",
    "evaluate_partition",
    "partition_sweep",
    "average_sweeps",
    "write_sweep_table",
    "write_sweep_long",
    "write_prediction_table",
]

DEFAULT_PARTITIONS = ("Apr15", "May1", "May15", "Jun1", "Jun15", "Jul1", "Jul15", "Aug1", "Aug15", "Sep1", "Sep15")

_MONTHS = {m: i for i, m in enumerate(
    ["jan", "feb", "mar", "apr", "may", "jun", "jul", "aug", "sep", "oct", "nov", "dec"], start=1)}


def resolve_partition(label: str, year: int | None = None) -> dt.date:
    """Turn ``YYYYMMDD`` or a label like ``Apr15``/``May1`` into a date.

    Labels need ``year``, normally the season's year.
    """
    label = label.strip()
    if re.fullmatch(r"\d{8}", label):
        return dt.date(int(label[:4]), int(label[4:6]), int(label[6:]))
    m = re.fullmatch(r"([A-Za-z]{3})(\d{1,2})", label)
    if not m or m.group(1).lower() not in _MONTHS:
        raise DataError(f"bad partition {label!r}; use YYYYMMDD or a label like Apr15")
    if year is None:
        raise DataError(f"partition label {label!r} needs a season year")
    return dt.date(year, _MONTHS[m.group(1).lower()], int(m.group(2)))


def _schedule(test_schedule) -> np.ndarray:
    if isinstance(test_schedule, ScheduleMatrix):
        return test_schedule.n.astype(float)
    return np.asarray(test_schedule, dtype=float)


def expected_wins_bayes(draws: PosteriorDraws | np.ndarray, test_schedule) -> np.ndarray:
    """Posterior-predictive expected wins, sum_j n_ij logistic(lam_i - lam_j) averaged over draws.

    ``draws`` is a ``PosteriorDraws`` or an array of log-strength draws with
    shape (S, N). The exact expectation is taken for each draw, so no
    binomial sampling noise is added.
    """
    n = _schedule(test_schedule)
    lam = draws.lam.reshape(-1, draws.N) if isinstance(draws, PosteriorDraws) else np.atleast_2d(draws)
    if lam.shape[1] != n.shape[0]:
        raise DataError(f"draws cover {lam.shape[1]} teams, schedule has {n.shape[0]}")
    total = np.zeros(n.shape[0])
    # chunked to bound memory at S x N x N
    for start in range(0, lam.shape[0], 512):
        chunk = lam[start:start + 512]
        p = expit(chunk[:, :, None] - chunk[:, None, :])
        total += np.einsum("ij,sij->i", n, p)
    return total / lam.shape[0]


def expected_wins_mle(lam_mle, test_schedule) -> np.ndarray:
    """Expected wins with the strengths fixed at a point estimate."""
    n = _schedule(test_schedule)
    lam = np.asarray(getattr(lam_mle, "values", lam_mle), dtype=float)
    if lam.shape != (n.shape[0],):
        raise DataError(f"strengths cover {lam.size} teams, schedule has {n.shape[0]}")
    return (n * expit(lam[:, None] - lam[None, :])).sum(axis=1)


@dataclass(frozen=True)
class ErrorMetrics:
    errors: np.ndarray
    mean: float
    sd: float


def error_metrics(predicted, actual, *, sd_errors=None) -> ErrorMetrics:
    """Absolute per-team errors, their mean, and their population (1/N) sd.

    ``sd_errors`` substitutes another error vector inside the sd sum while
    keeping this method's mean, giving the spread of one method's errors
    around another method's mean error.
    """
    predicted = np.asarray(predicted, dtype=float)
    actual = np.asarray(actual, dtype=float)
    if predicted.shape != actual.shape:
        raise DataError(f"predicted has shape {predicted.shape}, actual {actual.shape}")
    errors = np.abs(predicted - actual)
    mean = float(errors.mean())
    spread_of = errors if sd_errors is None else np.asarray(sd_errors, dtype=float)
    sd = float(math.sqrt(np.mean((spread_of - mean) ** 2)))
    return ErrorMetrics(errors, mean, sd)


@dataclass
class PredictionReport:
    method: str
    teams: tuple[str, ...]
    predicted: np.ndarray
    actual: np.ndarray
    metrics: ErrorMetrics
    fallback: bool = False

    @property
    def errors(self) -> np.ndarray:
        return self.metrics.errors

    @property
    def mean(self) -> float:
        return self.metrics.mean

    @property
    def sd(self) -> float:
        return self.metrics.sd


@dataclass
class PartitionResult:
    label: str
    cutoff: dt.date
    bayes: PredictionReport
    mle: PredictionReport
    train_games: int
    test_games: int
    draws: PosteriorDraws | None = None

    @property
    def mle_fallback(self) -> bool:
        return self.mle.fallback


def _mle_or_fallback(V, hyperprior: HyperPrior, index: TeamIndex) -> tuple[Strengths, bool]:
    bad = ford_violations(V)
    if not bad:
        return fit_mle(V, index=index), False
    # Ford's condition fails: ridge-stabilized estimate with sigma at the hyperprior mean
    logger.info("MLE undefined (teams %s); using MAP at sigma=%.3f", [index[t] for t in bad], hyperprior.mean)
    lam = fit_map_fixed_sigma(V, hyperprior.mean).values
    return Strengths(lam - lam.mean(), Normalization.SUM_ZERO), True


def evaluate_partition(games: Sequence[Game], cutoff: dt.date, hyperprior: HyperPrior, config: SamplerConfig, *,
                       index: TeamIndex | None = None, label: str | None = None, skip_ties: bool = False,
                       cross_sd: bool = False, keep_draws: bool = False) -> PartitionResult:
    """Fit both methods on games before ``cutoff`` and score them on the rest.

    ``cross_sd`` computes the MLE spread from the Bayes errors around the MLE
    mean error instead of from the MLE errors; off by default.
    """
    index = index or TeamIndex.from_games(games)
    train, test = split_by_date(games, cutoff)
    if not train:
        raise DataError(f"no training games before {cutoff:%Y%m%d}")
    if not test:
        raise DataError(f"no test games on or after {cutoff:%Y%m%d}")
    V_train = build_win_matrix(train, index, skip_ties=skip_ties)
    test_kept = [g for g in test if not g.is_tie] if skip_ties else test
    V_test = build_win_matrix(test_kept, index, skip_ties=skip_ties)
    n_test = schedule_of(test_kept, index)
    actual = V_test.wins.astype(float)

    draws = sample_posterior(V_train, hyperprior, config)
    pred_bayes = expected_wins_bayes(draws, n_test)
    lam_mle, fallback = _mle_or_fallback(V_train, hyperprior, index)
    pred_mle = expected_wins_mle(lam_mle, n_test)

    m_bayes = error_metrics(pred_bayes, actual)
    m_mle = error_metrics(pred_mle, actual, sd_errors=m_bayes.errors if cross_sd else None)
    return PartitionResult(
        label=label or f"{cutoff:%Y%m%d}",
        cutoff=cutoff,
        bayes=PredictionReport("Bayes", index.codes, pred_bayes, actual, m_bayes),
        mle=PredictionReport("MLE", index.codes, pred_mle, actual, m_mle, fallback=fallback),
        train_games=V_train.total,
        test_games=V_test.total,
        draws=draws if keep_draws else None,
    )


@dataclass(frozen=True)
class SweepRow:
    partition: str
    error_bayes: float
    error_mle: float
    sd_bayes: float
    sd_mle: float
    mle_fallback: bool = False
    seasons: int = 1


@dataclass
class SweepReport:
    rows: list[SweepRow] = field(default_factory=list)
    skipped: list[str] = field(default_factory=list)
    season: str | None = None


def partition_sweep(games: Sequence[Game], partitions: Sequence[str], hyperprior: HyperPrior,
                    config: SamplerConfig, *, year: int | None = None, index: TeamIndex | None = None,
                    skip_ties: bool = False, cross_sd: bool = False) -> SweepReport:
    """Evaluate both forecasters at every partition, in chronological order.

    Partitions with no training or no test games are skipped with a warning.
    """
    if not games:
        raise DataError("empty season")
    if year is None:
        year = min(g.date for g in games).year
    index = index or TeamIndex.from_games(games)
    cuts = sorted(((resolve_partition(p, year), p) for p in partitions), key=lambda t: t[0])
    report = SweepReport(season=str(year))
    for cutoff, label in cuts:
        try:
            res = evaluate_partition(games, cutoff, hyperprior, config, index=index, label=label,
                                     skip_ties=skip_ties, cross_sd=cross_sd)
        except DataError as exc:
            logger.warning("skipping partition %s: %s", label, exc)
            report.skipped.append(label)
            continue
        report.rows.append(SweepRow(label, res.bayes.mean, res.mle.mean, res.bayes.sd, res.mle.sd,
                                    res.mle_fallback))
    return report


def average_sweeps(reports: Sequence[SweepReport]) -> SweepReport:
    """Per-partition mean of each metric over the seasons that have that partition."""
    if not reports:
        raise ValueError("no sweep reports to average")
    order: list[str] = []
    groups: dict[str, list[SweepRow]] = {}
    for rep in reports:
        for row in rep.rows:
            if row.partition not in groups:
                order.append(row.partition)
                groups[row.partition] = []
            groups[row.partition].append(row)
    rows = []
    for label in order:
        g = groups[label]
        rows.append(SweepRow(
            label,
            float(np.mean([r.error_bayes for r in g])),
            float(np.mean([r.error_mle for r in g])),
            float(np.mean([r.sd_bayes for r in g])),
            float(np.mean([r.sd_mle for r in g])),
            any(r.mle_fallback for r in g),
            len(g),
        ))
    return SweepReport(rows, season="average")


def _comment(stream: TextIO, header_lines) -> None:
    for line in header_lines:
        stream.write(f"# {line}\n")


def write_sweep_table(report: SweepReport, stream: TextIO, *, header_lines=()) -> None:
    _comment(stream, header_lines)
    stream.write("partition,error_bayes,error_mle,sd_bayes,sd_mle,mle_fallback,seasons\n")
    for r in report.rows:
        stream.write(f"{r.partition},{r.error_bayes:.4f},{r.error_mle:.4f},{r.sd_bayes:.4f},{r.sd_mle:.4f},"
                     f"{int(r.mle_fallback)},{r.seasons}\n")


def write_sweep_long(report: SweepReport, stream: TextIO, *, header_lines=()) -> None:
    _comment(stream, header_lines)
    stream.write("season,partition,method,metric,value\n")
    for r in report.rows:
        for method, metric, value in (("Bayes", "error", r.error_bayes), ("MLE", "error", r.error_mle),
                                      ("Bayes", "sd", r.sd_bayes), ("MLE", "sd", r.sd_mle)):
            stream.write(f"{report.season},{r.partition},{method},{metric},{value:.6f}\n")


def write_prediction_table(result: PartitionResult, stream: TextIO, *, header_lines=()) -> None:
    _comment(stream, header_lines)
    stream.write("team,actual,predicted_bayes,error_bayes,predicted_mle,error_mle\n")
    b, m = result.bayes, result.mle
    for k, team in enumerate(b.teams):
        stream.write(f"{team},{int(b.actual[k])},{b.predicted[k]:.4f},{b.errors[k]:.4f},"
                     f"{m.predicted[k]:.4f},{m.errors[k]:.4f}\n")
