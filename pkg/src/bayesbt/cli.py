"""Command-line entry point.

    bayesbt hyperprior --input 2016.csv
    bayesbt fit --input 2017.csv --prev 2016.csv --out runs/2017
    bayesbt predict --input 2017.csv --prev 2016.csv --partition Jul1 --out runs/jul1
    bayesbt sweep --input 2016.csv --input 2017.csv --prev 2015.csv --out runs/sweep
    bayesbt simulate --sigma-star 0.27 --teams 30 --games 162 --seed 1 --out runs/sim

Exit codes: 0 success, 1 usage, 2 data error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import math
import sys
from pathlib import Path
from typing import Sequence

import numpy as np

from . import __version__
from .inference import (ConvergenceError, HyperPrior, MapMode, Normalization, Strengths, fit_map, fit_mle,
                        ford_violations, hyperprior_from, season_hyperprior, varsigma_hat_of, write_strengths_table)
from .predict import (DEFAULT_PARTITIONS, average_sweeps, evaluate_partition, partition_sweep, resolve_partition,
                      write_prediction_table, write_sweep_long, write_sweep_table)
from .sampler import SamplerConfig, SamplerError, rank_table, sample_posterior, summarize, write_draws, \
    write_ranking, write_summary
from .schedule import (DataError, Game, TeamIndex, WinMatrix, balanced_schedule, build_win_matrix, parse_game_log,
                       read_win_matrix, simulate_games, write_game_log)

logger = logging.getLogger("bayesbt")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERICAL = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# ---------------------------------------------------------------------------
# inputs


def _read_text(path: str) -> list[str]:
    p = Path(path)
    if not p.is_file():
        raise DataError(f"input file not found: {path}")
    return p.read_text(encoding="utf-8").splitlines()


def _looks_like_matrix(lines: list[str]) -> bool:
    for ln in lines:
        s = ln.strip()
        if not s or s.startswith("#"):
            continue
        first = s.replace(",", " ").split()[0]
        return first.isdigit() and len(first) != 8
    return False


def load_games(path: str) -> list[Game]:
    parsed = parse_game_log(_read_text(path))
    parsed.raise_for_errors()
    if not parsed.games:
        raise DataError(f"no games in {path}")
    return parsed.games


def load_season(path: str, *, skip_ties: bool = False) -> tuple[TeamIndex, WinMatrix, list[Game] | None]:
    """Game log or precomputed win matrix -> (index, V, games-or-None)."""
    lines = _read_text(path)
    if _looks_like_matrix(lines):
        index, V = read_win_matrix(lines)
        return index, V, None
    parsed = parse_game_log(lines)
    parsed.raise_for_errors()
    if not parsed.games:
        raise DataError(f"no games in {path}")
    index = TeamIndex.from_games(parsed.games)
    return index, build_win_matrix(parsed.games, index, skip_ties=skip_ties), parsed.games


def _hyperprior(args, N: int) -> tuple[HyperPrior, dict]:
    if args.prev:
        index, V, _ = load_season(args.prev, skip_ties=args.skip_ties)
        rep = season_hyperprior(V, args.hyperprior_convention, index=index)
        return rep.hyperprior, {"source": args.prev, **rep.as_dict()}
    if args.sigma_hat is not None:
        vs = varsigma_hat_of(args.sigma_hat, N)
        hp = hyperprior_from(args.sigma_hat, vs, args.hyperprior_convention)
        return hp, {"source": "sigma-hat", "sigma_hat": args.sigma_hat, "varsigma_hat": vs,
                    "shape": hp.shape, "rate": hp.rate}
    raise UsageError("a hyperprior is needed: pass --prev <previous season> or --sigma-hat <value>")


def _sampler_config(args) -> SamplerConfig:
    return SamplerConfig(chains=args.chains, warmup=args.warmup, draws=args.draws, seed=args.seed,
                         algorithm=args.algorithm)


# ---------------------------------------------------------------------------
# outputs


class _Output:
    """Writes every file of a run into one directory with a provenance header."""

    def __init__(self, args, command: str):
        self.dir = Path(args.out)
        self.dir.mkdir(parents=True, exist_ok=True)
        self.format = args.format
        settings = {k: v for k, v in sorted(vars(args).items()) if k not in ("func", "out", "config")}
        blob = json.dumps(settings, sort_keys=True, default=str).encode()
        self.config_hash = hashlib.sha256(blob).hexdigest()[:16]
        self.seed = args.seed
        self.header = [f"bayesbt {__version__} {command}", f"seed={args.seed}", f"config={self.config_hash}"]
        self.written: list[str] = []

    def table(self, name: str, writer, *payload) -> None:
        path = self.dir / f"{name}.csv"
        with path.open("w", encoding="utf-8", newline="") as fh:
            writer(*payload, fh, header_lines=self.header)
        self.written.append(str(path))

    def json(self, name: str, data: dict) -> None:
        path = self.dir / f"{name}.json"
        doc = {"tool": f"bayesbt {__version__}", "seed": self.seed, "config": self.config_hash, **data}
        path.write_text(json.dumps(doc, indent=2, sort_keys=True, default=_json_default) + "\n", encoding="utf-8")
        self.written.append(str(path))

    def emit(self, name: str, writer, *payload, rows=None) -> None:
        """Delimited table, or the same rows as JSON under --format structured."""
        if self.format == "structured" and rows is not None:
            self.json(name, {"rows": rows})
        else:
            self.table(name, writer, *payload)


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    return str(o)


def _clean(x: float):
    return None if x is None or (isinstance(x, float) and math.isnan(x)) else x


# ---------------------------------------------------------------------------
# commands


def cmd_hyperprior(args) -> dict:
    index, V, _ = load_season(args.input, skip_ties=args.skip_ties)
    rep = season_hyperprior(V, args.hyperprior_convention, index=index)
    info = rep.as_dict()
    print(f"sigma_hat={info['sigma_hat']:.4f} sqrt_varsigma_hat={info['sqrt_varsigma_hat']:.4f} "
          f"shape={info['shape']:.4f} rate={info['rate']:.4f}")
    if args.out:
        out = _Output(args, "hyperprior")
        out.json("hyperprior", {"teams": len(index), "games": V.total, **info})
        out.emit("mle", write_strengths_table, index, rep.mle,
                 rows=[{"team": t, "lambda_hat": float(v)} for t, v in zip(index, rep.mle.values)])
    return info


def cmd_fit(args) -> dict:
    index, V, _ = load_season(args.input, skip_ties=args.skip_ties)
    hp, hp_info = _hyperprior(args, len(index))
    out = _Output(args, "fit")
    report: dict = {"teams": len(index), "games": V.total, "hyperprior": hp_info}

    bad = ford_violations(V)
    if not bad:
        mle = fit_mle(V, index=index)
        out.emit("mle", write_strengths_table, index, mle,
                 rows=[{"team": t, "lambda_hat": float(v)} for t, v in zip(index, mle.values)])
        report["mle"] = {"iterations": mle.iterations, "residual": mle.residual}
        mode = MapMode(args.map_mode)
    else:
        report["mle"] = {"skipped": "Ford's condition fails", "teams": [index[t] for t in bad]}
        mode = MapMode.COUPLED
    est = fit_map(V, mode, index=index)
    out.emit("map", write_strengths_table, index, est.lambda_hat,
             rows=[{"team": t, "lambda_hat": float(v)} for t, v in zip(index, est.lambda_hat.values)])
    report["map"] = {"mode": est.mode.value, "sigma_hat": est.sigma_hat, "varsigma_hat": _clean(est.varsigma_hat),
                     "degenerate": est.degenerate, "iterations": est.iterations}

    config = _sampler_config(args)
    draws = sample_posterior(V, hp, config)
    summary = summarize(draws)
    rows = rank_table(summary, index, V.wins)
    out.emit("ranking", write_ranking, rows,
             rows=[{"rank": r.rank, "team": r.team, "posterior_mean": r.mean, "wins": r.wins} for r in rows])
    out.table("summary", write_summary, summary, index)
    out.table("draws", write_draws, draws, index)
    report["sampler"] = {
        "chains": config.chains, "warmup": config.warmup, "draws": config.draws,
        "accept_rate": draws.accept_rate, "step_size": draws.step_size, "divergences": draws.divergences,
        "max_rhat": _clean(float(np.nanmax(summary.rhat))), "min_ess": float(np.nanmin(summary.ess)),
        "warnings": draws.warnings,
    }
    report["sigma_posterior"] = {"mean": float(summary.mean[-1]), "sd": float(summary.sd[-1])}
    out.json("report", report)
    for r in rows[:5]:
        print(f"{r.rank:>2} {r.team:<5} {r.mean:+.3f} {r.wins}")
    return report


def cmd_predict(args) -> dict:
    if not args.partition or len(args.partition) != 1:
        raise UsageError("predict needs exactly one --partition")
    games = load_games(args.input)
    index = TeamIndex.from_games(games)
    hp, hp_info = _hyperprior(args, len(index))
    year = min(g.date for g in games).year
    label = args.partition[0]
    cutoff = resolve_partition(label, year)
    if cutoff > max(g.date for g in games):
        raise DataError(f"partition {label} is after the last game; the test set would be empty")
    res = evaluate_partition(games, cutoff, hp, _sampler_config(args), index=index, label=label,
                             skip_ties=args.skip_ties, cross_sd=args.cross_sd)
    out = _Output(args, "predict")
    out.table("predictions", write_prediction_table, res)
    report = {
        "partition": label, "cutoff": f"{cutoff:%Y%m%d}", "train_games": res.train_games,
        "test_games": res.test_games, "hyperprior": hp_info,
        "bayes": {"error": res.bayes.mean, "sd": res.bayes.sd, "predicted_total": float(res.bayes.predicted.sum())},
        "mle": {"error": res.mle.mean, "sd": res.mle.sd, "fallback": res.mle.fallback,
                "predicted_total": float(res.mle.predicted.sum())},
    }
    out.json("prediction", report)
    flag = " (MLE fallback)" if res.mle.fallback else ""
    print(f"{label}: error_bayes={res.bayes.mean:.2f} error_mle={res.mle.mean:.2f}{flag} "
          f"sd_bayes={res.bayes.sd:.2f} sd_mle={res.mle.sd:.2f}")
    return report


def cmd_sweep(args) -> dict:
    if not args.input:
        raise UsageError("sweep needs at least one --input season")
    seasons = []
    for path in args.input:
        games = load_games(path)
        seasons.append((min(g.date for g in games).year, path, games))
    seasons.sort(key=lambda s: s[0])
    by_year = {y: g for y, _, g in seasons}
    prev_games = load_games(args.prev) if args.prev else None
    partitions = args.partition or list(DEFAULT_PARTITIONS)
    config = _sampler_config(args)
    out = _Output(args, "sweep")
    reports = []
    for year, path, games in seasons:
        index = TeamIndex.from_games(games)
        source = by_year.get(year - 1)
        if source is None and prev_games is not None and min(g.date for g in prev_games).year == year - 1:
            source = prev_games
        if source is not None:
            pidx = TeamIndex.from_games(source)
            hp = season_hyperprior(build_win_matrix(source, pidx, skip_ties=args.skip_ties),
                                   args.hyperprior_convention, index=pidx).hyperprior
        elif args.sigma_hat is not None:
            hp = hyperprior_from(args.sigma_hat, varsigma_hat_of(args.sigma_hat, len(index)),
                                 args.hyperprior_convention)
        else:
            raise UsageError(f"no previous season for {year}: pass --prev or --sigma-hat")
        rep = partition_sweep(games, partitions, hp, config, year=year, index=index,
                              skip_ties=args.skip_ties, cross_sd=args.cross_sd)
        out.table(f"sweep_{year}", write_sweep_table, rep)
        out.table(f"sweep_{year}_long", write_sweep_long, rep)
        reports.append(rep)
    result = {"seasons": [r.season for r in reports]}
    if len(reports) > 1:
        avg = average_sweeps(reports)
        out.table("sweep_average", write_sweep_table, avg)
        out.table("sweep_average_long", write_sweep_long, avg)
        reports_for_print = avg
    else:
        reports_for_print = reports[0]
    result["rows"] = [vars(r) for r in reports_for_print.rows]
    out.json("sweep", result)
    print("partition  err_bayes  err_mle  sd_bayes  sd_mle")
    for r in reports_for_print.rows:
        print(f"{r.partition:<9} {r.error_bayes:9.2f} {r.error_mle:8.2f} {r.sd_bayes:9.2f} {r.sd_mle:7.2f}"
              + ("  *fallback" if r.mle_fallback else ""))
    return result


def _read_strengths(path: str) -> tuple[list[str], np.ndarray]:
    codes, values = [], []
    for ln in _read_text(path):
        s = ln.strip()
        if not s or s.startswith("#") or s.lower().startswith("team,"):
            continue
        parts = s.split(",")
        try:
            codes.append(parts[0].strip())
            values.append(float(parts[1]))
        except (IndexError, ValueError):
            raise DataError(f"bad strengths row {s!r}; expected team,lambda") from None
    if len(codes) < 2:
        raise DataError("strengths file needs at least two teams")
    return codes, np.array(values)


def cmd_simulate(args) -> dict:
    if args.strengths:
        codes, lam = _read_strengths(args.strengths)
        index = TeamIndex(codes)
        lam = lam[[codes.index(c) for c in index.codes]]
    else:
        if args.sigma_star is None or args.sigma_star < 0:
            raise UsageError("simulate needs --strengths <file> or --sigma-star >= 0")
        if args.teams < 2:
            raise UsageError("--teams must be at least 2")
        width = len(str(args.teams))
        index = TeamIndex([f"T{k:0{width}d}" for k in range(1, args.teams + 1)])
        lam = np.random.default_rng([args.seed, 1]).normal(0.0, args.sigma_star, len(index))
    try:
        schedule = balanced_schedule(len(index), args.games)
    except DataError as exc:
        raise UsageError(str(exc)) from None
    games = simulate_games(lam, schedule, index, seed=args.seed, start=resolve_partition(args.start))
    out = _Output(args, "simulate")
    path = out.dir / "games.csv"
    with path.open("w", encoding="utf-8", newline="") as fh:
        write_game_log(games, fh, header_lines=out.header)
    out.written.append(str(path))
    out.table("truth", write_strengths_table, index, Strengths(lam, Normalization.RAW))
    print(f"wrote {len(games)} games for {len(index)} teams to {path}")
    return {"games": len(games), "teams": len(index)}


# ---------------------------------------------------------------------------
# argument parsing


def _read_config_file(path: str) -> dict[str, str]:
    values: dict[str, str] = {}
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"config file not found: {path}")
    for lineno, raw in enumerate(p.read_text(encoding="utf-8").splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{lineno}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        values[key.replace("-", "_")] = value
    return values


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="bayesbt", description="Hierarchical Bayesian Bradley-Terry ratings and forecasts")
    parser.add_argument("--version", action="version", version=f"bayesbt {__version__}")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    shared = _Parser(add_help=False)
    shared.add_argument("--config", help="key = value file mirroring these flags; flags win")
    shared.add_argument("--input", action="append", help="season game log (or win-matrix file for hyperprior/fit)")
    shared.add_argument("--prev", help="previous season's game log, used to build the hyperprior")
    shared.add_argument("--sigma-hat", type=float, help="build the hyperprior from this sigma_hat instead of --prev")
    shared.add_argument("--seed", type=int, default=0)
    shared.add_argument("--chains", type=int, default=4)
    shared.add_argument("--warmup", type=int, default=1000)
    shared.add_argument("--draws", type=int, default=1000)
    shared.add_argument("--algorithm", choices=["hmc", "rwm"], default="hmc")
    shared.add_argument("--partition", action="append", help="YYYYMMDD or label such as Apr15 (repeatable)")
    shared.add_argument("--out", help="output directory (created if absent)")
    shared.add_argument("--format", choices=["delimited", "structured"], default="delimited")
    shared.add_argument("--hyperprior-convention", choices=["moment", "squared"], default="moment")
    shared.add_argument("--map-mode", choices=[m.value for m in MapMode], default=MapMode.MLE_PLUGIN.value)
    shared.add_argument("--skip-ties", action="store_true", help="drop tied games with a warning")
    shared.add_argument("--cross-sd", action="store_true",
                        help="compute sd_mle as the spread of the Bayes errors around the MLE mean error")
    shared.add_argument("-v", "--verbose", action="store_true")

    for name, func, help_ in (
        ("hyperprior", cmd_hyperprior, "Gamma hyperprior on sigma from a season"),
        ("fit", cmd_fit, "MLE, MAP, posterior sampling and posterior-mean ranking"),
        ("predict", cmd_predict, "forecast the rest of a season from one partition date"),
        ("sweep", cmd_sweep, "forecast errors across partition dates and seasons"),
    ):
        p = sub.add_parser(name, parents=[shared], help=help_)
        p.set_defaults(func=func)

    sim = sub.add_parser("simulate", parents=[shared], help="synthetic season game log with known strengths")
    sim.add_argument("--strengths", help="team,lambda table of true log-strengths")
    sim.add_argument("--sigma-star", type=float, help="draw true log-strengths from Normal(0, sigma_star^2)")
    sim.add_argument("--teams", type=int, default=30)
    sim.add_argument("--games", type=int, default=162, help="games per team")
    sim.add_argument("--start", default="20170402", help="first game date (YYYYMMDD)")
    sim.set_defaults(func=cmd_simulate)
    return parser


_LIST_KEYS = {"input", "partition"}


def parse_args(argv: Sequence[str] | None) -> argparse.Namespace:
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "config", None):
        values = _read_config_file(args.config)
        sub = parser._subparsers._group_actions[0].choices[args.command]
        known = {a.dest: a for a in sub._actions}
        defaults = {}
        for key, raw in values.items():
            if key not in known or key in ("func", "help", "config"):
                raise UsageError(f"unknown config key {key!r}")
            action = known[key]
            if key in _LIST_KEYS:
                defaults[key] = [v.strip() for v in raw.split(",") if v.strip()]
            elif isinstance(action, argparse._StoreTrueAction):
                defaults[key] = raw.lower() in ("1", "true", "yes", "on")
            else:
                defaults[key] = action.type(raw) if action.type else raw
        sub.set_defaults(**defaults)
        args = parser.parse_args(argv)
    return args


def main(argv: Sequence[str] | None = None) -> int:
    try:
        args = parse_args(argv)
    except UsageError as exc:
        print(f"bayesbt: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    if args.command is None:
        build_parser().print_help(sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command != "simulate" and args.command != "sweep":
        if not args.input or len(args.input) != 1:
            print(f"bayesbt: usage error: {args.command} needs exactly one --input", file=sys.stderr)
            return EXIT_USAGE
        args.input = args.input[0]
    if args.command in ("fit", "predict", "sweep", "simulate") and not args.out:
        print(f"bayesbt: usage error: {args.command} needs --out", file=sys.stderr)
        return EXIT_USAGE
    try:
        args.func(args)
    except UsageError as exc:
        print(f"bayesbt: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, OSError) as exc:
        print(f"bayesbt: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (ConvergenceError, SamplerError, np.linalg.LinAlgError) as exc:
        print(f"bayesbt: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except ValueError as exc:
        print(f"bayesbt: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
