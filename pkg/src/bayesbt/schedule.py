"""Game logs, win/schedule matrices, date partitions and synthetic seasons."""

from __future__ import annotations

import datetime as dt
import logging
import re
from dataclasses import dataclass, field
from typing import Iterable, Sequence, TextIO

import numpy as np
from scipy.special import expit

logger = logging.getLogger(__name__)

__all__ = [
    "DataError",
    "Game",
    "RecordError",
    "ParsedLog",
    "TeamIndex",
    "WinMatrix",
    "ScheduleMatrix",
    "parse_game_log",
    "parse_date",
    "build_win_matrix",
    "schedule_of",
    "split_by_date",
    "simulate_season",
    "simulate_games",
    "balanced_schedule",
    "read_win_matrix",
    "write_win_matrix",
    "write_game_log",
]


class DataError(ValueError):
    """Input data that cannot be turned into a valid season."""


@dataclass(frozen=True, order=True)
class Game:
    date: dt.date
    home: str
    away: str
    home_score: int
    away_score: int

    def __post_init__(self):
        if self.home == self.away:
            raise DataError(f"home equals away ({self.home})")
        if self.home_score < 0 or self.away_score < 0:
            raise DataError("scores must be nonnegative")

    @property
    def is_tie(self) -> bool:
        return self.home_score == self.away_score

    @property
    def winner(self) -> str:
        return self.home if self.home_score > self.away_score else self.away

    @property
    def loser(self) -> str:
        return self.away if self.home_score > self.away_score else self.home


@dataclass(frozen=True)
class RecordError:
    line: int
    message: str
    text: str

    def __str__(self):
        return f"line {self.line}: {self.message}: {self.text!r}"


@dataclass
class ParsedLog:
    """Games in file order plus any per-record problems found while parsing."""

    games: list[Game] = field(default_factory=list)
    errors: list[RecordError] = field(default_factory=list)

    def __iter__(self):
        return iter(self.games)

    def __len__(self):
        return len(self.games)

    def raise_for_errors(self) -> None:
        if self.errors:
            shown = "\n".join(str(e) for e in self.errors[:20])
            more = f"\n... and {len(self.errors) - 20} more" if len(self.errors) > 20 else ""
            raise DataError(f"{len(self.errors)} malformed record(s) in game log:\n{shown}{more}")


_DATE_RE = re.compile(r"^\d{8}$")


def parse_date(text: str) -> dt.date:
    """Parse an 8-digit YYYYMMDD date."""
    text = text.strip()
    if not _DATE_RE.match(text):
        raise DataError(f"bad date {text!r}, expected YYYYMMDD")
    try:
        return dt.date(int(text[:4]), int(text[4:6]), int(text[6:]))
    except ValueError as exc:
        raise DataError(f"bad date {text!r}: {exc}") from None


def parse_game_log(stream: TextIO | Iterable[str]) -> ParsedLog:
    """Read ``date,home,away,home_score,away_score`` records.

    Blank lines and lines starting with ``#`` are ignored. A first record
    whose date field is not an 8-digit date is treated as a header.
    Malformed records are collected in ``ParsedLog.errors`` with their
    1-based line numbers instead of aborting the parse.
    """
    result = ParsedLog()
    seen_record = False
    for lineno, raw in enumerate(stream, start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        fields = [f.strip() for f in line.split(",")]
        if not seen_record:
            seen_record = True
            if not _DATE_RE.match(fields[0]):
                continue  # header
        if len(fields) != 5:
            result.errors.append(RecordError(lineno, f"expected 5 fields, got {len(fields)}", line))
            continue
        date_s, home, away, hs, as_ = fields
        try:
            date = parse_date(date_s)
        except DataError as exc:
            result.errors.append(RecordError(lineno, str(exc), line))
            continue
        try:
            home_score, away_score = int(hs), int(as_)
        except ValueError:
            result.errors.append(RecordError(lineno, "unparseable score", line))
            continue
        if not home or not away:
            result.errors.append(RecordError(lineno, "empty team code", line))
            continue
        try:
            result.games.append(Game(date, home, away, home_score, away_score))
        except DataError as exc:
            result.errors.append(RecordError(lineno, str(exc), line))
    return result


class TeamIndex:
    """Bidirectional mapping between team codes and 0..N-1, in lexicographic order."""

    def __init__(self, codes: Iterable[str]):
        codes = list(codes)
        if len(set(codes)) != len(codes):
            raise DataError("duplicate team codes in index")
        self._codes = tuple(sorted(codes))
        self._pos = {c: i for i, c in enumerate(self._codes)}

    @classmethod
    def from_games(cls, games: Iterable[Game]) -> "TeamIndex":
        codes = set()
        for g in games:
            codes.add(g.home)
            codes.add(g.away)
        return cls(codes)

    @property
    def codes(self) -> tuple[str, ...]:
        return self._codes

    def __len__(self):
        return len(self._codes)

    def __iter__(self):
        return iter(self._codes)

    def __contains__(self, code):
        return code in self._pos

    def __getitem__(self, i: int) -> str:
        return self._codes[i]

    def __eq__(self, other):
        return isinstance(other, TeamIndex) and other._codes == self._codes

    def __repr__(self):
        return f"TeamIndex({list(self._codes)!r})"

    def index_of(self, code: str) -> int:
        try:
            return self._pos[code]
        except KeyError:
            raise DataError(f"unknown team code {code!r}") from None


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=np.int64, copy=True)
    a.setflags(write=False)
    return a


class WinMatrix:
    """Head-to-head wins: ``V[i, j]`` is the number of times i beat j."""

    def __init__(self, V):
        V = np.asarray(V)
        if V.ndim != 2 or V.shape[0] != V.shape[1]:
            raise DataError(f"win matrix must be square, got shape {V.shape}")
        if np.any(V < 0) or np.any(V != np.round(V)):
            raise DataError("win matrix entries must be nonnegative integers")
        if np.any(np.diag(V) != 0):
            raise DataError("win matrix diagonal must be zero")
        self.V = _frozen(V)
        self.n = _frozen(self.V + self.V.T)

    @property
    def N(self) -> int:
        return self.V.shape[0]

    @property
    def wins(self) -> np.ndarray:
        return self.V.sum(axis=1)

    @property
    def losses(self) -> np.ndarray:
        return self.V.sum(axis=0)

    @property
    def total(self) -> int:
        return int(self.V.sum())

    def __eq__(self, other):
        return isinstance(other, WinMatrix) and np.array_equal(self.V, other.V)

    def __repr__(self):
        return f"WinMatrix(N={self.N}, games={self.total})"


class ScheduleMatrix:
    """Symmetric game counts ``n[i, j]`` between each pair, winner ignored."""

    def __init__(self, n):
        n = np.asarray(n)
        if n.ndim != 2 or n.shape[0] != n.shape[1]:
            raise DataError(f"schedule must be square, got shape {n.shape}")
        if np.any(n < 0) or np.any(n != np.round(n)):
            raise DataError("schedule entries must be nonnegative integers")
        if not np.array_equal(n, n.T):
            raise DataError("schedule must be symmetric")
        if np.any(np.diag(n) != 0):
            raise DataError("schedule diagonal must be zero")
        self.n = _frozen(n)

    @property
    def N(self) -> int:
        return self.n.shape[0]

    @property
    def games_per_team(self) -> np.ndarray:
        return self.n.sum(axis=1)

    @property
    def total(self) -> int:
        return int(self.n.sum() // 2)

    def __repr__(self):
        return f"ScheduleMatrix(N={self.N}, games={self.total})"


def build_win_matrix(games: Iterable[Game], index: TeamIndex, *, skip_ties: bool = False) -> WinMatrix:
    """Count wins of i over j, ignoring home/away.

    Ties raise ``DataError`` unless ``skip_ties`` is set, in which case they are
    dropped with a warning.
    """
    N = len(index)
    V = np.zeros((N, N), dtype=np.int64)
    skipped = 0
    for g in games:
        w = index.index_of(g.winner)
        l = index.index_of(g.loser)
        if g.is_tie:
            if not skip_ties:
                raise DataError(f"tied game {g.date:%Y%m%d} {g.home}-{g.away} {g.home_score}-{g.away_score}")
            skipped += 1
            continue
        V[w, l] += 1
    if skipped:
        logger.warning("skipped %d tied game(s)", skipped)
    return WinMatrix(V)


def schedule_of(games: Iterable[Game], index: TeamIndex) -> ScheduleMatrix:
    N = len(index)
    n = np.zeros((N, N), dtype=np.int64)
    for g in games:
        i = index.index_of(g.home)
        j = index.index_of(g.away)
        n[i, j] += 1
        n[j, i] += 1
    return ScheduleMatrix(n)


def split_by_date(games: Sequence[Game], cutoff: dt.date) -> tuple[list[Game], list[Game]]:
    """Games strictly before ``cutoff`` train; games on or after it test."""
    train = [g for g in games if g.date < cutoff]
    test = [g for g in games if g.date >= cutoff]
    return train, test


def _lambda_array(lam) -> np.ndarray:
    values = getattr(lam, "values", lam)
    return np.asarray(values, dtype=float)


def simulate_season(lam, schedule: ScheduleMatrix, seed: int) -> WinMatrix:
    """Draw ``V[i, j] ~ Binomial(n[i, j], logistic(lam_i - lam_j))`` for i < j."""
    lam = _lambda_array(lam)
    n = schedule.n if isinstance(schedule, ScheduleMatrix) else ScheduleMatrix(schedule).n
    if lam.shape != (n.shape[0],):
        raise DataError(f"strengths have shape {lam.shape}, schedule is {n.shape}")
    rng = np.random.default_rng(seed)
    iu, ju = np.triu_indices(n.shape[0], k=1)
    p = expit(lam[iu] - lam[ju])
    wins = rng.binomial(n[iu, ju], p)
    V = np.zeros_like(n)
    V[iu, ju] = wins
    V[ju, iu] = n[iu, ju] - wins
    return WinMatrix(V)


def balanced_schedule(n_teams: int, games_per_team: int) -> ScheduleMatrix:
    """Near-round-robin schedule where every team plays exactly ``games_per_team``.

    Each pair meets ``games_per_team // (N - 1)`` times; the remaining games
    are spread over a circulant graph so every team gets the same number of
    extra opponents.
    """
    N = n_teams
    if N < 2:
        raise DataError("need at least two teams")
    base, extra = divmod(games_per_team, N - 1)
    if (N * extra) % 2:
        raise DataError(f"{N} teams cannot each play {games_per_team} games")
    n = np.full((N, N), base, dtype=np.int64)
    np.fill_diagonal(n, 0)
    offsets = list(range(1, extra // 2 + 1))
    idx = np.arange(N)
    for k in offsets:
        n[idx, (idx + k) % N] += 1
        n[(idx + k) % N, idx] += 1
    if extra % 2:
        n[idx, (idx + N // 2) % N] += 1
    return ScheduleMatrix(n)


def simulate_games(lam, schedule: ScheduleMatrix, index: TeamIndex, seed: int, *,
                   start: dt.date = dt.date(2017, 4, 2), games_per_day: int | None = None) -> list[Game]:
    """Game-level synthetic season with dates, for partition studies.

    Every scheduled pairing becomes one game on a shuffled calendar; home team
    alternates between the pair. Scores are 1-0 style placeholders for the
    winner (home/away and margins carry no information in the model).
    """
    lam = _lambda_array(lam)
    n = schedule.n
    N = n.shape[0]
    if lam.shape != (N,) or len(index) != N:
        raise DataError("strengths, schedule and index disagree on team count")
    rng = np.random.default_rng(seed)
    pairs = []
    for i in range(N):
        for j in range(i + 1, N):
            for k in range(int(n[i, j])):
                pairs.append((i, j) if k % 2 == 0 else (j, i))
    pairs = np.array(pairs, dtype=np.int64).reshape(-1, 2)
    order = rng.permutation(len(pairs))
    pairs = pairs[order]
    home_wins = rng.uniform(size=len(pairs)) < expit(lam[pairs[:, 0]] - lam[pairs[:, 1]])
    if games_per_day is None:
        games_per_day = max(1, N // 2)
    games = []
    for g, ((h, a), hw) in enumerate(zip(pairs, home_wins)):
        date = start + dt.timedelta(days=g // games_per_day)
        score = (1, 0) if hw else (0, 1)
        games.append(Game(date, index[h], index[a], *score))
    return games


def write_game_log(games: Iterable[Game], stream: TextIO, *, header_lines: Sequence[str] = ()) -> None:
    for line in header_lines:
        stream.write(f"# {line}\n")
    stream.write("date,home,away,home_score,away_score\n")
    for g in games:
        stream.write(f"{g.date:%Y%m%d},{g.home},{g.away},{g.home_score},{g.away_score}\n")


def read_win_matrix(stream: TextIO | Iterable[str]) -> tuple[TeamIndex, WinMatrix]:
    """Read a precomputed matrix: ``N,code1,...,codeN`` then N rows of N integers.

    Fields may be separated by commas or whitespace. Rows and columns are
    reordered to the lexicographic team order.
    """
    lines = [ln.strip() for ln in stream if ln.strip() and not ln.lstrip().startswith("#")]
    if not lines:
        raise DataError("empty win-matrix file")
    head = re.split(r"[,\s]+", lines[0])
    try:
        N = int(head[0])
    except ValueError:
        raise DataError(f"first field must be the team count, got {head[0]!r}") from None
    codes = head[1:]
    if len(codes) != N:
        raise DataError(f"header declares {N} teams but lists {len(codes)} codes")
    if len(lines) - 1 != N:
        raise DataError(f"expected {N} matrix rows, got {len(lines) - 1}")
    try:
        V = np.array([[int(x) for x in re.split(r"[,\s]+", row)] for row in lines[1:]], dtype=np.int64)
    except ValueError as exc:
        raise DataError(f"non-integer matrix entry: {exc}") from None
    if V.shape != (N, N):
        raise DataError(f"matrix rows must have {N} entries")
    index = TeamIndex(codes)
    perm = [codes.index(c) for c in index.codes]
    return index, WinMatrix(V[np.ix_(perm, perm)])


def write_win_matrix(index: TeamIndex, V: WinMatrix, stream: TextIO) -> None:
    stream.write(",".join([str(len(index)), *index.codes]) + "\n")
    for row in V.V:
        stream.write(",".join(str(int(x)) for x in row) + "\n")
