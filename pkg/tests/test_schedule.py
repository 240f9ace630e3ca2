import datetime as dt
import io

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bayesbt.schedule import (DataError, Game, ScheduleMatrix, TeamIndex, WinMatrix, balanced_schedule,
                              build_win_matrix, parse_date, parse_game_log, read_win_matrix, schedule_of,
                              simulate_games, simulate_season, split_by_date, write_game_log, write_win_matrix)

LOG = """\
date,home,away,home_score,away_score
20170402,NYA,TBA,3,7
20170402,SFN,ARI,5,6

# comment line
20170403,NYA,TBA,5,1
20170404,ARI,SFN,2,0
"""


def _games():
    return parse_game_log(io.StringIO(LOG)).games


class TestParsing:
    def test_parse_with_header_and_comments(self):
        parsed = parse_game_log(io.StringIO(LOG))
        assert parsed.errors == []
        assert len(parsed) == 4
        assert parsed.games[0] == Game(dt.date(2017, 4, 2), "NYA", "TBA", 3, 7)
        assert parsed.games[0].winner == "TBA"

    def test_headerless(self):
        parsed = parse_game_log(["20170402,NYA,TBA,3,7"])
        assert len(parsed) == 1

    def test_bad_records_are_reported_with_line_numbers(self):
        text = "20170402,NYA,TBA,3,7\n20170431,NYA,TBA,3,7\n20170402,NYA,TBA,x,7\n20170402,NYA,NYA,1,0\n1,2\n"
        parsed = parse_game_log(io.StringIO(text))
        assert len(parsed.games) == 1
        assert [e.line for e in parsed.errors] == [2, 3, 4, 5]
        with pytest.raises(DataError, match="line 2"):
            parsed.raise_for_errors()

    def test_parse_date(self):
        assert parse_date("20160930") == dt.date(2016, 9, 30)
        for bad in ("2016-09-30", "201609", "20161301"):
            with pytest.raises(DataError):
                parse_date(bad)

    def test_write_then_parse_round_trip(self):
        games = _games()
        buf = io.StringIO()
        write_game_log(games, buf, header_lines=["seed=1"])
        assert buf.getvalue().startswith("# seed=1\n")
        assert parse_game_log(io.StringIO(buf.getvalue())).games == games


class TestTeamIndex:
    def test_lexicographic(self):
        idx = TeamIndex.from_games(_games())
        assert idx.codes == ("ARI", "NYA", "SFN", "TBA")
        assert idx.index_of("SFN") == 2 and idx[2] == "SFN"
        assert "NYA" in idx and "BOS" not in idx

    def test_unknown_code(self):
        with pytest.raises(DataError, match="BOS"):
            TeamIndex(["NYA"]).index_of("BOS")

    def test_duplicates(self):
        with pytest.raises(DataError):
            TeamIndex(["A", "A"])


class TestMatrices:
    def test_two_team_win_matrix(self):
        games = [Game(dt.date(2017, 4, d), "A", "B", 2, 1) for d in (1, 2, 3)] + [Game(dt.date(2017, 4, 4), "B", "A", 5, 0)]
        idx = TeamIndex(["A", "B"])
        W = build_win_matrix(games, idx)
        np.testing.assert_array_equal(W.V, [[0, 3], [1, 0]])
        np.testing.assert_array_equal(W.n, [[0, 4], [4, 0]])
        np.testing.assert_array_equal(W.wins, [3, 1])
        assert W.total == 4

    def test_home_away_ignored(self):
        idx = TeamIndex(["A", "B"])
        a = build_win_matrix([Game(dt.date(2017, 4, 1), "A", "B", 2, 1)], idx)
        b = build_win_matrix([Game(dt.date(2017, 4, 1), "B", "A", 1, 2)], idx)
        np.testing.assert_array_equal(a.V, b.V)

    def test_ties(self, caplog):
        idx = TeamIndex(["A", "B"])
        games = [Game(dt.date(2017, 4, 1), "A", "B", 2, 2), Game(dt.date(2017, 4, 2), "A", "B", 3, 2)]
        with pytest.raises(DataError, match="tied"):
            build_win_matrix(games, idx)
        W = build_win_matrix(games, idx, skip_ties=True)
        assert W.total == 1
        assert "tied" in caplog.text

    def test_schedule_matches_win_matrix(self):
        games = _games()
        idx = TeamIndex.from_games(games)
        np.testing.assert_array_equal(schedule_of(games, idx).n, build_win_matrix(games, idx).n)

    def test_win_matrix_validation(self):
        with pytest.raises(DataError):
            WinMatrix(np.array([[1, 0], [0, 0]]))
        with pytest.raises(DataError):
            WinMatrix(np.array([[0, -1], [0, 0]]))
        with pytest.raises(DataError):
            ScheduleMatrix(np.array([[0, 1], [2, 0]]))

    def test_matrix_file_round_trip(self):
        games = _games()
        idx = TeamIndex.from_games(games)
        W = build_win_matrix(games, idx)
        buf = io.StringIO()
        write_win_matrix(idx, W, buf)
        idx2, W2 = read_win_matrix(io.StringIO(buf.getvalue()))
        assert idx2 == idx
        np.testing.assert_array_equal(W2.V, W.V)

    def test_matrix_file_reordered(self):
        idx, W = read_win_matrix(["2 ZZZ AAA", "0 5", "1 0"])
        assert idx.codes == ("AAA", "ZZZ")
        np.testing.assert_array_equal(W.V, [[0, 1], [5, 0]])

    @pytest.mark.parametrize("text", [["x,A,B", "0,1", "1,0"], ["2,A,B", "0,1"], ["3,A,B", "0,1", "1,0"]])
    def test_matrix_file_errors(self, text):
        with pytest.raises(DataError):
            read_win_matrix(text)


class TestSplit:
    @settings(max_examples=100, deadline=None)
    @given(st.integers(min_value=0, max_value=200))
    def test_partition_of_games(self, offset):
        games = simulate_games(np.zeros(6), balanced_schedule(6, 30), TeamIndex("ABCDEF"), seed=3)
        cutoff = dt.date(2017, 3, 25) + dt.timedelta(days=offset)
        train, test = split_by_date(games, cutoff)
        assert len(train) + len(test) == len(games)
        assert sorted(train + test) == sorted(games)
        assert all(g.date < cutoff for g in train)
        assert all(g.date >= cutoff for g in test)

    def test_cutoff_day_is_test(self):
        g = Game(dt.date(2017, 4, 15), "A", "B", 1, 0)
        train, test = split_by_date([g], dt.date(2017, 4, 15))
        assert train == [] and test == [g]


class TestSimulation:
    def test_balanced_schedule(self):
        s = balanced_schedule(30, 162)
        np.testing.assert_array_equal(s.games_per_team, 162)
        assert s.total == 2430
        assert balanced_schedule(4, 6).n[0, 1] == 2

    def test_infeasible_schedule(self):
        with pytest.raises(DataError):
            balanced_schedule(5, 3)

    def test_equal_strengths(self):
        n = np.array([[0, 10 ** 6], [10 ** 6, 0]])
        V = simulate_season(np.zeros(2), ScheduleMatrix(n), seed=1)
        assert abs(V.V[0, 1] / 1e6 - 0.5) < 0.002

    def test_log3_gap(self):
        n = np.array([[0, 10 ** 5], [10 ** 5, 0]])
        V = simulate_season(np.array([np.log(3), 0.0]), ScheduleMatrix(n), seed=2)
        se = np.sqrt(0.75 * 0.25 / 1e5)
        assert abs(V.V[0, 1] / 1e5 - 0.75) < 4 * se

    def test_win_rates_converge(self):
        lam = np.array([0.4, -0.1, 0.0, -0.3])
        n = np.full((4, 4), 10 ** 5)
        np.fill_diagonal(n, 0)
        V = simulate_season(lam, ScheduleMatrix(n), seed=11)
        p = 1 / (1 + np.exp(-(lam[:, None] - lam[None, :])))
        se = np.sqrt(p * (1 - p) / 1e5)
        off = ~np.eye(4, dtype=bool)
        assert np.all(np.abs(V.V[off] / n[off] - p[off]) < 4 * se[off])

    def test_deterministic(self):
        s = balanced_schedule(6, 20)
        lam = np.linspace(-0.5, 0.5, 6)
        np.testing.assert_array_equal(simulate_season(lam, s, 9).V, simulate_season(lam, s, 9).V)
        assert simulate_games(lam, s, TeamIndex("ABCDEF"), 9) == simulate_games(lam, s, TeamIndex("ABCDEF"), 9)

    def test_dimension_mismatch(self):
        with pytest.raises(DataError):
            simulate_season(np.zeros(3), balanced_schedule(4, 6), 0)

    def test_simulated_games_follow_schedule(self):
        s = balanced_schedule(6, 20)
        idx = TeamIndex("ABCDEF")
        games = simulate_games(np.zeros(6), s, idx, seed=4)
        np.testing.assert_array_equal(schedule_of(games, idx).n, s.n)
        assert not any(g.is_tie for g in games)
