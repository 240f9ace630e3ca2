import io
import math

import numpy as np
import pytest

from bayesbt.inference import HyperPrior, fit_mle
from bayesbt.sampler import (PosteriorDraws, SamplerConfig, SamplerError, _warmup_windows, ess, mcse, rank_table,
                             sample_posterior, split_rhat, summarize, write_draws, write_ranking, write_summary)
from bayesbt.schedule import DataError, TeamIndex, balanced_schedule, simulate_season

from oracles import grid_posterior

TIGHT = HyperPrior(100.0, 100.0)
FAST = SamplerConfig(chains=4, warmup=500, draws=1000, seed=7)


def _mcse_of_sd(x):
    # delta method on the squared deviations
    dev2 = (x - x.mean()) ** 2
    return mcse(dev2) / (2 * math.sqrt(dev2.mean()))


class TestConfig:
    def test_defaults(self):
        c = SamplerConfig()
        assert (c.chains, c.warmup, c.draws, c.target_accept) == (4, 1000, 1000, 0.8)

    @pytest.mark.parametrize("kwargs", [{"chains": 1}, {"draws": 0}, {"target_accept": 1.0},
                                        {"algorithm": "nuts"}, {"initial_step_size": 0.0}])
    def test_invalid(self, kwargs):
        with pytest.raises(ValueError):
            SamplerConfig(**kwargs)

    def test_warmup_windows(self):
        assert _warmup_windows(1000) == (75, [100, 150, 250, 450, 950])
        init, ends = _warmup_windows(500)
        assert ends[-1] <= 500 and all(a < b for a, b in zip(ends, ends[1:]))
        assert all(e <= 10 for e in _warmup_windows(10)[1])


class TestSmallInstances:
    def test_two_teams_match_quadrature(self):
        V = np.array([[0, 3], [1, 0]])
        d = sample_posterior(V, TIGHT, FAST)
        ref = grid_posterior(V, TIGHT.shape, TIGHT.rate)
        np.testing.assert_allclose(ref["diff"][0], 0.7493666, atol=1e-6)
        diff = d.lam[..., 0] - d.lam[..., 1]
        assert abs(diff.mean() - ref["diff"][0]) < 3 * mcse(diff)
        assert abs(d.sigma.mean() - ref["sigma"]) < 3 * mcse(d.sigma)

    def test_three_teams_match_quadrature(self):
        V = np.array([[0, 3, 2], [1, 0, 2], [1, 2, 0]])
        d = sample_posterior(V, TIGHT, FAST)
        ref = grid_posterior(V, TIGHT.shape, TIGHT.rate)
        np.testing.assert_allclose(ref["diff"], [0.73196029, -0.09958832], atol=1e-6)
        for k in range(2):
            diff = d.lam[..., k] - d.lam[..., k + 1]
            assert abs(diff.mean() - ref["diff"][k]) < 3 * mcse(diff)
        assert abs(d.sigma.mean() - ref["sigma"]) < 3 * mcse(d.sigma)

    def test_prior_recovery_with_no_games(self):
        hp = HyperPrior(20.0, 40.0)
        d = sample_posterior(np.zeros((3, 3)), hp, SamplerConfig(warmup=1000, draws=2000, seed=3))
        s = d.sigma
        assert np.all(s > 0)
        assert abs(s.mean() - hp.mean) < 3 * mcse(s)
        assert abs(s.std() - hp.sd) < 3 * _mcse_of_sd(s)
        lam = d.lam[..., 0]
        assert abs(lam.mean()) < 3 * mcse(lam)

    def test_symmetric_records(self):
        V = np.full((4, 4), 3)
        np.fill_diagonal(V, 0)
        d = sample_posterior(V, TIGHT, SamplerConfig(warmup=300, draws=600, seed=2))
        for k in range(4):
            x = d.lam[..., k]
            assert abs(x.mean()) < 4 * mcse(x)

    def test_random_walk_fallback(self):
        V = np.array([[0, 3], [1, 0]])
        d = sample_posterior(V, TIGHT, SamplerConfig(warmup=2000, draws=4000, seed=5, algorithm="rwm"))
        ref = grid_posterior(V, TIGHT.shape, TIGHT.rate)
        diff = d.lam[..., 0] - d.lam[..., 1]
        assert abs(diff.mean() - ref["diff"][0]) < 4 * mcse(diff)


class TestBehaviour:
    def test_deterministic(self):
        V = np.array([[0, 3, 2], [1, 0, 2], [1, 2, 0]])
        cfg = SamplerConfig(warmup=100, draws=100, seed=11)
        np.testing.assert_array_equal(sample_posterior(V, TIGHT, cfg).draws, sample_posterior(V, TIGHT, cfg).draws)
        other = sample_posterior(V, TIGHT, SamplerConfig(warmup=100, draws=100, seed=12))
        assert not np.array_equal(other.draws, sample_posterior(V, TIGHT, cfg).draws)

    def test_shapes(self):
        d = sample_posterior(np.array([[0, 3], [1, 0]]), TIGHT, SamplerConfig(chains=3, warmup=50, draws=120))
        assert d.draws.shape == (3, 120, 3)
        assert d.flat().shape == (360, 3)
        np.testing.assert_array_equal(d.chain_labels, np.repeat([0, 1, 2], 120))
        assert d.N == 2 and d.n_chains == 3 and d.n_draws == 120

    def test_exchangeability(self):
        lam = np.random.default_rng(4).normal(0, 0.4, 6)
        W = simulate_season(lam, balanced_schedule(6, 30), 4)
        perm = np.array([3, 0, 5, 1, 4, 2])
        cfg = SamplerConfig(warmup=500, draws=1000, seed=8)
        a = summarize(sample_posterior(W, TIGHT, cfg))
        b = summarize(sample_posterior(W.V[np.ix_(perm, perm)], TIGHT, cfg))
        se = np.hypot(a.mcse[:-1][perm], b.mcse[:-1])
        assert np.all(np.abs(b.lambda_mean - a.lambda_mean[perm]) < 4 * se)

    def test_init_validation(self):
        with pytest.raises(ValueError):
            sample_posterior(np.array([[0, 3], [1, 0]]), TIGHT, FAST, init=[0.0, 0.0, -1.0])

    def test_empty_matrix(self):
        with pytest.raises(DataError):
            sample_posterior(np.zeros((0, 0)), TIGHT, FAST)

    def test_divergence_abort(self):
        # no warmup and starting points scattered far into the tails: trajectories blow up
        cfg = SamplerConfig(warmup=0, draws=20, seed=1, initial_step_size=1e-4, init_jitter=2.0)
        with pytest.raises(SamplerError, match="divergent") as info:
            sample_posterior(np.array([[0, 3], [1, 0]]), TIGHT, cfg)
        assert sum(info.value.diagnostics["divergences"]) > 0

    def test_rhat_warning_attached(self):
        cfg = SamplerConfig(warmup=0, draws=20, seed=1, init_jitter=2.0, algorithm="rwm")
        d = sample_posterior(np.array([[0, 3], [1, 0]]), TIGHT, cfg)
        assert d.warnings and "R-hat" in d.warnings[0]

    def test_season_fit(self):
        lam = np.random.default_rng(9).normal(0, 0.27, 30)
        W = simulate_season(lam, balanced_schedule(30, 162), 9)
        d = sample_posterior(W, HyperPrior(60.0, 60 / 0.27), SamplerConfig(warmup=500, draws=500, seed=1))
        s = summarize(d)
        assert np.nanmax(s.rhat) < 1.01
        assert np.all(d.divergences == 0)
        assert np.all((d.accept_rate > 0.6) & (d.accept_rate < 0.99))
        # posterior means track the MLE, shrunk toward zero
        mle = fit_mle(W).values
        assert np.corrcoef(mle, s.lambda_mean)[0, 1] > 0.99
        assert np.std(s.lambda_mean) < np.std(mle)


class TestDiagnostics:
    def test_iid_normal_draws(self):
        x = np.random.default_rng(0).standard_normal((4, 2000))
        assert abs(split_rhat(x) - 1.0) < 0.01
        assert 0.7 * 8000 < ess(x) < 1.3 * 8000
        assert abs(x.mean()) < 4 / math.sqrt(ess(x))

    def test_ar1_ess(self):
        rng = np.random.default_rng(1)
        phi = 0.9
        x = np.zeros((4, 20000))
        e = rng.standard_normal(x.shape)
        for t in range(1, x.shape[1]):
            x[:, t] = phi * x[:, t - 1] + e[:, t]
        expected = x.size * (1 - phi) / (1 + phi)
        assert 0.8 * expected < ess(x) < 1.2 * expected

    def test_rhat_detects_separated_chains(self):
        x = np.random.default_rng(2).standard_normal((4, 500)) + np.array([0, 0, 0, 3])[:, None]
        assert split_rhat(x) > 1.1

    def test_rhat_detects_drift(self):
        x = np.random.default_rng(3).standard_normal((4, 500)) + np.linspace(0, 4, 500)
        assert split_rhat(x) > 1.1

    def test_constant_draws(self):
        x = np.ones((4, 200, 3))
        s = summarize(x)
        np.testing.assert_array_equal(s.sd, 0.0)
        assert not s.rhat_defined.any()
        np.testing.assert_array_equal(s.mcse, 0.0)

    def test_summary_values(self):
        x = np.random.default_rng(5).normal(2.0, 3.0, (4, 500, 2))
        s = summarize(x)
        flat = x.reshape(-1, 2)
        np.testing.assert_allclose(s.mean, flat.mean(axis=0))
        np.testing.assert_allclose(s.q95, np.quantile(flat, 0.95, axis=0))
        assert np.all(np.abs(s.mean - 2.0) < 4 * s.mcse)

    def test_summary_requirements(self):
        with pytest.raises(ValueError, match="2 chains"):
            summarize(np.zeros((1, 200, 2)))
        with pytest.raises(ValueError):
            summarize(np.zeros((4, 10, 2)))


class TestRanking:
    def _summary(self, means):
        x = np.tile(np.asarray(means + [0.3]), (2, 100, 1)) + 0 * np.arange(100)[None, :, None]
        return summarize(x)

    def test_order_and_ties(self):
        s = self._summary([0.1, 0.3, 0.1, -0.2])
        rows = rank_table(s, TeamIndex(["DDD", "CCC", "AAA", "BBB"]), [80, 90, 81, 70])
        # index is lexicographic: AAA, BBB, CCC, DDD
        assert [r.team for r in rows] == ["BBB", "AAA", "CCC", "DDD"]
        assert [r.rank for r in rows] == [1, 2, 3, 4]
        assert rows[0].wins == 90

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            rank_table(self._summary([0.1, 0.2]), TeamIndex(["A", "B", "C"]), [1, 2, 3])

    def test_writers(self):
        d = sample_posterior(np.array([[0, 3], [1, 0]]), TIGHT, SamplerConfig(warmup=50, draws=100, seed=0))
        idx = TeamIndex(["AAA", "BBB"])
        s = summarize(d)
        for writer, args, head in ((write_draws, (d, idx), "chain,iteration,AAA,BBB,sigma"),
                                   (write_summary, (s, idx), "parameter,mean,sd,q05,q25,q75,q95,rhat,ess,mcse"),
                                   (write_ranking, (rank_table(s, idx, [3, 1]),), "rank,team,posterior_mean,wins")):
            buf = io.StringIO()
            writer(*args, buf, header_lines=["seed=0"])
            lines = buf.getvalue().splitlines()
            assert lines[0] == "# seed=0"
            assert lines[1] == head
