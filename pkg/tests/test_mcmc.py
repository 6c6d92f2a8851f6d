"""Metropolis-Hastings sweeps: balance, stationarity, adaptation."""

import numpy as np
import pytest
from scipy import stats as spstats

from stochprox import lmm, rng as rngmod
from stochprox.mcmc import (
    ChainSampler,
    McmcState,
    adapt_step,
    mh_sweep,
)
from stochprox.model_api import Model, StatLayout


class StandardNormalTarget(Model):
    """One subject, one latent coordinate, flat likelihood: the chain
    targets the standard normal prior exactly."""

    dim_theta = 1
    dim_stat = 1
    stat_layout = StatLayout.build([("z", 1)])

    def phi(self, theta):
        return 0.0

    def grad_phi(self, theta):
        return np.zeros(1)

    def psi(self, theta):
        return np.zeros(1)

    def Psi(self, theta):
        return np.zeros((1, 1))

    def stat(self, z):
        return np.array([float(z[0, 0])])

    def init_latent(self, theta):
        return np.zeros((1, 1))

    def latent_loglik(self, theta, z):
        return np.zeros(z.shape[0])

    def latent_logprior(self, theta, z):
        return -0.5 * np.sum(z**2, axis=1)

    def prior_proposal(self, theta, eps):
        return eps.copy()


class TestAcceptanceRule:
    def test_identical_proposal_always_accepted(self):
        model = StandardNormalTarget()
        theta = np.zeros(1)
        state = McmcState.initial(np.array([[0.7]]), rw_sd=0.0, frozen=True)
        # rw_sd = 0 makes every random-walk proposal the current point
        accept_before = state.accepts_rw.copy()
        for seed in range(50):
            mh_sweep(model, theta, state, np.random.default_rng(seed))
        assert np.all(state.accepts_rw - accept_before == 50)

    def test_two_state_detailed_balance(self):
        """The acceptance rule min(1, r) satisfies pi_i q_ij a_ij symmetric
        on a discrete two-state target, computed exactly from the rule."""
        pi = np.array([0.3, 0.7])
        # symmetric proposal: always propose the other state
        a01 = min(1.0, pi[1] / pi[0])
        a10 = min(1.0, pi[0] / pi[1])
        assert pi[0] * a01 == pytest.approx(pi[1] * a10, rel=1e-15)
        # the same rule as implemented: accept iff log u < log ratio
        rng = np.random.default_rng(0)
        u = rng.random(200_000)
        emp01 = np.mean(np.log(u) < np.log(pi[1] / pi[0]))
        emp10 = np.mean(np.log(u) < np.log(pi[0] / pi[1]))
        assert emp01 == pytest.approx(a01, abs=3e-3)
        assert emp10 == pytest.approx(a10, abs=3e-3)

    def test_standard_normal_moments(self):
        model = StandardNormalTarget()
        theta = np.zeros(1)
        state = McmcState.initial(np.array([[2.0]]), rw_sd=1.5, frozen=True)
        gen = np.random.default_rng(42)
        n = 200_000
        vals = np.empty(n)
        for i in range(n):
            _, draw = mh_sweep(model, theta, state, gen)
            vals[i] = draw[0, 0]
        vals = vals[2000:]
        # autocorrelated chain: allow a generous effective-sample factor
        se_mean = np.sqrt(10.0 / vals.size)
        assert abs(vals.mean()) < 3 * se_mean
        assert abs(vals.var() - 1.0) < 3 * np.sqrt(20.0 / vals.size)


class TestToyPosterior:
    @pytest.fixture(scope="class")
    def setup(self):
        ds, theta_star = lmm.simulate_lmm(10, 8, 4, seed=31)
        model = lmm.LmmModel(ds)
        return model, theta_star

    def _adapted_sampler(self, model, theta, seed):
        """Adapt the walk scales first, then freeze for measurement."""
        sampler = ChainSampler(
            model, seed=seed, z0=model.init_latent(theta), rw_sd=1.0
        )
        sampler.draw_batch(theta, 4000, iteration=0)
        sampler.state.frozen = True
        return sampler

    def test_chain_moments_match_exact_posterior(self, setup):
        model, theta = setup
        sampler = self._adapted_sampler(model, theta, seed=7)
        draws, _ = sampler.draw_batch(theta, 20_000, iteration=1)
        draws = draws[1000:]
        means, covs = model.posterior(theta)
        emp = draws.mean(axis=0)
        # allow a generous integrated autocorrelation time
        se = np.sqrt(np.einsum("kaa->ka", covs) * 40.0 / draws.shape[0])
        assert np.all(np.abs(emp - means) < 4 * se)

    def test_kolmogorov_smirnov_per_coordinate(self, setup):
        model, theta = setup
        sampler = self._adapted_sampler(model, theta, seed=11)
        draws, _ = sampler.draw_batch(theta, 51_000, iteration=1)
        thinned = draws[1000::5]  # 10^4 thinned draws
        means, covs = model.posterior(theta)
        for k in (0, 3, 7):
            for c in (0, 1):
                zs = (thinned[:, k, c] - means[k, c]) / np.sqrt(covs[k, c, c])
                p = spstats.kstest(zs, "norm").pvalue
                assert p > 0.01, (k, c, p)

    def test_chain_state_persists_across_batches(self, setup):
        model, theta = setup
        sampler = ChainSampler(
            model, seed=3, z0=model.init_latent(theta), rw_sd=0.5
        )
        draws1, _ = sampler.draw_batch(theta, 5, iteration=0)
        start = sampler.state.z.copy()
        draws2, _ = sampler.draw_batch(theta, 5, iteration=1)
        # the second batch continues from the last draw of the first
        assert np.array_equal(draws1[-1], start)
        assert not np.array_equal(draws1[-1], draws2[-1])


class TestAdaptation:
    def test_rate_at_target_keeps_sd(self):
        state = McmcState.initial(np.zeros((3, 2)), rw_sd=0.4)
        before = state.rw_sd.copy()
        adapt_step(state, np.full((3, 2), state.target_rate))
        assert np.allclose(state.rw_sd, before)

    def test_all_accepted_grows_sd(self):
        state = McmcState.initial(np.zeros((2, 2)), rw_sd=0.4)
        adapt_step(state, np.ones((2, 2)))
        assert np.all(state.rw_sd > 0.4)

    def test_none_accepted_shrinks_sd(self):
        state = McmcState.initial(np.zeros((2, 2)), rw_sd=0.4)
        adapt_step(state, np.zeros((2, 2)))
        assert np.all(state.rw_sd < 0.4)

    def test_sd_clamped(self):
        state = McmcState.initial(np.zeros((1, 1)), rw_sd=1e-6)
        for _ in range(200):
            adapt_step(state, np.zeros((1, 1)))
        assert state.rw_sd[0, 0] >= 1e-6
        state = McmcState.initial(np.zeros((1, 1)), rw_sd=1e3)
        for _ in range(200):
            adapt_step(state, np.ones((1, 1)))
        assert state.rw_sd[0, 0] <= 1e3

    def test_long_run_acceptance_near_target(self):
        ds, theta_star = lmm.simulate_lmm(10, 8, 4, seed=31)
        model = lmm.LmmModel(ds)
        sampler = ChainSampler(
            model, seed=5, z0=model.init_latent(theta_star), rw_sd=5.0
        )
        sampler.draw_batch(theta_star, 6000, iteration=0)
        st = sampler.state
        window = 2000
        before = st.accepts_rw.copy()
        sampler.draw_batch(theta_star, window, iteration=1)
        tail_rate = (st.accepts_rw - before) / window
        assert np.all(np.abs(tail_rate - st.target_rate) < 0.1)


class TestDeterminism:
    def test_same_seed_same_chain(self):
        ds, theta_star = lmm.simulate_lmm(6, 8, 3, seed=13)
        model = lmm.LmmModel(ds)
        outs = []
        for _ in range(2):
            sampler = ChainSampler(
                model, seed=21, z0=model.init_latent(theta_star), rw_sd=0.5
            )
            draws, stats = sampler.draw_batch(theta_star, 40, iteration=0)
            outs.append((draws.copy(), stats.copy()))
        assert np.array_equal(outs[0][0], outs[1][0])
        assert np.array_equal(outs[0][1], outs[1][1])
