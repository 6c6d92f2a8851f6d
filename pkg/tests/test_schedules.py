"""Schedule sequences, the admissibility tail sum, and adaptive steps."""

import numpy as np
import pytest

from stochprox.schedules import (
    AdaptiveGammaState,
    ScheduleSpec,
    adaptive_gamma_update,
    batch_at,
    compute_D,
    delta_at,
    delta_identity_check,
    gamma_at,
    gamma_from_hessian,
    validate_H5,
)


class TestSequences:
    def test_gamma_reference_values(self):
        spec = ScheduleSpec(gamma_star=0.009, alpha=0.75, n_alpha=0)
        assert gamma_at(spec, 1) == pytest.approx(0.009)
        spec2 = ScheduleSpec(gamma_star=1.0, alpha=0.0)
        for n in (0, 5, 1000):
            assert gamma_at(spec2, n) == 1.0
        spec3 = ScheduleSpec(gamma_star=0.004, alpha=0.9, n_alpha=0)
        assert gamma_at(spec3, 100) == pytest.approx(0.004 * 100 ** -0.9)

    def test_delta_reference_values(self):
        spec = ScheduleSpec(delta_star=0.5, beta=0.499, n_beta=9500)
        assert delta_at(spec, 9500) == 0.5
        assert delta_at(spec, 9501) == pytest.approx(0.5)
        spec2 = ScheduleSpec(delta_star=1.0, beta=0.0)
        for n in (0, 3, 10**6):
            assert delta_at(spec2, n) == 1.0
        spec3 = ScheduleSpec(delta_star=0.5, beta=0.5, n_beta=0)
        assert delta_at(spec3, 4) == pytest.approx(0.25)

    def test_warmup_plateau(self):
        spec = ScheduleSpec(gamma_star=0.2, alpha=0.9, n_alpha=10)
        assert all(gamma_at(spec, n) == 0.2 for n in range(11))
        assert gamma_at(spec, 11) == pytest.approx(0.2)
        assert gamma_at(spec, 20) == pytest.approx(0.2 * 10 ** -0.9)

    def test_monotone_nonincreasing(self):
        spec = ScheduleSpec(
            gamma_star=0.6, alpha=0.8, n_alpha=7, delta_star=0.9, beta=0.3, n_beta=2
        )
        g = [gamma_at(spec, n) for n in range(200)]
        d = [delta_at(spec, n) for n in range(200)]
        assert all(a >= b for a, b in zip(g, g[1:]))
        assert all(a >= b for a, b in zip(d, d[1:]))

    def test_batch_sizes(self):
        spec = ScheduleSpec(m_star=60, c=0.0)
        assert batch_at(spec, 0) == 60
        assert batch_at(spec, 999) == 60
        growing = ScheduleSpec(m_star=3, c=1.0)
        assert batch_at(growing, 0) == 3
        assert batch_at(growing, 9) == 30
        frac = ScheduleSpec(m_star=1, c=0.5)
        assert batch_at(frac, 1) == 2  # ceil(sqrt(2))
        assert all(batch_at(frac, n) >= 1 for n in range(50))


class TestComputeD:
    def test_constant_half_gives_two(self):
        spec = ScheduleSpec(delta_star=0.5, beta=0.0)
        val, bound = compute_D(spec, 1, horizon=400)
        assert val == pytest.approx(2.0, abs=1e-10)
        assert bound < 1e-10

    def test_constant_one(self):
        # every nonempty product vanishes; only the empty product remains
        spec = ScheduleSpec(delta_star=1.0, beta=0.0)
        val, bound = compute_D(spec, 3, horizon=10)
        assert val == 1.0
        assert bound == 0.0

    def test_polynomial_vs_extended_summation(self):
        spec = ScheduleSpec(delta_star=0.5, beta=0.4, n_beta=0)
        n = 1000
        val, bound = compute_D(spec, n, horizon=20000)
        # brute force at a 10x horizon
        total = 1.0
        prod = 1.0
        for k in range(n, 200001):
            prod *= 1.0 - delta_at(spec, k - 1)
            total += prod
        assert val == pytest.approx(total, abs=max(bound, 1e-10))

    def test_certification_failure_reports_horizon(self):
        spec = ScheduleSpec(delta_star=0.5, beta=0.9, n_beta=0)
        with pytest.raises(ValueError, match="horizon"):
            compute_D(spec, 1, horizon=5)

    def test_delta_times_D_approaches_one(self):
        # late-schedule product delta_k * D_k tends to 1 for beta in (0,1)
        spec = ScheduleSpec(delta_star=0.5, beta=0.4, n_beta=0)
        k = 10**4
        val, _ = compute_D(spec, k, horizon=3 * 10**5)
        assert delta_at(spec, k - 1) * val == pytest.approx(1.0, abs=0.05)


class TestDeltaIdentity:
    def test_constant(self):
        spec = ScheduleSpec(delta_star=0.5, beta=0.0)
        assert delta_identity_check(spec, 10) < 1e-12

    def test_polynomial(self):
        spec = ScheduleSpec(delta_star=0.5, beta=0.4, n_beta=0)
        assert delta_identity_check(spec, 500) < 1e-10

    def test_delta_one(self):
        spec = ScheduleSpec(delta_star=1.0, beta=0.0)
        assert delta_identity_check(spec, 5) < 1e-15

    def test_random_schedules(self):
        rng = np.random.default_rng(3)
        for _ in range(100):
            spec = ScheduleSpec(
                delta_star=rng.uniform(0.05, 1.0),
                beta=rng.uniform(0.0, 0.99),
                n_beta=int(rng.integers(0, 50)),
            )
            n = int(rng.integers(2, 1000))
            assert delta_identity_check(spec, n) < 1e-10


class TestValidateH5:
    def test_reference_pairs(self):
        assert validate_H5(ScheduleSpec(alpha=0.75, beta=0.5, c=0.0)).passed
        rep = validate_H5(ScheduleSpec(alpha=0.4, beta=0.2))
        assert not rep.passed
        assert not rep.checks["sum_gamma_sq_converges"]
        rep_b1 = validate_H5(ScheduleSpec(alpha=0.75, beta=1.0))
        assert not rep_b1.passed
        assert not rep_b1.checks["beta_lt_one"]
        assert any("infinite" in n for n in rep_b1.notes)

    def test_long_run_experiment_pairs(self):
        verdicts = {
            (0.9, 0.4): True,
            (0.6, 0.1): True,
            (0.5, 0.5): False,
        }
        for (a, b), expect in verdicts.items():
            got = validate_H5(ScheduleSpec(alpha=a, beta=b)).passed
            assert got == expect, (a, b)

    def test_adaptive_rejected(self):
        with pytest.raises(ValueError):
            validate_H5(ScheduleSpec(adaptive=True))

    def test_flattening_reported(self):
        rep = validate_H5(ScheduleSpec(alpha=0.75, beta=0.5), n_terms=500)
        assert set(rep.flattening) == {
            "gamma_sq",
            "gamma_var_times_D",
            "gamma_sq_delta_sq_D_sq_over_m",
        }
        assert all(0.0 <= v <= 1.0 for v in rep.flattening.values())


class TestAdaptiveGamma:
    def test_constant_contribution_fixed_point(self):
        spec = ScheduleSpec(alpha=0.75, n0=100)
        state = AdaptiveGammaState()
        h = np.array([2.0, 4.0])
        for n in range(20):
            state, gamma = adaptive_gamma_update(state, h, 0.5, spec)
            assert np.allclose(state.hessian_diag, h)
        assert np.allclose(gamma, 1.0 / h)  # still in the warmup regime

    def test_decay_formula(self):
        spec = ScheduleSpec(alpha=0.75, n0=100)
        gamma = gamma_from_hessian(np.array([2.0]), 116, spec)
        assert gamma[0] == pytest.approx(0.0625)

    def test_clamping(self):
        spec = ScheduleSpec(alpha=0.75, n0=10)
        state = AdaptiveGammaState()
        with pytest.warns(UserWarning):
            state, gamma = adaptive_gamma_update(
                state, np.zeros(3), 0.5, spec
            )
        assert np.all(state.hessian_diag == 1e-6)
        assert np.all(gamma <= 1e6 + 1e-9)
        state, gamma = adaptive_gamma_update(state, np.full(3, 1e9), 1.0, spec)
        assert np.all(state.hessian_diag == 1e6)
        assert np.all(gamma > 0)

    def test_sa_recursion(self):
        spec = ScheduleSpec(n0=10)
        state = AdaptiveGammaState()
        state, _ = adaptive_gamma_update(state, np.array([1.0]), 0.5, spec)
        state, _ = adaptive_gamma_update(state, np.array([3.0]), 0.5, spec)
        assert state.hessian_diag[0] == pytest.approx(2.0)
        assert state.iteration == 2
