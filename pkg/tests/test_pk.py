"""Two-compartment PK model: forward model, statistics, reparameterized
exponential-family structure, simulation protocol."""

import numpy as np
import pytest
from scipy.integrate import solve_ivp

from stochprox import pk
from stochprox.penalty import PenaltySpec


@pytest.fixture(scope="module")
def desk():
    ds = pk.simulate_pk(12, 12, 10, seed=5)
    return ds, pk.PkModel(ds)


def rk_oracle(z, times, dose, rtol=1e-10):
    vc, vp, q, cl, ka = np.exp(z)
    k10, k12, k21 = cl / vc, q / vc, q / vp

    def rhs(_t, a):
        return [
            -ka * a[0],
            ka * a[0] + k21 * a[2] - (k10 + k12) * a[1],
            k12 * a[1] - k21 * a[2],
        ]

    sol = solve_ivp(
        rhs, (0.0, float(np.max(times))), [dose, 0.0, 0.0],
        t_eval=np.atleast_1d(times), rtol=rtol, atol=1e-13,
    )
    return sol.y[1] / vc


class TestConcentration:
    def test_zero_at_time_zero(self):
        z = np.array([6.61, 6.96, 5.77, 5.42, -0.51])
        assert pk.pk_concentration(z, 0.0, 100.0) == 0.0

    def test_mass_conservation_without_elimination(self):
        z = np.array([6.61, 6.96, 5.77, -40.0, -0.51])  # clearance ~ 0
        t = np.array([0.5, 2.0, 8.0, 24.0, 96.0])
        amounts = pk.pk_amounts(z, t, 100.0)
        assert np.max(np.abs(amounts.sum(axis=1) - 100.0)) < 1e-8
        # closed form agrees with the amount-level solution
        conc = pk.pk_concentration(z, t, 100.0)
        assert np.allclose(conc, amounts[:, 1] / np.exp(z[0]), rtol=1e-8)

    def test_closed_form_vs_rk(self):
        rng = np.random.default_rng(0)
        mu = np.array([6.61, 6.96, 5.77, 5.42, -0.51])
        t = np.array([0.25, 1.0, 3.0, 7.0, 12.0, 30.0, 48.0])
        for _ in range(100):
            z = mu + rng.normal(0.0, 0.6, 5)
            got = pk.pk_concentration(z, t, 100.0)
            want = rk_oracle(z, t, 100.0)
            assert np.max(np.abs(got - want) / np.maximum(np.abs(want), 1e-12)) < 1e-6

    def test_nonnegative(self):
        rng = np.random.default_rng(1)
        t = np.linspace(0.0, 48.0, 30)
        for _ in range(20):
            z = np.array([6.61, 6.96, 5.77, 5.42, -0.51]) + rng.normal(0, 0.5, 5)
            assert np.all(pk.pk_concentration(z, t, 50.0) >= -1e-12)

    def test_continuity_in_latent(self):
        z = np.array([6.0, 6.5, 5.5, 5.0, -0.3])
        t = np.array([1.0, 6.0, 24.0])
        base = pk.pk_concentration(z, t, 100.0)
        for eps in (1e-4, 1e-5, 1e-6):
            for r in range(5):
                dz = np.zeros(5)
                dz[r] = eps
                moved = pk.pk_concentration(z + dz, t, 100.0)
                assert np.max(np.abs(moved - base)) < 50.0 * eps

    def test_degenerate_rates_fall_back(self):
        # equal hybrid rate and absorption constants trip the closed form
        vc = vp = 100.0
        q = 10.0
        z = np.log(np.array([vc, vp, q, 0.0 + 1e-300, 0.1]))
        z[3] = np.log(1e-12)
        t = np.array([1.0, 5.0])
        got = pk.pk_concentration(z, t, 100.0)
        want = rk_oracle(z, t, 100.0, rtol=1e-10)
        assert np.allclose(got, want, rtol=1e-5)

    def test_overflow_raises(self):
        z = np.array([1000.0, 0.0, 0.0, 0.0, 0.0])
        with pytest.raises(FloatingPointError):
            pk.pk_concentration(z, 1.0, 100.0)


class TestSufficientStats:
    def test_zero_latent(self, desk):
        ds, model = desk
        z = np.zeros((ds.N, 5))
        s = model.stat(z)
        n = ds.N
        assert np.all(s[: n * 5] == 0.0)
        assert np.all(s[n * 5 : -1] == 0.0)
        pred = pk.conc_batch_with_fallback(z, ds.times, ds.dose)
        assert s[-1] == pytest.approx(np.sum((ds.Y - pred) ** 2))

    def test_perfect_fit_zero_residual(self):
        ds = pk.simulate_pk(1, 3, 0, seed=2, sigma_residual=1e-300)
        model = pk.PkModel(ds)
        pm = ds.mu_star.reshape(5, 1)[:, 0]
        # recover the latent that generated the data (no noise, no effects)
        gen = __import__("stochprox.rng", fromlist=["substream"]).substream(
            2, 3
        )
        z_true = pm + gen.standard_normal((1, 5)) * np.sqrt(ds.omega_star)
        s = model.stat(z_true)
        assert s[-1] == pytest.approx(0.0, abs=1e-12)

    def test_subject_permutation_symmetry(self, desk):
        ds, model = desk
        rng = np.random.default_rng(3)
        z = model.init_latent(model.default_init()) + rng.normal(
            0, 0.2, (ds.N, 5)
        )
        s = model.stat(z)
        perm = rng.permutation(ds.N)
        ds_p = pk.PkDataset(
            times=ds.times[perm], Y=ds.Y[perm], W=ds.W[perm], dose=ds.dose,
            sigma_residual=ds.sigma_residual, mu_star=ds.mu_star,
            omega_star=ds.omega_star, seed=ds.seed,
        )
        s_p = pk.PkModel(ds_p).stat(z[perm])
        n = ds.N
        assert np.allclose(
            s_p[: n * 5].reshape(n, 5), s[: n * 5].reshape(n, 5)[perm]
        )
        assert np.allclose(s_p[n * 5 :], s[n * 5 :], rtol=1e-12)


class TestStructure:
    def test_phi_sigma_derivative(self, desk):
        ds, model = desk
        theta = model.default_init()
        i = model.layout.sigma_res_index
        eps = 1e-6
        up, dn = theta.copy(), theta.copy()
        up[i] += eps
        dn[i] -= eps
        fd = (model.phi(up) - model.phi(dn)) / (2 * eps)
        want = -ds.J * ds.N / theta[i]
        assert fd == pytest.approx(want, rel=1e-5)
        assert model.grad_phi(theta)[i] == pytest.approx(want, rel=1e-12)

    def test_Psi_matches_fd_jacobian(self, desk):
        _, model = desk
        rng = np.random.default_rng(4)
        theta = model.default_init()
        theta[: model.layout.dim_mu] += 0.3 * rng.standard_normal(
            model.layout.dim_mu
        )
        P = model.Psi(theta)
        eps = 1e-6
        scale = np.max(np.abs(P))
        for i in range(model.dim_theta):
            up, dn = theta.copy(), theta.copy()
            up[i] += eps
            dn[i] -= eps
            fd = (model.psi(up) - model.psi(dn)) / (2 * eps)
            assert np.max(np.abs(P[i] - fd)) < 1e-5 * (1.0 + scale)

    def test_apply_Psi_matches_dense(self, desk):
        _, model = desk
        rng = np.random.default_rng(5)
        theta = model.default_init()
        s = rng.standard_normal(model.dim_stat)
        assert np.allclose(
            model.apply_Psi(theta, s), model.Psi(theta) @ s, rtol=1e-12
        )

    def test_complete_loglik_identity(self, desk):
        ds, model = desk
        rng = np.random.default_rng(6)
        for _ in range(5):
            theta = model.default_init()
            theta[: model.layout.dim_mu] += 0.2 * rng.standard_normal(
                model.layout.dim_mu
            )
            z = model.init_latent(theta) + 0.3 * rng.standard_normal((ds.N, 5))
            lhs = model.phi(theta) + model.stat(z) @ model.psi(theta)
            assert lhs == pytest.approx(model.complete_loglik(theta, z), abs=1e-9)

    def test_scale_parameters_guarded(self, desk):
        _, model = desk
        theta = model.default_init()
        theta[model.layout.sigma_res_index] = -1.0
        with pytest.raises(FloatingPointError):
            model.phi(theta)


class TestSimulateProtocol:
    def test_intercepts_match_reference_values(self):
        ds = pk.simulate_pk(5, 12, 20, seed=1)
        p = 21
        mu = ds.mu_star.reshape(5, p)
        assert np.allclose(mu[:, 0], [6.61, 6.96, 5.77, 5.42, -0.51])
        assert mu[0, 3] == 1.0  # covariate 3 acts on central volume
        assert mu[3, 8] == 1.0  # covariate 8 acts on clearance
        assert np.allclose(ds.omega_star, [0.16, 0.16, 0.16, 0.04, 0.04])

    def test_noiseless_curves_identical_when_variance_zero(self):
        ds = pk.simulate_pk(
            6, 12, 0, seed=8, sigma_residual=0.0,
            omega_star=np.zeros(5) + 1e-300,
        )
        assert np.max(np.abs(ds.Y - ds.Y[0])) < 1e-8

    def test_sigma_recorded(self):
        ds = pk.simulate_pk(4, 12, 3, seed=9)
        f = pk.conc_batch_with_fallback(
            pk.PkModel(ds).init_latent(pk.PkModel(ds).default_init()),
            ds.times, ds.dose,
        )
        assert ds.sigma_residual > 0
        ds2 = pk.simulate_pk(4, 12, 3, seed=9, sigma_residual=0.123)
        assert ds2.sigma_residual == 0.123

    def test_reproducible(self):
        a = pk.simulate_pk(4, 12, 3, seed=10)
        b = pk.simulate_pk(4, 12, 3, seed=10)
        assert np.array_equal(a.Y, b.Y)


class TestScaleInvariance:
    def test_penalty_invariant_under_latent_rescaling(self, desk):
        """Rescaling (mu, sqrt(Omega)) by b leaves the penalized block of
        the reparameterized parameter unchanged."""
        _, model = desk
        rng = np.random.default_rng(11)
        lay = model.layout
        theta = model.default_init()
        theta[: lay.dim_mu] += 0.5 * rng.standard_normal(lay.dim_mu)
        pen = PenaltySpec(kind="lasso", lam=3.0, mask=model.default_mask())

        # map to natural scale, rescale, and map back
        b = 2.7
        sig = theta[lay.sigma_slice].copy()
        theta_b = theta.copy()
        for r, sl in enumerate(lay.mu_slices):
            mu_nat = theta[sl] / sig[r]  # natural-scale means
            sig_b = sig[r] / b  # sqrt(Omega) scaled by b
            theta_b[sl] = (b * mu_nat) * sig_b
            theta_b[lay.sigma_slice.start + r] = sig_b
        from stochprox.penalty import penalty_value

        assert np.allclose(theta_b[: lay.dim_mu], theta[: lay.dim_mu])
        assert float(penalty_value(pen, theta_b)) == pytest.approx(
            float(penalty_value(pen, theta)), rel=1e-12
        )

    def test_covariate_row_restriction(self):
        ds = pk.simulate_pk(4, 12, 6, seed=12)
        model = pk.PkModel(ds, covariate_rows=(True, False, False, True, False))
        # Vc and Cl carry covariates, the rest are intercept-only
        assert model.layout.block_sizes == (7, 1, 1, 7, 1)
        mask = model.default_mask()
        assert int(np.sum(mask)) == 12
        assert model.dim_theta == 7 + 1 + 1 + 7 + 1 + 5 + 1


class TestMstep:
    def test_surrogate_argmax_stationarity(self, desk):
        ds, model = desk
        rng = np.random.default_rng(13)
        theta0 = model.default_init()
        z = model.init_latent(theta0) + 0.2 * rng.standard_normal((ds.N, 5))
        stat = model.stat(z)
        pen = PenaltySpec(kind="lasso", lam=2.0, mask=model.default_mask())
        theta_hat = model.surrogate_argmax(stat, pen, theta0)
        # unpenalized coordinates: stationary point of phi + <s, psi>
        grad = model.grad_phi(theta_hat) + model.apply_Psi(theta_hat, stat)
        free = ~model.default_mask()
        assert np.max(np.abs(grad[free])) < 1e-5
        # penalized coordinates: soft-threshold optimality
        lam = 2.0
        pen_idx = np.flatnonzero(model.default_mask())
        for i in pen_idx:
            if theta_hat[i] != 0.0:
                assert abs(grad[i] - lam * np.sign(theta_hat[i])) < 1e-5
            else:
                assert abs(grad[i]) <= lam + 1e-5

    def test_surrogate_argmax_improves_objective(self, desk):
        ds, model = desk
        rng = np.random.default_rng(14)
        theta0 = model.default_init()
        z = model.init_latent(theta0) + 0.2 * rng.standard_normal((ds.N, 5))
        stat = model.stat(z)
        pen = PenaltySpec(kind="lasso", lam=2.0, mask=model.default_mask())
        theta_hat = model.surrogate_argmax(stat, pen, theta0)

        from stochprox.penalty import penalty_value

        def objective(th):
            return (
                model.phi(th)
                + stat @ model.psi(th)
                - float(penalty_value(pen, th))
            )

        assert objective(theta_hat) >= objective(theta0) - 1e-9
        for _ in range(20):
            probe = theta_hat.copy()
            probe[: model.layout.dim_mu] += 0.01 * rng.standard_normal(
                model.layout.dim_mu
            )
            assert objective(theta_hat) >= objective(probe) - 1e-9


class TestPinnedVariances:
    def test_pinned_bit_exact_through_engine(self):
        from stochprox.engine import EngineConfig, run
        from stochprox.schedules import ScheduleSpec

        ds = pk.simulate_pk(5, 12, 2, seed=15)
        model = pk.PkModel(ds, pinned_omega={1: 0.01, 2: 0.01})
        pinned_val = 0.01**-0.5
        cfg = EngineConfig(
            algorithm="saem-pen",
            schedule=ScheduleSpec(m_star=2),
            penalty=PenaltySpec(kind="lasso", lam=1.0),
            max_iter=20,
            seed=3,
            track_f=False,
            track_stat_error=False,
        )
        trace = run(model, cfg)
        sl = model.layout.sigma_slice
        for th in trace.theta:
            assert th[sl.start + 1] == pinned_val
            assert th[sl.start + 2] == pinned_val


class TestSerialization:
    def test_roundtrip(self, tmp_path):
        ds = pk.simulate_pk(4, 12, 3, seed=20)
        pk.save_dataset(ds, tmp_path)
        back = pk.load_dataset(tmp_path)
        assert np.array_equal(back.Y, ds.Y)
        assert np.array_equal(back.W, ds.W)
        assert back.dose == ds.dose
        assert back.sigma_residual == ds.sigma_residual
        assert np.array_equal(back.mu_star, ds.mu_star)
