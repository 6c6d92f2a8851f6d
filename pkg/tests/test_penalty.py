"""Penalty and proximal-operator tests, checked against independent
scalar minimization of the prox objective."""

import numpy as np
import pytest
from scipy.optimize import minimize_scalar

from stochprox.penalty import PenaltySpec, lambda_max, penalty_value, prox


def scalar_penalty(spec, x):
    if spec.kind == "none":
        return 0.0
    if spec.kind == "lasso":
        return spec.lam * abs(x)
    if spec.kind == "elastic-net":
        return spec.lam * (spec.alpha * abs(x) + 0.5 * (1 - spec.alpha) * x * x)
    if spec.kind == "box-projection":
        return 0.0 if spec.box[0, 0] <= x <= spec.box[0, 1] else np.inf
    raise AssertionError(spec.kind)


def prox_oracle(spec, gamma, x):
    """1-D numeric minimization of g(tau) + (x - tau)^2 / (2 gamma)."""
    if spec.kind == "box-projection":
        return min(max(x, spec.box[0, 0]), spec.box[0, 1])

    def obj(tau):
        return scalar_penalty(spec, tau) + (x - tau) ** 2 / (2 * gamma)

    res = minimize_scalar(
        obj, bounds=(-abs(x) - 1.0, abs(x) + 1.0), method="bounded",
        options={"xatol": 1e-10},
    )
    # snap to zero when it is at least as good (kink not seen by the solver)
    return 0.0 if obj(0.0) <= res.fun + 1e-14 else float(res.x)


class TestProx:
    def test_lasso_zero_fixed_point(self):
        spec = PenaltySpec(kind="lasso", lam=3.0)
        out = prox(spec, 0.7, np.zeros(5))
        assert np.all(out == 0.0)

    def test_lasso_dead_zone(self):
        spec = PenaltySpec(kind="lasso", lam=1.0)
        assert prox(spec, 1.0, np.array([-0.5]))[0] == 0.0
        # dead zone is closed: |x| == gamma * lam maps to exactly 0
        assert prox(spec, 1.0, np.array([1.0]))[0] == 0.0

    def test_elastic_net_value(self):
        spec = PenaltySpec(kind="elastic-net", lam=2.0, alpha=0.5)
        out = prox(spec, 0.5, np.array([3.0]))
        assert out[0] == pytest.approx(2.5 / 1.5, rel=1e-12)
        assert out[0] == pytest.approx(
            prox_oracle(spec, 0.5, 3.0), abs=1e-8
        )

    def test_box_clamps(self):
        spec = PenaltySpec(
            kind="box-projection", box=np.array([[-1.0, 1.0]])
        )
        assert prox(spec, 1.0, np.array([4.0]))[0] == 1.0
        assert prox(spec, 0.1, np.array([-7.0]))[0] == -1.0

    def test_none_is_identity(self):
        theta = np.array([1.0, -2.0, 0.3])
        for gamma in (0.01, 1.0, 100.0):
            assert np.array_equal(prox(PenaltySpec(), gamma, theta), theta)

    def test_rejects_bad_inputs(self):
        spec = PenaltySpec(kind="lasso", lam=1.0)
        with pytest.raises(ValueError):
            prox(spec, 0.0, np.zeros(2))
        with pytest.raises(ValueError):
            prox(spec, -1.0, np.zeros(2))
        with pytest.raises(FloatingPointError):
            prox(spec, 1.0, np.array([np.nan, 0.0]))

    def test_mask_passthrough_bit_exact(self):
        rng = np.random.default_rng(0)
        theta = rng.standard_normal(20)
        mask = rng.random(20) < 0.5
        spec = PenaltySpec(kind="lasso", lam=5.0, mask=mask)
        out = prox(spec, 0.3, theta)
        free = ~mask
        assert np.array_equal(out[free], theta[free])

    def test_matches_oracle_all_kinds(self):
        rng = np.random.default_rng(42)
        specs = []
        for _ in range(40):
            kind = rng.choice(["lasso", "elastic-net", "box-projection"])
            if kind == "box-projection":
                lo = rng.uniform(-2, 0)
                specs.append(
                    PenaltySpec(kind=kind, box=np.array([[lo, lo + rng.uniform(0.5, 3)]]))
                )
            else:
                specs.append(
                    PenaltySpec(
                        kind=kind,
                        lam=rng.uniform(0.01, 5),
                        alpha=rng.uniform(0.1, 1.0),
                    )
                )
        for spec in specs:
            for _ in range(5):
                gamma = rng.uniform(0.01, 3.0)
                x = rng.uniform(-4, 4)
                got = prox(spec, gamma, np.array([x]))[0]
                want = prox_oracle(spec, gamma, x)
                assert got == pytest.approx(want, abs=1e-6), (spec.kind, gamma, x)

    def test_nonexpansive(self):
        rng = np.random.default_rng(7)
        spec = PenaltySpec(kind="elastic-net", lam=1.3, alpha=0.7)
        for _ in range(1000):
            x = rng.standard_normal(6)
            y = rng.standard_normal(6)
            gamma = rng.uniform(0.05, 2.0)
            dist = np.linalg.norm(prox(spec, gamma, x) - prox(spec, gamma, y))
            assert dist <= np.linalg.norm(x - y) + 1e-12

    def test_prox_objective_optimality(self):
        rng = np.random.default_rng(11)
        spec = PenaltySpec(kind="lasso", lam=0.8)
        theta = rng.standard_normal(8)
        gamma = 0.4
        p = prox(spec, gamma, theta)

        def obj(tau):
            return float(penalty_value(spec, tau)) + np.sum(
                (theta - tau) ** 2
            ) / (2 * gamma)

        best = obj(p)
        for _ in range(100):
            tau = rng.standard_normal(8)
            assert best <= obj(tau) + 1e-12

    def test_vector_gamma(self):
        spec = PenaltySpec(kind="lasso", lam=1.0)
        theta = np.array([2.0, 2.0])
        gamma = np.array([0.5, 1.5])
        out = prox(spec, gamma, theta)
        assert out[0] == pytest.approx(1.5)
        assert out[1] == pytest.approx(0.5)


class TestPenaltyValue:
    def test_lasso_sum(self):
        spec = PenaltySpec(kind="lasso", lam=50.0, mask=np.array([True, True, False]))
        val = penalty_value(spec, np.array([1.0, -2.0, 100.0]))
        assert val.finite and val.value == pytest.approx(150.0)

    def test_none_zero(self):
        val = penalty_value(PenaltySpec(), np.array([1e5, -3.0]))
        assert val.finite and val.value == 0.0

    def test_box_infinite_flag(self):
        spec = PenaltySpec(kind="box-projection", box=np.array([[-1.0, 1.0]]))
        inside = penalty_value(spec, np.array([0.5]))
        outside = penalty_value(spec, np.array([2.0]))
        assert inside.finite and inside.value == 0.0
        assert not outside.finite
        assert np.isinf(float(outside))
        assert np.isfinite(outside.value)  # flag, not an IEEE overflow


class TestLambdaMax:
    def test_max_abs(self):
        spec = PenaltySpec(kind="lasso", lam=1.0)
        assert lambda_max(spec, np.array([3.0, -7.0, 2.0])) == 7.0

    def test_zero_gradient(self):
        spec = PenaltySpec(kind="lasso", lam=1.0)
        assert lambda_max(spec, np.zeros(4)) == 0.0

    def test_empty_mask_rejected(self):
        spec = PenaltySpec(kind="lasso", lam=1.0, mask=np.zeros(3, dtype=bool))
        with pytest.raises(ValueError):
            lambda_max(spec, np.ones(3))

    def test_respects_mask(self):
        spec = PenaltySpec(
            kind="lasso", lam=1.0, mask=np.array([False, True, True])
        )
        assert lambda_max(spec, np.array([100.0, 3.0, -4.0])) == 4.0


class TestSpecValidation:
    def test_bad_kind(self):
        with pytest.raises(ValueError):
            PenaltySpec(kind="fused")

    def test_bad_lambda(self):
        with pytest.raises(ValueError):
            PenaltySpec(kind="lasso", lam=-1.0)

    def test_bad_alpha(self):
        with pytest.raises(ValueError):
            PenaltySpec(kind="elastic-net", lam=1.0, alpha=0.0)

    def test_mask_length_checked(self):
        spec = PenaltySpec(kind="lasso", lam=1.0, mask=np.array([True, False]))
        with pytest.raises(ValueError):
            prox(spec, 1.0, np.zeros(3))
