import numpy as np
import pytest

from airfed.optimizer import (
    EmaState,
    SophiaConfig,
    apply_step,
    clip_elementwise,
    ema_hessian,
    ema_moment,
    fedprox_grad,
    sophia_direction,
)


class TestSophiaConfig:
    def test_defaults_valid(self):
        cfg = SophiaConfig()
        assert cfg.eta == 1e-3 and cfg.tau == 10

    @pytest.mark.parametrize(
        "kwargs",
        [
            {"eta": 0.0},
            {"eta": -1.0},
            {"beta1": 1.0},
            {"beta2": -0.1},
            {"gamma": 0.0},
            {"epsilon": 0.0},
            {"tau": 0},
        ],
    )
    def test_rejects_bad_values(self, kwargs):
        with pytest.raises(ValueError):
            SophiaConfig(**kwargs)


class TestEmaMoment:
    def test_first_step_from_zero(self):
        m = ema_moment(np.zeros(3), np.ones(3), 0.9)
        np.testing.assert_allclose(m, 0.1)

    def test_beta_zero_returns_gradient(self):
        g = np.array([1.0, -2.0, 3.0])
        np.testing.assert_array_equal(ema_moment(np.array([5.0, 5.0, 5.0]), g, 0.0), g)

    def test_geometric_convergence_to_constant(self):
        c = 2.5
        m = np.zeros(4)
        for k in range(1, 30):
            m = ema_moment(m, np.full(4, c), 0.9)
            np.testing.assert_allclose(m, c * (1 - 0.9**k), rtol=1e-12)
        # fixed point: one more step from exactly c stays at c
        np.testing.assert_allclose(ema_moment(np.full(4, c), np.full(4, c), 0.9), c)

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            ema_moment(np.zeros(3), np.zeros(4), 0.9)

    def test_range_preserved(self):
        """m stays inside the historical gradient range."""
        rng = np.random.default_rng(0)
        m = np.full(5, 0.3)
        for _ in range(100):
            g = rng.uniform(-1.0, 1.0, 5)
            m = ema_moment(m, g, 0.9)
            assert np.all(m >= -1.0) and np.all(m <= 1.0)


class TestEmaHessian:
    def test_off_refresh_round_returns_previous_bitwise(self):
        state = EmaState(np.zeros(3), np.array([0.5, 1.5, -0.25]))
        out = ema_hessian(state, np.ones(3), 0.99, k=3, tau=2)
        assert out is state.h  # untouched, not recomputed

    def test_refresh_round_formula(self):
        state = EmaState(np.zeros(2), np.ones(2))
        out = ema_hessian(state, np.zeros(2), 0.99, k=0, tau=5)
        np.testing.assert_allclose(out, 0.99)

    def test_tau_one_updates_every_round(self):
        state = EmaState(np.zeros(2), np.zeros(2))
        for k in range(5):
            state.h = ema_hessian(state, np.ones(2), 0.5, k=k, tau=1)
        np.testing.assert_allclose(state.h, 1 - 0.5**5)

    def test_nonnegative_with_nonnegative_inputs(self):
        rng = np.random.default_rng(1)
        state = EmaState.zeros(6)
        for k in range(40):
            h_hat = rng.uniform(0.0, 2.0, 6)
            state.h = ema_hessian(state, h_hat, 0.9, k=k, tau=3)
            assert state.h.min() >= 0.0

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            ema_hessian(EmaState.zeros(3), np.zeros(4), 0.9, k=0, tau=1)


class TestClip:
    def test_definition(self):
        out = clip_elementwise(np.array([0.5, 2.0, -3.0]), 1.0)
        np.testing.assert_array_equal(out, [0.5, 1.0, -1.0])

    def test_identity_inside_bounds(self):
        z = np.array([-0.9, 0.0, 0.7])
        np.testing.assert_array_equal(clip_elementwise(z, 1.0), z)

    def test_idempotent(self):
        z = np.random.default_rng(0).standard_normal(50) * 4
        once = clip_elementwise(z, 0.8)
        np.testing.assert_array_equal(clip_elementwise(once, 0.8), once)

    def test_requires_positive_threshold(self):
        with pytest.raises(ValueError):
            clip_elementwise(np.zeros(2), 0.0)


class TestSophiaDirection:
    def test_plain_preconditioned_coordinate(self):
        out = sophia_direction(np.array([0.5]), np.array([100.0]), 0.01, 1e-12)
        assert out[0] == pytest.approx(0.5)

    def test_negative_curvature_degrades_to_sign(self):
        out = sophia_direction(np.array([0.3, -0.7]), np.array([-4.0, 0.0]), 0.01, 1e-12)
        np.testing.assert_array_equal(out, [1.0, -1.0])

    def test_zero_numerator(self):
        out = sophia_direction(np.zeros(4), np.random.default_rng(0).standard_normal(4), 0.01, 1e-12)
        np.testing.assert_array_equal(out, 0.0)

    def test_bounded_by_one(self):
        rng = np.random.default_rng(5)
        for _ in range(50):
            m = rng.standard_normal(20) * 10
            h = rng.standard_normal(20) * 10
            d = sophia_direction(m, h, 0.01, 1e-12)
            assert np.all(np.abs(d) <= 1.0)

    def test_sign_fallback_when_floor_active(self):
        """Whenever the epsilon floor wins and |m| >= epsilon, the direction
        is exactly the sign of m."""
        rng = np.random.default_rng(6)
        eps = 1e-12
        for _ in range(100):
            m = rng.standard_normal(8)
            h = rng.uniform(-1.0, 1e-11, 8)  # gamma * h below the floor
            d = sophia_direction(m, h, 0.01, eps)
            floored = np.maximum(0.01 * h, eps) == eps
            relevant = floored & (np.abs(m) >= eps)
            np.testing.assert_array_equal(d[relevant], np.sign(m[relevant]))


class TestApplyStep:
    def test_zero_rate_is_identity(self):
        theta = np.array([1.0, -2.0])
        np.testing.assert_array_equal(apply_step(theta, np.array([3.0, 4.0]), 0.0), theta)

    def test_arithmetic(self):
        out = apply_step(np.array([1.0, 1.0]), np.array([1.0, -1.0]), 0.1)
        np.testing.assert_allclose(out, [0.9, 1.1])

    def test_step_bounded_by_eta_after_clipping(self):
        rng = np.random.default_rng(7)
        eta = 0.05
        for _ in range(20):
            theta = rng.standard_normal(30)
            d = sophia_direction(rng.standard_normal(30), rng.standard_normal(30), 0.01, 1e-12)
            moved = np.abs(apply_step(theta, d, eta) - theta)
            assert moved.max() <= eta + 1e-12


class TestFedproxGrad:
    def test_mu_zero_is_plain_gradient(self):
        g = np.array([0.1, -0.2])
        out = fedprox_grad(g, np.ones(2), np.zeros(2), 0.0)
        np.testing.assert_array_equal(out, g)

    def test_at_global_model_no_pull(self):
        g = np.array([0.4, 0.5])
        theta = np.array([1.0, -1.0])
        np.testing.assert_array_equal(fedprox_grad(g, theta, theta, 0.3), g)

    def test_proximal_term_arithmetic(self):
        out = fedprox_grad(np.zeros(2), np.array([1.0, -2.0]), np.zeros(2), 0.01)
        np.testing.assert_allclose(out, [0.01, -0.02])

    def test_negative_mu_rejected(self):
        with pytest.raises(ValueError):
            fedprox_grad(np.zeros(2), np.zeros(2), np.zeros(2), -0.1)
