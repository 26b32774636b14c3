"""Loss functions (value + gradient) and the Adam optimizer."""

import numpy as np
import numpy.testing as npt
import pytest

from helpers import finite_diff_grad, rel_err
from leancnn.errors import ConfigError, ShapeError, ValidationError
from leancnn.losses import bce_with_logits, cross_entropy
from leancnn.optim import Adam

LN2 = 0.6931471805599453
LN4 = 1.3862943611198906


def make_rng(seed):
    return np.random.Generator(np.random.PCG64(seed))


class TestBCEWithLogits:
    def test_zero_logit_gives_ln2(self):
        for t in (0.0, 1.0):
            loss, _ = bce_with_logits(np.zeros((4, 1)), np.full((4, 1), t))
            npt.assert_allclose(loss, LN2, rtol=1e-12)

    def test_hand_value(self):
        # sigmoid(ln 3) = 3/4, so loss for target 1 is ln(4/3)
        z = np.array([[np.log(3.0)]])
        loss, _ = bce_with_logits(z, np.array([[1.0]]))
        npt.assert_allclose(loss, np.log(4.0 / 3.0), rtol=1e-12)

    def test_saturated_logits_no_overflow(self):
        z = np.array([[1000.0], [-1000.0]])
        t = np.array([[0.0], [1.0]])
        loss, grad = bce_with_logits(z, t)
        assert np.isfinite(loss) and np.all(np.isfinite(grad))
        npt.assert_allclose(loss, 1000.0, rtol=1e-12)

    def test_gradient_formula(self):
        rng = make_rng(1)
        z = rng.standard_normal((8, 1))
        t = rng.random((8, 1))
        _, grad = bce_with_logits(z, t)
        sig = 1.0 / (1.0 + np.exp(-z))
        npt.assert_allclose(grad, (sig - t) / z.size, rtol=1e-10)

    def test_gradient_matches_finite_differences(self):
        rng = make_rng(2)
        for _ in range(10):
            z = rng.standard_normal((5, 1)) * 3.0
            t = (rng.random((5, 1)) > 0.5).astype(np.float64)
            _, grad = bce_with_logits(z, t)
            fd = finite_diff_grad(lambda: bce_with_logits(z, t)[0], z)
            assert rel_err(grad, fd) <= 1e-6

    def test_grad_zero_at_matching_soft_target(self):
        _, grad = bce_with_logits(np.zeros((1, 1)), np.array([[0.5]]))
        npt.assert_allclose(grad, 0.0, atol=1e-15)

    def test_validation(self):
        with pytest.raises(ShapeError):
            bce_with_logits(np.zeros((2, 1)), np.zeros((3, 1)))
        with pytest.raises(ValidationError):
            bce_with_logits(np.zeros((2, 1)), np.full((2, 1), 1.5))
        with pytest.raises(ValidationError):
            bce_with_logits(np.zeros((0, 1)), np.zeros((0, 1)))


class TestCrossEntropy:
    def test_uniform_logits_give_log_c(self):
        loss, _ = cross_entropy(np.zeros((3, 4)), np.array([0, 1, 3]))
        npt.assert_allclose(loss, LN4, rtol=1e-12)

    def test_shift_invariance(self):
        rng = make_rng(3)
        z = rng.standard_normal((6, 5))
        y = rng.integers(0, 5, size=6)
        l1, g1 = cross_entropy(z, y)
        l2, g2 = cross_entropy(z + 1000.0, y)
        npt.assert_allclose(l1, l2, rtol=1e-9)
        npt.assert_allclose(g1, g2, rtol=1e-6, atol=1e-12)

    def test_gradient_rows_sum_to_zero(self):
        rng = make_rng(4)
        z = rng.standard_normal((7, 3))
        _, g = cross_entropy(z, rng.integers(0, 3, size=7))
        npt.assert_allclose(g.sum(axis=1), 0.0, atol=1e-12)

    def test_gradient_matches_finite_differences(self):
        rng = make_rng(5)
        for _ in range(10):
            z = rng.standard_normal((4, 3)) * 2.0
            y = rng.integers(0, 3, size=4)
            _, grad = cross_entropy(z, y)
            fd = finite_diff_grad(lambda: cross_entropy(z, y)[0], z)
            assert rel_err(grad, fd) <= 1e-6

    def test_perfect_prediction_loss_near_zero(self):
        z = np.zeros((2, 3))
        z[0, 1] = 50.0
        z[1, 2] = 50.0
        loss, _ = cross_entropy(z, np.array([1, 2]))
        assert loss < 1e-12

    def test_validation(self):
        with pytest.raises(ShapeError):
            cross_entropy(np.zeros((2, 3, 1)), np.array([0, 1]))
        with pytest.raises(ShapeError):
            cross_entropy(np.zeros((2, 3)), np.array([0, 1, 2]))
        with pytest.raises(ValidationError):
            cross_entropy(np.zeros((2, 3)), np.array([0.5, 1.0]))
        with pytest.raises(ValidationError):
            cross_entropy(np.zeros((2, 3)), np.array([0, 3]))
        with pytest.raises(ValidationError):
            cross_entropy(np.zeros((0, 3)), np.array([], dtype=np.int64))


class TestAdam:
    def test_first_step_magnitude(self):
        """With g=1 everywhere the bias-corrected first step is exactly
        lr/(1+eps) regardless of the betas."""
        p = np.ones(4, dtype=np.float64)
        g = np.ones(4, dtype=np.float64)
        opt = Adam([(p, g)], lr=0.001)
        opt.step()
        npt.assert_allclose(p, 1.0 - 0.001 / (1.0 + 1e-8), rtol=1e-12)

    def test_sign_follows_gradient(self):
        p = np.zeros(2, dtype=np.float64)
        g = np.array([3.0, -3.0])
        opt = Adam([(p, g)], lr=0.01)
        opt.step()
        assert p[0] < 0 < p[1]

    def test_minimizes_quadratic(self):
        p = np.array([5.0])
        g = np.zeros(1)
        opt = Adam([(p, g)], lr=0.1)
        for _ in range(200):
            g[...] = 2.0 * p
            opt.step()
        assert abs(p[0]) < 0.1

    def test_gradient_scale_invariance_with_zero_eps(self):
        """Adam's update direction is m_hat/sqrt(v_hat); with eps=0 scaling
        every gradient by a constant leaves the trajectory unchanged."""
        trajectories = []
        for scale in (1.0, 1000.0):
            p = np.array([2.0, -1.5])
            g = np.zeros(2)
            opt = Adam([(p, g)], lr=0.05, eps=0.0)
            for t in range(50):
                g[...] = scale * np.array([2.0 * p[0], np.cos(p[1])])
                opt.step()
            trajectories.append(p.copy())
        npt.assert_allclose(trajectories[0], trajectories[1], rtol=1e-10)

    def test_zero_grad(self):
        p = np.ones(3)
        g = np.full(3, 7.0)
        Adam([(p, g)], lr=0.1).zero_grad()
        npt.assert_array_equal(g, 0.0)

    def test_multiple_params_updated_independently(self):
        a, ga = np.ones(2), np.array([1.0, 1.0])
        b, gb = np.ones(3), np.zeros(3)
        opt = Adam([(a, ga), (b, gb)], lr=0.01)
        opt.step()
        assert np.all(a < 1.0)
        npt.assert_array_equal(b, 1.0)

    def test_float32_params_stay_float32(self):
        p = np.ones(2, dtype=np.float32)
        g = np.ones(2, dtype=np.float32)
        opt = Adam([(p, g)], lr=0.01)
        opt.step()
        assert p.dtype == np.float32
        assert opt.m[0].dtype == np.float32

    def test_config_validation(self):
        pair = [(np.ones(1), np.ones(1))]
        with pytest.raises(ConfigError):
            Adam(pair, lr=0.0)
        with pytest.raises(ConfigError):
            Adam(pair, lr=0.1, beta1=1.0)
        with pytest.raises(ConfigError):
            Adam(pair, lr=0.1, beta2=-0.1)
        with pytest.raises(ConfigError):
            Adam(pair, lr=0.1, eps=-1e-9)
