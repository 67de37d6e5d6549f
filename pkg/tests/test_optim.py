import numpy as np
import pytest

from hypersep import autodiff as ad
from hypersep.geometry import PoincareBall
from hypersep.optim import AdamState, PlateauSchedule, adam_step, riemannian_adam_step


def test_zero_gradient_keeps_param():
    p = np.array([1.0, -2.0])
    state = AdamState.for_param(p)
    out = adam_step(p, np.zeros(2), state)
    np.testing.assert_array_equal(out, p)


def test_first_step_magnitude():
    # bias correction makes m_hat = v_hat = 1 on the first unit-gradient step
    p = np.array(0.0)
    state = AdamState.for_param(p, lr=1e-3)
    out = adam_step(p, np.array(1.0), state)
    np.testing.assert_allclose(out, -1e-3, rtol=1e-7)


def test_adam_deterministic():
    rng = np.random.default_rng(0)
    p = rng.standard_normal(5)
    grads = rng.standard_normal((10, 5))

    def run():
        q = p.copy()
        st = AdamState.for_param(q, lr=0.01)
        for g in grads:
            q = adam_step(q, g, st)
        return q

    assert np.array_equal(run(), run())


def test_adam_shape_and_finite_errors():
    p = np.zeros(3)
    st = AdamState.for_param(p)
    with pytest.raises(ValueError):
        adam_step(p, np.zeros(2), st)
    with pytest.raises(FloatingPointError):
        adam_step(p, np.array([1.0, np.nan, 0.0]), st)


# -- Riemannian variant ----------------------------------------------------------


def test_riemannian_grad_scaling_at_origin():
    ball = PoincareBall(1.0)
    p = np.zeros(2)
    st = AdamState.for_param(p, lr=0.1)
    g = np.array([1.0, 0.0])
    # (1 - 0)^2 / 4 scaling: first-step direction equals plain adam's, and the
    # rescaled gradient entering the moments is g/4
    out = riemannian_adam_step(p, g, st, ball)
    np.testing.assert_allclose(st.m, g / 4 * 0.1, rtol=1e-12)
    assert out[0] < 0


def test_riemannian_zero_grad_fixed_point():
    ball = PoincareBall(0.5)
    p = np.array([0.3, 0.1])
    st = AdamState.for_param(p, lr=0.1)
    out = riemannian_adam_step(p, np.zeros(2), st, ball)
    np.testing.assert_array_equal(out, p)


def test_riemannian_iterates_stay_in_ball():
    rng = np.random.default_rng(1)
    ball = PoincareBall(1.0)
    p = np.zeros(2)
    st = AdamState.for_param(p, lr=0.05)
    for _ in range(1000):
        g = rng.standard_normal(2) * 5.0
        p = riemannian_adam_step(p, g, st, ball)
        assert ball.c * np.sum(p * p) < 1.0


@pytest.mark.parametrize("c", [0.1, 1.0])
def test_riemannian_adam_minimizes_squared_distance(c):
    rng = np.random.default_rng(2)
    ball = PoincareBall(c)
    for trial in range(5):
        direction = rng.standard_normal(2)
        direction /= np.linalg.norm(direction)
        target = direction * rng.uniform(0.1, 0.8) / np.sqrt(c)
        x = np.zeros(2)
        st = AdamState.for_param(x, lr=0.05)
        for _ in range(2000):
            xt = ad.Parameter(x, "x")
            d = ad.poincare_distance_t(xt.reshape(1, 2), ad.Tensor(target[None]), ball)
            loss = ad.tensor_sum(ad.mul(d, d))
            loss.backward()
            x = riemannian_adam_step(x, xt.grad, st, ball)
            if float(ball.distance(x, target)) < 1e-3:
                break
        assert float(ball.distance(x, target)) < 1e-3


def test_riemannian_matches_euclidean_adam_at_tiny_curvature():
    # quadratic loss 0.5||x - t||^2; trajectories must agree to < 1e-3
    ball = PoincareBall(1e-6)
    target = np.array([0.4, -0.3])
    xe = np.zeros(2)
    xr = np.zeros(2)
    st_e = AdamState.for_param(xe, lr=0.01)
    st_r = AdamState.for_param(xr, lr=0.01)
    worst = 0.0
    for _ in range(100):
        xe = adam_step(xe, xe - target, st_e)
        xr = riemannian_adam_step(xr, xr - target, st_r, ball)
        worst = max(worst, float(np.max(np.abs(xe - xr))))
    assert worst < 1e-3


# -- plateau schedule --------------------------------------------------------------


def test_schedule_constant_while_improving():
    s = PlateauSchedule(lr=1e-3)
    for loss in np.linspace(1.0, 0.1, 30):
        s.step(loss)
    assert s.lr == 1e-3


def test_schedule_halves_after_ten_flat_epochs():
    s = PlateauSchedule(lr=1e-3)
    s.step(1.0)
    for _ in range(10):
        s.step(1.0)
    assert s.lr == 5e-4


def test_schedule_two_halvings():
    s = PlateauSchedule(lr=1e-3)
    s.step(1.0)
    for _ in range(20):
        s.step(1.0)
    assert s.lr == 2.5e-4


def test_schedule_improvement_resets_counter():
    s = PlateauSchedule(lr=1e-3)
    s.step(1.0)
    for _ in range(9):
        s.step(1.0)
    s.step(0.5)  # improvement just before the 10th stale epoch
    for _ in range(9):
        s.step(0.6)
    assert s.lr == 1e-3
