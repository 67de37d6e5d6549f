"""Ball-operation tests against scalar reference evaluations.

The reference helpers below implement the formulas with plain ``math``
scalars, independently of the vectorized numpy code paths, and the frozen
constants were computed with them.
"""

import math

import numpy as np
import pytest

from hypersep import geometry
from hypersep.geometry import (
    GeometryError,
    Hyperplane,
    PoincareBall,
    PoincarePoint,
    mlr_logits,
)


# -- scalar reference implementations -----------------------------------------


def ref_mobius_add(x, y, c):
    x2 = sum(v * v for v in x)
    y2 = sum(v * v for v in y)
    xy = sum(a * b for a, b in zip(x, y))
    num = [(1 + 2 * c * xy + c * y2) * a + (1 - c * x2) * b for a, b in zip(x, y)]
    den = 1 + 2 * c * xy + c * c * x2 * y2
    return [v / den for v in num]


def ref_distance(x, y, c):
    m = ref_mobius_add([-v for v in x], y, c)
    return 2 / math.sqrt(c) * math.atanh(math.sqrt(c) * math.sqrt(sum(v * v for v in m)))


def ref_exp0(v, c):
    n = math.sqrt(sum(a * a for a in v))
    if n == 0:
        return list(v)
    f = math.tanh(math.sqrt(c) * n) / (math.sqrt(c) * n)
    return [f * a for a in v]


def ref_log0(y, c):
    n = math.sqrt(sum(a * a for a in y))
    if n == 0:
        return list(y)
    f = math.atanh(math.sqrt(c) * n) / (math.sqrt(c) * n)
    return [f * a for a in y]


def ref_mlr_logit(z, p, a, c):
    m = ref_mobius_add([-v for v in p], z, c)
    A = math.sqrt(sum(v * v for v in a))
    lam = 2 / (1 - c * sum(v * v for v in p))
    u = sum(mi * ai for mi, ai in zip(m, a))
    q = 1 - c * sum(v * v for v in m)
    return lam * A / math.sqrt(c) * math.asinh(2 * math.sqrt(c) * u / (q * A))


def sample_ball(rng, n, dim, c, margin=0.05):
    """Uniform-direction points with norms up to (1 - margin) of the radius."""
    v = rng.standard_normal((n, dim))
    v /= np.linalg.norm(v, axis=-1, keepdims=True)
    radii = rng.uniform(0.0, (1.0 - margin) / math.sqrt(c), size=(n, 1))
    return v * radii


# -- Mobius addition -----------------------------------------------------------


def test_mobius_identities():
    ball = PoincareBall(1.0)
    np.testing.assert_allclose(ball.mobius_add([0.3, 0.0], [0.0, 0.0]), [0.3, 0.0], atol=1e-15)
    np.testing.assert_allclose(ball.mobius_add([0.0, 0.0], [0.5, 0.1]), [0.5, 0.1], atol=1e-15)


def test_mobius_collinear_matches_tanh_addition():
    # (0.3 + 0.4) / (1 + 0.3*0.4) = 0.625, the 1-D velocity-addition law
    ball = PoincareBall(1.0)
    out = ball.mobius_add([0.3, 0.0], [0.4, 0.0])
    np.testing.assert_allclose(out, [0.625, 0.0], rtol=1e-12)
    np.testing.assert_allclose(out, ref_mobius_add([0.3, 0.0], [0.4, 0.0], 1.0), rtol=1e-14)


@pytest.mark.parametrize("c", [0.1, 1.0])
def test_mobius_against_scalar_reference(c):
    rng = np.random.default_rng(7)
    ball = PoincareBall(c)
    xs = sample_ball(rng, 50, 3, c)
    ys = sample_ball(rng, 50, 3, c)
    got = ball.mobius_add(xs, ys)
    for i in range(50):
        np.testing.assert_allclose(got[i], ref_mobius_add(list(xs[i]), list(ys[i]), c), rtol=1e-12, atol=1e-14)


def test_mobius_left_inverse():
    rng = np.random.default_rng(3)
    ball = PoincareBall(1.0)
    xs = sample_ball(rng, 1000, 2, 1.0)
    out = ball.mobius_add(-xs, xs)
    assert np.max(np.abs(out)) < 1e-9


def test_mobius_rejects_nonfinite():
    ball = PoincareBall(1.0)
    with pytest.raises(GeometryError):
        ball.mobius_add([np.nan, 0.0], [0.1, 0.0])


def test_typed_surface_curvature_mismatch():
    a = PoincarePoint(np.array([0.1, 0.0]), PoincareBall(1.0))
    b = PoincarePoint(np.array([0.1, 0.0]), PoincareBall(0.5))
    with pytest.raises(GeometryError, match="curvature mismatch"):
        geometry.mobius_add(a, b)
    with pytest.raises(GeometryError, match="curvature mismatch"):
        geometry.distance(a, b)


# -- conformal factor ----------------------------------------------------------


def test_conformal_factor_values():
    ball = PoincareBall(1.0)
    assert ball.conformal_factor(np.zeros(2)) == 2.0
    np.testing.assert_allclose(ball.conformal_factor([0.5, 0.0]), 8.0 / 3.0, rtol=1e-15)


def test_conformal_factor_monotone_in_norm():
    ball = PoincareBall(1.0)
    radii = np.linspace(0, 0.9, 30)
    lam = ball.conformal_factor(np.stack([radii, np.zeros_like(radii)], axis=-1))
    assert np.all(np.diff(lam) > 0)


def test_conformal_factor_boundary_is_error():
    with pytest.raises(GeometryError):
        PoincareBall(1.0).conformal_factor([1.0, 0.0])


# -- distance ------------------------------------------------------------------


def test_distance_frozen_value():
    ball = PoincareBall(1.0)
    # 2 * atanh(0.5) = ln(3)
    np.testing.assert_allclose(ball.distance(np.zeros(2), [0.5, 0.0]), math.log(3.0), rtol=1e-14)


def test_distance_metric_axioms():
    rng = np.random.default_rng(11)
    for c in (0.1, 1.0):
        ball = PoincareBall(c)
        x = sample_ball(rng, 1000, 2, c)
        y = sample_ball(rng, 1000, 2, c)
        z = sample_ball(rng, 1000, 2, c)
        dxy = ball.distance(x, y)
        dyx = ball.distance(y, x)
        assert np.all(dxy >= 0)
        np.testing.assert_allclose(dxy, dyx, atol=1e-9)
        np.testing.assert_allclose(ball.distance(x, x), 0.0, atol=1e-9)
        assert np.all(dxy <= ball.distance(x, z) + ball.distance(z, y) + 1e-9)


def test_distance_scalar_reference():
    rng = np.random.default_rng(5)
    ball = PoincareBall(0.7)
    xs = sample_ball(rng, 20, 4, 0.7)
    ys = sample_ball(rng, 20, 4, 0.7)
    got = ball.distance(xs, ys)
    want = [ref_distance(list(a), list(b), 0.7) for a, b in zip(xs, ys)]
    np.testing.assert_allclose(got, want, rtol=1e-10)


# -- exp0 / log0 ---------------------------------------------------------------


def test_exp0_frozen_values():
    ball = PoincareBall(1.0)
    np.testing.assert_allclose(ball.expmap0(np.zeros(2)), np.zeros(2), atol=0)
    np.testing.assert_allclose(ball.expmap0([0.3, 0.0]), [math.tanh(0.3), 0.0], rtol=1e-14)
    np.testing.assert_allclose(ball.logmap0([math.tanh(0.3), 0.0]), [0.3, 0.0], rtol=1e-12)


def test_exp0_log0_inverse_pair():
    rng = np.random.default_rng(13)
    for c in (0.1, 1.0):
        ball = PoincareBall(c)
        v = rng.standard_normal((500, 3))
        v *= rng.uniform(0, 5, size=(500, 1)) / np.linalg.norm(v, axis=-1, keepdims=True)
        back = ball.logmap0(ball.expmap0(v))
        np.testing.assert_allclose(back, v, rtol=1e-9, atol=1e-12)
        y = sample_ball(rng, 500, 3, c)
        np.testing.assert_allclose(ball.expmap0(ball.logmap0(y)), y, rtol=1e-9, atol=1e-12)


def test_exp0_radial_isometry():
    # d(0, exp0(v)) = 2 ||v||
    rng = np.random.default_rng(17)
    for c in (0.1, 1.0):
        ball = PoincareBall(c)
        v = rng.standard_normal((200, 2)) * 1.5
        d = ball.dist0(ball.expmap0(v))
        np.testing.assert_allclose(d, 2 * np.linalg.norm(v, axis=-1), rtol=1e-9)


def test_log0_boundary_rejected():
    with pytest.raises(GeometryError):
        PoincareBall(1.0).logmap0([1.0, 0.0])


# -- projection ----------------------------------------------------------------


def test_project_interior_unchanged():
    ball = PoincareBall(1.0)
    x = np.array([0.2, 0.1])
    out = ball.project(x)
    assert out is x  # bit-identical, no copy


def test_project_rescales_to_margin():
    ball = PoincareBall(1.0)
    np.testing.assert_allclose(ball.project([2.0, 0.0]), [1.0 - 1e-5, 0.0], rtol=1e-12)
    np.testing.assert_allclose(ball.project(np.zeros(3)), np.zeros(3), atol=0)


def test_project_respects_curvature_radius():
    ball = PoincareBall(0.25)  # radius 2
    out = ball.project([5.0, 0.0])
    np.testing.assert_allclose(np.linalg.norm(out), (1 - 1e-5) * 2.0, rtol=1e-12)


# -- certainty score -------------------------------------------------------------


def test_certainty_frozen_value():
    ball = PoincareBall(1.0)
    assert ball.certainty(np.zeros(2)) == 0.0
    np.testing.assert_allclose(ball.certainty([0.9, 0.0]), math.log(1.81 / 0.19), rtol=1e-14)


def test_certainty_monotone_along_rays():
    ball = PoincareBall(0.3)
    direction = np.array([0.6, 0.8])
    radii = np.linspace(0, 0.95 / math.sqrt(0.3), 50)
    scores = ball.certainty(radii[:, None] * direction)
    assert np.all(np.diff(scores) > 0)


def test_certainty_orders_like_distance():
    rng = np.random.default_rng(23)
    ball = PoincareBall(0.5)
    z = sample_ball(rng, 300, 3, 0.5)
    by_score = np.argsort(ball.certainty(z))
    by_dist = np.argsort(ball.dist0(z))
    np.testing.assert_array_equal(by_score, by_dist)


# -- MLR logits ------------------------------------------------------------------


def test_mlr_logit_zero_at_own_hyperplane():
    ball = PoincareBall(1.0)
    p = np.array([[0.2, -0.1]])
    a = np.array([[0.5, 1.0]])
    out = geometry.mlr_logits_hyperbolic(p[0], p, a, ball)
    np.testing.assert_allclose(out, [0.0], atol=1e-12)


def test_mlr_logit_frozen_value():
    # p = 0, a = (1,0), z = (0.5,0), c = 1: logit = 2 asinh(4/3) = 2 ln 3
    ball = PoincareBall(1.0)
    out = geometry.mlr_logits_hyperbolic(
        np.array([0.5, 0.0]), np.zeros((1, 2)), np.array([[1.0, 0.0]]), ball
    )
    np.testing.assert_allclose(out, [2.0 * math.log(3.0)], rtol=1e-14)


def test_mlr_signed_sides():
    ball = PoincareBall(1.0)
    p = np.zeros((1, 2))
    a = np.array([[1.0, 0.0]])
    plus = geometry.mlr_logits_hyperbolic(np.array([0.4, 0.0]), p, a, ball)
    minus = geometry.mlr_logits_hyperbolic(np.array([-0.4, 0.0]), p, a, ball)
    assert plus[0] > 0 > minus[0]
    np.testing.assert_allclose(plus, -minus, rtol=1e-12)


def test_mlr_scalar_reference():
    rng = np.random.default_rng(31)
    c = 0.4
    ball = PoincareBall(c)
    z = sample_ball(rng, 25, 3, c)
    p = sample_ball(rng, 4, 3, c, margin=0.3)
    a = rng.standard_normal((4, 3))
    got = geometry.mlr_logits_hyperbolic(z, p, a, ball)
    for i in range(25):
        want = [ref_mlr_logit(list(z[i]), list(p[k]), list(a[k]), c) for k in range(4)]
        np.testing.assert_allclose(got[i], want, rtol=1e-10)


def test_mlr_euclidean_limit():
    rng = np.random.default_rng(37)
    c = 1e-8
    ball = PoincareBall(c)
    z = rng.standard_normal((100, 2)) * 0.5
    p = rng.standard_normal((3, 2)) * 0.3
    a = rng.standard_normal((3, 2))
    hyp = geometry.mlr_logits_hyperbolic(z, p, a, ball)
    euc = geometry.mlr_logits_euclidean(z, p, a)
    np.testing.assert_allclose(hyp, euc, rtol=1e-4)


def test_mlr_rejects_zero_normal():
    ball = PoincareBall(1.0)
    with pytest.raises(GeometryError):
        geometry.mlr_logits_hyperbolic(np.zeros(2), np.zeros((1, 2)), np.zeros((1, 2)), ball)
    with pytest.raises(GeometryError):
        Hyperplane(np.zeros(2), np.zeros(2))


def test_mlr_dispatch_modes():
    ball = PoincareBall(1.0)
    planes = [Hyperplane(np.zeros(2), np.array([1.0, 0.0]))]
    z = np.array([0.3, 0.1])
    hyp = mlr_logits(z, planes, mode="hyperbolic", ball=ball)
    euc = mlr_logits(z, planes, mode="euclidean")
    assert hyp.shape == euc.shape == (1,)
    with pytest.raises(GeometryError):
        mlr_logits(z, planes, mode="hyperbolic")
    with pytest.raises(GeometryError):
        mlr_logits(z, planes, mode="klein")
