"""Poincare ball primitives: Mobius arithmetic, distances, origin maps, MLR logits.

All operations are vectorized over leading axes; the last axis holds the
ball coordinates. Everything is computed in float64 — the gradient-check
tolerances used elsewhere are unreachable in single precision.

Convention: the ball of curvature ``-c`` (``c > 0``) is
``{x : c * ||x||^2 < 1}``, i.e. a Euclidean ball of radius ``1/sqrt(c)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

# Margin for boundary clipping: points are kept at Euclidean norm
# <= (1 - BOUNDARY_EPS) / sqrt(c). atanh diverges at the boundary.
BOUNDARY_EPS = 1e-5

# Guard against division by zero when normalizing directions.
MIN_NORM = 1e-15

# A hyperplane normal below this is a degenerate trained head, not a zero logit.
MIN_NORMAL = 1e-12


class GeometryError(ValueError):
    """Invalid input to a ball operation (mismatched curvature, boundary, ...)."""


def _sqnorm(x: np.ndarray) -> np.ndarray:
    return np.sum(x * x, axis=-1, keepdims=True)


def _dot(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    return np.sum(x * y, axis=-1, keepdims=True)


@dataclass(frozen=True)
class PoincareBall:
    """The Poincare ball model of curvature -c, with numerical-safety clipping.

    ``boundary_eps`` is the relative safety margin: every ball-valued
    result is clipped to norm ``(1 - boundary_eps) / sqrt(c)``.
    """

    c: float
    boundary_eps: float = BOUNDARY_EPS

    def __post_init__(self):
        if not (np.isfinite(self.c) and self.c > 0):
            raise GeometryError(f"curvature magnitude must be positive, got {self.c}")

    @property
    def radius(self) -> float:
        return 1.0 / np.sqrt(self.c)

    @property
    def max_norm(self) -> float:
        return (1.0 - self.boundary_eps) / np.sqrt(self.c)

    # -- membership / safety ------------------------------------------------

    def check_point(self, x: np.ndarray, name: str = "point") -> np.ndarray:
        """Validate that x is finite and strictly inside the ball."""
        x = np.asarray(x, dtype=np.float64)
        if not np.all(np.isfinite(x)):
            raise GeometryError(f"{name} has non-finite entries")
        if np.any(self.c * _sqnorm(x) >= 1.0):
            raise GeometryError(f"{name} lies on or outside the ball of radius {self.radius:g}")
        return x

    def project(self, x: np.ndarray) -> np.ndarray:
        """Rescale any point with norm > (1-eps)/sqrt(c) back onto that radius.

        Interior points are returned unchanged (bit-exactly).
        """
        x = np.asarray(x, dtype=np.float64)
        if not np.all(np.isfinite(x)):
            raise GeometryError("cannot project non-finite input")
        norm = np.sqrt(_sqnorm(x))
        scale = np.where(norm > self.max_norm, self.max_norm / np.maximum(norm, MIN_NORM), 1.0)
        if np.all(scale == 1.0):
            return x
        return x * scale

    # -- core operations ----------------------------------------------------

    def conformal_factor(self, x: np.ndarray) -> np.ndarray:
        """lambda_x = 2 / (1 - c ||x||^2), the local metric scaling (>= 2)."""
        x = self.check_point(x)
        return (2.0 / (1.0 - self.c * _sqnorm(x)))[..., 0]

    def mobius_add(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        """Mobius addition x (+)_c y, clipped back into the ball.

        x (+) y = ((1 + 2c<x,y> + c||y||^2) x + (1 - c||x||^2) y)
                  / (1 + 2c<x,y> + c^2 ||x||^2 ||y||^2)
        """
        x = np.asarray(x, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64)
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
            raise GeometryError("mobius_add requires finite inputs")
        c = self.c
        x2 = _sqnorm(x)
        y2 = _sqnorm(y)
        xy = _dot(x, y)
        num = (1.0 + 2.0 * c * xy + c * y2) * x + (1.0 - c * x2) * y
        den = 1.0 + 2.0 * c * xy + c * c * x2 * y2
        return self.project(num / np.maximum(den, MIN_NORM))

    def distance(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        """Geodesic distance d_c(x,y) = (2/sqrt(c)) atanh(sqrt(c) ||-x (+) y||)."""
        m = self.mobius_add(-np.asarray(x, dtype=np.float64), y)
        sq = np.sqrt(self.c) * np.sqrt(_sqnorm(m))[..., 0]
        return 2.0 / np.sqrt(self.c) * np.arctanh(np.minimum(sq, 1.0 - self.boundary_eps))

    def dist0(self, x: np.ndarray) -> np.ndarray:
        """Distance to the origin: (2/sqrt(c)) atanh(sqrt(c) ||x||)."""
        x = np.asarray(x, dtype=np.float64)
        sq = np.sqrt(self.c) * np.sqrt(_sqnorm(x))[..., 0]
        return 2.0 / np.sqrt(self.c) * np.arctanh(np.minimum(sq, 1.0 - self.boundary_eps))

    def expmap0(self, v: np.ndarray) -> np.ndarray:
        """Exponential map at the origin: tanh(sqrt(c)||v||) / (sqrt(c)||v||) * v.

        v = 0 maps to the origin (the limit value of the scaling factor is 1).
        """
        v = np.asarray(v, dtype=np.float64)
        if not np.all(np.isfinite(v)):
            raise GeometryError("expmap0 requires finite input")
        sc = np.sqrt(self.c)
        n = np.maximum(np.sqrt(_sqnorm(v)), MIN_NORM)
        return self.project(np.tanh(sc * n) / (sc * n) * v)

    def logmap0(self, y: np.ndarray) -> np.ndarray:
        """Logarithmic map at the origin: atanh(sqrt(c)||y||) / (sqrt(c)||y||) * y."""
        y = self.check_point(y)
        sc = np.sqrt(self.c)
        n = np.maximum(np.sqrt(_sqnorm(y)), MIN_NORM)
        return np.arctanh(sc * n) / (sc * n) * y

    def expmap(self, x: np.ndarray, u: np.ndarray) -> np.ndarray:
        """Exponential map at x: x (+) tanh(sqrt(c) lam_x ||u|| / 2)/(sqrt(c)||u||) u.

        Used as the exact retraction for ball-constrained optimizer steps.
        """
        x = np.asarray(x, dtype=np.float64)
        u = np.asarray(u, dtype=np.float64)
        sc = np.sqrt(self.c)
        lam = (2.0 / (1.0 - self.c * _sqnorm(x)))
        n = np.maximum(np.sqrt(_sqnorm(u)), MIN_NORM)
        step = np.tanh(sc * lam * n / 2.0) / (sc * n) * u
        return self.mobius_add(x, step)

    def normalized_norm(self, z: np.ndarray) -> np.ndarray:
        """sqrt(c) * ||z|| in [0, 1): the curvature-free radial coordinate."""
        z = np.asarray(z, dtype=np.float64)
        return np.sqrt(self.c) * np.sqrt(_sqnorm(z))[..., 0]

    def certainty(self, z: np.ndarray) -> np.ndarray:
        """Monotone certainty surrogate log((1 + c||z||^2) / (1 - c||z||^2)).

        Zero at the origin, strictly increasing in ||z||, and inducing the
        same ordering as the exact distance-to-origin dist0.
        """
        z = self.check_point(z)
        cn2 = self.c * _sqnorm(z)[..., 0]
        return np.log((1.0 + cn2) / (1.0 - cn2))


# -- typed single-point surface ---------------------------------------------


@dataclass(frozen=True)
class PoincarePoint:
    """One L-dimensional point strictly inside a Poincare ball."""

    coords: np.ndarray
    ball: PoincareBall

    def __post_init__(self):
        object.__setattr__(self, "coords", self.ball.check_point(self.coords))

    @property
    def norm(self) -> float:
        return float(np.linalg.norm(self.coords))


@dataclass(frozen=True)
class Hyperplane:
    """One decision hyperplane of an MLR head: offset point p and normal a at p."""

    p: np.ndarray
    a: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "p", np.asarray(self.p, dtype=np.float64))
        object.__setattr__(self, "a", np.asarray(self.a, dtype=np.float64))
        if np.linalg.norm(self.a) <= MIN_NORMAL:
            raise GeometryError("hyperplane normal is numerically zero (degenerate head)")


def _same_ball(x: PoincarePoint, y: PoincarePoint) -> PoincareBall:
    if x.ball.c != y.ball.c:
        raise GeometryError(f"curvature mismatch: {x.ball.c} vs {y.ball.c}")
    return x.ball


def mobius_add(x: PoincarePoint, y: PoincarePoint) -> PoincarePoint:
    ball = _same_ball(x, y)
    return PoincarePoint(ball.mobius_add(x.coords, y.coords), ball)


def distance(x: PoincarePoint, y: PoincarePoint) -> float:
    ball = _same_ball(x, y)
    return float(ball.distance(x.coords, y.coords))


def conformal_factor(x: PoincarePoint) -> float:
    return float(x.ball.conformal_factor(x.coords))


def exp0(v: np.ndarray, ball: PoincareBall) -> PoincarePoint:
    return PoincarePoint(ball.expmap0(v), ball)


def log0(y: PoincarePoint) -> np.ndarray:
    return y.ball.logmap0(y.coords)


def certainty_score(z: PoincarePoint) -> float:
    return float(z.ball.certainty(z.coords))


# -- multinomial logistic regression logits ----------------------------------


def mlr_logits_euclidean(z: np.ndarray, p: np.ndarray, a: np.ndarray) -> np.ndarray:
    """Euclidean MLR logits 4 <z - p_k, a_k>, the c -> 0 limit of the hyperbolic form.

    z: (..., L), p/a: (K, L). Returns (..., K).
    """
    p = np.asarray(p, dtype=np.float64)
    a = np.asarray(a, dtype=np.float64)
    _check_normals(a)
    z = np.asarray(z, dtype=np.float64)
    return 4.0 * ((z[..., None, :] - p) * a).sum(axis=-1)


def mlr_logits_hyperbolic(z: np.ndarray, p: np.ndarray, a: np.ndarray, ball: PoincareBall) -> np.ndarray:
    """Hyperbolic MLR logits from signed distances to Poincare hyperplanes.

    logit_k = (lam_{p_k} ||a_k|| / sqrt(c))
              * asinh( 2 sqrt(c) <-p_k (+) z, a_k> / ((1 - c ||-p_k (+) z||^2) ||a_k||) )

    The inner product is signed so logits discriminate the two sides of each
    hyperplane. z: (..., L), p/a: (K, L). Returns (..., K).
    """
    p = np.asarray(p, dtype=np.float64)
    a = np.asarray(a, dtype=np.float64)
    _check_normals(a)
    z = ball.check_point(z, "embedding")
    p = ball.check_point(p, "hyperplane offset")
    c = ball.c
    sc = np.sqrt(c)
    m = ball.mobius_add(-p, z[..., None, :])  # (..., K, L)
    a_norm = np.linalg.norm(a, axis=-1)  # (K,)
    lam_p = 2.0 / (1.0 - c * np.sum(p * p, axis=-1))  # (K,)
    u = np.sum(m * a, axis=-1)  # (..., K)
    q = 1.0 - c * np.sum(m * m, axis=-1)
    s = 2.0 * sc * u / (q * a_norm)
    return lam_p * a_norm / sc * np.arcsinh(s)


def mlr_logits(
    z: np.ndarray,
    hyperplanes: list[Hyperplane] | tuple[np.ndarray, np.ndarray],
    mode: str = "hyperbolic",
    ball: PoincareBall | None = None,
) -> np.ndarray:
    """Logits of one MLR head, hyperbolic or euclidean.

    ``hyperplanes`` is either a list of Hyperplane or a (p, a) pair of
    (K, L) arrays.
    """
    if isinstance(hyperplanes, (list, tuple)) and hyperplanes and isinstance(hyperplanes[0], Hyperplane):
        p = np.stack([h.p for h in hyperplanes])
        a = np.stack([h.a for h in hyperplanes])
    else:
        p, a = hyperplanes
    if mode == "euclidean":
        return mlr_logits_euclidean(z, p, a)
    if mode == "hyperbolic":
        if ball is None:
            raise GeometryError("hyperbolic mode requires a ball")
        return mlr_logits_hyperbolic(z, p, a, ball)
    raise GeometryError(f"unknown MLR mode {mode!r}")


def _check_normals(a: np.ndarray) -> None:
    if np.any(np.linalg.norm(a, axis=-1) <= MIN_NORMAL):
        raise GeometryError("hyperplane normal is numerically zero (degenerate head)")
