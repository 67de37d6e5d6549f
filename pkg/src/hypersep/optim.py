"""ADAM for Euclidean parameters, Riemannian ADAM for ball-constrained ones,
and the halve-on-plateau learning-rate schedule.

The Riemannian variant keeps its moment vectors in the origin tangent frame
without parallel transport between iterates (identity transport) — a
documented simplification of the cited algorithm that is adequate at this
problem scale — and applies updates through the exact exponential map at the
current point, so iterates can never leave the ball.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .geometry import PoincareBall


@dataclass
class AdamState:
    """Per-parameter ADAM accumulator."""

    m: np.ndarray
    v: np.ndarray
    t: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_param(cls, param: np.ndarray, lr: float = 1e-3, **kw) -> "AdamState":
        return cls(m=np.zeros_like(param), v=np.zeros_like(param), lr=lr, **kw)


def _update_moments(state: AdamState, grad: np.ndarray) -> np.ndarray:
    """Advance the step counter and moments; returns the bias-corrected step direction."""
    state.t += 1
    state.m = state.beta1 * state.m + (1.0 - state.beta1) * grad
    state.v = state.beta2 * state.v + (1.0 - state.beta2) * grad * grad
    m_hat = state.m / (1.0 - state.beta1**state.t)
    v_hat = state.v / (1.0 - state.beta2**state.t)
    return m_hat / (np.sqrt(v_hat) + state.eps)


def adam_step(param: np.ndarray, grad: np.ndarray, state: AdamState) -> np.ndarray:
    """One (deterministic) bias-corrected ADAM update; returns the new parameter."""
    grad = np.asarray(grad, dtype=np.float64)
    if grad.shape != param.shape:
        raise ValueError(f"gradient shape {grad.shape} does not match parameter {param.shape}")
    if not np.all(np.isfinite(grad)):
        raise FloatingPointError("non-finite gradient passed to adam_step")
    return param - state.lr * _update_moments(state, grad)


def riemannian_adam_step(
    param: np.ndarray, euclidean_grad: np.ndarray, state: AdamState, ball: PoincareBall
) -> np.ndarray:
    """ADAM on the ball: rescale the gradient by the inverse conformal metric,
    update moments on the rescaled gradient, retract with the exponential map.

    Riemannian gradient = ((1 - c ||x||^2)^2 / 4) * euclidean_grad.
    """
    euclidean_grad = np.asarray(euclidean_grad, dtype=np.float64)
    if euclidean_grad.shape != param.shape:
        raise ValueError(f"gradient shape {euclidean_grad.shape} does not match parameter {param.shape}")
    if not np.all(np.isfinite(euclidean_grad)):
        raise FloatingPointError("non-finite gradient passed to riemannian_adam_step")
    param = ball.check_point(param, "ball parameter")
    sq = np.sum(param * param, axis=-1, keepdims=True)
    rgrad = (1.0 - ball.c * sq) ** 2 / 4.0 * euclidean_grad
    step = -state.lr * _update_moments(state, rgrad)
    return ball.project(ball.expmap(param, step))


@dataclass
class PlateauSchedule:
    """Halve the learning rate after ``patience`` epochs without improvement."""

    lr: float
    patience: int = 10
    factor: float = 0.5
    best: float = field(default=np.inf)
    stale: int = 0

    def step(self, val_loss: float) -> float:
        """Record one epoch's validation loss; returns the (possibly halved) lr."""
        if not np.isfinite(val_loss):
            raise FloatingPointError("non-finite validation loss")
        if val_loss < self.best:
            self.best = val_loss
            self.stale = 0
        else:
            self.stale += 1
            if self.stale >= self.patience:
                self.lr *= self.factor
                self.stale = 0
        return self.lr


def schedule_step(sched: PlateauSchedule, val_loss: float) -> PlateauSchedule:
    sched.step(val_loss)
    return sched
