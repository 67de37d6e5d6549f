"""Reverse-mode differentiation over numpy arrays.

Define-by-run tape: every operation returns a :class:`Tensor` that records
its parents and a VJP closure. ``backward`` walks the tape in reverse
topological order. The op set is deliberately small: what the separation
model and its losses need, plus the Poincare-ball primitives with
hand-written backward rules (decomposing atanh/asinh compositions into
scalar ops is numerically fragile near saturation).

Every op checks its forward output for non-finite values and aborts with
the offending op's name; boundary blowups are the primary failure mode in
hyperbolic training.
"""

from __future__ import annotations

import threading
from contextlib import contextmanager
from typing import Callable, Iterable

import numpy as np

from .geometry import MIN_NORM, PoincareBall


class AutodiffError(RuntimeError):
    pass


# Tape recording is toggled per thread: inference may fan out across a
# thread pool while training records on the main thread.
_state = threading.local()


def _grad_enabled() -> bool:
    return getattr(_state, "grad_enabled", True)


@contextmanager
def no_grad():
    """Disable tape recording (inference mode) on the calling thread."""
    prev = _grad_enabled()
    _state.grad_enabled = False
    try:
        yield
    finally:
        _state.grad_enabled = prev


def _check_finite(value: np.ndarray, op: str, name: str | None = None) -> None:
    if not np.all(np.isfinite(value)):
        where = f" '{name}'" if name else ""
        raise AutodiffError(f"non-finite values produced by op '{op}'{where}")


class Tensor:
    """A node of the computation graph holding a float64 array."""

    __slots__ = ("value", "grad", "op", "name", "requires_grad", "_parents", "_vjp")

    def __init__(self, value, requires_grad: bool = False, name: str | None = None, op: str = "leaf"):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.op = op
        self.name = name
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._vjp: Callable[[np.ndarray], tuple] | None = None

    @property
    def shape(self):
        return self.value.shape

    def item(self) -> float:
        return float(self.value)

    def detach(self) -> np.ndarray:
        return self.value

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self):
        tag = self.name or self.op
        return f"Tensor({tag}, shape={self.value.shape})"

    # operators ---------------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __neg__(self):
        return neg(self)

    def __sub__(self, other):
        return add(self, neg(as_tensor(other)))

    def __rsub__(self, other):
        return add(as_tensor(other), neg(self))

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(as_tensor(other), self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return getitem(self, key)

    def reshape(self, *shape):
        return reshape(self, shape if len(shape) > 1 or isinstance(shape[0], int) else shape[0])

    def sum(self, axis=None, keepdims=False):
        return tensor_sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return tensor_mean(self, axis=axis, keepdims=keepdims)

    def backward(self, seed: np.ndarray | None = None) -> None:
        """Reverse pass from this node; accumulates into leaf ``grad`` fields."""
        if seed is None:
            seed = np.ones_like(self.value)
        else:
            seed = np.asarray(seed, dtype=np.float64)
            if seed.shape != self.value.shape:
                raise AutodiffError(f"seed shape {seed.shape} does not match output shape {self.value.shape}")
        order = _toposort(self)
        self.grad = seed
        for node in order:
            if node._vjp is None or node.grad is None:
                continue
            grads = node._vjp(node.grad)
            for parent, g in zip(node._parents, grads):
                if g is None or not parent.requires_grad:
                    continue
                parent.grad = g if parent.grad is None else parent.grad + g
            if node is not self:
                node.grad = None  # free intermediate buffers as soon as consumed


def Parameter(value, name: str) -> Tensor:
    return Tensor(value, requires_grad=True, name=name, op="param")


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _toposort(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen:
                stack.append((p, False))
    order.reverse()
    return order


def _make(value: np.ndarray, parents: tuple[Tensor, ...], vjp, op: str) -> Tensor:
    _check_finite(value, op)
    out = Tensor(value, op=op)
    if _grad_enabled() and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._vjp = vjp
    return out


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum g down to ``shape`` (reverse of numpy broadcasting)."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


# -- elementwise and linear ops ----------------------------------------------


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.value + b.value

    def vjp(g):
        return _unbroadcast(g, a.value.shape), _unbroadcast(g, b.value.shape)

    return _make(out, (a, b), vjp, "add")


def neg(a) -> Tensor:
    a = as_tensor(a)
    return _make(-a.value, (a,), lambda g: (-g,), "neg")


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.value * b.value

    def vjp(g):
        return _unbroadcast(g * b.value, a.value.shape), _unbroadcast(g * a.value, b.value.shape)

    return _make(out, (a, b), vjp, "mul")


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.value / b.value

    def vjp(g):
        ga = _unbroadcast(g / b.value, a.value.shape)
        gb = _unbroadcast(-g * out / b.value, b.value.shape)
        return ga, gb

    return _make(out, (a, b), vjp, "div")


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.value.ndim != 2 or b.value.ndim != 2:
        raise AutodiffError("matmul supports 2-D operands; reshape first")
    out = a.value @ b.value

    def vjp(g):
        return g @ b.value.T, a.value.T @ g

    return _make(out, (a, b), vjp, "matmul")


def exp(a) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.value)
    return _make(out, (a,), lambda g: (g * out,), "exp")


def log(a) -> Tensor:
    a = as_tensor(a)
    return _make(np.log(a.value), (a,), lambda g: (g / a.value,), "log")


def sqrt(a) -> Tensor:
    a = as_tensor(a)
    out = np.sqrt(a.value)
    return _make(out, (a,), lambda g: (g * 0.5 / np.maximum(out, MIN_NORM),), "sqrt")


def tanh(a) -> Tensor:
    a = as_tensor(a)
    out = np.tanh(a.value)
    return _make(out, (a,), lambda g: (g * (1.0 - out * out),), "tanh")


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    out = 1.0 / (1.0 + np.exp(-a.value))
    return _make(out, (a,), lambda g: (g * out * (1.0 - out),), "sigmoid")


def arctanh(a) -> Tensor:
    a = as_tensor(a)
    out = np.arctanh(a.value)
    return _make(out, (a,), lambda g: (g / (1.0 - a.value * a.value),), "arctanh")


def arcsinh(a) -> Tensor:
    a = as_tensor(a)
    out = np.arcsinh(a.value)
    return _make(out, (a,), lambda g: (g / np.sqrt(1.0 + a.value * a.value),), "arcsinh")


def absolute(a) -> Tensor:
    """|x| with the sign(0) = 0 subgradient convention."""
    a = as_tensor(a)
    return _make(np.abs(a.value), (a,), lambda g: (g * np.sign(a.value),), "abs")


def clamp(a, lo=None, hi=None) -> Tensor:
    """clip(x, lo, hi); subgradient 1 strictly inside the interval, 0 outside."""
    a = as_tensor(a)
    out = np.clip(a.value, lo, hi)
    inside = np.ones_like(a.value)
    if lo is not None:
        inside = inside * (a.value > lo)
    if hi is not None:
        inside = inside * (a.value < hi)

    def vjp(g):
        return (g * inside,)

    return _make(out, (a,), vjp, "clamp")


def tensor_sum(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    out = a.value.sum(axis=axis, keepdims=keepdims)

    def vjp(g):
        g = np.asarray(g)
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.value.shape).copy(),)

    return _make(out, (a,), vjp, "sum")


def tensor_mean(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    out = a.value.mean(axis=axis, keepdims=keepdims)
    count = a.value.size / out.size

    def vjp(g):
        g = np.asarray(g) / count
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.value.shape).copy(),)

    return _make(out, (a,), vjp, "mean")


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    out = a.value.reshape(shape)
    return _make(out, (a,), lambda g: (g.reshape(a.value.shape),), "reshape")


def transpose(a, axes) -> Tensor:
    a = as_tensor(a)
    inv = np.argsort(axes)
    return _make(a.value.transpose(axes), (a,), lambda g: (g.transpose(inv),), "transpose")


def getitem(a, key) -> Tensor:
    a = as_tensor(a)
    out = a.value[key]

    def vjp(g):
        # Accumulate in place into the parent's grad buffer; basic slices
        # never self-overlap, so += is safe here. The buffer must be owned:
        # other VJPs may have handed the parent a read-only view.
        if a.grad is None:
            a.grad = np.zeros_like(a.value)
        elif a.grad.base is not None or not a.grad.flags.writeable:
            a.grad = a.grad.copy()
        a.grad[key] += g
        return (None,)

    return _make(out, (a,), vjp, "getitem")


def stack(tensors: Iterable[Tensor], axis: int = 0) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    out = np.stack([t.value for t in ts], axis=axis)

    def vjp(g):
        return tuple(np.take(g, i, axis=axis) for i in range(len(ts)))

    return _make(out, tuple(ts), vjp, "stack")


def concat(tensors: Iterable[Tensor], axis: int = -1) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    out = np.concatenate([t.value for t in ts], axis=axis)
    sizes = [t.value.shape[axis] for t in ts]
    splits = np.cumsum(sizes)[:-1]

    def vjp(g):
        return tuple(np.split(g, splits, axis=axis))

    return _make(out, tuple(ts), vjp, "concat")


def softmax(a, axis: int = -1) -> Tensor:
    a = as_tensor(a)
    shifted = a.value - a.value.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def vjp(g):
        dot = (g * out).sum(axis=axis, keepdims=True)
        return (out * (g - dot),)

    return _make(out, (a,), vjp, "softmax")


def log_softmax(a, axis: int = -1) -> Tensor:
    a = as_tensor(a)
    shifted = a.value - a.value.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    out = shifted - lse

    def vjp(g):
        return (g - np.exp(out) * g.sum(axis=axis, keepdims=True),)

    return _make(out, (a,), vjp, "log_softmax")


def custom(value: np.ndarray, parents: tuple[Tensor, ...], vjp, op: str) -> Tensor:
    """Build a node with a caller-supplied VJP (for domain-specific primitives)."""
    return _make(value, parents, vjp, op)


# -- Poincare-ball primitives --------------------------------------------------
#
# Each gets a hand-written backward rule. The boundary projection applied in
# the forward pass is treated as the identity in the backward pass (the
# standard convention; gradient checks sample interior points).


def _ball_sqnorm(x):
    return np.sum(x * x, axis=-1, keepdims=True)


def _ball_dot(x, y):
    return np.sum(x * y, axis=-1, keepdims=True)


def _mobius_vjp_arrays(g, x, y, m, c):
    """VJPs of m = x (+)_c y for upstream gradient g (all (..., L))."""
    x2 = _ball_sqnorm(x)
    y2 = _ball_sqnorm(y)
    xy = _ball_dot(x, y)
    alpha = 1.0 + 2.0 * c * xy + c * y2
    beta = 1.0 - c * x2
    den = 1.0 + 2.0 * c * xy + c * c * x2 * y2
    w = g / den
    r = _ball_dot(g, m) / den
    wx = _ball_dot(w, x)
    wy = _ball_dot(w, y)
    gx = alpha * w + 2.0 * c * wx * y - 2.0 * c * wy * x - 2.0 * c * r * y - 2.0 * c * c * r * y2 * x
    gy = beta * w + 2.0 * c * wx * (x + y) - 2.0 * c * r * x - 2.0 * c * c * r * x2 * y
    return gx, gy


def mobius_add_t(x: Tensor, y: Tensor, ball: PoincareBall) -> Tensor:
    x, y = as_tensor(x), as_tensor(y)
    out = ball.mobius_add(x.value, y.value)

    def vjp(g):
        gx, gy = _mobius_vjp_arrays(g, x.value, y.value, out, ball.c)
        return _unbroadcast(gx, x.value.shape), _unbroadcast(gy, y.value.shape)

    return _make(out, (x, y), vjp, "mobius_add")


def expmap0_t(v: Tensor, ball: PoincareBall) -> Tensor:
    v = as_tensor(v)
    c = ball.c
    sc = np.sqrt(c)
    n = np.maximum(np.sqrt(_ball_sqnorm(v.value)), MIN_NORM)
    factor = np.tanh(sc * n) / (sc * n)
    out = ball.project(factor * v.value)

    def vjp(g):
        kn = sc * n
        sech2 = 1.0 / np.cosh(kn) ** 2
        # d(factor)/dn / n, with its n -> 0 limit -(2/3) c
        small = kn < 1e-4
        dfac = np.where(small, -(2.0 / 3.0) * c, (kn * sech2 - np.tanh(kn)) / np.maximum(sc * n ** 3, MIN_NORM))
        return (g * factor + dfac * _ball_dot(g, v.value) * v.value,)

    return _make(out, (v,), vjp, "expmap0")


def logmap0_t(y: Tensor, ball: PoincareBall) -> Tensor:
    y = as_tensor(y)
    c = ball.c
    sc = np.sqrt(c)
    n = np.maximum(np.sqrt(_ball_sqnorm(y.value)), MIN_NORM)
    kn = np.minimum(sc * n, 1.0 - ball.boundary_eps)
    factor = np.arctanh(kn) / (sc * n)
    out = factor * y.value

    def vjp(g):
        small = kn < 1e-4
        dfac = np.where(small, (2.0 / 3.0) * c, (kn / (1.0 - kn * kn) - np.arctanh(kn)) / np.maximum(sc * n ** 3, MIN_NORM))
        return (g * factor + dfac * _ball_dot(g, y.value) * y.value,)

    return _make(out, (y,), vjp, "logmap0")


def conformal_factor_t(x: Tensor, ball: PoincareBall) -> Tensor:
    x = as_tensor(x)
    lam = 2.0 / (1.0 - ball.c * _ball_sqnorm(x.value))
    out = lam[..., 0]

    def vjp(g):
        return (g[..., None] * ball.c * lam * lam * x.value,)

    return _make(out, (x,), vjp, "conformal_factor")


def mlr_euclidean_t(z: Tensor, p: Tensor, a: Tensor) -> Tensor:
    """Logits 4 <z - p_k, a_k>; z: (..., L), p/a: (K, L) -> (..., K)."""
    z, p, a = as_tensor(z), as_tensor(p), as_tensor(a)
    diff = z.value[..., None, :] - p.value
    out = 4.0 * np.sum(diff * a.value, axis=-1)

    def vjp(g):
        gz = 4.0 * np.sum(g[..., None] * a.value, axis=-2)
        lead = tuple(range(g.ndim - 1))
        gp = -4.0 * np.sum(g[..., None] * a.value, axis=lead) if lead else -4.0 * g[..., None] * a.value
        ga = 4.0 * np.sum(g[..., None] * diff, axis=lead) if lead else 4.0 * g[..., None] * diff
        return gz, gp, ga

    return _make(out, (z, p, a), vjp, "mlr_euclidean")


def mlr_hyperbolic_t(z: Tensor, p: Tensor, a: Tensor, ball: PoincareBall) -> Tensor:
    """Hyperbolic MLR logits with signed hyperplane distances.

    z: (..., L) ball points, p: (K, L) ball offsets, a: (K, L) normals.
    Output (..., K). Backward composes the asinh chain with the Mobius VJP.
    """
    z, p, a = as_tensor(z), as_tensor(p), as_tensor(a)
    c = ball.c
    sc = np.sqrt(c)
    zb = z.value[..., None, :]  # (..., 1, L)
    m = ball.mobius_add(-p.value, zb)  # (..., K, L)
    A = np.linalg.norm(a.value, axis=-1)  # (K,)
    lam = 2.0 / (1.0 - c * np.sum(p.value * p.value, axis=-1))  # (K,)
    u = np.sum(m * a.value, axis=-1)  # (..., K)
    q = 1.0 - c * np.sum(m * m, axis=-1)
    s = 2.0 * sc * u / (q * A)
    t = np.arcsinh(s)
    out = lam * A / sc * t

    def vjp(g):
        rsq = 1.0 / np.sqrt(1.0 + s * s)
        tbar = g * lam * A / sc
        sbar = tbar * rsq
        ubar = sbar * 2.0 * sc / (q * A)
        qbar = -ubar * u / q
        n2bar = -c * qbar
        mbar = ubar[..., None] * a.value + 2.0 * n2bar[..., None] * m
        lead = tuple(range(g.ndim - 1))
        # normals: through u, and through the ||a|| factors of both s and the prefactor
        Abar = np.sum(g * lam / sc * (t - s * rsq), axis=lead) if lead else g * lam / sc * (t - s * rsq)
        ga = (np.sum(ubar[..., None] * m, axis=lead) if lead else ubar[..., None] * m) + (Abar / A)[:, None] * a.value
        # offsets: direct conformal-factor term, then the Mobius chain via x = -p
        lambar = np.sum(g * A / sc * t, axis=lead) if lead else g * A / sc * t
        gx, gy = _mobius_vjp_arrays(mbar, -p.value, zb, m, c)
        gp = (lambar * c * lam * lam)[:, None] * p.value - _unbroadcast(gx, p.value.shape)
        gz = _unbroadcast(gy, zb.shape)[..., 0, :]
        return gz, gp, ga

    return _make(out, (z, p, a), vjp, "mlr_hyperbolic")


def poincare_distance_t(x: Tensor, y: Tensor, ball: PoincareBall) -> Tensor:
    """d_c(x, y) composed from the Mobius primitive and the atanh chain."""
    m = mobius_add_t(neg(x), y, ball)
    sq = tensor_sum(mul(m, m), axis=-1)
    n = sqrt(sq)
    sc = np.sqrt(ball.c)
    return mul(arctanh(clamp(mul(n, sc), hi=1.0 - ball.boundary_eps)), 2.0 / sc)


# -- spec-facing harness -------------------------------------------------------


def evaluate(graph: Callable[[dict[str, Tensor]], Tensor], bindings: dict[str, np.ndarray]) -> Tensor:
    """Run a graph-builder against leaf bindings; returns the output node.

    ``graph`` receives a dict of named Parameter tensors and must combine
    them into a single output tensor.
    """
    params = {k: Parameter(np.asarray(v, dtype=np.float64), name=k) for k, v in bindings.items()}
    out = graph(params)
    if not isinstance(out, Tensor):
        raise AutodiffError("graph must return a Tensor")
    return out


def gradient(output: Tensor, seed: np.ndarray | None = None) -> dict[str, np.ndarray]:
    """Reverse pass from ``output``; returns gradients of every named parameter leaf."""
    output.backward(seed)
    grads: dict[str, np.ndarray] = {}
    for node in _toposort(output):
        if node.op == "param" and node.name is not None and node.grad is not None:
            grads[node.name] = node.grad
    return grads


def finite_diff_check(
    graph: Callable[[dict[str, Tensor]], Tensor],
    bindings: dict[str, np.ndarray],
    step: float = 1e-6,
) -> float:
    """Worst relative error between reverse-mode and central differences.

    The graph must be scalar-valued. Intended for toy problem sizes; cost
    is two forward evaluations per parameter element.
    """
    out = evaluate(graph, bindings)
    if out.value.size != 1:
        raise AutodiffError("finite_diff_check requires a scalar-valued graph")
    grads = gradient(out)
    worst = 0.0
    for name, base in bindings.items():
        base = np.asarray(base, dtype=np.float64)
        g_ad = grads.get(name, np.zeros_like(base))
        g_fd = np.zeros_like(base)
        flat = base.reshape(-1)
        fd = g_fd.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            hi = evaluate(graph, bindings).item()
            flat[i] = orig - step
            lo = evaluate(graph, bindings).item()
            flat[i] = orig
            fd[i] = (hi - lo) / (2.0 * step)
        denom = np.maximum(np.maximum(np.abs(g_ad), np.abs(g_fd)), 1e-2)
        worst = max(worst, float(np.max(np.abs(g_ad - g_fd) / denom)))
    return worst
