#!/usr/bin/env python3
# Tour of the Poincare-ball primitives: Mobius addition, geodesic distance,
# the origin exponential/logarithmic maps, and hyperbolic MLR decision
# regions on the 2-D disk.

import pathlib

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from hypersep import PoincareBall
from hypersep.geometry import mlr_logits_hyperbolic

OUT = pathlib.Path(__file__).parent / "output"
OUT.mkdir(exist_ok=True)

ball = PoincareBall(1.0)

# Mobius addition is the ball's analogue of vector addition. Collinear
# points add like relativistic velocities:
print("(0.3, 0) + (0.4, 0) on the ball:", ball.mobius_add([0.3, 0.0], [0.4, 0.0]))
print("  (compare (0.3 + 0.4) / (1 + 0.12) =", 0.7 / 1.12, ")")

# Distances blow up near the rim: equal Euclidean steps cover wildly
# different hyperbolic distances.
steps = np.linspace(0.0, 0.99, 12)
points = np.stack([steps, np.zeros_like(steps)], axis=-1)
print("\nhyperbolic distance from origin vs Euclidean norm:")
for p in points[1::3]:
    print(f"  ||x|| = {p[0]:.2f}   d(0, x) = {ball.dist0(p):.3f}")

# exp0/log0 move between the tangent space at the origin and the ball.
rng = np.random.default_rng(0)
v = rng.standard_normal((5, 2))
roundtrip = ball.logmap0(ball.expmap0(v))
print("\nmax |log0(exp0(v)) - v| over 5 random tangents:", np.max(np.abs(roundtrip - v)))

# A small MLR head: decision regions are bounded by hyperbolic hyperplanes
# (circular arcs hitting the rim at right angles).
p = np.array([[0.3, 0.0], [-0.25, 0.25], [0.0, -0.4]])
a = np.array([[1.0, 0.2], [-0.8, 0.9], [0.1, -1.0]])

grid = np.linspace(-0.999, 0.999, 400)
uu, vv = np.meshgrid(grid, grid)
pts = np.stack([uu, vv], axis=-1)
inside = np.linalg.norm(pts, axis=-1) < 0.995
flat = pts[inside]
logits = mlr_logits_hyperbolic(flat, p, a, ball)
classes = np.full(uu.shape, -1)
classes[inside] = np.argmax(logits, axis=-1)

fig, ax = plt.subplots(figsize=(6, 6))
ax.imshow(
    np.ma.masked_equal(classes, -1),
    extent=[-1, 1, -1, 1],
    origin="lower",
    cmap="Pastel1",
    interpolation="nearest",
)
circle = plt.Circle((0, 0), 1.0, fill=False, color="k", lw=1.5)
ax.add_patch(circle)
ax.scatter(p[:, 0], p[:, 1], c="k", marker="x", s=60, label="hyperplane offsets")
ax.set_title("hyperbolic MLR decision regions (c = 1)")
ax.set_aspect("equal")
ax.legend(loc="lower right")
fig.savefig(OUT / "01_decision_regions.png", dpi=120, bbox_inches="tight")
print("\nwrote", OUT / "01_decision_regions.png")
