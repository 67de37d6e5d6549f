"""Certainty maps from embedding norms, certainty-threshold mask editing,
Monte-Carlo-dropout certainty, and activity-conditioned norm statistics.

The threshold domain is the normalized norm sqrt(c)*||z|| in [0, 1), which
makes thresholds comparable across curvatures (the configured c = 0.1 ball
has radius sqrt(10); raw norms would not fit a [0, 1) slider).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .dsp import ComplexSpectrogram
from .model import DropoutPlan, EmbeddingField, ModelParams, leaf_probabilities

KINDS = ("hyperbolic-norm", "hyperbolic-distance", "bayesian-entropy")


class CertaintyError(ValueError):
    pass


@dataclass(frozen=True)
class CertaintyMap:
    values: np.ndarray  # (T, F)
    kind: str

    def __post_init__(self):
        if self.kind not in KINDS:
            raise CertaintyError(f"unknown certainty kind {self.kind!r}")
        if self.values.ndim != 2:
            raise CertaintyError("certainty maps are (T, F) fields")


def hyperbolic_certainty_map(Z: EmbeddingField, kind: str = "hyperbolic-norm") -> CertaintyMap:
    """Per-bin certainty from the ball embeddings.

    ``hyperbolic-norm``:     sqrt(c) * ||z||, in [0, 1)
    ``hyperbolic-distance``: the exact distance to the origin d_c(0, z)
    Both induce the same ordering of bins.
    """
    if Z.mode != "hyperbolic":
        raise CertaintyError("certainty maps need hyperbolic embeddings")
    if kind == "hyperbolic-norm":
        return CertaintyMap(Z.normalized_norms(), kind)
    if kind == "hyperbolic-distance":
        return CertaintyMap(Z.ball.dist0(Z.values), kind)
    raise CertaintyError(f"not a hyperbolic certainty kind: {kind!r}")


def threshold_masks(masks: np.ndarray, cert: CertaintyMap, theta: float) -> np.ndarray:
    """Silence every class at bins whose normalized norm falls below ``theta``.

    theta = 0 keeps all bins (the returned array equals the input bit-for-bit).
    """
    if not (0.0 <= theta < 1.0):
        raise CertaintyError(f"theta must lie in [0, 1), got {theta}")
    if cert.kind != "hyperbolic-norm":
        raise CertaintyError("thresholding is defined on the normalized-norm map")
    masks = np.asarray(masks)
    if masks.shape[-2:] != cert.values.shape:
        raise CertaintyError("mask and certainty shapes disagree")
    if theta == 0.0:
        return masks
    keep = cert.values >= theta
    return masks * keep


def bayesian_certainty(
    model: ModelParams,
    X: ComplexSpectrogram,
    n_passes: int,
    dropout_rate: float = 0.5,
    seed: int = 0,
) -> CertaintyMap:
    """Negative predictive entropy over the leaf head:
    zeta = sum_k p_bar_k log p_bar_k with p_bar the mean softmax over
    ``n_passes`` stochastic forward passes (dropout at every recurrent-layer
    output). Values lie in [-log K_leaf, 0]; deterministic given the seed.
    """
    if n_passes < 1:
        raise CertaintyError("need at least one stochastic pass")
    seeds = np.random.SeedSequence(seed).spawn(n_passes)
    plan = DropoutPlan.mc(dropout_rate) if dropout_rate > 0 else None
    mean_probs: np.ndarray | None = None
    for s in seeds:
        rng = np.random.default_rng(s)
        probs = leaf_probabilities(X, model, plan, rng if plan else None)
        mean_probs = probs if mean_probs is None else mean_probs + probs
    mean_probs /= n_passes
    safe = np.maximum(mean_probs, 1e-300)
    zeta = np.sum(mean_probs * np.log(safe), axis=-1)
    return CertaintyMap(zeta, "bayesian-entropy")


def pearson_correlation(a: CertaintyMap, b: CertaintyMap) -> float:
    """Pearson coefficient across all T-F bins of two equal-shape maps."""
    if a.values.shape != b.values.shape:
        raise CertaintyError("certainty maps differ in shape")
    x = a.values.ravel()
    y = b.values.ravel()
    if np.std(x) == 0.0 or np.std(y) == 0.0:
        raise CertaintyError("correlation undefined for a constant map")
    return float(np.corrcoef(x, y)[0, 1])


COUNT_BUCKETS = ("0", "1", "2", "3", "4+")


@dataclass
class NormHistogramSet:
    """Histograms of normalized embedding norms grouped by active-source count."""

    edges: np.ndarray
    counts: dict[str, np.ndarray] = field(default_factory=dict)
    means: dict[str, float] = field(default_factory=dict)
    populations: dict[str, int] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "edges": self.edges.tolist(),
            "counts": {k: v.tolist() for k, v in self.counts.items()},
            "means": self.means,
            "populations": self.populations,
        }


def norm_histograms(Z: EmbeddingField, counts: np.ndarray, n_bins: int = 40) -> NormHistogramSet:
    """Group normalized norms by the per-bin active-source count (0,1,2,3,4+)."""
    norms = Z.normalized_norms()
    counts = np.asarray(counts)
    if counts.shape != norms.shape:
        raise CertaintyError("count map and embedding field shapes disagree")
    edges = np.linspace(0.0, 1.0, n_bins + 1)
    out = NormHistogramSet(edges=edges)
    buckets = np.minimum(counts, 4)
    for i, name in enumerate(COUNT_BUCKETS):
        sel = norms[buckets == i]
        hist, _ = np.histogram(sel, bins=edges)
        out.counts[name] = hist
        out.populations[name] = int(sel.size)
        out.means[name] = float(sel.mean()) if sel.size else float("nan")
    return out
