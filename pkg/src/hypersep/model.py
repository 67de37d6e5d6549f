"""The separation network: a bidirectional recurrent encoder over
log-magnitude frames, a Euclidean-to-ball projection layer, and two MLR
heads (parent and leaf) emitting per-bin masks through softmax.

Desk-scale encoder: ``n_layers`` bidirectional tanh-recurrent layers of
``hidden`` units per direction over the frame sequence (each frame is the
full F-dimensional log-magnitude vector), followed by a dense layer to
F x L outputs per frame. In hyperbolic mode the embeddings are mapped onto
the ball with the origin exponential map; in euclidean mode they are used
as-is and no projection happens anywhere in the pipeline.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import autodiff as ad
from .data import HierarchySpec, default_hierarchy
from .dsp import ComplexSpectrogram, StftConfig
from .geometry import PoincareBall

LOG_FLOOR = 1e-8

MODES = ("hyperbolic", "euclidean")


class ModelError(ValueError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    hierarchy: HierarchySpec = field(default_factory=default_hierarchy)
    mode: str = "hyperbolic"
    curvature: float = 0.1
    embed_dim: int = 2
    n_layers: int = 2
    hidden: int = 64
    dropout: float = 0.3
    stft: StftConfig = field(default_factory=StftConfig)

    def __post_init__(self):
        if self.mode not in MODES:
            raise ModelError(f"unknown mode {self.mode!r}")
        if self.mode == "hyperbolic" and self.curvature <= 0:
            raise ModelError("hyperbolic mode needs positive curvature magnitude")

    @property
    def ball(self) -> PoincareBall | None:
        return PoincareBall(self.curvature) if self.mode == "hyperbolic" else None

    def to_dict(self) -> dict:
        return {
            "hierarchy": self.hierarchy.to_dict(),
            "mode": self.mode,
            "curvature": self.curvature,
            "embed_dim": self.embed_dim,
            "n_layers": self.n_layers,
            "hidden": self.hidden,
            "dropout": self.dropout,
            "stft": self.stft.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(
            hierarchy=HierarchySpec.from_dict(d["hierarchy"]),
            mode=d["mode"],
            curvature=float(d["curvature"]),
            embed_dim=int(d["embed_dim"]),
            n_layers=int(d["n_layers"]),
            hidden=int(d["hidden"]),
            dropout=float(d["dropout"]),
            stft=StftConfig.from_dict(d["stft"]),
        )


@dataclass
class ModelParams:
    config: ModelConfig
    tensors: dict[str, np.ndarray]

    # ball-constrained parameter names (Riemannian updates in hyperbolic mode)
    def ball_param_names(self) -> tuple[str, ...]:
        return ("parent_p", "leaf_p") if self.config.mode == "hyperbolic" else ()

    def as_parameters(self) -> dict[str, ad.Tensor]:
        return {k: ad.Parameter(v, k) for k, v in self.tensors.items()}

    def copy(self) -> "ModelParams":
        return ModelParams(self.config, {k: v.copy() for k, v in self.tensors.items()})


def init_params(config: ModelConfig, seed: int = 0) -> ModelParams:
    """Uniform +-1/sqrt(fan_in) encoder weights; normals scaled 0.01; offsets at the origin."""
    rng = np.random.default_rng(seed)
    F = config.stft.n_freqs
    L = config.embed_dim
    H = config.hidden
    tensors: dict[str, np.ndarray] = {}

    def uniform(fan_in, shape):
        bound = 1.0 / np.sqrt(fan_in)
        return rng.uniform(-bound, bound, size=shape)

    in_dim = F
    for layer in range(config.n_layers):
        for direction in ("f", "b"):
            prefix = f"enc{layer}_{direction}"
            tensors[f"{prefix}_wx"] = uniform(in_dim, (in_dim, H))
            tensors[f"{prefix}_wh"] = uniform(H, (H, H))
            tensors[f"{prefix}_bias"] = np.zeros(H)
        in_dim = 2 * H
    tensors["dense_w"] = uniform(2 * H, (2 * H, F * L))
    tensors["dense_b"] = np.zeros(F * L)
    tensors["parent_p"] = np.zeros((config.hierarchy.n_parents, L))
    tensors["parent_a"] = rng.standard_normal((config.hierarchy.n_parents, L)) * 0.01
    tensors["leaf_p"] = np.zeros((config.hierarchy.n_leaves, L))
    tensors["leaf_a"] = rng.standard_normal((config.hierarchy.n_leaves, L)) * 0.01
    return ModelParams(config, tensors)


def log_magnitude_features(bins: np.ndarray) -> np.ndarray:
    """log(|X| + 1e-8), normalized to zero mean / unit variance per track.

    ``bins``: (T, F) or (B, T, F) complex.
    """
    feats = np.log(np.abs(bins) + LOG_FLOOR)
    axes = tuple(range(feats.ndim - 2, feats.ndim))
    mean = feats.mean(axis=axes, keepdims=True)
    std = feats.std(axis=axes, keepdims=True)
    return (feats - mean) / np.maximum(std, 1e-6)


def _recurrent_direction(proj: ad.Tensor, wh: ad.Tensor, reverse: bool) -> list[ad.Tensor]:
    """tanh recurrence over time; ``proj`` is (B, T, H) with input+bias pre-applied."""
    T = proj.value.shape[1]
    steps = range(T - 1, -1, -1) if reverse else range(T)
    outputs: list[ad.Tensor | None] = [None] * T
    h: ad.Tensor | None = None
    for t in steps:
        pre = proj[:, t, :]
        if h is not None:
            pre = pre + ad.matmul(h, wh)
        h = ad.tanh(pre)
        outputs[t] = h
    return outputs  # type: ignore[return-value]


@dataclass(frozen=True)
class DropoutPlan:
    """Which recurrent-layer outputs get dropout, and at what rate."""

    rate: float
    include_last: bool

    @classmethod
    def training(cls, rate: float) -> "DropoutPlan":
        return cls(rate=rate, include_last=False)

    @classmethod
    def mc(cls, rate: float = 0.5) -> "DropoutPlan":
        return cls(rate=rate, include_last=True)


def encode(
    feats: np.ndarray,
    params: dict[str, ad.Tensor],
    config: ModelConfig,
    dropout: DropoutPlan | None = None,
    rng: np.random.Generator | None = None,
) -> ad.Tensor:
    """Euclidean embeddings (B, T, F, L) from normalized features (B, T, F)."""
    if feats.ndim != 3:
        raise ModelError(f"expected (B, T, F) features, got {feats.shape}")
    B, T, F = feats.shape
    if F != config.stft.n_freqs:
        raise ModelError(f"feature width {F} does not match stft config {config.stft.n_freqs}")
    if dropout is not None and rng is None:
        raise ModelError("dropout requires an rng")
    H = config.hidden
    x = ad.Tensor(feats)
    in_dim = F
    for layer in range(config.n_layers):
        flat = x.reshape((B * T, in_dim))
        outputs = []
        for direction, reverse in (("f", False), ("b", True)):
            prefix = f"enc{layer}_{direction}"
            proj = (ad.matmul(flat, params[f"{prefix}_wx"]) + params[f"{prefix}_bias"]).reshape((B, T, H))
            outputs.append(ad.stack(_recurrent_direction(proj, params[f"{prefix}_wh"], reverse), axis=1))
        x = ad.concat(outputs, axis=-1)
        in_dim = 2 * H
        is_last = layer == config.n_layers - 1
        if dropout is not None and (dropout.include_last or not is_last):
            keep = (rng.random(x.value.shape) >= dropout.rate) / (1.0 - dropout.rate)
            x = ad.mul(x, ad.Tensor(keep))
    dense = ad.matmul(x.reshape((B * T, in_dim)), params["dense_w"]) + params["dense_b"]
    return dense.reshape((B, T, F, config.embed_dim))


def embed(z_euclidean: ad.Tensor, config: ModelConfig) -> ad.Tensor:
    """Project embeddings onto the ball (hyperbolic mode); identity otherwise."""
    if config.mode == "euclidean":
        return ad.as_tensor(z_euclidean)
    return ad.expmap0_t(z_euclidean, config.ball)


def head_logits(z: ad.Tensor, params: dict[str, ad.Tensor], config: ModelConfig, head: str) -> ad.Tensor:
    """MLR logits (..., K) for the ``parent`` or ``leaf`` head."""
    p, a = params[f"{head}_p"], params[f"{head}_a"]
    if config.mode == "euclidean":
        return ad.mlr_euclidean_t(z, p, a)
    return ad.mlr_hyperbolic_t(z, p, a, config.ball)


def forward_batch(
    feats: np.ndarray,
    params: dict[str, ad.Tensor],
    config: ModelConfig,
    dropout: DropoutPlan | None = None,
    rng: np.random.Generator | None = None,
) -> tuple[ad.Tensor, ad.Tensor, ad.Tensor]:
    """(parent logits, leaf logits, embeddings), each batched (B, T, F, .)."""
    z = embed(encode(feats, params, config, dropout, rng), config)
    return head_logits(z, params, config, "parent"), head_logits(z, params, config, "leaf"), z


@dataclass(frozen=True)
class EmbeddingField:
    """Per-bin embeddings of one track: (T, F, L), Euclidean or on the ball."""

    values: np.ndarray
    mode: str
    ball: PoincareBall | None = None

    def __post_init__(self):
        if self.mode == "hyperbolic" and self.ball is None:
            raise ModelError("hyperbolic embeddings need their ball")

    def normalized_norms(self) -> np.ndarray:
        if self.mode != "hyperbolic":
            raise ModelError("normalized norms are defined for hyperbolic embeddings")
        return self.ball.normalized_norm(self.values)


def forward_masks(
    X: ComplexSpectrogram, model: ModelParams
) -> tuple[np.ndarray, np.ndarray, EmbeddingField]:
    """Inference on one track: (parent masks (Kp,T,F), leaf masks (Kl,T,F), embeddings)."""
    config = model.config
    feats = log_magnitude_features(X.bins)[None]
    with ad.no_grad():
        params = {k: ad.Tensor(v) for k, v in model.tensors.items()}
        parent_logits, leaf_logits, z = forward_batch(feats, params, config)
        parent_masks = ad.softmax(parent_logits, axis=-1).value[0]
        leaf_masks = ad.softmax(leaf_logits, axis=-1).value[0]
    field_ = EmbeddingField(z.value[0], config.mode, config.ball)
    return np.moveaxis(parent_masks, -1, 0), np.moveaxis(leaf_masks, -1, 0), field_


def leaf_probabilities(
    X: ComplexSpectrogram,
    model: ModelParams,
    dropout: DropoutPlan | None = None,
    rng: np.random.Generator | None = None,
) -> np.ndarray:
    """Leaf-head softmax (T, F, K) for one track, optionally with stochastic dropout."""
    config = model.config
    feats = log_magnitude_features(X.bins)[None]
    with ad.no_grad():
        params = {k: ad.Tensor(v) for k, v in model.tensors.items()}
        z = embed(encode(feats, params, config, dropout, rng), config)
        probs = ad.softmax(head_logits(z, params, config, "leaf"), axis=-1)
    return probs.value[0]
