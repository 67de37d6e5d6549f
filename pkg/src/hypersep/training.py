"""Chunked mini-batch training of the separation model.

Each epoch draws one random chunk per training track (seeded, so runs are
bit-reproducible), batches them, and optimizes the configured objective on
both heads jointly. Euclidean parameters get ADAM; ball-constrained
hyperplane offsets get Riemannian ADAM. Validation uses deterministic
center chunks; the best-validation parameters are retained.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .data import DatasetManifest, HierarchySpec, TrackSpec, track_dir
from .dsp import ComplexSpectrogram, Waveform, read_wav, stft
from .model import DropoutPlan, ModelConfig, ModelParams, forward_batch, init_params, log_magnitude_features
from .objectives import LossConfig, hierarchical_loss, loss_ce, loss_psa, loss_wa
from .optim import AdamState, PlateauSchedule, adam_step, riemannian_adam_step


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class RunConfig:
    """Everything one run needs; defaults mirror the training recipe
    (3.2 s chunks, batch 10, lr 1e-3 with halve-on-plateau) at desk scale."""

    dataset: str
    loss: str = "ce_ibm_w"
    mode: str = "hyperbolic"
    curvature: float = 0.1
    embed_dim: int = 2
    epochs: int = 30
    batch_size: int = 10
    chunk_seconds: float = 3.2
    lr: float = 1e-3
    patience: int = 10
    seed: int = 0
    n_layers: int = 2
    hidden: int = 64
    dropout: float = 0.3
    parent_weight: float = 1.0
    leaf_weight: float = 1.0

    def model_config(self, hierarchy: HierarchySpec) -> ModelConfig:
        return ModelConfig(
            hierarchy=hierarchy,
            mode=self.mode,
            curvature=self.curvature,
            embed_dim=self.embed_dim,
            n_layers=self.n_layers,
            hidden=self.hidden,
            dropout=self.dropout,
        )

    def loss_config(self) -> LossConfig:
        return LossConfig(kind=self.loss, parent_weight=self.parent_weight, leaf_weight=self.leaf_weight)

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


@dataclass
class TrackAudio:
    """One track's waveforms, read once per use from the dataset directory."""

    mixture: Waveform
    parents: list[Waveform]
    leaves: list[Waveform]


def load_track_audio(root, spec: TrackSpec, hierarchy: HierarchySpec) -> TrackAudio:
    tdir = track_dir(root, spec.track_id)
    if not tdir.exists():
        raise FileNotFoundError(f"track directory missing: {tdir}")
    return TrackAudio(
        mixture=read_wav(tdir / "mixture.wav"),
        parents=[read_wav(tdir / f"parent_{name}.wav") for name in hierarchy.parents],
        leaves=[read_wav(tdir / f"leaf_{name}.wav") for name in hierarchy.leaves],
    )


def _crop(w: Waveform, start: int, length: int) -> np.ndarray:
    return w.samples[start : start + length]


@dataclass
class ChunkBatch:
    mixtures: list[ComplexSpectrogram]
    parents: list[list[ComplexSpectrogram]]
    leaves: list[list[ComplexSpectrogram]]
    parent_waves: list[list[np.ndarray]]
    leaf_waves: list[list[np.ndarray]]

    @property
    def features(self) -> np.ndarray:
        return log_magnitude_features(np.stack([m.bins for m in self.mixtures]))


def make_chunk_batch(
    audio: list[TrackAudio], offsets: list[int], chunk_samples: int
) -> ChunkBatch:
    mixtures, parents, leaves, parent_waves, leaf_waves = [], [], [], [], []
    for track, start in zip(audio, offsets):
        mixtures.append(stft(Waveform(_crop(track.mixture, start, chunk_samples))))
        parent_waves.append([_crop(w, start, chunk_samples) for w in track.parents])
        leaf_waves.append([_crop(w, start, chunk_samples) for w in track.leaves])
        parents.append([stft(Waveform(w)) for w in parent_waves[-1]])
        leaves.append([stft(Waveform(w)) for w in leaf_waves[-1]])
    return ChunkBatch(mixtures, parents, leaves, parent_waves, leaf_waves)


def _head_loss(
    kind: str,
    logits_b: ad.Tensor,
    X: ComplexSpectrogram,
    sources: list[ComplexSpectrogram],
    waves: list[np.ndarray],
) -> ad.Tensor:
    from .dsp import ideal_binary_mask

    if kind in ("ce_ibm", "ce_ibm_w"):
        return loss_ce(logits_b, ideal_binary_mask(sources), weighted=kind == "ce_ibm_w", X=X)
    masks = ad.transpose(ad.softmax(logits_b, axis=-1), (2, 0, 1))  # (K, T, F)
    if kind == "psa":
        return loss_psa(masks, X, sources)
    if kind == "wa":
        return loss_wa(masks, X, waves)
    raise TrainingError(f"unknown loss kind {kind!r}")


def batch_loss(
    batch: ChunkBatch,
    params: dict[str, ad.Tensor],
    config: ModelConfig,
    loss_cfg: LossConfig,
    dropout: DropoutPlan | None = None,
    rng: np.random.Generator | None = None,
) -> ad.Tensor:
    parent_logits, leaf_logits, _ = forward_batch(batch.features, params, config, dropout, rng)
    total: ad.Tensor | None = None
    B = len(batch.mixtures)
    for b in range(B):
        X = batch.mixtures[b]
        parent_term = _head_loss(loss_cfg.kind, parent_logits[b], X, batch.parents[b], batch.parent_waves[b])
        leaf_term = _head_loss(loss_cfg.kind, leaf_logits[b], X, batch.leaves[b], batch.leaf_waves[b])
        item = hierarchical_loss(parent_term, leaf_term, loss_cfg)
        total = item if total is None else total + item
    return total * (1.0 / B)


@dataclass
class Trainer:
    config: RunConfig
    manifest: DatasetManifest
    model: ModelParams = field(init=False)
    opt_states: dict[str, AdamState] = field(init=False)
    schedule: PlateauSchedule = field(init=False)

    def __post_init__(self):
        self.model = init_params(self.config.model_config(self.manifest.hierarchy), seed=self.config.seed)
        self.opt_states = {
            name: AdamState.for_param(value, lr=self.config.lr) for name, value in self.model.tensors.items()
        }
        self.schedule = PlateauSchedule(lr=self.config.lr, patience=self.config.patience)

    def _apply_gradients(self, params: dict[str, ad.Tensor]) -> None:
        ball_names = set(self.model.ball_param_names())
        ball = self.model.config.ball
        for name, tensor in params.items():
            if tensor.grad is None:
                continue
            state = self.opt_states[name]
            state.lr = self.schedule.lr
            if name in ball_names:
                self.model.tensors[name] = riemannian_adam_step(self.model.tensors[name], tensor.grad, state, ball)
            else:
                self.model.tensors[name] = adam_step(self.model.tensors[name], tensor.grad, state)

    def _chunk_samples(self, tracks: list[TrackSpec]) -> int:
        rate = self.manifest.sample_rate
        want = int(round(self.config.chunk_seconds * rate))
        shortest = min(int(round(t.duration * rate)) for t in tracks)
        return min(want, shortest)

    def run_epoch(self, epoch: int, root) -> float:
        """One pass over the training split; returns the mean batch loss."""
        cfg = self.config
        tracks = list(self.manifest.splits["train"])
        rng = np.random.default_rng(np.random.SeedSequence(entropy=cfg.seed, spawn_key=(1, epoch)))
        order = rng.permutation(len(tracks))
        chunk = self._chunk_samples(tracks)
        losses = []
        loss_cfg = cfg.loss_config()
        dropout = DropoutPlan.training(cfg.dropout) if cfg.dropout > 0 else None
        for lo in range(0, len(order), cfg.batch_size):
            chosen = [tracks[i] for i in order[lo : lo + cfg.batch_size]]
            audio = [load_track_audio(root, t, self.manifest.hierarchy) for t in chosen]
            offsets = [int(rng.integers(0, max(1, len(a.mixture) - chunk + 1))) for a in audio]
            batch = make_chunk_batch(audio, offsets, chunk)
            params = self.model.as_parameters()
            loss = batch_loss(batch, params, self.model.config, loss_cfg, dropout, rng)
            if not np.isfinite(loss.value):
                raise TrainingError(f"non-finite training loss at epoch {epoch}")
            loss.backward()
            self._apply_gradients(params)
            losses.append(loss.item())
        return float(np.mean(losses))

    def validation_loss(self, root) -> float:
        """Deterministic center-chunk loss over the validation split."""
        cfg = self.config
        tracks = list(self.manifest.splits["val"])
        chunk = self._chunk_samples(tracks)
        losses = []
        loss_cfg = cfg.loss_config()
        with ad.no_grad():
            for lo in range(0, len(tracks), cfg.batch_size):
                chosen = tracks[lo : lo + cfg.batch_size]
                audio = [load_track_audio(root, t, self.manifest.hierarchy) for t in chosen]
                offsets = [max(0, (len(a.mixture) - chunk) // 2) for a in audio]
                batch = make_chunk_batch(audio, offsets, chunk)
                params = {k: ad.Tensor(v) for k, v in self.model.tensors.items()}
                loss = batch_loss(batch, params, self.model.config, loss_cfg)
                losses.append(loss.item())
        val = float(np.mean(losses))
        if not np.isfinite(val):
            raise TrainingError("non-finite validation loss")
        return val


def train(config: RunConfig, manifest: DatasetManifest | None = None, log_fn=None) -> tuple[ModelParams, list[dict]]:
    """Full training run; returns (best-validation model, per-epoch log)."""
    root = Path(config.dataset)
    if manifest is None:
        manifest_path = root / "manifest.json"
        if not manifest_path.exists():
            raise FileNotFoundError(f"no dataset manifest at {manifest_path}")
        manifest = DatasetManifest.load(manifest_path)
    trainer = Trainer(config, manifest)
    best_val = np.inf
    best_model = trainer.model.copy()
    log: list[dict] = []
    for epoch in range(config.epochs):
        t0 = time.monotonic()
        train_loss = trainer.run_epoch(epoch, root)
        val_loss = trainer.validation_loss(root)
        trainer.schedule.step(val_loss)
        # timing stays out of the persisted log so reruns are byte-identical
        entry = {"epoch": epoch, "train_loss": train_loss, "val_loss": val_loss, "lr": trainer.schedule.lr}
        log.append(entry)
        if log_fn is not None:
            log_fn({**entry, "seconds": round(time.monotonic() - t0, 3)})
        if val_loss < best_val:
            best_val = val_loss
            best_model = trainer.model.copy()
    return best_model, log


def save_training_log(path, config: RunConfig, log: list[dict]) -> None:
    Path(path).write_text(json.dumps({"config": config.to_dict(), "epochs": log}, indent=2, sort_keys=True))
