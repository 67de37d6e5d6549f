"""Evaluation harness: per-class metric reports with No-Proc and Oracle-PSF
rows, certainty-threshold sweeps, hyperbolic-vs-Bayesian certainty
comparison, and the curvature/dimension grid.

Per-track metrics are averaged with a deterministic, track-index-ordered
reduction; track evaluation may fan out over a thread pool without changing
the result.
"""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .certainty import bayesian_certainty, hyperbolic_certainty_map, pearson_correlation, threshold_masks
from .data import DatasetManifest, HierarchySpec, TrackSpec
from .dsp import ComplexSpectrogram, Waveform, apply_mask_resynth, oracle_psf_mask, stft
from .model import ModelParams, forward_masks
from .objectives import MetricReport, si_sdr, si_sir_sar
from .training import TrackAudio, load_track_audio


THETA_GRID = tuple(round(0.05 * i, 2) for i in range(20))  # 0.00 .. 0.95


def default_theta_grid() -> list[float]:
    return list(THETA_GRID)


@dataclass
class TrackEstimates:
    """Per-class estimates for one track, aligned with hierarchy order."""

    parents: list[np.ndarray]
    leaves: list[np.ndarray]


def separate(model: ModelParams, mixture: Waveform, theta: float = 0.0) -> TrackEstimates:
    """Separate one mixture with the model's masks, optionally thresholded."""
    X = stft(mixture, model.config.stft)
    parent_masks, leaf_masks, field_ = forward_masks(X, model)
    if theta > 0.0:
        cert = hyperbolic_certainty_map(field_, "hyperbolic-norm")
        parent_masks = threshold_masks(parent_masks, cert, theta)
        leaf_masks = threshold_masks(leaf_masks, cert, theta)
    parents = [w.samples for w in apply_mask_resynth(X, parent_masks)]
    leaves = [w.samples for w in apply_mask_resynth(X, leaf_masks)]
    return TrackEstimates(parents, leaves)


def _track_class_metrics(
    estimates: TrackEstimates, audio: TrackAudio, hierarchy: HierarchySpec
) -> dict[str, dict[str, float]]:
    out = {}
    parent_refs = [w.samples for w in audio.parents]
    leaf_refs = [w.samples for w in audio.leaves]
    for i, name in enumerate(hierarchy.parents):
        sdr = si_sdr(estimates.parents[i], parent_refs[i])
        sir, sar = si_sir_sar(estimates.parents[i], parent_refs, i)
        out[name] = {"si_sdr": sdr, "si_sir": sir, "si_sar": sar}
    for i, name in enumerate(hierarchy.leaves):
        sdr = si_sdr(estimates.leaves[i], leaf_refs[i])
        sir, sar = si_sir_sar(estimates.leaves[i], leaf_refs, i)
        out[name] = {"si_sdr": sdr, "si_sir": sir, "si_sar": sar}
    return out


def _oracle_estimates(audio: TrackAudio, stft_config) -> TrackEstimates:
    X = stft(audio.mixture, stft_config)
    parent_masks = np.stack([oracle_psf_mask(stft(w, stft_config), X) for w in audio.parents])
    leaf_masks = np.stack([oracle_psf_mask(stft(w, stft_config), X) for w in audio.leaves])
    parents = [w.samples for w in apply_mask_resynth(X, parent_masks)]
    leaves = [w.samples for w in apply_mask_resynth(X, leaf_masks)]
    return TrackEstimates(parents, leaves)


def _noproc_estimates(audio: TrackAudio, hierarchy: HierarchySpec) -> TrackEstimates:
    mix = audio.mixture.samples
    return TrackEstimates([mix] * hierarchy.n_parents, [mix] * hierarchy.n_leaves)


def _mean_report(per_track: list[dict[str, dict[str, float]]], hierarchy: HierarchySpec) -> MetricReport:
    report = MetricReport(hierarchy)
    for name in tuple(hierarchy.parents) + tuple(hierarchy.leaves):
        report.add(
            name,
            float(np.mean([t[name]["si_sdr"] for t in per_track])),
            float(np.mean([t[name]["si_sir"] for t in per_track])),
            float(np.mean([t[name]["si_sar"] for t in per_track])),
        )
    return report


def _map_tracks(fn, tracks: list[TrackSpec], jobs: int = 1) -> list:
    """Apply fn to tracks, preserving index order regardless of scheduling."""
    if jobs <= 1:
        return [fn(t) for t in tracks]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, tracks))


def evaluate_report(
    model: ModelParams, dataset_root, manifest: DatasetManifest, split: str, jobs: int = 1
) -> dict:
    """Table-style report: model vs No-Proc vs Oracle-PSF, per class and averaged."""
    hierarchy = manifest.hierarchy
    tracks = manifest.splits[split]

    def one(track: TrackSpec) -> tuple[dict, dict, dict]:
        audio = load_track_audio(dataset_root, track, hierarchy)
        est = separate(model, audio.mixture)
        return (
            _track_class_metrics(est, audio, hierarchy),
            _track_class_metrics(_noproc_estimates(audio, hierarchy), audio, hierarchy),
            _track_class_metrics(_oracle_estimates(audio, model.config.stft), audio, hierarchy),
        )

    rows = _map_tracks(one, tracks, jobs)
    return {
        "split": split,
        "tracks": [t.track_id for t in tracks],
        "rows": {
            "model": _mean_report([r[0] for r in rows], hierarchy).to_dict(),
            "no_proc": _mean_report([r[1] for r in rows], hierarchy).to_dict(),
            "oracle_psf": _mean_report([r[2] for r in rows], hierarchy).to_dict(),
        },
    }


def threshold_sweep(
    model: ModelParams,
    dataset_root,
    manifest: DatasetManifest,
    split: str,
    thetas: list[float] | None = None,
    jobs: int = 1,
) -> dict:
    """Separation metrics across the certainty-threshold grid."""
    hierarchy = manifest.hierarchy
    tracks = manifest.splits[split]
    grid = default_theta_grid() if thetas is None else sorted(thetas)

    def one(track: TrackSpec) -> list[dict]:
        audio = load_track_audio(dataset_root, track, hierarchy)
        X = stft(audio.mixture, model.config.stft)
        parent_masks, leaf_masks, field_ = forward_masks(X, model)
        cert = hyperbolic_certainty_map(field_, "hyperbolic-norm")
        per_theta = []
        for theta in grid:
            pm = threshold_masks(parent_masks, cert, theta)
            lm = threshold_masks(leaf_masks, cert, theta)
            est = TrackEstimates(
                [w.samples for w in apply_mask_resynth(X, pm)],
                [w.samples for w in apply_mask_resynth(X, lm)],
            )
            per_theta.append(_track_class_metrics(est, audio, hierarchy))
        return per_theta

    rows = _map_tracks(one, tracks, jobs)
    sweep = []
    for i, theta in enumerate(grid):
        report = _mean_report([r[i] for r in rows], hierarchy)
        sweep.append({"theta": theta, **report.to_dict()})
    return {"split": split, "tracks": [t.track_id for t in tracks], "sweep": sweep}


def certainty_compare(
    model: ModelParams,
    dataset_root,
    manifest: DatasetManifest,
    split: str,
    n_passes: int = 1000,
    dropout_rate: float = 0.5,
    seed: int = 0,
) -> dict:
    """Per-track Pearson correlation between the single-pass hyperbolic
    certainty map and the Monte-Carlo-dropout entropy map."""
    hierarchy = manifest.hierarchy
    per_track = []
    for track in manifest.splits[split]:
        audio = load_track_audio(dataset_root, track, hierarchy)
        X = stft(audio.mixture, model.config.stft)
        _, _, field_ = forward_masks(X, model)
        hyp = hyperbolic_certainty_map(field_, "hyperbolic-distance")
        bay = bayesian_certainty(model, X, n_passes, dropout_rate, seed)
        per_track.append({"track_id": track.track_id, "pearson_rho": pearson_correlation(hyp, bay)})
    rhos = [t["pearson_rho"] for t in per_track]
    return {
        "split": split,
        "n_passes": n_passes,
        "dropout_rate": dropout_rate,
        "per_track": per_track,
        "mean_rho": float(np.mean(rhos)),
        "min_rho": float(np.min(rhos)),
    }


def curvature_dim_grid(
    base_config, dataset_root, manifest: DatasetManifest, split: str, pairs: list[tuple[float, int]], jobs: int = 1
) -> dict:
    """Retrain and evaluate over (curvature, embedding-dim) pairs.

    Average SI-SDR across all (parent and leaf) sources per pair.
    """
    from .training import train

    results = []
    for c, dim in pairs:
        cfg = replace(base_config, curvature=c, embed_dim=dim)
        model, log = train(cfg, manifest)
        report = evaluate_report(model, dataset_root, manifest, split, jobs)
        results.append(
            {
                "curvature": c,
                "embed_dim": dim,
                "avg_si_sdr": report["rows"]["model"]["averages"]["all"]["si_sdr"],
                "final_val_loss": log[-1]["val_loss"],
            }
        )
    return {"split": split, "grid": results}


def write_json(path, payload: dict) -> None:
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True))
