#!/usr/bin/env python3
# What the embedding norm buys you: bins with many overlapping sources sit
# near the ball origin (low certainty), silencing low-norm bins trades
# artifacts for interference reduction, and the cheap single-pass norm map
# correlates with the expensive Monte-Carlo-dropout entropy map.

import pathlib
import tempfile

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from hypersep import active_source_count, bayesian_certainty, forward_masks, stft
from hypersep.certainty import hyperbolic_certainty_map, norm_histograms, pearson_correlation
from hypersep.data import build_dataset
from hypersep.evaluation import threshold_sweep
from hypersep.training import RunConfig, load_track_audio, train

OUT = pathlib.Path(__file__).parent / "output"
OUT.mkdir(exist_ok=True)

with tempfile.TemporaryDirectory() as tmp:
    manifest = build_dataset(tmp, n_tracks=30, duration=4.0, master_seed=3)
    config = RunConfig(dataset=tmp, loss="ce_ibm_w", epochs=10, seed=0)
    model, _ = train(config)

    # -- norms grouped by ground-truth activity --------------------------------
    track = manifest.splits["test"][0]
    audio = load_track_audio(tmp, track, manifest.hierarchy)
    X = stft(audio.mixture)
    counts = active_source_count([stft(w) for w in audio.leaves])
    _, _, field_ = forward_masks(X, model)
    hists = norm_histograms(field_, counts)
    print("mean normalized norm by number of active sources:")
    for bucket in ("0", "1", "2", "3", "4+"):
        print(f"  {bucket:2s}: {hists.means[bucket]:.3f}  ({hists.populations[bucket]} bins)")

    # -- threshold sweep --------------------------------------------------------
    sweep = threshold_sweep(model, tmp, manifest, "test")
    thetas = [s["theta"] for s in sweep["sweep"]]
    sir = [s["averages"]["leaves"]["si_sir"] for s in sweep["sweep"]]
    sar = [s["averages"]["leaves"]["si_sar"] for s in sweep["sweep"]]
    sdr = [s["averages"]["leaves"]["si_sdr"] for s in sweep["sweep"]]

    # -- hyperbolic vs Bayesian certainty ---------------------------------------
    hyp = hyperbolic_certainty_map(field_, "hyperbolic-distance")
    bay = bayesian_certainty(model, X, n_passes=100, seed=0)
    rho = pearson_correlation(hyp, bay)
    print(f"\nPearson rho, hyperbolic vs MC-dropout certainty (100 passes): {rho:.3f}")

fig, axes = plt.subplots(1, 3, figsize=(14, 3.6))

centers = (hists.edges[:-1] + hists.edges[1:]) / 2
for bucket in ("1", "2", "4+"):
    total = max(hists.populations[bucket], 1)
    axes[0].plot(centers, hists.counts[bucket] / total, label=f"{bucket} active")
axes[0].set_xlabel("normalized norm")
axes[0].set_ylabel("fraction of bins")
axes[0].set_title("norms by source activity")
axes[0].legend()

axes[1].plot(thetas, sir, label="SI-SIR")
axes[1].plot(thetas, sar, label="SI-SAR")
axes[1].plot(thetas, sdr, label="SI-SDR", ls="--")
axes[1].set_xlabel("certainty threshold")
axes[1].set_ylabel("dB (leaf average)")
axes[1].set_title("interference/artifact trade-off")
axes[1].legend()

lo, hi = np.percentile(hyp.values, [30, 95])
axes[2].imshow(np.clip(hyp.values.T, lo, hi), origin="lower", aspect="auto", cmap="viridis")
axes[2].set_title(f"hyperbolic certainty map (rho vs Bayesian: {rho:.2f})")
axes[2].set_xlabel("frame")

fig.savefig(OUT / "05_certainty.png", dpi=120, bbox_inches="tight")
print("\nwrote", OUT / "05_certainty.png")
