#!/usr/bin/env python3
# The synthetic hierarchical dataset: two parent classes (tonal / noisy)
# over five spectro-temporally distinct leaf classes, summed without gains.
# Renders one track and plots every stem plus the mixture.

import pathlib
import tempfile

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from hypersep import Waveform, si_sdr, stft
from hypersep.data import build_dataset, default_hierarchy, render_track

OUT = pathlib.Path(__file__).parent / "output"
OUT.mkdir(exist_ok=True)

hierarchy = default_hierarchy()
print("parents:", hierarchy.parents)
print("leaves: ", hierarchy.leaves)
print("leaf -> parent:", dict(zip(hierarchy.leaves, (hierarchy.parents[i] for i in hierarchy.leaf_parent))))

with tempfile.TemporaryDirectory() as tmp:
    manifest = build_dataset(tmp, n_tracks=10, duration=4.0, master_seed=7)
    spec = manifest.splits["train"][0]
    mixture, submixes, leaves = render_track(spec, hierarchy)

# mixtures are genuinely hard: each leaf sits well below the mixture
print("\ninput SI-SDR of the mixture against each leaf:")
for name, leaf in zip(hierarchy.leaves, leaves):
    print(f"  {name:13s}: {si_sdr(mixture.samples, leaf.samples):6.2f} dB")

fig, axes = plt.subplots(6, 1, figsize=(9, 11), sharex=True)
for ax, (title, wave) in zip(
    axes, [("mixture", mixture)] + list(zip(hierarchy.leaves, leaves))
):
    spec_ = stft(wave)
    mag = 20 * np.log10(np.abs(spec_.bins.T) + 1e-8)
    ax.imshow(mag, origin="lower", aspect="auto", vmin=-60, vmax=20, cmap="magma",
              extent=[0, 4, 0, 4])
    ax.set_ylabel(title, fontsize=8)
axes[-1].set_xlabel("time [s]")
fig.suptitle("one synthetic track: mixture and leaf stems")
fig.savefig(OUT / "03_stems.png", dpi=120, bbox_inches="tight")
print("\nwrote", OUT / "03_stems.png")
