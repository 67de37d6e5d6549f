"""Deterministic synthetic hierarchical dataset: 2 parent classes over 5 leaf
classes, fully mixed without gains, split 70/20/10 by track.

Leaf recipes are chosen to be spectro-temporally distinct so a small model
can separate them, while preserving the 2-parent / 3+2-leaf shape:

  tonal:  low_harmonic  — harmonic stack, f0 60-120 Hz, energy below ~1.3 kHz
          mid_harmonic  — f0 200-400 Hz with vibrato
          plucked       — exponentially decaying tones 300-800 Hz on a grid
  noisy:  percussive    — broadband impulses on a tempo grid
          band_noise    — amplitude-modulated 1-3 kHz noise

All samples are quantized to a 2^-20 grid with leaf peaks <= 0.5, which makes
every mixture/submix sum exact in float64 *and* exactly representable in the
float32 wav files, so additivity survives a disk round trip bit-for-bit.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .dsp import SAMPLE_RATE, Waveform, write_wav

MANIFEST_VERSION = 1

QUANT_STEP = 2.0**-20


class DataError(ValueError):
    pass


@dataclass(frozen=True)
class HierarchySpec:
    parents: tuple[str, ...]
    leaves: tuple[str, ...]
    leaf_parent: tuple[int, ...]  # parent index per leaf

    def __post_init__(self):
        if len(self.leaf_parent) != len(self.leaves):
            raise DataError("one parent assignment per leaf required")
        if any(p < 0 or p >= len(self.parents) for p in self.leaf_parent):
            raise DataError("leaf assigned to unknown parent")
        if len(self.leaves) < len(self.parents) or not self.parents:
            raise DataError("need at least one parent and as many leaves as parents")

    @property
    def n_parents(self) -> int:
        return len(self.parents)

    @property
    def n_leaves(self) -> int:
        return len(self.leaves)

    def leaves_of(self, parent_idx: int) -> list[int]:
        return [i for i, p in enumerate(self.leaf_parent) if p == parent_idx]

    def to_dict(self) -> dict:
        return {"parents": list(self.parents), "leaves": list(self.leaves), "leaf_parent": list(self.leaf_parent)}

    @classmethod
    def from_dict(cls, d: dict) -> "HierarchySpec":
        return cls(tuple(d["parents"]), tuple(d["leaves"]), tuple(d["leaf_parent"]))


def default_hierarchy() -> HierarchySpec:
    return HierarchySpec(
        parents=("tonal", "noisy"),
        leaves=("low_harmonic", "mid_harmonic", "plucked", "percussive", "band_noise"),
        leaf_parent=(0, 0, 0, 1, 1),
    )


@dataclass(frozen=True)
class TrackSpec:
    track_id: str
    seed: int
    duration: float
    leaf_params: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"track_id": self.track_id, "seed": self.seed, "duration": self.duration, "leaf_params": self.leaf_params}

    @classmethod
    def from_dict(cls, d: dict) -> "TrackSpec":
        return cls(d["track_id"], int(d["seed"]), float(d["duration"]), d["leaf_params"])


def _quantize(x: np.ndarray) -> np.ndarray:
    return np.round(x / QUANT_STEP) * QUANT_STEP


def _leaf_rng(spec: TrackSpec, leaf_index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(entropy=spec.seed, spawn_key=(leaf_index,)))


def _draw_leaf_params(rng: np.random.Generator) -> dict:
    """Per-track per-leaf synthesis parameters, stored in the manifest."""
    return {
        "low_harmonic": {
            "f0": float(rng.uniform(60.0, 120.0)),
            "note_rate": float(rng.uniform(0.8, 1.6)),
            "peak": float(rng.uniform(0.25, 0.45)),
        },
        "mid_harmonic": {
            "f0": float(rng.uniform(200.0, 400.0)),
            "vibrato_hz": float(rng.uniform(4.0, 7.0)),
            "vibrato_depth": float(rng.uniform(0.01, 0.03)),
            "peak": float(rng.uniform(0.25, 0.45)),
        },
        "plucked": {
            "grid_s": float(rng.uniform(0.3, 0.5)),
            "decay_s": float(rng.uniform(0.08, 0.18)),
            "peak": float(rng.uniform(0.3, 0.5)),
        },
        "percussive": {
            "grid_s": float(rng.uniform(0.2, 0.35)),
            "burst_ms": float(rng.uniform(8.0, 25.0)),
            "peak": float(rng.uniform(0.3, 0.5)),
        },
        "band_noise": {
            "band": [1000.0, 3000.0],
            "am_hz": float(rng.uniform(0.5, 2.0)),
            "am_depth": float(rng.uniform(0.5, 0.9)),
            "peak": float(rng.uniform(0.2, 0.4)),
        },
    }


def _normalize_peak(x: np.ndarray, peak: float) -> np.ndarray:
    top = np.max(np.abs(x))
    if top > 0:
        x = x * (peak / top)
    return _quantize(x)


def _bandlimit(x: np.ndarray, lo_hz: float, hi_hz: float) -> np.ndarray:
    spec = np.fft.rfft(x)
    freqs = np.fft.rfftfreq(len(x), 1.0 / SAMPLE_RATE)
    spec[(freqs < lo_hz) | (freqs > hi_hz)] = 0.0
    return np.fft.irfft(spec, n=len(x))


def _synth_low_harmonic(rng, n, p):
    t = np.arange(n) / SAMPLE_RATE
    note_len = int(SAMPLE_RATE / p["note_rate"])
    out = np.zeros(n)
    pos = 0
    while pos < n:
        f0 = p["f0"] * rng.uniform(0.9, 1.1)
        seg = slice(pos, min(pos + note_len, n))
        ts = t[seg] - t[seg.start]
        tone = np.zeros(seg.stop - seg.start)
        for h in range(1, int(1300.0 // f0) + 1):
            tone += np.sin(2 * np.pi * h * f0 * ts + rng.uniform(0, 2 * np.pi)) / h
        env = np.minimum(1.0, ts / 0.02) * np.minimum(1.0, (ts[-1] - ts) / 0.05 + 1e-6)
        out[seg] = tone * env
        pos += note_len
    lfo = 0.7 + 0.3 * np.sin(2 * np.pi * rng.uniform(0.2, 0.5) * t + rng.uniform(0, 2 * np.pi))
    return out * lfo


def _synth_mid_harmonic(rng, n, p):
    t = np.arange(n) / SAMPLE_RATE
    vib = 1.0 + p["vibrato_depth"] * np.sin(2 * np.pi * p["vibrato_hz"] * t)
    phase = 2 * np.pi * np.cumsum(p["f0"] * vib) / SAMPLE_RATE
    out = np.zeros(n)
    for h in range(1, int(2400.0 // p["f0"]) + 1):
        out += np.sin(h * phase + rng.uniform(0, 2 * np.pi)) / h
    lfo = 0.6 + 0.4 * np.sin(2 * np.pi * rng.uniform(0.3, 0.8) * t + rng.uniform(0, 2 * np.pi))
    return out * lfo


def _synth_plucked(rng, n, p):
    t = np.arange(n) / SAMPLE_RATE
    out = np.zeros(n)
    grid = int(p["grid_s"] * SAMPLE_RATE)
    for onset in range(0, n, grid):
        f = rng.uniform(300.0, 800.0)
        length = min(n - onset, int(6 * p["decay_s"] * SAMPLE_RATE))
        ts = t[:length]
        tone = np.sin(2 * np.pi * f * ts) + 0.5 * np.sin(2 * np.pi * 2 * f * ts)
        out[onset : onset + length] += tone * np.exp(-ts / p["decay_s"])
    return out


def _synth_percussive(rng, n, p):
    out = np.zeros(n)
    grid = int(p["grid_s"] * SAMPLE_RATE)
    burst = int(p["burst_ms"] / 1000.0 * SAMPLE_RATE)
    ts = np.arange(burst) / SAMPLE_RATE
    for onset in range(0, n, grid):
        length = min(burst, n - onset)
        noise = rng.standard_normal(length)
        out[onset : onset + length] += noise * np.exp(-ts[:length] / (p["burst_ms"] / 3000.0))
    return out


def _synth_band_noise(rng, n, p):
    t = np.arange(n) / SAMPLE_RATE
    noise = _bandlimit(rng.standard_normal(n), p["band"][0], p["band"][1])
    am = 1.0 - p["am_depth"] * 0.5 * (1.0 + np.sin(2 * np.pi * p["am_hz"] * t + rng.uniform(0, 2 * np.pi)))
    return noise * am


_SYNTHS = {
    "low_harmonic": _synth_low_harmonic,
    "mid_harmonic": _synth_mid_harmonic,
    "plucked": _synth_plucked,
    "percussive": _synth_percussive,
    "band_noise": _synth_band_noise,
}


def synth_leaf_source(spec: TrackSpec, leaf: str) -> Waveform:
    """Render one leaf stem; deterministic in (spec.seed, leaf index)."""
    hierarchy = default_hierarchy()
    if leaf not in hierarchy.leaves:
        raise DataError(f"unknown leaf class {leaf!r}")
    leaf_index = hierarchy.leaves.index(leaf)
    rng = _leaf_rng(spec, leaf_index)
    n = int(round(spec.duration * SAMPLE_RATE))
    params = spec.leaf_params.get(leaf) if spec.leaf_params else None
    if params is None:
        params = _draw_leaf_params(_leaf_rng(spec, 1000))[leaf]
    x = _SYNTHS[leaf](rng, n, params)
    return Waveform(_normalize_peak(x, params["peak"]))


def mix_track(leaves: list[Waveform], hierarchy: HierarchySpec) -> tuple[Waveform, list[Waveform]]:
    """Exact sample-wise sums: full mixture and per-parent submixes.

    Summation order is fixed to leaf-index order so results are bit-reproducible.
    """
    if len(leaves) != hierarchy.n_leaves:
        raise DataError("one waveform per leaf required")
    n = len(leaves[0])
    if any(len(w) != n for w in leaves):
        raise DataError("leaf lengths disagree")
    mixture = np.zeros(n)
    for w in leaves:
        mixture = mixture + w.samples
    submixes = []
    for pi in range(hierarchy.n_parents):
        sub = np.zeros(n)
        for li in hierarchy.leaves_of(pi):
            sub = sub + leaves[li].samples
        submixes.append(Waveform(sub))
    return Waveform(mixture), submixes


@dataclass
class DatasetManifest:
    hierarchy: HierarchySpec
    sample_rate: int
    splits: dict[str, list[TrackSpec]]
    version: int = MANIFEST_VERSION

    def all_tracks(self) -> list[TrackSpec]:
        return [t for split in self.splits.values() for t in split]

    def to_dict(self) -> dict:
        return {
            "version": self.version,
            "sample_rate": self.sample_rate,
            "hierarchy": self.hierarchy.to_dict(),
            "splits": {name: [t.to_dict() for t in specs] for name, specs in self.splits.items()},
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DatasetManifest":
        return cls(
            hierarchy=HierarchySpec.from_dict(d["hierarchy"]),
            sample_rate=int(d["sample_rate"]),
            splits={name: [TrackSpec.from_dict(t) for t in specs] for name, specs in d["splits"].items()},
            version=int(d["version"]),
        )

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True))

    @classmethod
    def load(cls, path) -> "DatasetManifest":
        return cls.from_dict(json.loads(Path(path).read_text()))


def render_track(spec: TrackSpec, hierarchy: HierarchySpec) -> tuple[Waveform, list[Waveform], list[Waveform]]:
    """(mixture, parent submixes, leaf stems) for one track spec."""
    leaves = [synth_leaf_source(spec, leaf) for leaf in hierarchy.leaves]
    mixture, submixes = mix_track(leaves, hierarchy)
    return mixture, submixes, leaves


def track_dir(root, track_id: str) -> Path:
    return Path(root) / "tracks" / track_id


def write_track(root, spec: TrackSpec, hierarchy: HierarchySpec) -> None:
    mixture, submixes, leaves = render_track(spec, hierarchy)
    out = track_dir(root, spec.track_id)
    out.mkdir(parents=True, exist_ok=True)
    write_wav(out / "mixture.wav", mixture)
    for name, sub in zip(hierarchy.parents, submixes):
        write_wav(out / f"parent_{name}.wav", sub)
    for name, leaf in zip(hierarchy.leaves, leaves):
        write_wav(out / f"leaf_{name}.wav", leaf)


def build_dataset(root, n_tracks: int = 200, duration: float = 6.0, master_seed: int = 2024) -> DatasetManifest:
    """Generate audio + manifest under ``root``; splits 70/20/10 by track."""
    if n_tracks < 10:
        raise DataError("need at least 10 tracks for three non-empty splits")
    hierarchy = default_hierarchy()
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)

    specs = []
    seed_seq = np.random.SeedSequence(master_seed)
    track_seeds = seed_seq.generate_state(n_tracks, dtype=np.uint64)
    if len(set(track_seeds.tolist())) != n_tracks:
        raise DataError("track seed collision; pick a different master seed")
    for i in range(n_tracks):
        seed = int(track_seeds[i])
        param_rng = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(1000,)))
        specs.append(
            TrackSpec(
                track_id=f"track_{i:04d}",
                seed=seed,
                duration=duration,
                leaf_params=_draw_leaf_params(param_rng),
            )
        )

    n_train = int(round(n_tracks * 0.7))
    n_val = int(round(n_tracks * 0.2))
    manifest = DatasetManifest(
        hierarchy=hierarchy,
        sample_rate=SAMPLE_RATE,
        splits={
            "train": specs[:n_train],
            "val": specs[n_train : n_train + n_val],
            "test": specs[n_train + n_val :],
        },
    )
    for spec in specs:
        write_track(root, spec, hierarchy)
    manifest.save(root / "manifest.json")
    return manifest
