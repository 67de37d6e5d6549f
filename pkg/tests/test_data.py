import numpy as np
import pytest

from hypersep.data import (
    DataError,
    DatasetManifest,
    TrackSpec,
    build_dataset,
    default_hierarchy,
    mix_track,
    render_track,
    synth_leaf_source,
    track_dir,
)
from hypersep.dsp import Waveform, read_wav, stft


def quick_spec(seed=123, duration=2.0):
    return TrackSpec(track_id="t", seed=seed, duration=duration)


def band_energy_fraction(wave, hi_hz):
    spec = np.fft.rfft(wave.samples)
    freqs = np.fft.rfftfreq(len(wave.samples), 1.0 / wave.sample_rate)
    total = np.sum(np.abs(spec) ** 2)
    return np.sum(np.abs(spec[freqs <= hi_hz]) ** 2) / total


def crest_factor(wave):
    return np.max(np.abs(wave.samples)) / np.sqrt(np.mean(wave.samples**2))


def test_synth_deterministic():
    a = synth_leaf_source(quick_spec(), "plucked")
    b = synth_leaf_source(quick_spec(), "plucked")
    assert np.array_equal(a.samples, b.samples)


def test_leaves_differ_across_seeds():
    a = synth_leaf_source(quick_spec(1), "band_noise")
    b = synth_leaf_source(quick_spec(2), "band_noise")
    assert not np.array_equal(a.samples, b.samples)


def test_low_harmonic_band_concentration():
    for seed in (5, 6, 7):
        w = synth_leaf_source(quick_spec(seed, 3.0), "low_harmonic")
        assert band_energy_fraction(w, 1500.0) >= 0.9


def test_percussive_crest_exceeds_low_harmonic():
    for seed in (8, 9):
        spec = quick_spec(seed, 3.0)
        perc = synth_leaf_source(spec, "percussive")
        harm = synth_leaf_source(spec, "low_harmonic")
        assert crest_factor(perc) > crest_factor(harm)


def test_unknown_leaf_rejected():
    with pytest.raises(DataError):
        synth_leaf_source(quick_spec(), "kazoo")


def test_mix_additivity_exact():
    hierarchy = default_hierarchy()
    spec = quick_spec(77, 1.5)
    leaves = [synth_leaf_source(spec, leaf) for leaf in hierarchy.leaves]
    mixture, submixes = mix_track(leaves, hierarchy)
    acc = np.zeros(len(mixture))
    for w in leaves:
        acc = acc + w.samples
    assert np.array_equal(mixture.samples, acc)
    # parent submixes partition the mixture exactly
    total = np.zeros(len(mixture))
    for sub in submixes:
        total = total + sub.samples
    assert np.array_equal(total, mixture.samples)


def test_mix_single_nonzero_leaf():
    hierarchy = default_hierarchy()
    n = 800
    silent = Waveform(np.zeros(n))
    tone = Waveform(np.round(np.sin(np.arange(n) / 20.0) * 2**20) * 2.0**-20)
    leaves = [silent, tone, silent, silent, silent]
    mixture, _ = mix_track(leaves, hierarchy)
    assert np.array_equal(mixture.samples, tone.samples)


def test_mix_length_mismatch():
    hierarchy = default_hierarchy()
    with pytest.raises(DataError):
        mix_track([Waveform(np.zeros(10))] * 4 + [Waveform(np.zeros(11))], hierarchy)


def test_build_dataset_splits_and_determinism(tmp_path):
    m1 = build_dataset(tmp_path / "d1", n_tracks=10, duration=0.5, master_seed=42)
    m2 = build_dataset(tmp_path / "d2", n_tracks=10, duration=0.5, master_seed=42)
    assert [t.track_id for t in m1.splits["train"]] == [t.track_id for t in m2.splits["train"]]
    assert len(m1.splits["train"]) == 7 and len(m1.splits["val"]) == 2 and len(m1.splits["test"]) == 1
    ids = [t.track_id for t in m1.all_tracks()]
    assert len(set(ids)) == len(ids)
    # identical manifests and identical audio bytes
    assert (tmp_path / "d1" / "manifest.json").read_bytes() == (tmp_path / "d2" / "manifest.json").read_bytes()
    a = (track_dir(tmp_path / "d1", "track_0000") / "mixture.wav").read_bytes()
    b = (track_dir(tmp_path / "d2", "track_0000") / "mixture.wav").read_bytes()
    assert a == b


def test_build_dataset_rejects_tiny():
    with pytest.raises(DataError):
        build_dataset("/tmp/never", n_tracks=5)


def test_disk_roundtrip_additivity(tmp_path):
    build_dataset(tmp_path, n_tracks=10, duration=0.5, master_seed=7)
    hierarchy = default_hierarchy()
    tdir = track_dir(tmp_path, "track_0003")
    mixture = read_wav(tdir / "mixture.wav")
    acc = np.zeros(len(mixture))
    for leaf in hierarchy.leaves:
        acc = acc + read_wav(tdir / f"leaf_{leaf}.wav").samples
    assert np.array_equal(acc, mixture.samples)


def test_regeneration_from_manifest_alone(tmp_path):
    manifest = build_dataset(tmp_path, n_tracks=10, duration=0.5, master_seed=3)
    reloaded = DatasetManifest.load(tmp_path / "manifest.json")
    spec = reloaded.splits["val"][0]
    mixture, _, leaves = render_track(spec, reloaded.hierarchy)
    on_disk = read_wav(track_dir(tmp_path, spec.track_id) / "mixture.wav")
    assert np.array_equal(mixture.samples, on_disk.samples)
    leaf_disk = read_wav(track_dir(tmp_path, spec.track_id) / "leaf_plucked.wav")
    assert np.array_equal(leaves[2].samples, leaf_disk.samples)


def test_mixture_is_challenging():
    # input SI-SDR of mixture vs each leaf is negative on average
    from hypersep.objectives import si_sdr

    hierarchy = default_hierarchy()
    values = []
    for seed in (11, 12, 13):
        spec = quick_spec(seed, 2.0)
        mixture, _, leaves = render_track(spec, hierarchy)
        for leaf in leaves:
            values.append(si_sdr(mixture.samples, leaf.samples))
    assert np.mean(values) < 0.0
