"""STFT analysis/synthesis with square-root Hann windows, mask application,
oracle masks, and ground-truth activity labels.

Framing recipe: 32 ms frames with 50% overlap — 256-point FFT and hop 128
at the fixed 8 kHz sample rate. The sqrt-Hann analysis/synthesis pair
satisfies the COLA condition exactly at this overlap, so istft(stft(x))
reconstructs x to rounding error. The signal is padded by one hop in front
(plus zeros at the end) so edge samples get full window coverage.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.io.wavfile

from . import autodiff as ad

SAMPLE_RATE = 8000

EPS_MAG = 1e-12


class DspError(ValueError):
    pass


@dataclass(frozen=True)
class StftConfig:
    sample_rate: int = SAMPLE_RATE
    frame_size: int = 256  # 32 ms at 8 kHz
    hop: int = 128

    @property
    def n_freqs(self) -> int:
        return self.frame_size // 2 + 1

    def window(self) -> np.ndarray:
        # periodic Hann; its square overlap-adds to exactly 1 at 50% hop
        n = np.arange(self.frame_size)
        hann = 0.5 * (1.0 - np.cos(2.0 * np.pi * n / self.frame_size))
        return np.sqrt(hann)

    def to_dict(self) -> dict:
        return {"sample_rate": self.sample_rate, "frame_size": self.frame_size, "hop": self.hop}

    @classmethod
    def from_dict(cls, d: dict) -> "StftConfig":
        return cls(int(d["sample_rate"]), int(d["frame_size"]), int(d["hop"]))


@dataclass(frozen=True)
class Waveform:
    samples: np.ndarray
    sample_rate: int = SAMPLE_RATE

    def __post_init__(self):
        object.__setattr__(self, "samples", np.asarray(self.samples, dtype=np.float64))
        if self.samples.ndim != 1:
            raise DspError("waveforms are mono 1-D arrays")
        if not np.all(np.isfinite(self.samples)):
            raise DspError("waveform has non-finite samples")

    def __len__(self):
        return len(self.samples)


@dataclass(frozen=True)
class ComplexSpectrogram:
    """T x F complex STFT plus the framing metadata needed to invert it."""

    bins: np.ndarray
    config: StftConfig = field(default_factory=StftConfig)
    orig_length: int | None = None

    def __post_init__(self):
        bins = np.asarray(self.bins)
        if bins.ndim != 2 or bins.shape[1] != self.config.n_freqs:
            raise DspError(f"expected (T, {self.config.n_freqs}) bins, got {bins.shape}")
        object.__setattr__(self, "bins", bins.astype(np.complex128))

    @property
    def magnitude(self) -> np.ndarray:
        return np.abs(self.bins)

    @property
    def shape(self):
        return self.bins.shape


def _frame_count(n_samples: int, hop: int) -> int:
    return int(np.ceil(n_samples / hop)) + 1


def stft(w: Waveform, config: StftConfig = StftConfig()) -> ComplexSpectrogram:
    """Analysis transform; frames are zero-padded at both edges for exact COLA."""
    x = w.samples
    if len(x) == 0:
        raise DspError("cannot transform an empty waveform")
    if w.sample_rate != config.sample_rate:
        raise DspError(f"waveform rate {w.sample_rate} != config rate {config.sample_rate}")
    hop, n = config.hop, config.frame_size
    frames = _frame_count(len(x), hop)
    padded = np.zeros((frames - 1) * hop + n)
    padded[hop : hop + len(x)] = x
    win = config.window()
    idx = np.arange(n)[None, :] + hop * np.arange(frames)[:, None]
    bins = np.fft.rfft(padded[idx] * win, axis=-1)
    return ComplexSpectrogram(bins, config, orig_length=len(x))


def istft(s: ComplexSpectrogram, length: int | None = None) -> Waveform:
    """Overlap-add synthesis with the sqrt-Hann synthesis window."""
    cfg = s.config
    hop, n = cfg.hop, cfg.frame_size
    frames = s.bins.shape[0]
    if length is None:
        length = s.orig_length
    if length is None:
        length = (frames - 1) * hop  # all fully-covered samples
    win = cfg.window()
    chunks = np.fft.irfft(s.bins, n=n, axis=-1) * win
    out = np.zeros((frames - 1) * hop + n)
    for m in range(frames):
        out[m * hop : m * hop + n] += chunks[m]
    return Waveform(out[hop : hop + length], cfg.sample_rate)


def _istft_adjoint(g: np.ndarray, frames: int, cfg: StftConfig, length: int) -> np.ndarray:
    """Adjoint of the linear map bins -> istft samples, as a complex array.

    Returns dL/dRe(bins) + i dL/dIm(bins) given the time-domain gradient g.
    DC and Nyquist carry no imaginary part (irfft ignores it).
    """
    hop, n = cfg.hop, cfg.frame_size
    buf = np.zeros((frames - 1) * hop + n)
    buf[hop : hop + length] = g
    idx = np.arange(n)[None, :] + hop * np.arange(frames)[:, None]
    g_frames = buf[idx] * cfg.window()
    spec = np.fft.rfft(g_frames, axis=-1)
    scale_re = np.full(cfg.n_freqs, 2.0 / n)
    scale_re[0] = scale_re[-1] = 1.0 / n
    scale_im = np.full(cfg.n_freqs, 2.0 / n)
    scale_im[0] = scale_im[-1] = 0.0
    return scale_re * spec.real + 1j * (scale_im * spec.imag)


def masked_istft_t(mask: ad.Tensor, X: ComplexSpectrogram, length: int | None = None) -> ad.Tensor:
    """Differentiable istft(mask * X) for a real (T, F) mask tensor.

    The forward pass is the plain overlap-add synthesis; the backward pass is
    its exact adjoint projected onto the real mask (X is a constant).
    """
    mask = ad.as_tensor(mask)
    if mask.value.shape != X.bins.shape:
        raise DspError(f"mask shape {mask.value.shape} does not match spectrogram {X.bins.shape}")
    out_wave = istft(ComplexSpectrogram(mask.value * X.bins, X.config, X.orig_length), length)
    n_out = len(out_wave.samples)
    frames = X.bins.shape[0]

    def vjp(g):
        grad_bins = _istft_adjoint(g, frames, X.config, n_out)
        return ((grad_bins.real * X.bins.real + grad_bins.imag * X.bins.imag),)

    return ad.custom(out_wave.samples, (mask,), vjp, "masked_istft")


# -- masks ---------------------------------------------------------------------


def _check_same_shape(specs: list[ComplexSpectrogram]) -> tuple:
    if not specs:
        raise DspError("empty spectrogram list")
    shape = specs[0].shape
    for s in specs[1:]:
        if s.shape != shape:
            raise DspError("spectrogram shapes disagree")
    return shape


def apply_mask_resynth(X: ComplexSpectrogram, masks: np.ndarray) -> list[Waveform]:
    """Per-class resynthesis istft(M^k * X); the mixture phase is kept implicitly."""
    masks = np.asarray(masks, dtype=np.float64)
    if masks.ndim != 3 or masks.shape[1:] != X.shape:
        raise DspError(f"expected (K, {X.shape[0]}, {X.shape[1]}) masks, got {masks.shape}")
    if masks.min() < 0.0 or masks.max() > 1.0:
        raise DspError("mask values must lie in [0, 1]")
    return [istft(ComplexSpectrogram(m * X.bins, X.config, X.orig_length)) for m in masks]


def ideal_binary_mask(sources: list[ComplexSpectrogram]) -> np.ndarray:
    """One-hot (K, T, F) mask of the magnitude-dominant source per bin.

    Ties go to the lowest class index.
    """
    _check_same_shape(sources)
    mags = np.stack([s.magnitude for s in sources])
    winner = np.argmax(mags, axis=0)  # argmax takes the first maximum
    masks = np.zeros_like(mags)
    np.put_along_axis(masks, winner[None], 1.0, axis=0)
    return masks


def oracle_psf_mask(S: ComplexSpectrogram, X: ComplexSpectrogram) -> np.ndarray:
    """Truncated phase-sensitive mask clamp(|S|/|X| cos(angle(S) - angle(X)), 0, 1)."""
    if S.shape != X.shape:
        raise DspError("spectrogram shapes disagree")
    xmag2 = np.abs(X.bins) ** 2
    psm = np.real(S.bins * np.conj(X.bins)) / np.maximum(xmag2, EPS_MAG**2)
    psm[np.abs(X.bins) < EPS_MAG] = 0.0
    return np.clip(psm, 0.0, 1.0)


def active_source_count(leaf_sources: list[ComplexSpectrogram], db_floor: float = 20.0, ratio_floor: float = 0.1) -> np.ndarray:
    """Per-bin count of active sources.

    A source is active at (t, f) iff its bin energy is within ``db_floor`` dB
    of that source's own file-wide maximum bin energy, and its magnitude ratio
    against the summed magnitudes of all sources exceeds ``ratio_floor``.
    """
    _check_same_shape(leaf_sources)
    mags = np.stack([s.magnitude for s in leaf_sources])
    energy = mags**2
    peak = energy.reshape(len(leaf_sources), -1).max(axis=1)
    loud = energy >= peak[:, None, None] * 10.0 ** (-db_floor / 10.0)
    loud &= energy > 0.0
    total = mags.sum(axis=0)
    ratio = mags / np.maximum(total, EPS_MAG)
    return (loud & (ratio > ratio_floor)).sum(axis=0).astype(np.int64)


# -- WAV I/O ---------------------------------------------------------------------


def write_wav(path, w: Waveform, fmt: str = "float32") -> None:
    """Write mono audio as little-endian 32-bit float or 16-bit PCM."""
    if fmt == "float32":
        scipy.io.wavfile.write(path, w.sample_rate, w.samples.astype("<f4"))
    elif fmt == "pcm16":
        clipped = np.clip(w.samples, -1.0, 32767.0 / 32768.0)
        scipy.io.wavfile.write(path, w.sample_rate, np.round(clipped * 32768.0).astype("<i2"))
    else:
        raise DspError(f"unsupported wav format {fmt!r}")


def read_wav(path) -> Waveform:
    rate, data = scipy.io.wavfile.read(path)
    if data.ndim != 1:
        raise DspError("only mono wav files are supported")
    if data.dtype == np.int16:
        samples = data.astype(np.float64) / 32768.0
    elif data.dtype == np.float32:
        samples = data.astype(np.float64)
    else:
        raise DspError(f"unsupported wav sample format {data.dtype}")
    return Waveform(samples, rate)


def snr_db(reference: np.ndarray, estimate: np.ndarray) -> float:
    """Plain (scale-variant) signal-to-noise ratio in dB."""
    err = np.sum((reference - estimate) ** 2)
    sig = np.sum(reference**2)
    if err == 0.0:
        return np.inf
    return float(10.0 * np.log10(sig / err))
