"""Training objectives (PSA, WA, IBM cross-entropy, magnitude-weighted CE)
and scale-invariant separation metrics (SI-SDR with SIR/SAR decomposition).

Losses operate on one track's tensors and are differentiable through the
autodiff tape; metrics are plain numpy. Metrics are capped at +/-100 dB so
reports never carry infinities.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .data import HierarchySpec
from .dsp import EPS_MAG, ComplexSpectrogram, masked_istft_t

DB_CAP = 100.0

LOSS_KINDS = ("psa", "wa", "ce_ibm", "ce_ibm_w")


class ObjectiveError(ValueError):
    pass


@dataclass(frozen=True)
class LossConfig:
    kind: str = "ce_ibm_w"
    parent_weight: float = 1.0
    leaf_weight: float = 1.0

    def __post_init__(self):
        if self.kind not in LOSS_KINDS:
            raise ObjectiveError(f"unknown loss kind {self.kind!r}; expected one of {LOSS_KINDS}")
        if self.parent_weight < 0 or self.leaf_weight < 0 or self.parent_weight + self.leaf_weight == 0:
            raise ObjectiveError("head weights must be non-negative and not both zero")


def psa_target(X: ComplexSpectrogram, S: ComplexSpectrogram) -> np.ndarray:
    """Phase-sensitive target |S| cos(angle(S) - angle(X)), truncated to [0, |X|]."""
    xmag = np.abs(X.bins)
    aligned = np.real(S.bins * np.conj(X.bins)) / np.maximum(xmag, EPS_MAG)
    return np.clip(aligned, 0.0, xmag)


def loss_psa(masks: ad.Tensor, X: ComplexSpectrogram, sources: list[ComplexSpectrogram]) -> ad.Tensor:
    """L1 phase-sensitive approximation: mean |M^k |X| - T^k| over classes and bins."""
    masks = ad.as_tensor(masks)
    if masks.value.shape != (len(sources),) + X.shape:
        raise ObjectiveError(f"expected masks {(len(sources),) + X.shape}, got {masks.value.shape}")
    targets = np.stack([psa_target(X, S) for S in sources])
    pred = ad.mul(masks, np.abs(X.bins)[None])
    return ad.tensor_mean(ad.absolute(pred - ad.Tensor(targets)))


def loss_wa(masks: ad.Tensor, X: ComplexSpectrogram, references: list[np.ndarray]) -> ad.Tensor:
    """L1 waveform approximation, differentiable through the iSTFT."""
    masks = ad.as_tensor(masks)
    if masks.value.shape[0] != len(references):
        raise ObjectiveError("one reference waveform per mask class required")
    n = len(references[0])
    limit = X.orig_length if X.orig_length is not None else n
    if abs(n - limit) > X.config.frame_size:
        raise ObjectiveError("reference length disagrees with the spectrogram framing")
    terms = []
    for k, ref in enumerate(references):
        est = masked_istft_t(masks[k], X, length=len(ref))
        terms.append(ad.tensor_mean(ad.absolute(est - ad.Tensor(ref))))
    total = terms[0]
    for t in terms[1:]:
        total = total + t
    return total * (1.0 / len(terms))


def loss_ce(logits: ad.Tensor, ibm: np.ndarray, weighted: bool, X: ComplexSpectrogram) -> ad.Tensor:
    """Cross entropy against the ideal binary mask.

    ``logits``: (T, F, K); ``ibm``: one-hot (K, T, F). Weighted mode scales
    each bin by |X| / sum|X| (weights sum to 1 over the track).
    """
    logits = ad.as_tensor(logits)
    K = logits.value.shape[-1]
    if ibm.shape != (K,) + logits.value.shape[:-1]:
        raise ObjectiveError(f"ibm shape {ibm.shape} does not match logits {logits.value.shape}")
    onehot = np.moveaxis(ibm, 0, -1)
    if not (np.all((onehot == 0.0) | (onehot == 1.0)) and np.all(onehot.sum(axis=-1) == 1.0)):
        raise ObjectiveError("ibm must be one-hot per bin")
    logp = ad.log_softmax(logits, axis=-1)
    ce = ad.neg(ad.tensor_sum(ad.mul(logp, ad.Tensor(onehot)), axis=-1))  # (T, F)
    if not weighted:
        return ad.tensor_mean(ce)
    xmag = np.abs(X.bins)
    total = xmag.sum()
    if total <= 0.0:
        raise ObjectiveError("weighted CE is undefined for an all-zero mixture")
    return ad.tensor_sum(ad.mul(ce, ad.Tensor(xmag / total)))


def hierarchical_loss(parent_term: ad.Tensor, leaf_term: ad.Tensor, cfg: LossConfig) -> ad.Tensor:
    """Joint objective: cfg.parent_weight * parent + cfg.leaf_weight * leaf."""
    return ad.as_tensor(parent_term) * cfg.parent_weight + ad.as_tensor(leaf_term) * cfg.leaf_weight


# -- metrics -----------------------------------------------------------------


def _capped_db(num: float, den: float, cap: float = DB_CAP) -> float:
    if num <= 1e-30:
        return -cap
    if den <= 1e-30:
        return cap
    return float(np.clip(10.0 * np.log10(num / den), -cap, cap))


def si_sdr(est: np.ndarray, ref: np.ndarray) -> float:
    """Scale-invariant SDR in dB, capped at +/-100."""
    est = np.asarray(est, dtype=np.float64)
    ref = np.asarray(ref, dtype=np.float64)
    if est.shape != ref.shape:
        raise ObjectiveError("estimate and reference lengths disagree")
    ref_energy = float(ref @ ref)
    if ref_energy == 0.0:
        raise ObjectiveError("reference signal is all zero")
    alpha = float(est @ ref) / ref_energy
    target = alpha * ref
    err = est - target
    return _capped_db(float(target @ target), float(err @ err))


def si_sir_sar(est: np.ndarray, refs: list[np.ndarray], target_index: int) -> tuple[float, float]:
    """Scale-invariant SIR and SAR via orthogonal projection onto the reference span.

    target = projection of est onto the target reference; interference =
    projection onto span(refs) minus target; artifact = the residual.
    """
    est = np.asarray(est, dtype=np.float64)
    R = np.stack([np.asarray(r, dtype=np.float64) for r in refs], axis=1)  # (n, K)
    if R.shape[0] != est.shape[0]:
        raise ObjectiveError("estimate and reference lengths disagree")
    if np.linalg.matrix_rank(R) < R.shape[1]:
        raise ObjectiveError("reference signals are linearly dependent")
    r_t = R[:, target_index]
    target = (est @ r_t) / (r_t @ r_t) * r_t
    coef, *_ = np.linalg.lstsq(R, est, rcond=None)
    proj = R @ coef
    interference = proj - target
    artifact = est - proj
    sir = _capped_db(float(target @ target), float(interference @ interference))
    sar = _capped_db(float((target + interference) @ (target + interference)), float(artifact @ artifact))
    return sir, sar


@dataclass
class MetricReport:
    """Per-class separation metrics plus parent/leaf/all averages."""

    hierarchy: HierarchySpec
    per_class: dict[str, dict[str, float]] = field(default_factory=dict)

    def add(self, class_name: str, sdr: float, sir: float, sar: float) -> None:
        self.per_class[class_name] = {"si_sdr": sdr, "si_sir": sir, "si_sar": sar}

    def _average(self, names: list[str]) -> dict[str, float]:
        keys = ("si_sdr", "si_sir", "si_sar")
        present = [self.per_class[n] for n in names if n in self.per_class]
        if not present:
            return {k: float("nan") for k in keys}
        return {k: float(np.mean([p[k] for p in present])) for k in keys}

    def averages(self) -> dict[str, dict[str, float]]:
        return {
            "parents": self._average(list(self.hierarchy.parents)),
            "leaves": self._average(list(self.hierarchy.leaves)),
            "all": self._average(list(self.hierarchy.parents) + list(self.hierarchy.leaves)),
        }

    def to_dict(self) -> dict:
        return {"classes": self.per_class, "averages": self.averages()}
