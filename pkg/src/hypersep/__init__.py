"""Hyperbolic time-frequency embeddings for audio source separation.

Every T-F bin of a mixture spectrogram is embedded on the Poincare ball,
classified with hierarchical hyperbolic multinomial logistic regression to
form separation masks, and the embedding norm doubles as a certainty signal
for trading interference against artifacts.
"""

from .certainty import (
    CertaintyMap,
    bayesian_certainty,
    hyperbolic_certainty_map,
    norm_histograms,
    pearson_correlation,
    threshold_masks,
)
from .checkpoint import load_checkpoint, save_checkpoint
from .data import (
    DatasetManifest,
    HierarchySpec,
    TrackSpec,
    build_dataset,
    default_hierarchy,
    mix_track,
    synth_leaf_source,
)
from .dsp import (
    ComplexSpectrogram,
    StftConfig,
    Waveform,
    active_source_count,
    apply_mask_resynth,
    ideal_binary_mask,
    istft,
    oracle_psf_mask,
    read_wav,
    stft,
    write_wav,
)
from .geometry import Hyperplane, PoincareBall, PoincarePoint, mlr_logits
from .model import EmbeddingField, ModelConfig, ModelParams, forward_masks, init_params
from .objectives import LossConfig, MetricReport, si_sdr, si_sir_sar
from .optim import AdamState, PlateauSchedule, adam_step, riemannian_adam_step
from .training import RunConfig, train

__version__ = "0.1.0"
