"""Non-contrastive unsupervised learning of bandlimited quasi-periodic signals.

A model regresses a waveform from a video-like tensor; frequency-domain
losses (bandwidth, sparsity, batch variance over power spectra) with
hand-derived gradients shape its prediction without labels. The package
also provides the augmentation pipeline (including equivariant frequency
resampling with bandlimit scaling), synthetic data with known ground truth,
training / personalization / test-time-adaptation / poisoning-sweep
protocols, evaluation metrics and a whitening baseline, plus a CLI.
"""

from .augment import (
    AugmentConfig,
    AugmentOutcome,
    augment_batch,
    crop_resize,
    freq_resample,
    gaussian_pixel_noise,
    horizontal_flip,
    illumination_shift,
    time_reverse,
)
from .evaluate import (
    ForgettingReport,
    Metrics,
    evaluate_clips,
    forgetting_report,
    predict_rate,
    rate_metrics,
    zca_baseline,
)
from .exceptions import (
    BandlearnError,
    ConfigError,
    InvalidBandError,
    InvalidInputError,
    InvalidStateError,
    NumericError,
)
from .losses import (
    LossBreakdown,
    bandwidth_loss,
    psd_backward,
    sparsity_loss,
    total_loss,
    variance_loss,
)
from .model import (
    AdamState,
    ModelConfig,
    ModelParams,
    adam_step,
    backward,
    forward,
    init_model,
    load_checkpoint,
    save_checkpoint,
)
from .spectral import (
    Bandlimits,
    RateSeries,
    SpectralConfig,
    Spectrum,
    band_bins,
    psd,
    snr,
    stft_rates,
)
from .synth import (
    Clip,
    DatasetManifest,
    GenSpec,
    clip_window,
    gen_dataset,
    gen_motion_matrix,
    gen_poisoned,
    gen_positive,
    load_clip,
    load_dataset,
    load_manifest,
    save_clip,
)
from .train import (
    SweepRow,
    TrainConfig,
    TrainHistory,
    TtaConfig,
    personalize,
    poison_sweep,
    stream_gt_rates,
    stream_inference,
    train,
    tta_run,
)

__version__ = "0.1.0"
