"""Training engines: unsupervised training with poison mixing, single-subject
personalization, sliding-window test-time adaptation, and the poisoning sweep.

Every loop is a deterministic function of (configs, seeds, dataset): one
generator per loop drives clip sampling, poison coin flips and augmentation
streams in a fixed order. Views produced by frequency resampling are scored
against their scaled bandlimits (band_scale * [a, b] and band_scale * delta_f),
which each step's history record logs.
"""

import json
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .augment import AugmentConfig, AugmentOutcome, augment_batch, required_source_len
from .evaluate import evaluate_clips, predict_rate
from .exceptions import ConfigError, InvalidInputError, NumericError
from .losses import LossBreakdown, total_loss
from .model import AdamState, ModelConfig, ModelParams, adam_step, backward, forward, init_model
from .spectral import Bandlimits, RateSeries, SpectralConfig
from .synth import Clip, DatasetManifest, GenSpec, clip_window, gen_poisoned, load_dataset
from .util import atomic_write_text, derive_rng, derive_seed, spawn_rng

__all__ = [
    "TrainConfig",
    "TtaConfig",
    "StepRecord",
    "TrainHistory",
    "SweepRow",
    "train",
    "personalize",
    "tta_run",
    "poison_sweep",
    "stream_inference",
    "stream_gt_rates",
    "write_history",
]

DEFAULT_BAND = Bandlimits(a=0.66, b=3.0, delta_f=0.2)

# Loss-side transform: coarse on purpose. The batch-variance term compares the
# batch-mean in-band distribution to uniform over the in-band bins, so its
# magnitude (and the noise floor of per-view peak picking) grows with the bin
# count; a batch of ~8 cannot tile hundreds of bins and training destabilizes.
# 2x zero-padding of the 120-frame default window keeps the three terms
# commensurate. Evaluation/reporting uses the fine 5400-bin grid.
DEFAULT_SPECTRAL = SpectralConfig(nfft=240, fs=30.0)
EVAL_SPECTRAL = SpectralConfig(nfft=5400, fs=30.0)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 30
    batch_size: int = 8
    clip_len: int = 120
    poison_alpha: float = 0.0
    band: Bandlimits = DEFAULT_BAND
    spectral: SpectralConfig = DEFAULT_SPECTRAL
    augment: AugmentConfig = AugmentConfig()
    lr: float = 5e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    loss_weights: tuple[float, float, float] = (1.0, 1.0, 1.0)
    seed: int = 0

    def __post_init__(self):
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if not (0 <= self.poison_alpha <= 1):
            raise ConfigError(f"poison_alpha must be in [0, 1], got {self.poison_alpha}")
        if self.epochs < 0:
            raise ConfigError(f"epochs must be >= 0, got {self.epochs}")
        if self.clip_len < 2:
            raise ConfigError(f"clip_len must be >= 2, got {self.clip_len}")


@dataclass(frozen=True)
class TtaConfig:
    """n_tta >= 1: that many updates per clip; 0 < n_tta < 1: one update every
    round(1/n_tta) clips; 0 disables adaptation (exact frozen inference)."""

    n_tta: float = 1.0
    clip_len: int = 120
    stride: int = 60
    views_per_update: int = 20
    augment: AugmentConfig = AugmentConfig.finetune()
    lr: float = 2e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    # Variance is off by default: the 20 views of one clip all carry the same
    # underlying frequency, so pushing their batch-mean spectrum toward
    # uniform-over-band fights the adaptation instead of helping it.
    loss_weights: tuple[float, float, float] = (1.0, 1.0, 0.0)
    reaugment: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.n_tta < 0:
            raise ConfigError(f"n_tta must be >= 0, got {self.n_tta}")
        if not (1 <= self.stride <= self.clip_len):
            raise ConfigError(f"stride must be in [1, clip_len], got {self.stride}")
        if self.views_per_update < 1:
            raise ConfigError(f"views_per_update must be >= 1, got {self.views_per_update}")
        if self.augment.resample:
            raise ConfigError("TTA augmentations must not include frequency resampling")


@dataclass(frozen=True)
class StepRecord:
    step: int
    epoch: int
    losses: LossBreakdown
    band_scales: tuple[float, ...]
    bands: tuple[tuple[float, float, float], ...]  # (a, b, delta_f) actually used per view


@dataclass
class TrainHistory:
    steps: list[StepRecord] = field(default_factory=list)
    epoch_seconds: list[float] = field(default_factory=list)
    final_checksum: str = ""


def write_history(path: str, history: TrainHistory) -> None:
    """Line-delimited records; wall times are timing log lines (the only
    run-dependent content), everything else is deterministic per seed."""
    lines = []
    for rec in history.steps:
        lines.append(
            json.dumps(
                {
                    "type": "step",
                    "step": rec.step,
                    "epoch": rec.epoch,
                    "losses": rec.losses.as_dict(),
                    "band_scales": list(rec.band_scales),
                    "bands": [list(b) for b in rec.bands],
                },
                sort_keys=True,
            )
        )
    for i, wall in enumerate(history.epoch_seconds):
        lines.append(json.dumps({"type": "timing", "epoch": i, "wall_s": wall}, sort_keys=True))
    lines.append(json.dumps({"type": "final", "params_sha256": history.final_checksum}, sort_keys=True))
    atomic_write_text(path, "\n".join(lines) + "\n")


def _resolve_dataset(dataset) -> tuple[list[Clip], GenSpec | None]:
    if isinstance(dataset, DatasetManifest):
        return load_dataset(dataset), dataset.spec
    clips = list(dataset)
    return clips, None


def _optimize_batch(
    params: ModelParams,
    state: AdamState,
    outcomes: Sequence[AugmentOutcome],
    band: Bandlimits,
    spectral: SpectralConfig,
    weights: tuple[float, float, float],
    context: str,
) -> tuple[ModelParams, AdamState, LossBreakdown, tuple, tuple]:
    """Forward the views, compute the loss with per-view scaled bands, apply one Adam step."""
    waveforms, caches = [], []
    for outcome in outcomes:
        y, cache = forward(params, outcome.clip.data)
        waveforms.append(y)
        caches.append(cache)
    per_bands = [band.scaled(o.band_scale) for o in outcomes]
    breakdown, d_waveforms = total_loss(
        waveforms, band, spectral, weights, per_sample_bands=per_bands
    )
    if not math.isfinite(breakdown.total):
        raise NumericError(f"non-finite loss at {context}: {breakdown}")
    grad_vec = np.zeros(len(params.to_vector()))
    for cache, d_w in zip(caches, d_waveforms):
        grad_vec += backward(params, cache, d_w).to_vector()
    grads = ModelParams.from_vector(params.config, grad_vec)
    new_params, new_state = adam_step(params, grads, state)
    scales = tuple(o.band_scale for o in outcomes)
    bands_used = tuple((b.a, b.b, b.delta_f) for b in per_bands)
    return new_params, new_state, breakdown, scales, bands_used


def train(
    model_cfg: ModelConfig,
    train_cfg: TrainConfig,
    dataset: DatasetManifest | Sequence[Clip],
    poison_spec: GenSpec | None = None,
) -> tuple[ModelParams, TrainHistory]:
    """From-scratch unsupervised training with per-slot Bernoulli poison mixing.

    Each step samples a batch (shuffled pass per epoch), replaces each slot by
    a freshly generated poisoned clip with probability poison_alpha, extracts
    a random window long enough for the augmentation pipeline, augments once
    per clip, and applies one Adam step on the combined loss.
    """
    clips, manifest_spec = _resolve_dataset(dataset)
    if not clips:
        raise ConfigError("training dataset is empty")
    cfg = train_cfg
    src_len = required_source_len(cfg.augment, cfg.clip_len)
    for i, clip in enumerate(clips):
        if clip.n_frames < src_len:
            raise ConfigError(
                f"clip {i} has {clip.n_frames} frames; need >= {src_len} "
                f"for clip_len={cfg.clip_len} with the configured augmentations"
            )
    if cfg.poison_alpha > 0:
        spec = poison_spec or manifest_spec
        if spec is None:
            raise ConfigError("poison_alpha > 0 requires a generator spec for poisoned clips")
        poison_gen_spec = replace(spec, T=src_len)

    rng = derive_rng(cfg.seed, "train")
    params = init_model(model_cfg)
    state = AdamState.for_params(params, cfg.lr, cfg.beta1, cfg.beta2, cfg.eps)
    history = TrainHistory()
    step = 0
    for epoch in range(cfg.epochs):
        t0 = time.perf_counter()
        order = rng.permutation(len(clips))
        for pos in range(0, len(order), cfg.batch_size):
            chunk = order[pos : pos + cfg.batch_size]
            outcomes = []
            for idx in chunk:
                if cfg.poison_alpha > 0 and rng.random() < cfg.poison_alpha:
                    source = gen_poisoned(poison_gen_spec, spawn_rng(rng))
                else:
                    clip = clips[idx]
                    start = int(rng.integers(0, clip.n_frames - src_len + 1))
                    source = clip_window(clip, start, src_len)
                outcomes.append(
                    augment_batch(source, 1, cfg.augment, rng, out_len=cfg.clip_len)[0]
                )
            params, state, breakdown, scales, bands_used = _optimize_batch(
                params, state, outcomes, cfg.band, cfg.spectral, cfg.loss_weights,
                context=f"step {step} (epoch {epoch}, seed {cfg.seed})",
            )
            history.steps.append(StepRecord(step, epoch, breakdown, scales, bands_used))
            step += 1
        history.epoch_seconds.append(time.perf_counter() - t0)
    history.final_checksum = params.checksum()
    return params, history


def personalize(
    pretrained: ModelParams,
    subject_clip: Clip,
    cfg: TrainConfig,
    seconds: float = 20.0,
    stride: int | None = None,
) -> tuple[ModelParams, TrainHistory]:
    """Finetune on windows from the first `seconds` of one subject's clip.

    Windows are clip_len frames at stride clip_len//2 (120/60 by default);
    one epoch is max(1, n_windows // batch_size) steps of batch_size windows
    sampled with replacement. The pretrained params are not mutated.
    """
    if cfg.augment.resample:
        raise ConfigError("personalization must not use the frequency resampling augmentation")
    fps = subject_clip.fps
    head_len = int(round(seconds * fps))
    if subject_clip.n_frames < head_len:
        raise InvalidInputError(
            f"subject clip has {subject_clip.n_frames} frames; need >= {head_len} ({seconds} s)"
        )
    if head_len < cfg.clip_len:
        raise InvalidInputError(f"{seconds} s segment shorter than one {cfg.clip_len}-frame window")
    head = clip_window(subject_clip, 0, head_len)
    stride = cfg.clip_len // 2 if stride is None else stride
    windows = [
        clip_window(head, start, cfg.clip_len)
        for start in range(0, head_len - cfg.clip_len + 1, stride)
    ]

    rng = derive_rng(cfg.seed, "personalize")
    params = pretrained.copy()
    state = AdamState.for_params(params, cfg.lr, cfg.beta1, cfg.beta2, cfg.eps)
    history = TrainHistory()
    steps_per_epoch = max(1, len(windows) // cfg.batch_size)
    step = 0
    for epoch in range(cfg.epochs):
        t0 = time.perf_counter()
        for _ in range(steps_per_epoch):
            picks = rng.integers(0, len(windows), size=cfg.batch_size)
            outcomes = [
                augment_batch(windows[i], 1, cfg.augment, rng, out_len=cfg.clip_len)[0]
                for i in picks
            ]
            params, state, breakdown, scales, bands_used = _optimize_batch(
                params, state, outcomes, cfg.band, cfg.spectral, cfg.loss_weights,
                context=f"personalize step {step} (seed {cfg.seed})",
            )
            history.steps.append(StepRecord(step, epoch, breakdown, scales, bands_used))
            step += 1
        history.epoch_seconds.append(time.perf_counter() - t0)
    history.final_checksum = params.checksum()
    return params, history


def _clip_starts(n_frames: int, clip_len: int, stride: int) -> range:
    return range(0, n_frames - clip_len + 1, stride)


def stream_gt_rates(stream: Clip, clip_len: int, stride: int) -> RateSeries:
    """Ground-truth bpm per sliding clip, at clip-center times."""
    if stream.gt_rate is None:
        raise InvalidInputError("stream has no ground-truth rate")
    times, rates = [], []
    for start in _clip_starts(stream.n_frames, clip_len, stride):
        times.append((start + (clip_len - 1) / 2) / stream.fps)
        rates.append(60.0 * float(np.mean(stream.gt_rate[start : start + clip_len])))
    return RateSeries(times=np.array(times), rates=np.array(rates))


def stream_inference(
    params: ModelParams,
    stream: Clip,
    clip_len: int,
    stride: int,
    band: Bandlimits,
    spectral: SpectralConfig,
) -> RateSeries:
    """Frozen-model rates over sliding clips (the n_tta=0 reference)."""
    times, rates = [], []
    for start in _clip_starts(stream.n_frames, clip_len, stride):
        clip = clip_window(stream, start, clip_len)
        times.append((start + (clip_len - 1) / 2) / stream.fps)
        rates.append(predict_rate(params, clip, band, spectral))
    return RateSeries(times=np.array(times), rates=np.array(rates))


def tta_run(
    pretrained: ModelParams,
    stream: Clip,
    cfg: TtaConfig,
    band: Bandlimits,
    spectral: SpectralConfig,
) -> tuple[RateSeries, ModelParams, TrainHistory]:
    """Sequential test-time adaptation over a long clip.

    For each clip_len-frame clip at the configured stride: when an update is
    due under the n_tta schedule, build views_per_update augmented views and
    apply the due number of Adam updates (fresh views per update unless
    reaugment=False), then predict on the unperturbed clip with the current
    params. Rates are in-band PSD argmaxes reported at clip centers.
    """
    if stream.n_frames < cfg.clip_len:
        raise InvalidInputError(
            f"stream has {stream.n_frames} frames; need >= clip_len {cfg.clip_len}"
        )
    params = pretrained.copy()
    state = AdamState.for_params(params, cfg.lr, cfg.beta1, cfg.beta2, cfg.eps)
    rng = derive_rng(cfg.seed, "tta")
    history = TrainHistory()
    period = max(1, round(1.0 / cfg.n_tta)) if 0 < cfg.n_tta < 1 else 1
    times, rates = [], []
    step = 0
    for i, start in enumerate(_clip_starts(stream.n_frames, cfg.clip_len, cfg.stride)):
        clip = clip_window(stream, start, cfg.clip_len)
        if cfg.n_tta >= 1:
            n_updates = int(round(cfg.n_tta))
        elif cfg.n_tta > 0 and (i + 1) % period == 0:
            n_updates = 1
        else:
            n_updates = 0
        t0 = time.perf_counter()
        views = None
        for _ in range(n_updates):
            if views is None or cfg.reaugment:
                views = augment_batch(clip, cfg.views_per_update, cfg.augment, rng, cfg.clip_len)
            params, state, breakdown, scales, bands_used = _optimize_batch(
                params, state, views, band, spectral, cfg.loss_weights,
                context=f"tta clip {i} (seed {cfg.seed})",
            )
            history.steps.append(StepRecord(step, i, breakdown, scales, bands_used))
            step += 1
        if n_updates:
            history.epoch_seconds.append(time.perf_counter() - t0)
        times.append((start + (cfg.clip_len - 1) / 2) / stream.fps)
        rates.append(predict_rate(params, clip, band, spectral))
    history.final_checksum = params.checksum()
    return RateSeries(times=np.array(times), rates=np.array(rates)), params, history


@dataclass(frozen=True)
class SweepRow:
    alpha: float
    eval_set: str
    mae_mean: float
    mae_std: float


def _fold_indices(n: int, folds: int) -> list[np.ndarray]:
    return [np.arange(f, n, folds) for f in range(folds)]


def _sweep_job(args) -> list[tuple[float, str, float]]:
    (alpha, fold, seed_idx, model_cfg, train_cfg, train_clips, heldout, cross, spec) = args
    tag = f"sweep-a{alpha}-f{fold}-s{seed_idx}"
    job_model = replace(model_cfg, seed=derive_seed(model_cfg.seed, tag))
    job_train = replace(train_cfg, poison_alpha=alpha, seed=derive_seed(train_cfg.seed, tag))
    params, _ = train(job_model, job_train, train_clips, poison_spec=spec)
    results = []
    within = evaluate_clips(params, heldout, job_train.band, job_train.spectral, job_train.clip_len)
    results.append((alpha, "within", within.mae))
    if cross is not None:
        mae = evaluate_clips(params, cross, job_train.band, job_train.spectral, job_train.clip_len).mae
        results.append((alpha, "cross", mae))
    return results


def poison_sweep(
    alphas: Sequence[float],
    folds: int,
    seeds_per_fold: int,
    model_cfg: ModelConfig,
    train_cfg: TrainConfig,
    dataset: DatasetManifest | Sequence[Clip],
    cross_clips: Sequence[Clip] | None = None,
    jobs: int = 1,
    poison_spec: GenSpec | None = None,
) -> list[SweepRow]:
    """Cross-validated poisoning sweep: for each alpha, train seeds_per_fold
    models per fold on the other folds with poison rate alpha, record rate MAE
    on the held-out fold ("within") and on an optional cross-domain set
    ("cross"), and aggregate mean/std per (alpha, eval_set)."""
    clips, manifest_spec = _resolve_dataset(dataset)
    if poison_spec is None:
        poison_spec = manifest_spec
    if folds < 2 or len(clips) < folds:
        raise ConfigError(f"need >= 2 folds and >= folds clips, got folds={folds}, n={len(clips)}")
    fold_idx = _fold_indices(len(clips), folds)
    job_args = []
    for alpha in alphas:
        if not (0 <= alpha <= 1):
            raise ConfigError(f"alpha must be in [0, 1], got {alpha}")
        for fold in range(folds):
            heldout = [clips[i] for i in fold_idx[fold]]
            train_clips = [clips[i] for f in range(folds) if f != fold for i in fold_idx[f]]
            for seed_idx in range(seeds_per_fold):
                job_args.append(
                    (alpha, fold, seed_idx, model_cfg, train_cfg, train_clips, heldout,
                     None if cross_clips is None else list(cross_clips), poison_spec)
                )
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            all_results = list(pool.map(_sweep_job, job_args))
    else:
        all_results = [_sweep_job(a) for a in job_args]

    by_key: dict[tuple[float, str], list[float]] = {}
    for results in all_results:
        for alpha, eval_set, mae in results:
            by_key.setdefault((alpha, eval_set), []).append(mae)
    rows = []
    for alpha in alphas:
        for eval_set in ("within", "cross"):
            maes = by_key.get((alpha, eval_set))
            if maes is None:
                continue
            rows.append(
                SweepRow(
                    alpha=float(alpha),
                    eval_set=eval_set,
                    mae_mean=float(np.mean(maes)),
                    mae_std=float(np.std(maes)),
                )
            )
    return rows
