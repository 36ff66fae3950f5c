"""Clip augmentations and the view-generation pipeline.

Six transforms: per-pixel Gaussian noise, per-clip brightness shift,
horizontal flip, square crop + bilinear resize back, time reversal, and
frequency resampling by a factor c (the one equivariant transform: every
embedded frequency and the ground-truth rate scale by c, and downstream
losses must scale their bandlimits by c, which `AugmentOutcome.band_scale`
records).

Pipeline order in `augment_batch` is resample, crop, flip, reverse,
illumination, noise, so noise statistics are never distorted by
interpolation. Everything is a deterministic function of (input, rng state).
"""

import math
from dataclasses import dataclass, replace

import numpy as np

from .exceptions import ConfigError, InvalidInputError
from .synth import Clip, bilinear_resize
from .util import spawn_rng

__all__ = [
    "AugmentConfig",
    "AugmentOutcome",
    "gaussian_pixel_noise",
    "illumination_shift",
    "horizontal_flip",
    "crop_resize",
    "time_reverse",
    "freq_resample",
    "augment_batch",
    "required_source_len",
]


@dataclass(frozen=True)
class AugmentConfig:
    """Enable flags and parameters for each augmentation."""

    noise: bool = True
    pixel_noise_sigma: float = 2.0  # on the 0-255 image scale
    illumination: bool = True
    illum_sigma: float = 10.0
    flip: bool = True
    flip_p: float = 0.5
    crop: bool = True
    crop_min_frac: float = 0.5
    reverse: bool = True
    reverse_p: float = 0.5
    resample: bool = True
    resample_range: tuple[float, float] = (0.6, 1.4)

    def __post_init__(self):
        for name, p in (("flip_p", self.flip_p), ("reverse_p", self.reverse_p)):
            if not (0 <= p <= 1):
                raise ConfigError(f"{name} must be in [0, 1], got {p}")
        if not (0 < self.crop_min_frac <= 1):
            raise ConfigError(f"crop_min_frac must be in (0, 1], got {self.crop_min_frac}")
        lo, hi = self.resample_range
        if not (0 < lo <= hi):
            raise ConfigError(f"resample_range must satisfy 0 < lo <= hi, got {self.resample_range}")
        if self.pixel_noise_sigma < 0 or self.illum_sigma < 0:
            raise ConfigError("noise sigmas must be >= 0")

    @classmethod
    def finetune(cls) -> "AugmentConfig":
        """All but the pixel-noise and frequency augmentations (personalization/TTA recipe)."""
        return cls(noise=False, resample=False)

    @classmethod
    def none(cls) -> "AugmentConfig":
        return cls(noise=False, illumination=False, flip=False, crop=False, reverse=False, resample=False)


@dataclass(frozen=True)
class AugmentOutcome:
    """One augmented view plus the bookkeeping downstream losses need."""

    clip: Clip
    band_scale: float  # c of the frequency resample; 1.0 when not applied
    applied: tuple[str, ...]


def gaussian_pixel_noise(clip: Clip, sigma: float, rng: np.random.Generator) -> Clip:
    """iid N(0, sigma^2) added to every pixel of every frame; no clamping."""
    if sigma < 0:
        raise ConfigError(f"sigma must be >= 0, got {sigma}")
    if sigma == 0:
        return clip
    return clip.with_data(clip.data + rng.normal(0.0, sigma, size=clip.data.shape))


def illumination_shift(clip: Clip, sigma: float, rng: np.random.Generator) -> Clip:
    """One N(0, sigma^2) scalar added to every value of the clip."""
    if sigma < 0:
        raise ConfigError(f"sigma must be >= 0, got {sigma}")
    if sigma == 0:
        return clip
    return clip.with_data(clip.data + rng.normal(0.0, sigma))


def horizontal_flip(clip: Clip, p: float, rng: np.random.Generator) -> Clip:
    """Reverse the W axis of every frame with probability p."""
    if rng.random() < p:
        return clip.with_data(clip.data[:, ::-1].copy())
    return clip


def time_reverse(clip: Clip, p: float, rng: np.random.Generator) -> Clip:
    """Reverse the frame order with probability p; the gt trace reverses with it."""
    if rng.random() < p:
        gt = None if clip.gt_rate is None else clip.gt_rate[::-1].copy()
        return clip.with_data(clip.data[::-1].copy(), gt_rate=gt)
    return clip


def crop_resize(clip: Clip, min_frac: float, rng: np.random.Generator) -> Clip:
    """Random square crop (side in [min_frac*W, W]) at a random offset, all
    frames identically, bilinearly resized back to W x H. Requires W == H."""
    t, w, h, c = clip.data.shape
    if w != h:
        raise InvalidInputError(f"crop_resize needs square frames, got {w}x{h}")
    side = int(round(rng.uniform(min_frac * w, w)))
    side = min(max(side, 2), w)
    off_x = int(rng.integers(0, w - side + 1))
    off_y = int(rng.integers(0, h - side + 1))
    if side == w:
        return clip
    cropped = clip.data[:, off_x : off_x + side, off_y : off_y + side]
    return clip.with_data(bilinear_resize(cropped, w, h))


def freq_resample(clip: Clip, c: float, out_len: int) -> Clip:
    """Linear-in-time resample: output frame j samples the source at index j*c.

    Every embedded frequency f becomes c*f, so the gt trace is resampled the
    same way and multiplied by c. The source must cover ceil(c*(out_len-1))+1
    frames; no clamping or extrapolation.
    """
    if c <= 0:
        raise InvalidInputError(f"resample factor must be > 0, got {c}")
    if out_len < 2:
        raise InvalidInputError(f"out_len must be >= 2, got {out_len}")
    needed = math.ceil(c * (out_len - 1)) + 1
    if clip.n_frames < needed:
        raise InvalidInputError(
            f"source too short for resample: need {needed} frames for c={c}, "
            f"out_len={out_len}, have {clip.n_frames}"
        )
    pos = np.arange(out_len) * c
    i0 = np.floor(pos).astype(int)
    frac = pos - i0
    i1 = np.minimum(i0 + 1, clip.n_frames - 1)
    fr = frac[:, None, None, None]
    data = clip.data[i0] * (1 - fr) + clip.data[i1] * fr
    gt = None
    if clip.gt_rate is not None:
        gt = c * (clip.gt_rate[i0] * (1 - frac) + clip.gt_rate[i1] * frac)
    return clip.with_data(data, gt_rate=gt)


def required_source_len(cfg: AugmentConfig, out_len: int) -> int:
    """Frames the source clip must have so every draw of c can resample to out_len."""
    if not cfg.resample:
        return out_len
    return math.ceil(cfg.resample_range[1] * (out_len - 1)) + 1


def augment_batch(
    clip: Clip,
    n_views: int,
    cfg: AugmentConfig,
    rng: np.random.Generator,
    out_len: int | None = None,
) -> list[AugmentOutcome]:
    """n_views independent augmented views of one source clip.

    Per view, in order: frequency resample (draws its own c, recorded as
    band_scale), crop+resize, horizontal flip, time reverse, illumination
    shift, pixel noise. Each view consumes its own generator spawned from
    `rng`, so views are independent and the whole batch is reproducible.

    out_len defaults to the source length; when resampling is enabled the
    source must have `required_source_len(cfg, out_len)` frames, and when it
    is disabled a longer source is cut to its first out_len frames.
    """
    if n_views < 1:
        raise InvalidInputError(f"n_views must be >= 1, got {n_views}")
    if out_len is None:
        out_len = clip.n_frames if not cfg.resample else None
    if out_len is None:
        raise InvalidInputError("out_len is required when resampling is enabled")
    outcomes = []
    for _ in range(n_views):
        view_rng = spawn_rng(rng)
        view = clip
        scale = 1.0
        applied = []
        if cfg.resample:
            lo, hi = cfg.resample_range
            scale = float(view_rng.uniform(lo, hi))
            view = freq_resample(view, scale, out_len)
            applied.append("resample")
        elif view.n_frames > out_len:
            view = clip_head(view, out_len)
        if cfg.crop:
            cropped = crop_resize(view, cfg.crop_min_frac, view_rng)
            if cropped is not view:
                applied.append("crop")
            view = cropped
        if cfg.flip:
            flipped = horizontal_flip(view, cfg.flip_p, view_rng)
            if flipped is not view:
                applied.append("flip")
            view = flipped
        if cfg.reverse:
            reversed_ = time_reverse(view, cfg.reverse_p, view_rng)
            if reversed_ is not view:
                applied.append("reverse")
            view = reversed_
        if cfg.illumination and cfg.illum_sigma > 0:
            view = illumination_shift(view, cfg.illum_sigma, view_rng)
            applied.append("illumination")
        if cfg.noise and cfg.pixel_noise_sigma > 0:
            view = gaussian_pixel_noise(view, cfg.pixel_noise_sigma, view_rng)
            applied.append("noise")
        outcomes.append(AugmentOutcome(clip=view, band_scale=scale, applied=tuple(applied)))
    return outcomes


def clip_head(clip: Clip, length: int) -> Clip:
    """First `length` frames (the c=1 identity case of resampling)."""
    gt = None if clip.gt_rate is None else clip.gt_rate[:length]
    return Clip(data=clip.data[:length], fps=clip.fps, gt_rate=gt, label=clip.label)
