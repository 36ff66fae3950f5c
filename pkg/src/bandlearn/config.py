"""Experiment config files: versioned JSON, schema-validated before any work.

Sections mirror the library's config dataclasses (band, spectral, gen,
cross_gen, model, train, tta, sweep, paths) under a top-level version and
global seed. Unknown keys are rejected with the full key path; relative
paths resolve against the config file's directory. Sub-seeds (generator,
model init) derive from the global seed by purpose tag unless set
explicitly, so one --seed override reseeds the whole experiment.
"""

import json
import os
from dataclasses import dataclass

from .augment import AugmentConfig
from .exceptions import ConfigError
from .model import ModelConfig
from .spectral import Bandlimits, SpectralConfig
from .synth import GenSpec
from .train import TrainConfig, TtaConfig
from .util import derive_seed

__all__ = ["RunConfig", "Paths", "SweepSettings", "load_config"]

SCHEMA_VERSION = 1

_PATH_KEYS = (
    "dataset",
    "eval_dataset",
    "cross_dataset",
    "checkpoint",
    "subject_clip",
    "stream_clip",
)


@dataclass(frozen=True)
class Paths:
    dataset: str | None = None
    eval_dataset: str | None = None
    cross_dataset: str | None = None
    checkpoint: str | None = None
    subject_clip: str | None = None
    stream_clip: str | None = None


@dataclass(frozen=True)
class SweepSettings:
    alphas: tuple[float, ...]
    folds: int = 2
    seeds_per_fold: int = 2


@dataclass(frozen=True)
class RunConfig:
    version: int
    seed: int
    band: Bandlimits
    spectral: SpectralConfig
    gen: GenSpec | None
    n_clips: int
    source_len_factor: float
    cross_gen: GenSpec | None
    cross_n_clips: int
    model: ModelConfig | None
    train: TrainConfig | None
    tta: TtaConfig | None
    sweep: SweepSettings | None
    paths: Paths

    def with_seed(self, seed: int) -> "RunConfig":
        """Re-derive every sub-seed from a new global seed (--seed override)."""
        doc = dict(self._raw)  # type: ignore[attr-defined]
        doc["seed"] = seed
        return _build_config(doc, self._base_dir)  # type: ignore[attr-defined]


def _require(section: dict, key: str, where: str):
    if key not in section:
        raise ConfigError(f"missing required config key '{where}.{key}'" if where else f"missing required config key '{key}'")
    return section[key]


def _check_keys(section: dict, allowed: set[str], where: str) -> None:
    for key in section:
        if key not in allowed:
            prefix = f"{where}." if where else ""
            raise ConfigError(f"unknown config key '{prefix}{key}'")


def _get_augment(section: dict, where: str) -> AugmentConfig:
    allowed = {
        "noise", "pixel_noise_sigma", "illumination", "illum_sigma", "flip", "flip_p",
        "crop", "crop_min_frac", "reverse", "reverse_p", "resample", "resample_range",
    }
    _check_keys(section, allowed, where)
    kwargs = dict(section)
    if "resample_range" in kwargs:
        kwargs["resample_range"] = tuple(kwargs["resample_range"])
    return AugmentConfig(**kwargs)


def _get_gen(section: dict, where: str, default_seed: int) -> tuple[GenSpec, int, float]:
    allowed = {
        "T", "W", "H", "C", "fps", "rate_range", "signal_amplitude", "carrier_mask_frac",
        "noise_sigma", "drift", "distractor", "seed", "n_clips", "source_len_factor",
    }
    _check_keys(section, allowed, where)
    kwargs = dict(section)
    n_clips = int(kwargs.pop("n_clips", 32))
    factor = float(kwargs.pop("source_len_factor", 1.5))
    kwargs.setdefault("seed", default_seed)
    if "rate_range" in kwargs:
        kwargs["rate_range"] = tuple(kwargs["rate_range"])
    if kwargs.get("distractor") is not None and "distractor" in kwargs:
        kwargs["distractor"] = tuple(kwargs["distractor"])
    return GenSpec(**kwargs), n_clips, factor


def _build_config(doc: dict, base_dir: str) -> RunConfig:
    if not isinstance(doc, dict):
        raise ConfigError("config root must be a JSON object")
    top_allowed = {
        "version", "seed", "band", "spectral", "gen", "cross_gen", "model", "train",
        "tta", "sweep", "paths",
    }
    _check_keys(doc, top_allowed, "")
    version = _require(doc, "version", "")
    if version != SCHEMA_VERSION:
        raise ConfigError(f"unsupported config version {version} (expected {SCHEMA_VERSION})")
    seed = int(_require(doc, "seed", ""))

    band_sec = _require(doc, "band", "")
    _check_keys(band_sec, {"a", "b", "delta_f"}, "band")
    band = Bandlimits(**band_sec)

    spectral_sec = _require(doc, "spectral", "")
    _check_keys(spectral_sec, {"nfft", "fs"}, "spectral")
    spectral = SpectralConfig(**spectral_sec)

    gen = cross_gen = None
    n_clips, factor = 32, 1.5
    cross_n_clips = 8
    if "gen" in doc:
        gen, n_clips, factor = _get_gen(doc["gen"], "gen", derive_seed(seed, "gen"))
    if "cross_gen" in doc:
        cross_gen, cross_n_clips, _ = _get_gen(
            doc["cross_gen"], "cross_gen", derive_seed(seed, "cross-gen")
        )

    model = None
    if "model" in doc:
        sec = dict(doc["model"])
        _check_keys(sec, {"spatial_dims", "temporal_layers", "activation", "seed"}, "model")
        sec.setdefault("seed", derive_seed(seed, "model-init"))
        if "spatial_dims" in sec:
            sec["spatial_dims"] = tuple(sec["spatial_dims"])
        if "temporal_layers" in sec:
            sec["temporal_layers"] = tuple(tuple(layer) for layer in sec["temporal_layers"])
        model = ModelConfig(**sec)

    train_cfg = None
    if "train" in doc:
        sec = dict(doc["train"])
        allowed = {
            "epochs", "batch_size", "clip_len", "poison_alpha", "lr", "beta1", "beta2",
            "eps", "loss_weights", "augment",
        }
        _check_keys(sec, allowed, "train")
        augment = _get_augment(sec.pop("augment", {}), "train.augment")
        if "loss_weights" in sec:
            sec["loss_weights"] = tuple(sec["loss_weights"])
        train_cfg = TrainConfig(band=band, spectral=spectral, augment=augment, seed=seed, **sec)

    tta_cfg = None
    if "tta" in doc:
        sec = dict(doc["tta"])
        allowed = {
            "n_tta", "clip_len", "stride", "views_per_update", "lr", "beta1", "beta2",
            "eps", "loss_weights", "reaugment", "augment",
        }
        _check_keys(sec, allowed, "tta")
        augment = (
            _get_augment(sec.pop("augment"), "tta.augment")
            if "augment" in sec
            else AugmentConfig.finetune()
        )
        if "loss_weights" in sec:
            sec["loss_weights"] = tuple(sec["loss_weights"])
        tta_cfg = TtaConfig(augment=augment, seed=seed, **sec)

    sweep = None
    if "sweep" in doc:
        sec = dict(doc["sweep"])
        _check_keys(sec, {"alphas", "folds", "seeds_per_fold"}, "sweep")
        sweep = SweepSettings(
            alphas=tuple(float(a) for a in _require(sec, "alphas", "sweep")),
            folds=int(sec.get("folds", 2)),
            seeds_per_fold=int(sec.get("seeds_per_fold", 2)),
        )

    paths_sec = doc.get("paths", {})
    _check_keys(paths_sec, set(_PATH_KEYS), "paths")
    resolved = {
        key: os.path.normpath(os.path.join(base_dir, value)) if value is not None else None
        for key, value in ((k, paths_sec.get(k)) for k in _PATH_KEYS)
    }
    paths = Paths(**resolved)

    cfg = RunConfig(
        version=version,
        seed=seed,
        band=band,
        spectral=spectral,
        gen=gen,
        n_clips=n_clips,
        source_len_factor=factor,
        cross_gen=cross_gen,
        cross_n_clips=cross_n_clips,
        model=model,
        train=train_cfg,
        tta=tta_cfg,
        sweep=sweep,
        paths=paths,
    )
    object.__setattr__(cfg, "_raw", doc)
    object.__setattr__(cfg, "_base_dir", base_dir)
    return cfg


def load_config(path: str) -> RunConfig:
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON: {exc}") from exc
    try:
        return _build_config(doc, os.path.dirname(os.path.abspath(path)))
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{path}: {exc}") from exc
