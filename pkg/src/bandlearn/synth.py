"""Synthetic clip generation with known ground truth.

Positive clips hide a bandlimited quasi-periodic tone in a random subset of
pixel/channel traces on top of a ~128 image baseline, white pixel noise and
an optional out-of-band distractor shared by all pixels. Poisoned clips are
a static smooth frame plus dynamic per-frame noise: visually similar, but
carrying no in-band signal. Motion matrices are the flattened-pixel analog
used by the whitening baseline.

Clips round-trip through a small binary format ("SINCCLIP") and datasets
are described by a JSON manifest that records the generator spec and seed,
so regeneration is byte-identical.
"""

import json
import os
import struct
from dataclasses import dataclass, asdict, replace

import numpy as np

from .exceptions import ConfigError, InvalidInputError
from .util import atomic_write_bytes, atomic_write_text, canonical_json, derive_seed, sha256_hex

__all__ = [
    "Clip",
    "GenSpec",
    "ManifestEntry",
    "DatasetManifest",
    "gen_positive",
    "gen_poisoned",
    "gen_dataset",
    "gen_motion_matrix",
    "save_clip",
    "load_clip",
    "load_manifest",
    "load_dataset",
    "bilinear_resize",
    "clip_window",
]

CLIP_MAGIC = b"SINCCLIP"
BASELINE = 128.0

# Relative odds that a carrier trace lands in each channel (normalized over
# the channels present). Mirrors the strong channel asymmetry of real
# photoplethysmography; a flat layout makes desk-scale datasets much harder
# to learn reliably.
CHANNEL_ODDS = (0.6, 0.25, 0.15)

MANIFEST_SCHEMA_VERSION = 1


@dataclass(frozen=True)
class Clip:
    """A T x W x H x C tensor of pixel traces at a given frame rate.

    gt_rate is the per-frame instantaneous rate in Hz; present exactly for
    positive clips.
    """

    data: np.ndarray
    fps: float
    gt_rate: np.ndarray | None = None
    label: str = "positive"

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float64)
        object.__setattr__(self, "data", data)
        if data.ndim != 4 or data.shape[0] < 2:
            raise InvalidInputError(f"clip data must be (T>=2, W, H, C), got {data.shape}")
        if not np.all(np.isfinite(data)):
            raise InvalidInputError("clip data contains non-finite values")
        if self.label not in ("positive", "poisoned"):
            raise InvalidInputError(f"unknown label {self.label!r}")
        if self.label == "positive":
            if self.gt_rate is None:
                raise InvalidInputError("positive clips must carry gt_rate")
            gt = np.asarray(self.gt_rate, dtype=np.float64)
            object.__setattr__(self, "gt_rate", gt)
            if gt.shape != (data.shape[0],):
                raise InvalidInputError(f"gt_rate shape {gt.shape} != (T={data.shape[0]},)")
        elif self.gt_rate is not None:
            raise InvalidInputError("poisoned clips must not carry gt_rate")

    @property
    def n_frames(self) -> int:
        return self.data.shape[0]

    def with_data(self, data: np.ndarray, gt_rate=None) -> "Clip":
        """Same metadata, new tensor (and optionally new gt trace)."""
        gt = self.gt_rate if gt_rate is None else gt_rate
        return Clip(data=data, fps=self.fps, gt_rate=gt, label=self.label)

    def mean_rate_bpm(self) -> float | None:
        if self.gt_rate is None:
            return None
        return 60.0 * float(np.mean(self.gt_rate))


def clip_window(clip: Clip, start: int, length: int) -> Clip:
    """Contiguous frame window [start, start+length) with aligned gt trace."""
    if start < 0 or start + length > clip.n_frames:
        raise InvalidInputError(
            f"window [{start}, {start + length}) out of range for {clip.n_frames} frames"
        )
    gt = None if clip.gt_rate is None else clip.gt_rate[start : start + length]
    return Clip(
        data=clip.data[start : start + length], fps=clip.fps, gt_rate=gt, label=clip.label
    )


@dataclass(frozen=True)
class GenSpec:
    """Generator parameters for one family of synthetic clips."""

    T: int = 120
    W: int = 6
    H: int = 6
    C: int = 3
    fps: float = 30.0
    rate_range: tuple[float, float] = (0.8, 2.5)
    signal_amplitude: float = 4.5
    carrier_mask_frac: float = 0.25
    noise_sigma: float = 13.0
    drift: float = 0.02
    distractor: tuple[float, float] | None = (4.5, 1.0)
    illum_drift_amp: float = 0.0  # slow global brightness wander (domain-shift knob)
    seed: int = 0

    def __post_init__(self):
        lo, hi = self.rate_range
        if not (0 < lo < hi < self.fps / 2):
            raise ConfigError(
                f"rate_range {self.rate_range} must sit inside (0, Nyquist={self.fps / 2})"
            )
        if self.signal_amplitude < 0 or self.noise_sigma < 0:
            raise ConfigError("amplitudes must be >= 0")
        if not (0 < self.carrier_mask_frac <= 1):
            raise ConfigError(f"carrier_mask_frac must be in (0, 1], got {self.carrier_mask_frac}")
        if self.drift < 0:
            raise ConfigError("drift must be >= 0")
        if self.T < 2 or min(self.W, self.H, self.C) < 1:
            raise ConfigError("dims must be positive with T >= 2")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["rate_range"] = list(self.rate_range)
        d["distractor"] = None if self.distractor is None else list(self.distractor)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "GenSpec":
        d = dict(d)
        d["rate_range"] = tuple(d["rate_range"])
        if d.get("distractor") is not None:
            d["distractor"] = tuple(d["distractor"])
        return cls(**d)


def bilinear_resize(stack: np.ndarray, out_w: int, out_h: int) -> np.ndarray:
    """Align-corners bilinear resize of a (T, w, h, C) stack along axes 1 and 2."""

    def grid(n_in: int, n_out: int):
        if n_in == 1 or n_out == 1:
            pos = np.zeros(n_out)
        else:
            pos = np.arange(n_out) * (n_in - 1) / (n_out - 1)
        i0 = np.floor(pos).astype(int)
        frac = pos - i0
        i1 = np.minimum(i0 + 1, n_in - 1)
        return i0, i1, frac

    x0, x1, fx = grid(stack.shape[1], out_w)
    y0, y1, fy = grid(stack.shape[2], out_h)
    row0 = stack[:, x0]
    row1 = stack[:, x1]
    fx_ = fx[None, :, None, None]
    fy_ = fy[None, None, :, None]
    top = row0[:, :, y0] * (1 - fx_) + row1[:, :, y0] * fx_
    bot = row0[:, :, y1] * (1 - fx_) + row1[:, :, y1] * fx_
    return top * (1 - fy_) + bot * fy_


def _smooth_rate_trace(spec: GenSpec, rng: np.random.Generator) -> np.ndarray:
    """Instantaneous rate in Hz: base draw plus a slow sinusoidal drift, clipped to range."""
    lo, hi = spec.rate_range
    f0 = rng.uniform(lo, hi)
    cycles = rng.uniform(0.5, 1.5)
    phase0 = rng.uniform(0, 2 * np.pi)
    t = np.arange(spec.T)
    modulation = np.sin(2 * np.pi * cycles * t / spec.T + phase0)
    return np.clip(f0 * (1.0 + spec.drift * modulation), lo, hi)


def carrier_mask(spec: GenSpec) -> np.ndarray:
    """Boolean (W, H, C) mask of the traces that carry the signal.

    The layout is a property of the generator family (the analog of stable
    facial structure across one dataset), so it derives from spec.seed alone:
    every clip of a spec shares it, and a different seed is a different
    domain. Per-clip randomness (rates, gains, noise) comes from the clip rng.
    Carrier traces land in channels with CHANNEL_ODDS weighting.
    """
    n_traces = spec.W * spec.H * spec.C
    n_carriers = max(1, int(round(spec.carrier_mask_frac * n_traces)))
    mask_rng = np.random.default_rng(derive_seed(spec.seed, "carrier-mask"))
    odds = np.ones((spec.W, spec.H, spec.C))
    channel_odds = np.array(
        [CHANNEL_ODDS[min(c, len(CHANNEL_ODDS) - 1)] for c in range(spec.C)]
    )
    odds *= (channel_odds / channel_odds.sum())[None, None, :]
    idx = mask_rng.choice(n_traces, size=n_carriers, replace=False, p=odds.ravel() / odds.sum())
    mask = np.zeros(n_traces, dtype=bool)
    mask[idx] = True
    return mask.reshape(spec.W, spec.H, spec.C)


def gen_positive(spec: GenSpec, rng: np.random.Generator) -> Clip:
    """One clip with a hidden in-band tone and per-frame ground-truth rate."""
    rate = _smooth_rate_trace(spec, rng)
    phase = rng.uniform(0, 2 * np.pi) + 2 * np.pi * np.cumsum(rate) / spec.fps
    signal = spec.signal_amplitude * np.sin(phase)  # (T,)

    mask = carrier_mask(spec)
    gains = np.zeros(mask.shape)
    gains[mask] = rng.uniform(0.5, 1.0, size=int(mask.sum()))

    data = np.full((spec.T, spec.W, spec.H, spec.C), BASELINE)
    data += signal[:, None, None, None] * gains[None]
    if spec.distractor is not None:
        freq, amp = spec.distractor
        t = np.arange(spec.T)
        tone = amp * np.sin(2 * np.pi * freq * t / spec.fps + rng.uniform(0, 2 * np.pi))
        data += tone[:, None, None, None]
    if spec.illum_drift_amp > 0:
        # one slow below-band brightness cycle over the whole clip, all pixels
        t = np.arange(spec.T)
        wander = spec.illum_drift_amp * np.sin(
            2 * np.pi * rng.uniform(0.5, 1.5) * t / spec.T + rng.uniform(0, 2 * np.pi)
        )
        data += wander[:, None, None, None]
    data += rng.normal(0.0, spec.noise_sigma, size=data.shape)
    return Clip(data=data, fps=spec.fps, gt_rate=rate, label="positive")


def gen_poisoned(spec: GenSpec, rng: np.random.Generator) -> Clip:
    """Signal-free negative: one smooth static frame repeated, plus dynamic noise."""
    coarse = BASELINE + rng.uniform(-20.0, 20.0, size=(1, 2, 2, spec.C))
    frame = bilinear_resize(coarse, spec.W, spec.H)[0]
    data = np.broadcast_to(frame, (spec.T, spec.W, spec.H, spec.C)).copy()
    data += rng.normal(0.0, spec.noise_sigma, size=data.shape)
    return Clip(data=data, fps=spec.fps, gt_rate=None, label="poisoned")


@dataclass(frozen=True)
class ManifestEntry:
    path: str
    label: str
    fps: float
    frames: int
    mean_rate_bpm: float | None


@dataclass(frozen=True)
class DatasetManifest:
    entries: tuple[ManifestEntry, ...]
    spec: GenSpec
    spec_sha256: str
    seed: int
    root: str  # directory entry paths are relative to

    def clip_paths(self) -> list[str]:
        return [os.path.join(self.root, e.path) for e in self.entries]


def save_clip(path: str, clip: Clip) -> None:
    """Binary clip file: magic, dims, fps, label, optional f64 gt trace, f32 frame-major data."""
    t, w, h, c = clip.data.shape
    header = bytearray(CLIP_MAGIC)
    header += struct.pack("<4I", t, w, h, c)
    header += struct.pack("<d", clip.fps)
    header += struct.pack("<B", 0 if clip.label == "positive" else 1)
    header += struct.pack("<B", 0 if clip.gt_rate is None else 1)
    if clip.gt_rate is not None:
        header += clip.gt_rate.astype("<f8").tobytes()
    payload = bytes(header) + clip.data.astype("<f4").tobytes()
    atomic_write_bytes(path, payload)


def load_clip(path: str) -> Clip:
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[: len(CLIP_MAGIC)] != CLIP_MAGIC:
        raise InvalidInputError(f"{path}: bad clip magic")
    pos = len(CLIP_MAGIC)
    t, w, h, c = struct.unpack_from("<4I", raw, pos)
    pos += 16
    (fps,) = struct.unpack_from("<d", raw, pos)
    pos += 8
    label_code, has_gt = struct.unpack_from("<BB", raw, pos)
    pos += 2
    gt = None
    if has_gt:
        gt = np.frombuffer(raw, dtype="<f8", count=t, offset=pos).copy()
        pos += 8 * t
    n_vals = t * w * h * c
    data = np.frombuffer(raw, dtype="<f4", count=n_vals, offset=pos)
    if len(data) != n_vals:
        raise InvalidInputError(f"{path}: truncated clip data")
    data = data.astype(np.float64).reshape(t, w, h, c)
    return Clip(data=data, fps=fps, gt_rate=gt, label="positive" if label_code == 0 else "poisoned")


def gen_dataset(
    spec: GenSpec, n_clips: int, out_dir: str, source_len_factor: float = 1.5
) -> DatasetManifest:
    """Write n_clips positive clips (length source_len_factor * T, so downstream
    resampling never extrapolates) plus a manifest; reproducible from (spec, seed)."""
    os.makedirs(out_dir, exist_ok=True)
    gen_len = int(round(source_len_factor * spec.T))
    long_spec = replace(spec, T=gen_len)
    entries = []
    for i in range(n_clips):
        rng = np.random.default_rng(derive_seed(spec.seed, f"clip-{i}"))
        clip = gen_positive(long_spec, rng)
        name = f"clip_{i:04d}.sincclip"
        save_clip(os.path.join(out_dir, name), clip)
        entries.append(
            ManifestEntry(
                path=name,
                label=clip.label,
                fps=clip.fps,
                frames=clip.n_frames,
                mean_rate_bpm=clip.mean_rate_bpm(),
            )
        )
    manifest = DatasetManifest(
        entries=tuple(entries),
        spec=spec,
        spec_sha256=sha256_hex(canonical_json(spec.to_dict()).encode()),
        seed=spec.seed,
        root=out_dir,
    )
    doc = {
        "schema_version": MANIFEST_SCHEMA_VERSION,
        "seed": manifest.seed,
        "spec": spec.to_dict(),
        "spec_sha256": manifest.spec_sha256,
        "clips": [asdict(e) for e in entries],
    }
    atomic_write_text(os.path.join(out_dir, "manifest.json"), canonical_json(doc) + "\n")
    return manifest


def load_manifest(path: str) -> DatasetManifest:
    with open(path) as fh:
        doc = json.load(fh)
    if doc.get("schema_version") != MANIFEST_SCHEMA_VERSION:
        raise InvalidInputError(f"{path}: unsupported manifest schema {doc.get('schema_version')}")
    entries = tuple(ManifestEntry(**e) for e in doc["clips"])
    return DatasetManifest(
        entries=entries,
        spec=GenSpec.from_dict(doc["spec"]),
        spec_sha256=doc["spec_sha256"],
        seed=doc["seed"],
        root=os.path.dirname(os.path.abspath(path)),
    )


def load_dataset(manifest: DatasetManifest) -> list[Clip]:
    return [load_clip(p) for p in manifest.clip_paths()]


def gen_motion_matrix(
    T: int,
    P: int,
    rate: float,
    amplitude: float,
    noise_sigma: float,
    rng: np.random.Generator,
    fps: float = 30.0,
    carrier_frac: float = 0.5,
) -> np.ndarray:
    """T x P motion-trace matrix: a random subset of columns carries a tone at
    `rate` Hz with per-column gains, all columns carry iid Gaussian noise."""
    if P < 1 or T < 2:
        raise InvalidInputError(f"need T >= 2 and P >= 1, got T={T}, P={P}")
    n_carriers = max(1, int(round(carrier_frac * P)))
    carrier_idx = rng.choice(P, size=n_carriers, replace=False)
    gains = np.zeros(P)
    gains[carrier_idx] = rng.uniform(0.5, 1.0, size=n_carriers)
    t = np.arange(T)
    tone = np.sin(2 * np.pi * rate * t / fps + rng.uniform(0, 2 * np.pi))
    matrix = amplitude * tone[:, None] * gains[None, :]
    matrix += rng.normal(0.0, noise_sigma, size=(T, P))
    return matrix
