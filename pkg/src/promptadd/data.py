"""Synthetic waveform corpora with controllable domain gaps.

Real (bona fide) samples are harmonic stacks with random fundamental and
phases plus Gaussian noise. Fake (spoofed) samples start from the same
construction and are then corrupted by a generation artifact before noise
is added, so the artifact is what a detector must learn to find.

A domain is a DomainConfig; its `shift` knob moves the domain away from
the config's own base settings along three axes at once:
  linguistic-like  the fundamental-frequency band migrates upward
  environment-like  the noise floor rises (masking artifact detail)
  generator-like    artifact parameters morph, changing its character
shift = 0 reproduces the base (source) domain exactly.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, replace
from typing import Optional, Sequence, Tuple

import numpy as np

from .errors import (
    ConfigError,
    CorruptHeaderError,
    DataFormatError,
    TruncatedPayloadError,
    VersionMismatchError,
)

ARTIFACT_KINDS = ("harmonic-quantization", "periodic-glitch", "phase-discontinuity")

LABEL_REAL = 0
LABEL_FAKE = 1

# harmonic stack: amplitudes 1/h for h = 1..N_HARMONICS
N_HARMONICS = 6

# per-unit-shift drift rates for the three gap axes
FREQ_SHIFT_RATE = 0.12      # added to both band edges (cycles per sample)
NOISE_SHIFT_RATE = 0.05     # added to the noise stddev

# artifact base parameters and their per-unit-shift morph rates
QUANT_STEP_BASE, QUANT_STEP_RATE = 0.5, 0.8
GLITCH_PERIOD_BASE, GLITCH_PERIOD_RATE = 48, 0.3
GLITCH_WIDTH_BASE, GLITCH_WIDTH_RATE = 10, -0.2
FRAME_BASE, FRAME_RATE = 96, 0.75

DATASET_MAGIC = b"PDDS"
DATASET_VERSION = 1
_SPLIT_TAGS = {"train": 0, "dev": 1, "eval": 2, None: 255}
_TAG_SPLITS = {v: k for k, v in _SPLIT_TAGS.items()}

DEFAULT_SPLIT_FRACTIONS = (0.6, 0.2, 0.2)


@dataclass
class DomainConfig:
    delta: int = 2048
    base_freq_range: Tuple[float, float] = (0.010, 0.025)
    noise_level: float = 0.05
    artifact_kind: str = "harmonic-quantization"
    shift: float = 0.0

    def __post_init__(self):
        if self.delta <= 0:
            raise ConfigError(f"delta must be positive, got {self.delta}")
        lo, hi = self.base_freq_range
        if not 0.0 < lo < hi:
            raise ConfigError(f"base_freq_range must satisfy 0 < lo < hi, got {lo}, {hi}")
        if self.noise_level < 0:
            raise ConfigError(f"noise_level must be non-negative, got {self.noise_level}")
        if self.artifact_kind not in ARTIFACT_KINDS:
            raise ConfigError(
                f"unknown artifact kind {self.artifact_kind!r}, "
                f"expected one of {ARTIFACT_KINDS}"
            )
        if not 0.0 <= self.shift <= 1.0:
            raise ConfigError(f"shift must lie in [0, 1], got {self.shift}")
        if hi + self.shift * FREQ_SHIFT_RATE >= 0.5:
            raise ConfigError("shifted frequency band crosses the Nyquist limit")

    def shifted(self, shift: float) -> "DomainConfig":
        return replace(self, shift=shift)


@dataclass
class LabeledDataset:
    waveforms: np.ndarray
    labels: np.ndarray
    split: Optional[str] = None

    def __post_init__(self):
        self.waveforms = np.asarray(self.waveforms, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.uint8)
        if self.waveforms.ndim != 2:
            raise ConfigError(f"waveforms must be 2-D, got shape {self.waveforms.shape}")
        if self.labels.shape != (len(self.waveforms),):
            raise ConfigError("labels must align with waveforms")
        if len(self.labels) and not np.all((self.labels == 0) | (self.labels == 1)):
            raise ConfigError("labels must be 0 (real) or 1 (fake)")
        if self.split not in _SPLIT_TAGS:
            raise ConfigError(f"unknown split tag {self.split!r}")

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def delta(self) -> int:
        return self.waveforms.shape[1]

    def counts(self) -> Tuple[int, int]:
        n_fake = int(self.labels.sum())
        return len(self.labels) - n_fake, n_fake


@dataclass
class SplitDatasets:
    train: LabeledDataset
    dev: LabeledDataset
    eval: LabeledDataset


def _harmonic_stack(f0: float, phases: np.ndarray, t: np.ndarray) -> np.ndarray:
    h = np.arange(1, N_HARMONICS + 1, dtype=np.float64)
    amps = 1.0 / h
    angles = 2.0 * np.pi * f0 * h[:, None] * t[None, :] + phases[:, None]
    return (amps[:, None] * np.sin(angles)).sum(axis=0)


def _apply_artifact(clean: np.ndarray, f0: float, cfg: DomainConfig,
                    rng: np.random.Generator, t: np.ndarray) -> np.ndarray:
    s = cfg.shift
    kind = cfg.artifact_kind
    if kind == "harmonic-quantization":
        step = QUANT_STEP_BASE * (1.0 + QUANT_STEP_RATE * s)
        return np.round(clean / step) * step
    if kind == "periodic-glitch":
        period = max(2, int(round(GLITCH_PERIOD_BASE * (1.0 + GLITCH_PERIOD_RATE * s))))
        width = max(1, int(round(GLITCH_WIDTH_BASE * (1.0 + GLITCH_WIDTH_RATE * s))))
        offset = int(rng.integers(period))
        out = clean.copy()
        for start in range(offset, len(out), period):
            out[start:start + width] = 0.0
        return out
    # phase-discontinuity: redraw harmonic phases every frame
    frame = max(4, int(round(FRAME_BASE * (1.0 + FRAME_RATE * s))))
    out = np.empty_like(clean)
    for start in range(0, len(out), frame):
        seg = t[start:start + frame]
        phases = rng.uniform(0.0, 2.0 * np.pi, N_HARMONICS)
        out[start:start + frame] = _harmonic_stack(f0, phases, seg)
    return out


def synth_generate(cfg: DomainConfig, n_real: int, n_fake: int,
                   seed: int) -> LabeledDataset:
    """Deterministically generate a labeled domain sample.

    Real samples come first, then fakes; label proportions are exact."""
    if n_real < 0 or n_fake < 0 or n_real + n_fake == 0:
        raise ConfigError(f"need a non-empty corpus, got {n_real} real / {n_fake} fake")
    rng = np.random.default_rng(seed)
    lo = cfg.base_freq_range[0] + cfg.shift * FREQ_SHIFT_RATE
    hi = cfg.base_freq_range[1] + cfg.shift * FREQ_SHIFT_RATE
    noise = cfg.noise_level + cfg.shift * NOISE_SHIFT_RATE
    t = np.arange(cfg.delta, dtype=np.float64)

    waves = np.empty((n_real + n_fake, cfg.delta), dtype=np.float64)
    for i in range(n_real + n_fake):
        fake = i >= n_real
        f0 = rng.uniform(lo, hi)
        phases = rng.uniform(0.0, 2.0 * np.pi, N_HARMONICS)
        x = _harmonic_stack(f0, phases, t)
        if fake:
            x = _apply_artifact(x, f0, cfg, rng, t)
        waves[i] = x + noise * rng.standard_normal(cfg.delta)
    labels = np.concatenate([
        np.zeros(n_real, dtype=np.uint8),
        np.ones(n_fake, dtype=np.uint8),
    ])
    return LabeledDataset(waves, labels)


# ---------------------------------------------------------------------------
# subsampling and splitting


def _largest_remainder(total: int, weights: Sequence[float]) -> list:
    """Integer allocation of `total` by weight, largest fractional part first;
    ties break toward the lower index."""
    ideal = [total * w for w in weights]
    base = [int(np.floor(x)) for x in ideal]
    leftover = total - sum(base)
    order = sorted(range(len(ideal)), key=lambda i: (-(ideal[i] - base[i]), i))
    for i in order[:leftover]:
        base[i] += 1
    return base


def subsample_target(ds: LabeledDataset, size: int, seed: int) -> LabeledDataset:
    """Stratified subsample of `size` items, class counts by largest-remainder
    rounding of the dataset's own real/fake ratio. Size 10 is special-cased
    to an exact 5/5 split."""
    if size < 2:
        raise ConfigError(f"subsample size must be at least 2, got {size}")
    if size > len(ds):
        raise ConfigError(f"subsample size {size} exceeds dataset size {len(ds)}")
    n_real, n_fake = ds.counts()
    if size == 10:
        take = [5, 5]
    else:
        take = _largest_remainder(size, [n_real / len(ds), n_fake / len(ds)])
    for need, have, name in zip(take, (n_real, n_fake), ("real", "fake")):
        if need > have:
            raise ConfigError(
                f"subsample needs {need} {name} samples but only {have} exist"
            )
    rng = np.random.default_rng(seed)
    picked = []
    for label, need in zip((LABEL_REAL, LABEL_FAKE), take):
        idx = np.flatnonzero(ds.labels == label)
        picked.append(rng.permutation(idx)[:need])
    sel = np.concatenate(picked)
    return LabeledDataset(ds.waveforms[sel].copy(), ds.labels[sel].copy(), ds.split)


def split(ds: LabeledDataset, fractions: Sequence[float],
          seed: int) -> SplitDatasets:
    """Stratified train/dev/eval split by largest-remainder allocation.

    All three fractions must be strictly positive and sum to 1; every class
    must land at least one sample in every split."""
    fractions = tuple(float(f) for f in fractions)
    if len(fractions) != 3:
        raise ConfigError(f"need exactly 3 fractions, got {len(fractions)}")
    if any(f <= 0.0 for f in fractions):
        raise ConfigError(f"fractions must be strictly positive, got {fractions}")
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise ConfigError(f"fractions must sum to 1, got {sum(fractions)}")
    rng = np.random.default_rng(seed)
    parts = ([], [], [])
    for label in (LABEL_REAL, LABEL_FAKE):
        idx = np.flatnonzero(ds.labels == label)
        if len(idx) == 0:
            raise ConfigError(f"dataset has no samples of label {label}")
        alloc = _largest_remainder(len(idx), fractions)
        if min(alloc) == 0:
            raise ConfigError(
                f"class {label} with {len(idx)} samples cannot cover all three "
                f"splits at fractions {fractions}"
            )
        shuffled = rng.permutation(idx)
        bounds = np.cumsum([0] + alloc)
        for part, lo, hi in zip(parts, bounds, bounds[1:]):
            part.append(shuffled[lo:hi])
    names = ("train", "dev", "eval")
    out = []
    for part, name in zip(parts, names):
        sel = np.concatenate(part)
        out.append(LabeledDataset(ds.waveforms[sel].copy(), ds.labels[sel].copy(), name))
    return SplitDatasets(*out)


# ---------------------------------------------------------------------------
# dataset file format
#
# magic "PDDS" | version u32 | delta u32 | n_samples u32 | split tag u8
# then per sample: label u8 | delta f64 little-endian
# split tags: 0 train, 1 dev, 2 eval, 255 unsplit


def write_dataset(ds: LabeledDataset, path) -> None:
    with open(path, "wb") as fh:
        fh.write(DATASET_MAGIC)
        fh.write(struct.pack("<III", DATASET_VERSION, ds.delta, len(ds)))
        fh.write(struct.pack("<B", _SPLIT_TAGS[ds.split]))
        for label, wave in zip(ds.labels, ds.waveforms):
            fh.write(struct.pack("<B", int(label)))
            fh.write(wave.astype("<f8").tobytes())


def read_dataset(path) -> LabeledDataset:
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 4 or blob[:4] != DATASET_MAGIC:
        raise CorruptHeaderError(f"{path}: not a dataset file")
    if len(blob) < 17:
        raise TruncatedPayloadError(f"{path}: header cut short")
    version, delta, n = struct.unpack_from("<III", blob, 4)
    (tag,) = struct.unpack_from("<B", blob, 16)
    if version != DATASET_VERSION:
        raise VersionMismatchError(
            f"{path}: dataset version {version}, expected {DATASET_VERSION}"
        )
    if tag not in _TAG_SPLITS:
        raise CorruptHeaderError(f"{path}: unknown split tag {tag}")
    record = 1 + 8 * delta
    expected = 17 + n * record
    if len(blob) < expected:
        raise TruncatedPayloadError(
            f"{path}: expected {expected} bytes, found {len(blob)}"
        )
    if len(blob) > expected:
        raise DataFormatError(f"{path}: {len(blob) - expected} trailing bytes")
    labels = np.empty(n, dtype=np.uint8)
    waves = np.empty((n, delta), dtype=np.float64)
    off = 17
    for i in range(n):
        labels[i] = blob[off]
        waves[i] = np.frombuffer(blob, dtype="<f8", count=delta, offset=off + 1)
        off += record
    return LabeledDataset(waves, labels, _TAG_SPLITS[tag])
