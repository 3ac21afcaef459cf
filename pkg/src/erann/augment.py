"""Training-time augmentations: temporal crop, pitch shift, mixup, SpecAugment.

Every random draw goes through an explicit :class:`numpy.random.Generator`
(PCG64), so a fixed seed reproduces a batch exactly.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .dsp import AudioClip, LogMelSpec
from .errors import InvalidConfig, InvalidInput


class MixupVariant(str, Enum):
    NONE = "none"
    STANDARD_WAVEFORM = "standard-waveform"
    MODIFIED_WAVEFORM = "modified-waveform"
    MODIFIED_SPECTROGRAM = "modified-spectrogram"

    @classmethod
    def from_table_index(cls, index: int) -> "MixupVariant":
        """Map the 1-4 ablation numbering onto variants."""
        order = [cls.NONE, cls.STANDARD_WAVEFORM, cls.MODIFIED_WAVEFORM, cls.MODIFIED_SPECTROGRAM]
        if not 1 <= index <= 4:
            raise InvalidConfig(f"mixup type index must be in 1..4, got {index}")
        return order[index - 1]


@dataclass
class AugmentConfig:
    t_c: float | None = None  # None disables cropping
    mixup_alpha: float = 1.0
    mixup_variant: MixupVariant = MixupVariant.NONE
    specaugment_on: bool = False
    n_time_masks: int = 2
    max_time_mask: int | None = None  # defaults to 8 * t_c frames
    n_freq_masks: int = 2
    max_freq_mask: int = 16
    pitch_shift_on: bool = False
    pitch_shift_prob: float = 0.5
    pitch_range_semitones: float = 2.0

    def __post_init__(self):
        self.mixup_variant = MixupVariant(self.mixup_variant)

    def validate(self) -> None:
        if self.t_c is not None and self.t_c <= 0:
            raise InvalidConfig(f"t_c must be positive, got {self.t_c}")
        if self.mixup_alpha <= 0:
            raise InvalidConfig(f"mixup_alpha must be positive, got {self.mixup_alpha}")
        for name in ("n_time_masks", "n_freq_masks", "max_freq_mask"):
            if getattr(self, name) < 0:
                raise InvalidConfig(f"{name} must be nonnegative")
        if self.max_time_mask is not None and self.max_time_mask < 0:
            raise InvalidConfig("max_time_mask must be nonnegative")
        if not 0.0 <= self.pitch_shift_prob <= 1.0:
            raise InvalidConfig("pitch_shift_prob must be in [0, 1]")

    @property
    def time_mask_limit(self) -> int:
        if self.max_time_mask is not None:
            return self.max_time_mask
        if self.t_c is None:
            return 0
        return int(8 * self.t_c)

    @property
    def waveform_augments(self) -> bool:
        """True when any augmentation touches the waveform before features."""
        return (
            self.t_c is not None
            or self.pitch_shift_on
            or self.mixup_variant in (MixupVariant.STANDARD_WAVEFORM, MixupVariant.MODIFIED_WAVEFORM)
        )


def make_rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(seed))


def temporal_crop(clip: AudioClip, t_c: float, rng: np.random.Generator) -> AudioClip:
    """Cut a ``t_c``-second section starting at a uniformly random offset.

    Clips shorter than ``t_c`` are zero-padded at the end first.
    """
    if t_c is None or t_c <= 0:
        raise InvalidConfig(f"t_c must be positive, got {t_c}")
    n = int(round(t_c * clip.sample_rate))
    x = clip.samples
    if len(x) < n:
        x = np.concatenate([x, np.zeros(n - len(x))])
    start = int(rng.integers(0, len(x) - n + 1))
    return clip.replace(x[start : start + n].copy())


def rms_gain_db(x: np.ndarray) -> float:
    """Sound-pressure gain 20*log10(RMS); -inf for silence."""
    rms = float(np.sqrt(np.mean(np.square(x, dtype=np.float64))))
    return 20.0 * np.log10(rms) if rms > 0 else -np.inf


def mixing_weight(g1: float, g2: float, r: float) -> float:
    """Source weight ``p`` that balances the two gains for mixing ratio ``r``."""
    return 1.0 / (1.0 + 10.0 ** ((g1 - g2) / 20.0) * (1.0 - r) / r)


def _mix_labels(a, b, r):
    if a is None or b is None:
        return None
    return r * a + (1.0 - r) * b


def mixup(clip1: AudioClip, clip2: AudioClip, r: float, variant) -> AudioClip:
    """Mix two equal-length waveforms; labels always mix with ratio ``r``."""
    variant = MixupVariant(variant)
    if len(clip1) != len(clip2) or clip1.sample_rate != clip2.sample_rate:
        raise InvalidInput("mixup needs clips of equal length and sample rate")
    if not 0.0 < r < 1.0 and variant is not MixupVariant.NONE:
        raise InvalidInput(f"mixing ratio must lie in (0, 1), got {r}")
    x1, x2 = clip1.samples, clip2.samples
    labels = _mix_labels(clip1.labels, clip2.labels, r)

    if variant is MixupVariant.NONE:
        return AudioClip(x1.copy(), clip1.sample_rate, clip1.labels)
    if variant is MixupVariant.MODIFIED_WAVEFORM:
        g1, g2 = rms_gain_db(x1), rms_gain_db(x2)
        if np.isfinite(g1) and np.isfinite(g2):
            p = mixing_weight(g1, g2, r)
            out = (p * x1 + (1.0 - p) * x2) / np.sqrt(p**2 + (1.0 - p) ** 2)
            return AudioClip(out, clip1.sample_rate, labels)
        # a silent source has no defined gain; fall through to plain mixing
    if variant is MixupVariant.MODIFIED_SPECTROGRAM:
        raise InvalidInput("the spectrogram variant is applied by mixup_spec, not mixup")
    return AudioClip(r * x1 + (1.0 - r) * x2, clip1.sample_rate, labels)


def spectrogram_gain_db(values: np.ndarray) -> float:
    """10*log10 of the mean power of a log-power spectrogram."""
    v = np.asarray(values, dtype=np.float64).ravel()
    peak = v.max()
    log_mean = peak + np.log(np.mean(np.exp(v - peak)))
    return 10.0 * log_mean / np.log(10.0)


def mixup_spec(spec1: LogMelSpec, spec2: LogMelSpec, r: float) -> LogMelSpec:
    if spec1.values.shape != spec2.values.shape:
        raise InvalidInput(
            f"spectrogram shapes differ: {spec1.values.shape} vs {spec2.values.shape}"
        )
    p = mixing_weight(spectrogram_gain_db(spec1.values), spectrogram_gain_db(spec2.values), r)
    values = (p * spec1.values + (1.0 - p) * spec2.values) / np.sqrt(p**2 + (1.0 - p) ** 2)
    return LogMelSpec(values, spec1.t_seconds, _mix_labels(spec1.labels, spec2.labels, r))


def draw_masks(shape, cfg: AugmentConfig, rng: np.random.Generator) -> np.ndarray:
    """Boolean mask of the entries SpecAugment would overwrite for one draw."""
    n_freq, n_time = shape
    mask = np.zeros(shape, dtype=bool)
    for _ in range(cfg.n_time_masks):
        length = min(int(rng.integers(0, cfg.time_mask_limit + 1)), n_time)
        start = int(rng.integers(0, n_time - length + 1))
        mask[:, start : start + length] = True
    for _ in range(cfg.n_freq_masks):
        length = min(int(rng.integers(0, cfg.max_freq_mask + 1)), n_freq)
        start = int(rng.integers(0, n_freq - length + 1))
        mask[start : start + length, :] = True
    return mask


def spec_augment(spec: LogMelSpec, cfg: AugmentConfig, rng: np.random.Generator) -> LogMelSpec:
    """Overwrite random time and frequency bands with the spectrogram mean."""
    mask = draw_masks(spec.values.shape, cfg, rng)
    values = spec.values.copy()
    values[mask] = spec.values.mean()
    return LogMelSpec(values, spec.t_seconds, spec.labels)


def shift_pitch(clip: AudioClip, semitones: float) -> AudioClip:
    """Resample by ``2**(semitones/12)`` and crop/zero-pad back to the input length.

    Duration changes with pitch; no time-scale correction is attempted.
    """
    if semitones == 0:
        return AudioClip(clip.samples.copy(), clip.sample_rate, clip.labels)
    factor = 2.0 ** (semitones / 12.0)
    n = len(clip)
    positions = np.arange(n) * factor
    out = np.interp(positions, np.arange(n), clip.samples, right=0.0)
    return clip.replace(out)


def pitch_shift(clip: AudioClip, rng: np.random.Generator, cfg: AugmentConfig) -> AudioClip:
    """With probability ``cfg.pitch_shift_prob`` shift by a uniform random interval."""
    if rng.random() >= cfg.pitch_shift_prob:
        return AudioClip(clip.samples.copy(), clip.sample_rate, clip.labels)
    s = rng.uniform(-cfg.pitch_range_semitones, cfg.pitch_range_semitones)
    return shift_pitch(clip, s)
