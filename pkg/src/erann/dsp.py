"""Log-mel feature extraction.

The front end turns a 44.1 kHz mono waveform into a ``128 x T_s`` log-mel
matrix whose frame count is always a multiple of 128, so that every
combination of temporal strides in the network divides it exactly.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import InvalidAudio, InvalidConfig

SAMPLE_RATE = 44100
FRAMES_PER_SECOND = 128


@dataclass
class AudioClip:
    samples: np.ndarray
    sample_rate: int = SAMPLE_RATE
    labels: Optional[np.ndarray] = None

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 1:
            raise InvalidAudio(f"expected a 1-D waveform, got shape {self.samples.shape}")
        if self.sample_rate <= 0:
            raise InvalidAudio(f"sample_rate must be positive, got {self.sample_rate}")
        if self.labels is not None:
            self.labels = np.asarray(self.labels, dtype=np.float64)
            if np.any(self.labels < 0) or np.any(self.labels > 1):
                raise InvalidAudio("label components must lie in [0, 1]")

    def __len__(self) -> int:
        return self.samples.shape[0]

    @property
    def duration(self) -> float:
        return len(self) / self.sample_rate

    def replace(self, samples: np.ndarray) -> "AudioClip":
        """Same sample rate and labels, new waveform."""
        return AudioClip(samples, self.sample_rate, self.labels)


@dataclass(frozen=True)
class MelConfig:
    window_len: int = 1380
    hop: int = 345
    n_mels: int = 128
    f_min: float = 50.0
    f_max: float = 14000.0
    log_floor: float = 1e-10
    sample_rate: int = SAMPLE_RATE

    def validate(self) -> None:
        if self.hop <= 0 or self.window_len <= 0 or self.n_mels <= 0:
            raise InvalidConfig("window_len, hop and n_mels must be positive")
        if self.window_len != 4 * self.hop:
            raise InvalidConfig(
                f"window_len / hop must be 4 (0.75 overlap), got {self.window_len}/{self.hop}"
            )
        if not 0 < self.f_min < self.f_max:
            raise InvalidConfig(f"need 0 < f_min < f_max, got {self.f_min}, {self.f_max}")
        if self.f_max > self.sample_rate / 2:
            raise InvalidConfig(
                f"f_max={self.f_max} exceeds Nyquist ({self.sample_rate / 2})"
            )
        if self.log_floor <= 0:
            raise InvalidConfig("log_floor must be positive")

    @property
    def n_bins(self) -> int:
        return self.window_len // 2 + 1

    def content_hash(self) -> str:
        """Stable digest of every field; used to key feature caches."""
        text = ";".join(
            f"{name}={getattr(self, name)!r}"
            for name in sorted(self.__dataclass_fields__)
        )
        return hashlib.sha256(text.encode()).hexdigest()[:16]


@dataclass
class LogMelSpec:
    values: np.ndarray
    t_seconds: int
    labels: Optional[np.ndarray] = field(default=None)

    @property
    def shape(self):
        return self.values.shape


def to_mono(samples, sample_rate: int = SAMPLE_RATE) -> AudioClip:
    """Average channels into one waveform.

    ``samples`` is either 1-D (already mono) or 2-D shaped
    ``(n_channels, n_samples)``.
    """
    x = np.asarray(samples, dtype=np.float64)
    if x.size == 0:
        raise InvalidAudio("empty waveform")
    if x.ndim == 1:
        mono = x
    elif x.ndim == 2:
        mono = x.mean(axis=0)
    else:
        raise InvalidAudio(f"expected (channels, samples), got shape {x.shape}")
    return AudioClip(np.clip(mono, -1.0, 1.0), sample_rate)


def resample_linear(clip: AudioClip, target_sr: int) -> AudioClip:
    """Resample by linear interpolation between neighbouring samples."""
    if target_sr is None or target_sr <= 0:
        raise InvalidConfig(f"target_sr must be positive, got {target_sr}")
    if target_sr == clip.sample_rate:
        return AudioClip(clip.samples.copy(), clip.sample_rate, clip.labels)
    n_out = int(round(len(clip) * target_sr / clip.sample_rate))
    n_out = max(n_out, 1)
    positions = np.arange(n_out) * (clip.sample_rate / target_sr)
    out = np.interp(positions, np.arange(len(clip)), clip.samples)
    return AudioClip(out, target_sr, clip.labels)


def frames_for_length(n_samples: int, hop: int = 345) -> int:
    """Centered-STFT frame count: floor(len / hop) + 1."""
    return n_samples // hop + 1


def padded_length(n_samples: int, hop: int = 345) -> tuple[int, int]:
    """Return ``(t, padded_len)`` for a clip of ``n_samples`` samples.

    ``t`` is the smallest integer with ``128 * t`` at least the natural frame
    count, and ``padded_len`` the shortest length yielding exactly ``128 * t``
    frames. Every original frame is kept, and fewer than one second of zeros
    is ever appended.
    """
    if n_samples <= 0:
        raise InvalidAudio("cannot pad an empty clip")
    natural = frames_for_length(n_samples, hop)
    t = -(-natural // FRAMES_PER_SECOND)
    need = hop * (FRAMES_PER_SECOND * t - 1)
    return t, max(n_samples, need)


def pad_for_frames(clip: AudioClip, hop: int = 345) -> AudioClip:
    if clip.sample_rate != SAMPLE_RATE:
        raise InvalidAudio(
            f"pad_for_frames expects {SAMPLE_RATE} Hz audio, got {clip.sample_rate}"
        )
    _, target = padded_length(len(clip), hop)
    out = np.zeros(target, dtype=np.float64)
    out[: len(clip)] = clip.samples
    return clip.replace(out)


def hann_window(n: int) -> np.ndarray:
    # periodic form (DFT-even)
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(n) / n)


def stft_power(clip: AudioClip, cfg: MelConfig = MelConfig()) -> np.ndarray:
    """Centered, Hann-windowed power spectrogram shaped ``(n_bins, frames)``.

    The frame count is truncated to a multiple of 128 when the input is longer
    than what :func:`pad_for_frames` would produce.
    """
    x = clip.samples
    if len(x) < cfg.hop:
        raise InvalidAudio(f"clip has {len(x)} samples, shorter than one hop ({cfg.hop})")
    half = cfg.window_len // 2
    ext = np.concatenate([np.zeros(half), x, np.zeros(half)])
    n_frames = frames_for_length(len(x), cfg.hop)
    keep = (n_frames // FRAMES_PER_SECOND) * FRAMES_PER_SECOND or n_frames
    frames = np.lib.stride_tricks.sliding_window_view(ext, cfg.window_len)[:: cfg.hop][:keep]
    spec = np.fft.rfft(frames * hann_window(cfg.window_len), n=cfg.window_len, axis=1)
    return (spec.real**2 + spec.imag**2).T


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_filterbank(cfg: MelConfig = MelConfig(), n_bins: Optional[int] = None) -> np.ndarray:
    """Unnormalized triangular filters, peak height 1, shape ``(n_mels, n_bins)``.

    Each filter rises linearly from the previous center to its own and falls
    to the next. A filter narrower than the bin spacing is widened to reach
    its nearest bin so that no row is empty.
    """
    cfg.validate()
    n_fft = cfg.window_len
    if n_bins is None:
        n_bins = cfg.n_bins
    edges = mel_to_hz(np.linspace(hz_to_mel(cfg.f_min), hz_to_mel(cfg.f_max), cfg.n_mels + 2))
    freqs = np.arange(n_bins) * cfg.sample_rate / n_fft
    fb = np.zeros((cfg.n_mels, n_bins))
    for m in range(cfg.n_mels):
        lo, center, hi = edges[m], edges[m + 1], edges[m + 2]
        rise = (freqs - lo) / (center - lo)
        fall = (hi - freqs) / (hi - center)
        fb[m] = np.maximum(0.0, np.minimum(rise, fall))
        if not fb[m].any():
            fb[m, int(np.argmin(np.abs(freqs - center)))] = 1.0
    return fb


def filter_centers(cfg: MelConfig = MelConfig()) -> np.ndarray:
    """Center frequency (Hz) of each mel filter."""
    edges = mel_to_hz(np.linspace(hz_to_mel(cfg.f_min), hz_to_mel(cfg.f_max), cfg.n_mels + 2))
    return edges[1:-1]


_FB_CACHE: dict = {}


def _cached_filterbank(cfg: MelConfig) -> np.ndarray:
    fb = _FB_CACHE.get(cfg)
    if fb is None:
        fb = mel_filterbank(cfg)
        fb.setflags(write=False)
        _FB_CACHE[cfg] = fb
    return fb


def log_mel(clip: AudioClip, cfg: MelConfig = MelConfig()) -> LogMelSpec:
    """Full front end: pad, STFT power, mel projection, natural log."""
    if clip.sample_rate != cfg.sample_rate:
        raise InvalidAudio(
            f"log_mel expects {cfg.sample_rate} Hz audio, got {clip.sample_rate}; resample first"
        )
    padded = pad_for_frames(clip, cfg.hop)
    power = stft_power(padded, cfg)
    mel = _cached_filterbank(cfg) @ power
    values = np.log(mel + cfg.log_floor)
    return LogMelSpec(values, values.shape[1] // FRAMES_PER_SECOND, clip.labels)


def batch_log_mel(clips: Sequence[AudioClip], cfg: MelConfig = MelConfig()) -> np.ndarray:
    """Stack equal-length clips into a ``(batch, 1, n_mels, frames)`` float32 array."""
    specs = [log_mel(c, cfg).values for c in clips]
    widths = {s.shape[1] for s in specs}
    if len(widths) != 1:
        raise InvalidAudio(f"clips in a batch must share a frame count, got {sorted(widths)}")
    return np.stack(specs)[:, None].astype(np.float32)
