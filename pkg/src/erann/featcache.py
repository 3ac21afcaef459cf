"""On-disk log-mel cache.

File layout (little-endian)::

    b"LMSP"  u32 version  u32 n_mels  u32 frames  16 bytes mel-config hash (ascii)
    f32 values[n_mels * frames]   (row-major, mel bins outermost)

Files live under ``<cache_dir>/<mel-config hash>/`` and are named by a
digest of the source audio bytes, so changing any front-end constant or
the audio itself never serves stale features.
"""

from __future__ import annotations

import hashlib
import struct
from pathlib import Path

import numpy as np

from .dsp import MelConfig, log_mel, resample_linear
from .errors import CorruptCache, InvalidInput
from .wavio import load_clip

MAGIC = b"LMSP"
VERSION = 1
_HEAD = "<4sIII16s"


def write_lmsp(path, values: np.ndarray, cfg: MelConfig = MelConfig()) -> None:
    values = np.asarray(values)
    if values.ndim != 2:
        raise InvalidInput(f"expected (n_mels, frames), got {values.shape}")
    head = struct.pack(_HEAD, MAGIC, VERSION, values.shape[0], values.shape[1], cfg.content_hash().encode())
    tmp = Path(str(path) + ".tmp")
    tmp.write_bytes(head + np.ascontiguousarray(values, dtype="<f4").tobytes())
    tmp.replace(path)


def read_lmsp(path, cfg: MelConfig | None = None) -> np.ndarray:
    """Load a cached spectrogram; with ``cfg`` the stored config hash must match."""
    data = Path(path).read_bytes()
    size = struct.calcsize(_HEAD)
    if len(data) < size:
        raise CorruptCache(f"{path}: truncated LMSP header")
    magic, version, n_mels, frames, digest = struct.unpack_from(_HEAD, data)
    if magic != MAGIC or version != VERSION:
        raise CorruptCache(f"{path}: not an LMSP v{VERSION} file")
    if cfg is not None and digest.decode() != cfg.content_hash():
        raise CorruptCache(f"{path}: computed with a different mel configuration")
    if len(data) != size + 4 * n_mels * frames:
        raise CorruptCache(f"{path}: payload size does not match {n_mels}x{frames}")
    return np.frombuffer(data, dtype="<f4", offset=size).reshape(n_mels, frames).astype(np.float32)


def cache_path(cache_dir, audio_path, cfg: MelConfig) -> Path:
    digest = hashlib.sha256(Path(audio_path).read_bytes()).hexdigest()[:24]
    return Path(cache_dir) / cfg.content_hash() / f"{digest}.lmsp"


def clip_features(audio_path, cfg: MelConfig = MelConfig()) -> np.ndarray:
    clip = load_clip(audio_path)
    if clip.sample_rate != cfg.sample_rate:
        clip = resample_linear(clip, cfg.sample_rate)
    return log_mel(clip, cfg).values


def cached_features(audio_path, cache_dir, cfg: MelConfig = MelConfig()) -> tuple:
    """``(values, path, reused)``; computes and stores on a miss."""
    path = cache_path(cache_dir, audio_path, cfg)
    if path.is_file():
        return read_lmsp(path, cfg), path, True
    path.parent.mkdir(parents=True, exist_ok=True)
    values = clip_features(audio_path, cfg).astype(np.float32)
    write_lmsp(path, values, cfg)
    return values, path, False
