"""Minimal RIFF/WAVE reader and writer for PCM16 and IEEE float32."""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .dsp import AudioClip, to_mono
from .errors import InvalidAudio, UnsupportedFormat

WAVE_FORMAT_PCM = 0x0001
WAVE_FORMAT_IEEE_FLOAT = 0x0003
WAVE_FORMAT_EXTENSIBLE = 0xFFFE

_FORMAT_NAMES = {
    0x0001: "PCM",
    0x0002: "MS ADPCM",
    0x0003: "IEEE float",
    0x0006: "A-law",
    0x0007: "mu-law",
    0x0011: "IMA ADPCM",
    0x0055: "MPEG layer 3",
    0xFFFE: "extensible",
}


def _format_name(tag: int) -> str:
    return f"0x{tag:04X} ({_FORMAT_NAMES.get(tag, 'unknown')})"


def read_wav(path) -> tuple[np.ndarray, int]:
    """Decode a WAV file into ``(channels x samples float64 array, sample_rate)``.

    PCM16 is scaled by 1/32768; float32 is returned as stored.
    """
    data = Path(path).read_bytes()
    if len(data) < 12 or data[:4] != b"RIFF" or data[8:12] != b"WAVE":
        raise InvalidAudio(f"{path}: not a RIFF/WAVE file")

    fmt = None
    payload = None
    pos = 12
    while pos + 8 <= len(data):
        chunk_id = data[pos : pos + 4]
        (size,) = struct.unpack_from("<I", data, pos + 4)
        body = data[pos + 8 : pos + 8 + size]
        if chunk_id == b"fmt ":
            fmt = body
        elif chunk_id == b"data":
            payload = body
        pos += 8 + size + (size & 1)

    if fmt is None or len(fmt) < 16:
        raise InvalidAudio(f"{path}: missing or short 'fmt ' chunk")
    if payload is None:
        raise InvalidAudio(f"{path}: missing 'data' chunk")

    tag, channels, rate, _, block_align, bits = struct.unpack_from("<HHIIHH", fmt, 0)
    if tag == WAVE_FORMAT_EXTENSIBLE:
        if len(fmt) < 26:
            raise InvalidAudio(f"{path}: truncated extensible format chunk")
        (tag,) = struct.unpack_from("<H", fmt, 24)

    if tag == WAVE_FORMAT_PCM and bits == 16:
        dtype, scale = "<i2", 1.0 / 32768.0
    elif tag == WAVE_FORMAT_IEEE_FLOAT and bits == 32:
        dtype, scale = "<f4", 1.0
    else:
        raise UnsupportedFormat(
            f"{path}: unsupported WAV codec, format tag {_format_name(tag)} with {bits} bits; "
            "only PCM16 and float32 are accepted"
        )
    if channels < 1:
        raise InvalidAudio(f"{path}: channel count is zero")

    n_frames = len(payload) // block_align
    samples = np.frombuffer(payload[: n_frames * block_align], dtype=dtype)
    samples = samples.reshape(n_frames, channels).T.astype(np.float64) * scale
    return samples, rate


def load_clip(path) -> AudioClip:
    """Read a WAV file and downmix to mono."""
    samples, rate = read_wav(path)
    if samples.shape[1] == 0:
        raise InvalidAudio(f"{path}: no samples")
    return to_mono(samples, rate)


def write_wav(path, samples, sample_rate: int, fmt: str = "pcm16") -> None:
    """Write ``samples`` (1-D mono or channels x samples) as PCM16 or float32."""
    x = np.asarray(samples, dtype=np.float64)
    if x.ndim == 1:
        x = x[None]
    channels = x.shape[0]
    if fmt == "pcm16":
        tag, bits = WAVE_FORMAT_PCM, 16
        frames = np.clip(np.round(x.T * 32768.0), -32768, 32767).astype("<i2")
    elif fmt == "float32":
        tag, bits = WAVE_FORMAT_IEEE_FLOAT, 32
        frames = x.T.astype("<f4")
    else:
        raise ValueError(f"unknown sample format {fmt!r}")
    payload = frames.tobytes()
    block_align = channels * bits // 8
    fmt_chunk = struct.pack(
        "<HHIIHH", tag, channels, sample_rate, sample_rate * block_align, block_align, bits
    )
    body = (
        b"WAVE"
        + b"fmt "
        + struct.pack("<I", len(fmt_chunk))
        + fmt_chunk
        + b"data"
        + struct.pack("<I", len(payload))
        + payload
        + (b"\x00" if len(payload) & 1 else b"")
    )
    Path(path).write_bytes(b"RIFF" + struct.pack("<I", len(body)) + body)
