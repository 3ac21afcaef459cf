import struct

import numpy as np
import pytest

from erann.errors import InvalidAudio, UnsupportedFormat
from erann.wavio import load_clip, read_wav, write_wav


def test_pcm16_round_trip(tmp_path):
    x = np.array([0.0, 0.5, -0.5, 32767 / 32768, -1.0])
    write_wav(tmp_path / "a.wav", x, 16000)
    samples, rate = read_wav(tmp_path / "a.wav")
    assert rate == 16000
    assert np.allclose(samples[0], x, atol=1 / 32768)


def test_float32_round_trip_and_downmix(tmp_path):
    x = np.stack([np.linspace(-1, 1, 11), np.zeros(11)])
    write_wav(tmp_path / "s.wav", x, 44100, fmt="float32")
    samples, _ = read_wav(tmp_path / "s.wav")
    assert samples.shape == (2, 11)
    assert np.allclose(samples, x.astype(np.float32))
    clip = load_clip(tmp_path / "s.wav")
    assert np.allclose(clip.samples, x.mean(axis=0), atol=1e-7)


def _riff(fmt_chunk: bytes, payload: bytes) -> bytes:
    body = b"WAVE" + b"fmt " + struct.pack("<I", len(fmt_chunk)) + fmt_chunk
    body += b"data" + struct.pack("<I", len(payload)) + payload
    return b"RIFF" + struct.pack("<I", len(body)) + body


def test_extensible_pcm16(tmp_path):
    fmt = struct.pack("<HHIIHH", 0xFFFE, 1, 8000, 16000, 2, 16)
    fmt += struct.pack("<HHI", 22, 16, 0) + struct.pack("<H", 1) + b"\x00" * 14
    (tmp_path / "e.wav").write_bytes(_riff(fmt, struct.pack("<2h", 16384, -16384)))
    samples, rate = read_wav(tmp_path / "e.wav")
    assert rate == 8000 and samples[0].tolist() == [0.5, -0.5]


def test_unsupported_codec_names_tag(tmp_path):
    fmt = struct.pack("<HHIIHH", 0x0055, 1, 44100, 16000, 1, 0)
    (tmp_path / "m.wav").write_bytes(_riff(fmt, b"\x00" * 8))
    with pytest.raises(UnsupportedFormat, match="0x0055"):
        read_wav(tmp_path / "m.wav")


def test_not_riff(tmp_path):
    (tmp_path / "x.wav").write_bytes(b"hello world, not audio")
    with pytest.raises(InvalidAudio):
        read_wav(tmp_path / "x.wav")


def test_missing_data_chunk(tmp_path):
    fmt = struct.pack("<HHIIHH", 1, 1, 8000, 16000, 2, 16)
    body = b"WAVE" + b"fmt " + struct.pack("<I", len(fmt)) + fmt
    (tmp_path / "d.wav").write_bytes(b"RIFF" + struct.pack("<I", len(body)) + body)
    with pytest.raises(InvalidAudio):
        read_wav(tmp_path / "d.wav")
