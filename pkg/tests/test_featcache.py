import numpy as np
import pytest

from conftest import tone
from erann.dsp import MelConfig
from erann.errors import CorruptCache
from erann.featcache import cache_path, cached_features, clip_features, read_lmsp, write_lmsp
from erann.wavio import write_wav


def test_lmsp_round_trip(tmp_path, rng):
    values = rng.standard_normal((128, 256)).astype(np.float32)
    write_lmsp(tmp_path / "x.lmsp", values)
    data = (tmp_path / "x.lmsp").read_bytes()
    assert data[:4] == b"LMSP"
    assert np.array_equal(read_lmsp(tmp_path / "x.lmsp", MelConfig()), values)


def test_lmsp_rejects_corruption(tmp_path, rng):
    write_lmsp(tmp_path / "x.lmsp", rng.standard_normal((4, 3)))
    data = (tmp_path / "x.lmsp").read_bytes()
    (tmp_path / "t.lmsp").write_bytes(data[:-1])
    (tmp_path / "m.lmsp").write_bytes(b"NOPE" + data[4:])
    for name in ("t.lmsp", "m.lmsp"):
        with pytest.raises(CorruptCache):
            read_lmsp(tmp_path / name)
    with pytest.raises(CorruptCache, match="mel configuration"):
        read_lmsp(tmp_path / "x.lmsp", MelConfig(f_min=60.0))


def test_cache_reuse_and_invalidation(tmp_path):
    wav = tmp_path / "a.wav"
    write_wav(wav, tone(400, 1.0).samples, 44100)
    cache = tmp_path / "cache"
    first, path, reused = cached_features(wav, cache)
    assert not reused and path.is_file()
    again, _, reused = cached_features(wav, cache)
    assert reused and np.array_equal(first, again)
    assert np.allclose(first, clip_features(wav), atol=1e-5)
    assert cache_path(cache, wav, MelConfig(f_min=60.0)) != path
    write_wav(wav, tone(800, 1.0).samples, 44100)
    assert cache_path(cache, wav, MelConfig()) != path
