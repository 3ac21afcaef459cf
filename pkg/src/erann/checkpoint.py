"""Binary checkpoint format.

Layout (little-endian)::

    b"ERNN"  u32 version
    u32 W  u32 s_m  u32 N  u8 head(0=sigmoid, 1=softmax)  f64 leaky_slope
    u32 n_records, then per record:
        u32 name_len  name(utf-8)  u32 rank  u32 dims[rank]  f32 data[prod(dims)]
    u8 has_ema
    if has_ema: f64 decay, u32 n_records, records as above

The main section holds learnable tensors followed by batch-norm running
statistics; the EMA section holds the shadow of the learnable tensors.
"""

from __future__ import annotations

import io
import struct
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import CorruptCheckpoint, InvalidConfig
from .model import HEADS, EmaState, ErannConfig, ModelState, buffer_shapes, parameter_shapes

MAGIC = b"ERNN"
VERSION = 1


def _write_records(buf, tensors: dict) -> None:
    buf.write(struct.pack("<I", len(tensors)))
    for name, arr in tensors.items():
        raw = name.encode("utf-8")
        buf.write(struct.pack("<I", len(raw)))
        buf.write(raw)
        buf.write(struct.pack("<I", arr.ndim))
        buf.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        buf.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def to_bytes(state: ModelState, ema: Optional[EmaState] = None) -> bytes:
    cfg = state.config
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<I", VERSION))
    buf.write(struct.pack("<IIIBd", cfg.W, cfg.s_m, cfg.n_classes, HEADS.index(cfg.head), cfg.leaky_slope))
    _write_records(buf, {**state.params, **state.buffers})
    if ema is not None and ema.shadow:
        buf.write(struct.pack("<Bd", 1, ema.decay))
        _write_records(buf, ema.shadow)
    else:
        buf.write(struct.pack("<B", 0))
    return buf.getvalue()


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, fmt: str):
        size = struct.calcsize(fmt)
        if self.pos + size > len(self.data):
            raise CorruptCheckpoint(f"checkpoint truncated at byte {self.pos}")
        out = struct.unpack_from(fmt, self.data, self.pos)
        self.pos += size
        return out

    def raw(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise CorruptCheckpoint(f"checkpoint truncated at byte {self.pos}")
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out

    def records(self) -> dict:
        (count,) = self.take("<I")
        out = {}
        for _ in range(count):
            (n,) = self.take("<I")
            try:
                name = self.raw(n).decode("utf-8")
            except UnicodeDecodeError as exc:
                raise CorruptCheckpoint("tensor name is not valid UTF-8") from exc
            (rank,) = self.take("<I")
            dims = self.take(f"<{rank}I") if rank else ()
            size = int(np.prod(dims)) if dims else 1
            arr = np.frombuffer(self.raw(4 * size), dtype="<f4").astype(np.float32)
            out[name] = arr.reshape(dims)
        return out


def from_bytes(data: bytes) -> tuple:
    """Decode to ``(ModelState, EmaState | None)``."""
    r = _Reader(data)
    if r.raw(4) != MAGIC:
        raise CorruptCheckpoint("bad magic; not an ERNN checkpoint")
    (version,) = r.take("<I")
    if version != VERSION:
        raise CorruptCheckpoint(f"unsupported checkpoint version {version} (expected {VERSION})")
    W, s_m, n, head, slope = r.take("<IIIBd")
    if head >= len(HEADS):
        raise CorruptCheckpoint(f"unknown head code {head}")
    config = ErannConfig(W, s_m, n, HEADS[head], slope)
    try:
        config.validate()
    except InvalidConfig as exc:
        raise CorruptCheckpoint(f"invalid config block: {exc}") from exc

    tensors = r.records()
    pshapes, bshapes = parameter_shapes(config), buffer_shapes(config)
    expected = {**pshapes, **bshapes}
    if set(tensors) != set(expected):
        missing = sorted(set(expected) - set(tensors))[:3]
        extra = sorted(set(tensors) - set(expected))[:3]
        raise CorruptCheckpoint(f"tensor set mismatch (missing {missing}, unexpected {extra})")
    for name, shape in expected.items():
        if tensors[name].shape != tuple(shape):
            raise CorruptCheckpoint(f"{name}: shape {tensors[name].shape}, expected {shape}")
    state = ModelState(
        config,
        {k: tensors[k] for k in pshapes},
        {k: tensors[k] for k in bshapes},
    )

    (has_ema,) = r.take("<B")
    ema = None
    if has_ema:
        (decay,) = r.take("<d")
        shadow = r.records()
        if set(shadow) != set(pshapes):
            raise CorruptCheckpoint("EMA section does not mirror the learnable tensors")
        ema = EmaState(decay, {k: shadow[k] for k in pshapes})
    if r.pos != len(data):
        raise CorruptCheckpoint(f"{len(data) - r.pos} trailing bytes after checkpoint")
    return state, ema


def save_checkpoint(path, state: ModelState, ema: Optional[EmaState] = None) -> None:
    Path(path).write_bytes(to_bytes(state, ema))


def load_checkpoint(path) -> tuple:
    return from_bytes(Path(path).read_bytes())
