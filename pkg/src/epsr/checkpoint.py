"""Bit-exact binary checkpoints for parameters and optimizer state.

Layout (all integers little-endian):
  magic "EPSR" | u32 version | u32 x7 config
  (fractal_depth, channels, eca_kernel, scale, attention, reduction,
   ep_residual_source) | u32 parameter count | per parameter:
  u16 name length + UTF-8 name, 4 x u32 shape, raw little-endian f32 data.
An optimizer-state section follows behind a u8 presence flag: u64 step
count, then per parameter (same order) the first and second moments as raw
f32.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .model import EpsrConfig, ParamStore
from .tensor import ConfigError

MAGIC = b"EPSR"
VERSION = 1

_ATT_TAGS = {"eca": 0, "ca": 1}
_ATT_NAMES = {v: k for k, v in _ATT_TAGS.items()}
_EP_TAGS = {"fe": 0, "recab": 1}
_EP_NAMES = {v: k for k, v in _EP_TAGS.items()}


class CheckpointError(ValueError):
    """The file is not a valid checkpoint."""


def save_checkpoint(path, params: ParamStore, config: EpsrConfig,
                    include_adam: bool = False) -> None:
    chunks = [MAGIC, struct.pack("<I", VERSION)]
    chunks.append(struct.pack(
        "<7I", config.fractal_depth, config.channels, config.eca_kernel,
        config.scale, _ATT_TAGS[config.attention], config.reduction,
        _EP_TAGS[config.ep_residual_source]))
    names = params.names()
    chunks.append(struct.pack("<I", len(names)))
    for name in names:
        t = params[name]
        raw = name.encode("utf-8")
        chunks.append(struct.pack("<H", len(raw)))
        chunks.append(raw)
        chunks.append(struct.pack("<4I", *t.shape))
        chunks.append(np.ascontiguousarray(t.data, dtype="<f4").tobytes())
    if include_adam:
        chunks.append(struct.pack("<B", 1))
        chunks.append(struct.pack("<Q", params.step_count))
        for name in names:
            shape = params[name].shape
            m = params.adam_m.get(name, np.zeros(shape, dtype=np.float32))
            v = params.adam_v.get(name, np.zeros(shape, dtype=np.float32))
            chunks.append(np.ascontiguousarray(m, dtype="<f4").tobytes())
            chunks.append(np.ascontiguousarray(v, dtype="<f4").tobytes())
    else:
        chunks.append(struct.pack("<B", 0))
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_bytes(b"".join(chunks))


class _Reader:
    def __init__(self, buf: bytes):
        self.buf = buf
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise CheckpointError("checkpoint truncated")
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def load_checkpoint(path, dtype=np.float32) -> tuple[ParamStore, EpsrConfig]:
    r = _Reader(Path(path).read_bytes())
    if r.take(4) != MAGIC:
        raise CheckpointError(f"{path}: bad magic bytes")
    (version,) = r.unpack("<I")
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported version {version}")
    g, c, k, scale, att, red, ep = r.unpack("<7I")
    try:
        config = EpsrConfig(fractal_depth=g, channels=c, eca_kernel=k,
                            scale=scale, attention=_ATT_NAMES[att],
                            reduction=red, ep_residual_source=_EP_NAMES[ep])
    except (KeyError, ConfigError) as exc:
        raise CheckpointError(f"{path}: invalid config block: {exc}") from exc
    (count,) = r.unpack("<I")
    params = ParamStore()
    shapes = []
    for _ in range(count):
        (name_len,) = r.unpack("<H")
        name = r.take(name_len).decode("utf-8")
        shape = r.unpack("<4I")
        size = int(np.prod(shape))
        data = np.frombuffer(r.take(4 * size), dtype="<f4").reshape(shape)
        params.add(name, data.astype(dtype))
        shapes.append((name, shape, size))
    (has_adam,) = r.unpack("<B")
    if has_adam:
        (params.step_count,) = r.unpack("<Q")
        for name, shape, size in shapes:
            m = np.frombuffer(r.take(4 * size), dtype="<f4").reshape(shape)
            v = np.frombuffer(r.take(4 * size), dtype="<f4").reshape(shape)
            params.adam_m[name] = m.astype(dtype)
            params.adam_v[name] = v.astype(dtype)
    return params, config
