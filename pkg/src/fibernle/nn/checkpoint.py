"""Versioned little-endian checkpoint files.

Layout::

    magic           b"NLEQCKPT"
    version         uint32
    arch tag        uint32 length + utf-8
    config          uint32 length + utf-8 JSON (sorted keys)
    metadata        uint32 length + utf-8 JSON (sorted keys)
    tensor count    uint32
    per tensor:     uint32 name length, utf-8 name, uint32 rank,
                    rank x uint64 dims, prod(dims) x float64
"""

from __future__ import annotations

import io
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .layers import Module, build_model

MAGIC = b"NLEQCKPT"
FORMAT_VERSION = 1


@dataclass
class ModelCheckpoint:
    arch: str
    config: dict
    weights: dict[str, np.ndarray]
    metadata: dict = field(default_factory=dict)
    version: int = FORMAT_VERSION

    @classmethod
    def from_model(cls, model: Module, metadata: dict | None = None) -> "ModelCheckpoint":
        return cls(model.arch, model.cfg.as_dict(), model.state_dict(), dict(metadata or {}))

    def build(self) -> Module:
        model = build_model(self.arch, self.config)
        model.load_state_dict(self.weights)
        return model.eval()

    def to_bytes(self) -> bytes:
        buf = io.BytesIO()

        def text(s: str) -> None:
            raw = s.encode("utf-8")
            buf.write(struct.pack("<I", len(raw)))
            buf.write(raw)

        buf.write(MAGIC)
        buf.write(struct.pack("<I", self.version))
        text(self.arch)
        text(json.dumps(self.config, sort_keys=True))
        text(json.dumps(self.metadata, sort_keys=True))
        buf.write(struct.pack("<I", len(self.weights)))
        for name in sorted(self.weights):
            arr = np.ascontiguousarray(self.weights[name], dtype="<f8")
            text(name)
            buf.write(struct.pack("<I", arr.ndim))
            buf.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
            buf.write(arr.tobytes())
        return buf.getvalue()

    @classmethod
    def from_bytes(cls, data: bytes) -> "ModelCheckpoint":
        view = memoryview(data)
        if bytes(view[:8]) != MAGIC:
            raise ValueError("not a model checkpoint (bad magic)")
        pos = 8

        def unpack(fmt: str):
            nonlocal pos
            values = struct.unpack_from(fmt, view, pos)
            pos += struct.calcsize(fmt)
            return values

        def text() -> str:
            nonlocal pos
            (n,) = unpack("<I")
            s = bytes(view[pos : pos + n]).decode("utf-8")
            pos += n
            return s

        (version,) = unpack("<I")
        if version != FORMAT_VERSION:
            raise ValueError(f"unsupported checkpoint version {version}")
        arch = text()
        config = json.loads(text())
        metadata = json.loads(text())
        (count,) = unpack("<I")
        weights = {}
        for _ in range(count):
            name = text()
            (rank,) = unpack("<I")
            dims = unpack(f"<{rank}Q") if rank else ()
            size = int(np.prod(dims)) if dims else 1
            arr = np.frombuffer(data, dtype="<f8", count=size, offset=pos).reshape(dims)
            pos += 8 * size
            weights[name] = arr.astype(np.float64)
        return cls(arch, config, weights, metadata, version)

    def save(self, path: str | Path) -> None:
        Path(path).write_bytes(self.to_bytes())

    @classmethod
    def load(cls, path: str | Path) -> "ModelCheckpoint":
        return cls.from_bytes(Path(path).read_bytes())
