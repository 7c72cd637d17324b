"""Binary checkpoint format.

Layout: the 8-byte magic ``SCMCKPT1``, a newline, the model configuration as
``key=value`` lines terminated by a blank line, then a little-endian uint32
tensor count followed by the named tensors. Each tensor record is a uint16
name length, the utf-8 name, a uint32 rank, that many uint32 dims, and the
row-major float64 payload (little-endian).

Writing is fully deterministic, so save -> load -> save round-trips
byte-identically. The configuration travels inside the file so downstream
verbs never need a separate config flag.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .errors import CheckpointError
from .model import ModelParams, TransformerConfig

MAGIC = b"SCMCKPT1"

_CONFIG_FIELDS = (
    ("vocab_size", int),
    ("d_model", int),
    ("n_layers", int),
    ("n_heads", int),
    ("max_seq_len", int),
    ("tie_embeddings", bool),
)


def save_checkpoint(path, params: ModelParams) -> None:
    cfg = params.config
    chunks = [MAGIC, b"\n"]
    for name, kind in _CONFIG_FIELDS:
        value = getattr(cfg, name)
        chunks.append(f"{name}={int(value) if kind is bool else value}\n".encode())
    chunks.append(b"\n")
    chunks.append(struct.pack("<I", len(params.tensors)))
    for name, tensor in params.items():
        encoded = name.encode()
        chunks.append(struct.pack("<H", len(encoded)))
        chunks.append(encoded)
        chunks.append(struct.pack("<I", tensor.ndim))
        chunks.append(struct.pack(f"<{tensor.ndim}I", *tensor.shape))
        chunks.append(np.ascontiguousarray(tensor.data, dtype="<f8").tobytes())
    Path(path).write_bytes(b"".join(chunks))


class _Reader:
    def __init__(self, blob: bytes, path):
        self.blob = blob
        self.pos = 0
        self.path = path

    def read(self, n: int) -> bytes:
        if self.pos + n > len(self.blob):
            raise CheckpointError(f"{self.path}: truncated checkpoint")
        out = self.blob[self.pos : self.pos + n]
        self.pos += n
        return out

    def read_line(self) -> str:
        end = self.blob.find(b"\n", self.pos)
        if end < 0:
            raise CheckpointError(f"{self.path}: truncated checkpoint header")
        line = self.blob[self.pos : end].decode()
        self.pos = end + 1
        return line


def load_checkpoint(path) -> ModelParams:
    blob = Path(path).read_bytes()
    reader = _Reader(blob, path)
    if reader.read(len(MAGIC)) != MAGIC:
        raise CheckpointError(f"{path}: bad magic, not a checkpoint file")
    if reader.read(1) != b"\n":
        raise CheckpointError(f"{path}: malformed header")

    raw: dict[str, str] = {}
    while True:
        line = reader.read_line()
        if line == "":
            break
        if "=" not in line:
            raise CheckpointError(f"{path}: malformed config line {line!r}")
        key, value = line.split("=", 1)
        raw[key] = value
    kwargs = {}
    for name, kind in _CONFIG_FIELDS:
        if name not in raw:
            raise CheckpointError(f"{path}: missing config key {name!r}")
        kwargs[name] = bool(int(raw[name])) if kind is bool else int(raw[name])
    extra = set(raw) - {name for name, _ in _CONFIG_FIELDS}
    if extra:
        raise CheckpointError(f"{path}: unknown config keys {sorted(extra)}")
    config = TransformerConfig(**kwargs)

    (count,) = struct.unpack("<I", reader.read(4))
    tensors = {}
    for _ in range(count):
        (name_len,) = struct.unpack("<H", reader.read(2))
        name = reader.read(name_len).decode()
        (rank,) = struct.unpack("<I", reader.read(4))
        dims = struct.unpack(f"<{rank}I", reader.read(4 * rank))
        size = int(np.prod(dims)) if dims else 1
        payload = reader.read(8 * size)
        data = np.frombuffer(payload, dtype="<f8").reshape(dims).copy()
        tensors[name] = ad.param(data)
    if reader.pos != len(blob):
        raise CheckpointError(f"{path}: trailing bytes after tensor records")
    return ModelParams(config, tensors)
