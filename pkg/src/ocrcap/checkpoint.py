"""Versioned binary checkpoint container.

Layout::

    b"CNMTCKPT" | u32 version | u64 header length | header JSON (sorted keys)
    | float64 parameter data in header order | sha256 of everything before
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .config import Config, config_from_dict
from .tensor import ParameterStore
from .vocab import Vocabulary

MAGIC = b"CNMTCKPT"
VERSION = 1
_DIGEST = 32


class CheckpointError(ValueError):
    """Corrupt, truncated or incompatible checkpoint file."""


@dataclass
class Checkpoint:
    config: Config
    iteration: int
    params: dict                  # name -> float64 array, in registration order
    vocab: Vocabulary
    caption_counts: dict = field(default_factory=dict)   # full training caption word counts
    best: Optional[dict] = None   # {"iteration": int, "bleu4": float}

    def store(self) -> ParameterStore:
        return ParameterStore.from_arrays(self.params)

    def to_bytes(self) -> bytes:
        names = list(self.params)
        header = {
            "config": self.config.to_dict(),
            "iteration": int(self.iteration),
            "best": self.best,
            "vocab": self.vocab.to_dict(),
            "caption_counts": sorted([w, int(c)] for w, c in self.caption_counts.items()),
            "params": [[n, list(np.shape(self.params[n]))] for n in names],
        }
        hbytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
        body = b"".join(np.ascontiguousarray(self.params[n], dtype="<f8").tobytes() for n in names)
        blob = MAGIC + struct.pack("<IQ", VERSION, len(hbytes)) + hbytes + body
        return blob + hashlib.sha256(blob).digest()

    @classmethod
    def from_bytes(cls, data: bytes, source: str = "<bytes>") -> "Checkpoint":
        if len(data) < len(MAGIC) + 12 + _DIGEST or data[:len(MAGIC)] != MAGIC:
            raise CheckpointError(f"{source}: not a checkpoint file")
        blob, digest = data[:-_DIGEST], data[-_DIGEST:]
        if hashlib.sha256(blob).digest() != digest:
            raise CheckpointError(f"{source}: checksum mismatch (file corrupt)")
        version, hlen = struct.unpack_from("<IQ", blob, len(MAGIC))
        if version != VERSION:
            raise CheckpointError(f"{source}: checkpoint format version {version}, this build reads {VERSION}")
        off = len(MAGIC) + 12
        header = json.loads(blob[off:off + hlen].decode("utf-8"))
        off += hlen
        params = {}
        for name, shape in header["params"]:
            count = int(np.prod(shape)) if shape else 1
            arr = np.frombuffer(blob, dtype="<f8", count=count, offset=off).reshape(shape)
            params[name] = arr.astype(np.float64)
            off += 8 * count
        if off != len(blob):
            raise CheckpointError(f"{source}: {len(blob) - off} trailing bytes after parameter data")
        return cls(config_from_dict(header["config"]), header["iteration"], params,
                   Vocabulary.from_dict(header["vocab"]),
                   {w: c for w, c in header["caption_counts"]}, header["best"])


def save_checkpoint(ckpt: Checkpoint, path) -> str:
    """Write ``ckpt`` and return the sha256 hex digest of the file."""
    data = ckpt.to_bytes()
    Path(path).write_bytes(data)
    return hashlib.sha256(data).hexdigest()


def load_checkpoint(path) -> Checkpoint:
    return Checkpoint.from_bytes(Path(path).read_bytes(), str(path))
