"""Checkpoint container.

Layout (all integers little-endian)::

    8 bytes   magic  b"RMCKPT01"
    8 bytes   uint64 header length N
    N bytes   UTF-8 JSON header:
              {"config": {...}, "vocab": [...], "epoch": int, "history": [...],
               "tensors": [{"name", "dtype", "shape", "offset", "nbytes"}, ...]}
    ...       raw little-endian tensor payloads; offsets count from the
              first byte after the header
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .config import RunConfig

MAGIC = b"RMCKPT01"


@dataclass
class Checkpoint:
    config: RunConfig
    vocab: list[str]
    params: dict[str, np.ndarray]
    epoch: int = 0
    history: list[dict] = field(default_factory=list)

    def save(self, path: str | Path) -> None:
        entries, blobs, offset = [], [], 0
        for name, arr in self.params.items():
            arr = np.ascontiguousarray(arr)
            le = arr.astype(arr.dtype.newbyteorder("<"), copy=False)
            raw = le.tobytes()
            entries.append({"name": name, "dtype": le.dtype.str, "shape": list(arr.shape),
                            "offset": offset, "nbytes": len(raw)})
            blobs.append(raw)
            offset += len(raw)
        header = json.dumps({
            "config": self.config.to_dict(),
            "vocab": self.vocab,
            "epoch": self.epoch,
            "history": self.history,
            "tensors": entries,
        }).encode("utf-8")
        with open(path, "wb") as fh:
            fh.write(MAGIC)
            fh.write(struct.pack("<Q", len(header)))
            fh.write(header)
            for raw in blobs:
                fh.write(raw)

    @classmethod
    def load(cls, path: str | Path) -> "Checkpoint":
        blob = Path(path).read_bytes()
        if blob[:8] != MAGIC:
            raise ValueError(f"{path}: not a checkpoint file")
        (n,) = struct.unpack("<Q", blob[8:16])
        header = json.loads(blob[16:16 + n].decode("utf-8"))
        base = 16 + n
        params = {}
        for e in header["tensors"]:
            start = base + e["offset"]
            arr = np.frombuffer(blob[start:start + e["nbytes"]], dtype=np.dtype(e["dtype"]))
            params[e["name"]] = arr.reshape(e["shape"]).astype(np.dtype(e["dtype"]).newbyteorder("="))
        return cls(
            config=RunConfig.from_dict(header["config"]),
            vocab=list(header["vocab"]),
            params=params,
            epoch=int(header["epoch"]),
            history=list(header["history"]),
        )
