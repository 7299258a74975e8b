"""Versioned single-file checkpoint container.

Layout::

    b"AFFMICKP"                  8-byte magic
    uint32 LE                    format version
    uint32 LE                    length of the metadata block in bytes
    metadata                     UTF-8 JSON (sorted keys)
    payload                      float32 LE arrays, back to back, in metadata order

The metadata lists every array as ``{"name", "shape", "offset"}`` where the
offset counts bytes from the start of the payload.
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np

MAGIC = b"AFFMICKP"
VERSION = 1
_HEADER = struct.Struct("<8sII")


class CheckpointError(RuntimeError):
    pass


@dataclass
class Checkpoint:
    params: Dict[str, np.ndarray]
    iteration: int
    config: Dict
    best_val_kld: float
    labels: Optional[Dict[str, List[str]]] = None
    history: list = field(default_factory=list, repr=False, compare=False)
    summary: dict = field(default_factory=dict, repr=False, compare=False)

    def to_bytes(self) -> bytes:
        arrays, chunks, offset = [], [], 0
        for name in sorted(self.params):
            arr = np.asarray(self.params[name], dtype="<f4")
            arrays.append({"name": name, "shape": list(arr.shape), "offset": offset})
            chunks.append(arr.tobytes())
            offset += arr.nbytes
        meta = {
            "arrays": arrays,
            "best_val_kld": float(self.best_val_kld),
            "config": self.config,
            "iteration": int(self.iteration),
            "labels": self.labels,
        }
        blob = json.dumps(meta, sort_keys=True).encode("utf-8")
        return _HEADER.pack(MAGIC, VERSION, len(blob)) + blob + b"".join(chunks)

    @classmethod
    def from_bytes(cls, data: bytes) -> "Checkpoint":
        if len(data) < _HEADER.size:
            raise CheckpointError("file too short for a checkpoint header")
        magic, version, meta_len = _HEADER.unpack_from(data)
        if magic != MAGIC:
            raise CheckpointError("not a checkpoint file (bad magic)")
        if version != VERSION:
            raise CheckpointError(f"unsupported checkpoint version {version}")
        start = _HEADER.size
        try:
            meta = json.loads(data[start:start + meta_len].decode("utf-8"))
        except ValueError as exc:
            raise CheckpointError(f"corrupt metadata: {exc}") from None
        payload = memoryview(data)[start + meta_len:]
        params = {}
        for a in meta["arrays"]:
            count = int(np.prod(a["shape"], dtype=np.int64))
            end = a["offset"] + 4 * count
            if end > len(payload):
                raise CheckpointError(f"array {a['name']} runs past end of file")
            arr = np.frombuffer(payload[a["offset"]:end], dtype="<f4").reshape(tuple(a["shape"]))
            params[a["name"]] = arr.astype(np.float32)
        return cls(params, meta["iteration"], meta["config"], meta["best_val_kld"], meta.get("labels"))

    def save(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_bytes(self.to_bytes())
        return path

    @classmethod
    def load(cls, path) -> "Checkpoint":
        return cls.from_bytes(Path(path).read_bytes())
