"""Binary checkpoint: JSON manifest followed by little-endian float32 blobs.

Layout::

    b"AIACKPT1\\n"
    uint64 LE  manifest byte length
    manifest   UTF-8 JSON {"entries": [{"name", "shape", "offset"}], "meta": {...}}
    blob       concatenated '<f4' arrays; each entry's offset is relative to blob start
"""

from __future__ import annotations

import json
import os
import struct
from pathlib import Path

import numpy as np

MAGIC = b"AIACKPT1\n"


def save_checkpoint(path: str | os.PathLike, arrays: dict[str, np.ndarray], meta: dict | None = None) -> None:
    entries = []
    chunks = []
    offset = 0
    for name, arr in arrays.items():
        raw = np.ascontiguousarray(arr, dtype="<f4").tobytes()
        entries.append({"name": name, "shape": list(np.shape(arr)), "offset": offset})
        chunks.append(raw)
        offset += len(raw)
    manifest = json.dumps({"entries": entries, "meta": meta or {}}, sort_keys=True).encode("utf-8")
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(manifest)))
        fh.write(manifest)
        for raw in chunks:
            fh.write(raw)
    os.replace(tmp, path)


def load_checkpoint(path: str | os.PathLike) -> tuple[dict[str, np.ndarray], dict]:
    blob = Path(path).read_bytes()
    if not blob.startswith(MAGIC):
        raise ValueError(f"{path}: not a checkpoint (bad magic)")
    pos = len(MAGIC)
    (length,) = struct.unpack_from("<Q", blob, pos)
    pos += 8
    manifest = json.loads(blob[pos : pos + length].decode("utf-8"))
    base = pos + length
    arrays = {}
    for entry in manifest["entries"]:
        count = int(np.prod(entry["shape"])) if entry["shape"] else 1
        start = base + entry["offset"]
        if start + 4 * count > len(blob):
            raise ValueError(f"{path}: truncated blob for {entry['name']!r}")
        arr = np.frombuffer(blob, dtype="<f4", count=count, offset=start)
        arrays[entry["name"]] = arr.reshape(entry["shape"]).astype(np.float32)
    return arrays, manifest["meta"]
