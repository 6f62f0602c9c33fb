"""Checkpoint files.

Layout: 8-byte magic, little-endian uint64 header length, UTF-8 JSON header,
then one flat little-endian float32 blob. The header lists every tensor's
name, shape and byte offset, echoes the run configuration and carries a
SHA-256 of the blob.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

MAGIC = b"SDWNCKPT"
FORMAT_VERSION = 1


class CheckpointError(Exception):
    """Corrupt or unreadable checkpoint."""


class CheckpointMismatchError(CheckpointError):
    """Checkpoint tensors do not match the target model.

    ``mismatches`` holds ``(name, expected_shape, found_shape)`` triples; a
    ``None`` shape means the tensor is absent on that side.
    """

    def __init__(self, mismatches):
        self.mismatches = list(mismatches)
        lines = [f"  {n}: model {e}, checkpoint {f}" for n, e, f in self.mismatches]
        super().__init__("checkpoint does not match model:\n" + "\n".join(lines))


@dataclass
class Checkpoint:
    header: dict
    tensors: dict[str, np.ndarray]

    @property
    def step(self) -> int:
        return int(self.header.get("step", 0))


def save_checkpoint(path, tensors: dict[str, np.ndarray], meta: dict | None = None) -> None:
    """Write ``tensors`` (name order preserved) plus ``meta`` merged into the header."""
    entries, chunks, offset = [], [], 0
    for name, arr in tensors.items():
        a = np.ascontiguousarray(arr, dtype="<f4")
        entries.append({"name": name, "shape": list(a.shape), "offset": offset, "count": int(a.size)})
        chunks.append(a.tobytes())
        offset += a.nbytes
    blob = b"".join(chunks)
    header = dict(meta or {})
    header.update({
        "format": "sdwnet-checkpoint",
        "version": FORMAT_VERSION,
        "tensors": entries,
        "blob_bytes": len(blob),
        "sha256": hashlib.sha256(blob).hexdigest(),
    })
    hbytes = json.dumps(header, sort_keys=True).encode("utf-8")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "wb") as f:
        f.write(MAGIC + struct.pack("<Q", len(hbytes)) + hbytes + blob)
    tmp.replace(path)


def load_checkpoint(path) -> Checkpoint:
    path = Path(path)
    try:
        raw = path.read_bytes()
    except FileNotFoundError:
        raise CheckpointError(f"{path}: no such checkpoint") from None
    if raw[:8] != MAGIC or len(raw) < 16:
        raise CheckpointError(f"{path}: not an sdwnet checkpoint")
    (hlen,) = struct.unpack("<Q", raw[8:16])
    try:
        header = json.loads(raw[16 : 16 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CheckpointError(f"{path}: corrupt header ({e})") from None
    blob = raw[16 + hlen :]
    if len(blob) != header.get("blob_bytes") or hashlib.sha256(blob).hexdigest() != header.get("sha256"):
        raise CheckpointError(f"{path}: checksum mismatch, file is truncated or corrupt")
    tensors = {}
    for e in header["tensors"]:
        a = np.frombuffer(blob, dtype="<f4", count=e["count"], offset=e["offset"])
        tensors[e["name"]] = a.reshape(e["shape"]).astype(np.float32)
    return Checkpoint(header, tensors)


def assign_parameters(named_params, ckpt: Checkpoint, prefix: str = "") -> None:
    """Copy checkpoint values into parameters in place, after checking every shape."""
    named = list(named_params)
    mismatches = []
    for name, p in named:
        a = ckpt.tensors.get(prefix + name)
        if a is None:
            mismatches.append((name, tuple(p.shape), None))
        elif tuple(a.shape) != tuple(p.shape):
            mismatches.append((name, tuple(p.shape), tuple(a.shape)))
    wanted = {prefix + n for n, _ in named}
    for key in ckpt.tensors:
        if key.startswith(prefix) and "." in key and key not in wanted and not key.startswith("adamw."):
            mismatches.append((key[len(prefix):], None, tuple(ckpt.tensors[key].shape)))
    if mismatches:
        raise CheckpointMismatchError(mismatches)
    for name, p in named:
        p.data[...] = ckpt.tensors[prefix + name].astype(p.data.dtype)
