"""Versioned binary parameter checkpoints.

Layout (all integers little-endian)::

    8 bytes   magic  b"ARCKPT\\x00\\x00"
    u32       format version
    u64       header length H
    H bytes   UTF-8 JSON header: step, metadata, tensor table
    ...       float64 little-endian payloads, in tensor-table order

The tensor table lists ``{"name", "slot", "shape"}`` for every parameter
(slot ``param``) and its Adam moments (slots ``m`` and ``v``).
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .optim import ParamStore

MAGIC = b"ARCKPT\x00\x00"
VERSION = 1
_LE_F64 = np.dtype("<f8")


class CheckpointError(ValueError):
    pass


def save_checkpoint(path, store: ParamStore, metadata: dict | None = None) -> None:
    table = []
    blobs = []
    for name, p in store:
        for slot, arr in (("param", p.data), ("m", store.m[name]), ("v", store.v[name])):
            table.append({"name": name, "slot": slot, "shape": list(arr.shape)})
            blobs.append(np.ascontiguousarray(arr, dtype=_LE_F64).tobytes())
    header = json.dumps(
        {"step": store.step, "metadata": metadata or {}, "tensors": table},
        sort_keys=True,
        ensure_ascii=False,
    ).encode("utf-8")
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<IQ", VERSION, len(header)))
        fh.write(header)
        for b in blobs:
            fh.write(b)
    tmp.replace(path)


def read_checkpoint(path):
    """Return ``(step, metadata, {(name, slot): array})``."""
    raw = Path(path).read_bytes()
    if raw[:8] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file")
    version, hlen = struct.unpack_from("<IQ", raw, 8)
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    off = 8 + 12
    header = json.loads(raw[off : off + hlen].decode("utf-8"))
    off += hlen
    arrays = {}
    for entry in header["tensors"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        nbytes = count * 8
        if off + nbytes > len(raw):
            raise CheckpointError(f"{path}: truncated payload for {entry['name']}")
        arr = np.frombuffer(raw, dtype=_LE_F64, count=count, offset=off).astype(np.float64)
        arrays[(entry["name"], entry["slot"])] = arr.reshape(shape)
        off += nbytes
    return header["step"], header["metadata"], arrays


def load_into(path, store: ParamStore) -> dict:
    """Overwrite ``store`` in place from ``path``; returns the metadata.

    Every parameter of ``store`` must be present with a matching shape.
    """
    step, metadata, arrays = read_checkpoint(path)
    for name, p in store:
        key = (name, "param")
        if key not in arrays:
            raise CheckpointError(f"checkpoint lacks parameter {name!r}")
        if arrays[key].shape != p.data.shape:
            raise CheckpointError(
                f"shape mismatch for {name!r}: checkpoint {arrays[key].shape}, model {p.data.shape}"
            )
        p.data[...] = arrays[key]
        store.m[name][...] = arrays[(name, "m")]
        store.v[name][...] = arrays[(name, "v")]
    store.step = int(step)
    store.zero_grad()
    return metadata
