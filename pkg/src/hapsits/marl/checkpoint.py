"""Flat binary checkpoint format for agent networks.

Layout::

    b"HAPSCKPT"            8-byte magic
    uint32 little-endian   format version (currently 1)
    uint32 little-endian   header length in bytes
    header                 UTF-8 JSON: {"meta": {...}, "tensors": [{"name", "shape", "dtype"}, ...]}
    payload                raw little-endian arrays, concatenated in header order

Each tensor's byte count follows from its shape and dtype, so no offsets are
stored. ``meta`` records what is needed to rebuild the network (agent count,
input width, hidden size, recurrent flag) plus the config hash.
"""
from __future__ import annotations

import json
import struct
from pathlib import Path
from typing import Any, Dict, Tuple

import numpy as np
import torch

from .networks import AgentNets

MAGIC = b"HAPSCKPT"
VERSION = 1
_DTYPES = {"float32": "<f4", "float64": "<f8"}


class CheckpointError(ValueError):
    pass


def save(path, net: AgentNets, meta: Dict[str, Any] | None = None) -> Path:
    path = Path(path)
    meta = dict(meta or {})
    meta.update(n_agents=net.n_agents, input_dim=net.input_dim, hidden=net.hidden, recurrent=net.recurrent)
    entries, blobs = [], []
    for name, tensor in net.state_dict().items():
        arr = tensor.detach().cpu().numpy()
        dt = str(arr.dtype)
        if dt not in _DTYPES:
            raise CheckpointError(f"unsupported dtype {dt} for {name}")
        entries.append({"name": name, "shape": list(arr.shape), "dtype": dt})
        blobs.append(np.ascontiguousarray(arr, dtype=_DTYPES[dt]).tobytes())
    header = json.dumps({"meta": meta, "tensors": entries}, sort_keys=True).encode("utf-8")
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", VERSION, len(header)))
        fh.write(header)
        for blob in blobs:
            fh.write(blob)
    return path


def read(path) -> Tuple[Dict[str, Any], Dict[str, np.ndarray]]:
    """Return (meta, arrays) without building a network."""
    data = Path(path).read_bytes()
    if data[:8] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file")
    version, hlen = struct.unpack("<II", data[8:16])
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    header = json.loads(data[16:16 + hlen].decode("utf-8"))
    offset = 16 + hlen
    arrays = {}
    for entry in header["tensors"]:
        dt = np.dtype(_DTYPES[entry["dtype"]])
        count = int(np.prod(entry["shape"], dtype=np.int64))
        end = offset + count * dt.itemsize
        if end > len(data):
            raise CheckpointError(f"{path}: truncated at tensor {entry['name']}")
        arrays[entry["name"]] = np.frombuffer(data[offset:end], dtype=dt).reshape(entry["shape"])
        offset = end
    if offset != len(data):
        raise CheckpointError(f"{path}: {len(data) - offset} trailing bytes")
    return header["meta"], arrays


def load(path) -> Tuple[AgentNets, Dict[str, Any]]:
    meta, arrays = read(path)
    first = next(iter(arrays.values()))
    dtype = torch.float64 if first.dtype == np.float64 else torch.float32
    net = AgentNets(meta["n_agents"], meta["input_dim"], meta["hidden"], meta["recurrent"], dtype=dtype)
    state = {k: torch.from_numpy(v.astype(v.dtype.newbyteorder("="))) for k, v in arrays.items()}
    net.load_state_dict(state)
    return net, meta
