"""Versioned binary checkpoints for torch modules.

Layout (little-endian)::

    b"RTCK"  uint32 version  uint32 meta_len  meta_json
    uint32 n_tensors
    per tensor: uint16 name_len name  uint8 ndim  uint64[ndim] shape  float64[prod(shape)] row-major
"""

from __future__ import annotations

import json
import struct
from collections import OrderedDict
from pathlib import Path

import numpy as np
import torch

MAGIC = b"RTCK"
VERSION = 1


def save_state(module: torch.nn.Module, path, meta: dict | None = None) -> Path:
    path = Path(path)
    state = module.state_dict()
    meta_bytes = json.dumps(meta or {}, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", VERSION, len(meta_bytes)))
        fh.write(meta_bytes)
        fh.write(struct.pack("<I", len(state)))
        for name, tensor in state.items():
            arr = np.ascontiguousarray(tensor.detach().cpu().double().numpy())
            raw = name.encode("utf-8")
            fh.write(struct.pack("<H", len(raw)))
            fh.write(raw)
            fh.write(struct.pack("<B", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
            fh.write(arr.astype("<f8").tobytes())
    return path


def read_state(path) -> tuple[dict, OrderedDict]:
    with open(path, "rb") as fh:
        if fh.read(4) != MAGIC:
            raise ValueError(f"{path} is not a checkpoint file")
        version, meta_len = struct.unpack("<II", fh.read(8))
        if version != VERSION:
            raise ValueError(f"unsupported checkpoint version {version}")
        meta = json.loads(fh.read(meta_len).decode("utf-8"))
        (count,) = struct.unpack("<I", fh.read(4))
        state = OrderedDict()
        for _ in range(count):
            (nlen,) = struct.unpack("<H", fh.read(2))
            name = fh.read(nlen).decode("utf-8")
            (ndim,) = struct.unpack("<B", fh.read(1))
            shape = struct.unpack(f"<{ndim}Q", fh.read(8 * ndim)) if ndim else ()
            size = int(np.prod(shape)) if ndim else 1
            arr = np.frombuffer(fh.read(8 * size), dtype="<f8").reshape(shape)
            state[name] = torch.from_numpy(arr.copy())
    return meta, state


def load_state(module: torch.nn.Module, path) -> dict:
    """Load weights into ``module`` (dtypes follow the module); returns the metadata."""
    meta, state = read_state(path)
    own = module.state_dict()
    for name, tensor in state.items():
        if name in own:
            state[name] = tensor.to(own[name].dtype)
    module.load_state_dict(state)
    return meta
