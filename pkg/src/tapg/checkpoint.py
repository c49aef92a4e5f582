"""Versioned binary checkpoints.

Layout (little-endian): 8-byte magic, u32 format version, u64 header length,
UTF-8 JSON header, then the raw tensor blobs back to back. The header holds
the config, its hash, the epoch, optimizer scalars, the RNG state and a
manifest of (name, dtype, shape, offset, nbytes) for every blob.
"""

from __future__ import annotations

import json
import os
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .config import RunConfig
from .optim import OptimState
from .tensor import Tensor

MAGIC = b"TAPGCKPT"
VERSION = 1


class CheckpointError(ValueError):
    pass


@dataclass
class Checkpoint:
    config: RunConfig
    params: dict            # name -> ndarray
    optim: OptimState | None = None
    epoch: int = 0
    rng_state: dict | None = None
    history: list | None = None


def _blob(arr: np.ndarray) -> tuple[str, bytes]:
    arr = np.ascontiguousarray(arr)
    le = arr.dtype.newbyteorder("<")
    return le.str, arr.astype(le, copy=False).tobytes()


def save_checkpoint(path, params: dict, config: RunConfig, optim: OptimState | None = None,
                    epoch: int = 0, rng: np.random.Generator | None = None,
                    history: list | None = None) -> Path:
    """Write atomically: the previous file at ``path`` survives a failed write."""
    path = Path(path)
    blobs, manifest, offset = [], [], 0

    def add(kind, name, arr):
        nonlocal offset
        dtype, raw = _blob(np.asarray(arr))
        manifest.append({"kind": kind, "name": name, "dtype": dtype, "shape": list(np.shape(arr)),
                         "offset": offset, "nbytes": len(raw)})
        blobs.append(raw)
        offset += len(raw)

    for name, p in params.items():
        add("param", name, p.data if isinstance(p, Tensor) else p)
    opt_header = None
    if optim is not None:
        for name in sorted(optim.m):
            add("adam_m", name, optim.m[name])
            add("adam_v", name, optim.v[name])
        opt_header = {k: getattr(optim, k) for k in
                      ("lr", "beta1", "beta2", "eps", "decay_factor", "decay_every", "step", "epoch")}
    header = {
        "format": "tapg-checkpoint", "version": VERSION,
        "config": config.to_dict(), "config_hash": config.hash(), "epoch": epoch,
        "optim": opt_header,
        "rng_state": rng.bit_generator.state if rng is not None else None,
        "history": history or [],
        "manifest": manifest,
    }
    hdr = json.dumps(header, sort_keys=True).encode("utf-8")
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<IQ", VERSION, len(hdr)))
        fh.write(hdr)
        for raw in blobs:
            fh.write(raw)
    os.replace(tmp, path)
    return path


def load_checkpoint(path) -> Checkpoint:
    path = Path(path)
    raw = path.read_bytes()
    if raw[:8] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file (bad magic)")
    version, hlen = struct.unpack_from("<IQ", raw, 8)
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    start = 8 + struct.calcsize("<IQ")
    header = json.loads(raw[start:start + hlen].decode("utf-8"))
    body = memoryview(raw)[start + hlen:]
    config = RunConfig.from_dict(header["config"])
    if config.hash() != header["config_hash"]:
        raise CheckpointError(f"{path}: config hash mismatch (file corrupted or edited)")
    params, m, v = {}, {}, {}
    for ent in header["manifest"]:
        if ent["offset"] + ent["nbytes"] > len(body):
            raise CheckpointError(f"{path}: truncated tensor data for {ent['name']!r}")
        arr = np.frombuffer(body[ent["offset"]:ent["offset"] + ent["nbytes"]],
                            dtype=np.dtype(ent["dtype"])).reshape(ent["shape"])
        arr = arr.astype(arr.dtype.newbyteorder("="), copy=True)
        {"param": params, "adam_m": m, "adam_v": v}[ent["kind"]][ent["name"]] = arr
    optim = None
    if header["optim"] is not None:
        optim = OptimState(**header["optim"], m=m, v=v)
    return Checkpoint(config, params, optim, header["epoch"], header["rng_state"],
                      header.get("history", []))


def restore_rng(state: dict | None, seed: int = 0) -> np.random.Generator:
    rng = np.random.default_rng(seed)
    if state is not None:
        rng.bit_generator.state = state
    return rng
