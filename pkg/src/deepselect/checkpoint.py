"""Binary checkpoints: named tensors, optimizer state, rng state, config.

Layout (all integers little-endian)::

    b"CSEL" | u32 format version | u64 header length | JSON header | tensor payload

The header lists every tensor with its dtype, shape, byte offset and length
inside the payload.
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .model import ModelConfig
from .nn import AdamState, ParamStore

MAGIC = b"CSEL"
VERSION = 1
_PREFIX = struct.Struct("<4sIQ")


class CheckpointError(Exception):
    pass


class BadMagicError(CheckpointError):
    pass


class VersionMismatchError(CheckpointError):
    pass


class TruncatedCheckpointError(CheckpointError):
    pass


@dataclass
class Checkpoint:
    params: ParamStore
    model_config: ModelConfig
    adam: AdamState | None = None
    train_config: dict | None = None
    rng_state: dict | None = None
    epoch: int = 0
    loss_log: list = field(default_factory=list)


def save_checkpoint(ckpt: Checkpoint, path, dtype: str = "<f8") -> None:
    if dtype not in ("<f8", "<f4"):
        raise ValueError(f"dtype must be '<f8' or '<f4', got {dtype!r}")
    entries, blobs = [], []
    offset = 0

    def put(name, arr, dt):
        nonlocal offset
        raw = np.ascontiguousarray(arr, dtype=dt).tobytes()
        entries.append({"name": name, "dtype": dt, "shape": list(arr.shape), "offset": offset, "nbytes": len(raw)})
        blobs.append(raw)
        offset += len(raw)

    for path_ in ckpt.params:
        put(f"param/{path_}", ckpt.params[path_].data, dtype)
    adam = None
    if ckpt.adam is not None:
        a = ckpt.adam
        adam = {"lr": a.lr, "beta1": a.beta1, "beta2": a.beta2, "eps_stab": a.eps_stab, "t": a.t}
        # optimizer moments stay float64 so resumed training is bit-exact
        for p in sorted(a.m):
            put(f"adam_m/{p}", a.m[p], "<f8")
            put(f"adam_v/{p}", a.v[p], "<f8")
    header = {
        "model_config": ckpt.model_config.to_dict(),
        "train_config": ckpt.train_config,
        "adam": adam,
        "rng_state": ckpt.rng_state,
        "epoch": ckpt.epoch,
        "loss_log": [[int(e), float(v)] for e, v in ckpt.loss_log],
        "tensors": entries,
        "payload_bytes": offset,
    }
    hbytes = json.dumps(header, sort_keys=True).encode("utf-8")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(_PREFIX.pack(MAGIC, VERSION, len(hbytes)))
        fh.write(hbytes)
        for b in blobs:
            fh.write(b)


def load_checkpoint(path) -> Checkpoint:
    raw = Path(path).read_bytes()
    if len(raw) < 4 or raw[:4] != MAGIC:
        raise BadMagicError(f"{path}: not a checkpoint (bad magic {raw[:4]!r})")
    if len(raw) < _PREFIX.size:
        raise TruncatedCheckpointError(f"{path}: truncated before header length")
    _, version, hlen = _PREFIX.unpack_from(raw)
    if version != VERSION:
        raise VersionMismatchError(f"{path}: format version {version}, this build reads {VERSION}")
    start = _PREFIX.size
    if len(raw) < start + hlen:
        raise TruncatedCheckpointError(f"{path}: truncated inside header")
    try:
        header = json.loads(raw[start:start + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: corrupt header ({exc})") from None
    payload = raw[start + hlen:]
    if len(payload) < header["payload_bytes"]:
        raise TruncatedCheckpointError(
            f"{path}: payload has {len(payload)} bytes, header promises {header['payload_bytes']}"
        )
    params = ParamStore()
    m, v = {}, {}
    for e in header["tensors"]:
        arr = np.frombuffer(payload, dtype=e["dtype"], count=int(np.prod(e["shape"], dtype=np.int64)), offset=e["offset"])
        arr = arr.astype(np.float64).reshape(e["shape"])
        kind, name = e["name"].split("/", 1)
        if kind == "param":
            params[name] = arr
        elif kind == "adam_m":
            m[name] = arr
        elif kind == "adam_v":
            v[name] = arr
        else:
            raise CheckpointError(f"{path}: unknown tensor kind {kind!r}")
    adam = None
    if header.get("adam") is not None:
        adam = AdamState(**header["adam"], m=m, v=v)
    return Checkpoint(
        params=params,
        model_config=ModelConfig.from_dict(header["model_config"]),
        adam=adam,
        train_config=header.get("train_config"),
        rng_state=header.get("rng_state"),
        epoch=int(header.get("epoch", 0)),
        loss_log=[(int(e), float(x)) for e, x in header.get("loss_log", [])],
    )
