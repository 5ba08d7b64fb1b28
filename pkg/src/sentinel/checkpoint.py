"""Crash-safe binary checkpoints.

Layout (all integers little-endian, all floats IEEE-754 float64 LE):

    magic   8 bytes  b"SENTCKPT"
    u32     format version (currently 1)
    u64     model seed
    u64     model version
    u32     number of dims, then u32 per dim
    u64     adam step counter t
    u32     array count, then per array:
        u16 name length, utf-8 name
        u8  ndim, u64 per axis
        raw float64 bytes, C order
    u64     aux JSON length, utf-8 JSON (sorted keys)

Parameter arrays are named ``layer.<l>.<W1|W2|a>`` and ``W_o``; Adam moment
arrays carry ``adam.m.`` / ``adam.v.`` prefixes. Saves go through a
temp-file-then-rename so an interrupted save never clobbers the previous
checkpoint. The byte stream is deterministic: save -> load -> save is
bit-identical.
"""

from __future__ import annotations

import json
import os
import struct
import tempfile
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import CorruptCheckpoint, VersionMismatch
from .gnn.optim import AdamState
from .gnn.params import LayerParams, ParamSet

MAGIC = b"SENTCKPT"
FORMAT_VERSION = 1


def _named_arrays(params: ParamSet, adam: Optional[AdamState]):
    out = []
    for l, layer in enumerate(params.layers):
        out.append((f"layer.{l}.W1", layer.W1))
        out.append((f"layer.{l}.W2", layer.W2))
        out.append((f"layer.{l}.a", layer.a))
    out.append(("W_o", params.W_o))
    if adam is not None:
        for prefix, tree in (("adam.m", adam.m), ("adam.v", adam.v)):
            for l, layer in enumerate(tree.layers):
                out.append((f"{prefix}.layer.{l}.W1", layer.W1))
                out.append((f"{prefix}.layer.{l}.W2", layer.W2))
                out.append((f"{prefix}.layer.{l}.a", layer.a))
            out.append((f"{prefix}.W_o", tree.W_o))
    return out


def save_checkpoint(
    path: str | Path,
    params: ParamSet,
    adam: Optional[AdamState] = None,
    aux: Optional[dict] = None,
) -> None:
    """Serialize params (+ optimizer state + auxiliary JSON) atomically."""
    path = Path(path)
    chunks = [MAGIC, struct.pack("<I", FORMAT_VERSION)]
    chunks.append(struct.pack("<QQ", params.seed & (2**64 - 1), params.version))
    chunks.append(struct.pack("<I", len(params.dims)))
    chunks.extend(struct.pack("<I", d) for d in params.dims)
    chunks.append(struct.pack("<Q", adam.t if adam is not None else 0))

    arrays = _named_arrays(params, adam)
    chunks.append(struct.pack("<I", len(arrays)))
    for name, arr in arrays:
        encoded = name.encode("utf-8")
        chunks.append(struct.pack("<H", len(encoded)))
        chunks.append(encoded)
        chunks.append(struct.pack("<B", arr.ndim))
        chunks.extend(struct.pack("<Q", s) for s in arr.shape)
        chunks.append(np.ascontiguousarray(arr, dtype="<f8").tobytes())

    blob = json.dumps(aux or {}, sort_keys=True, separators=(",", ":")).encode("utf-8")
    chunks.append(struct.pack("<Q", len(blob)))
    chunks.append(blob)

    payload = b"".join(chunks)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp_name = tempfile.mkstemp(dir=path.parent, prefix=".ckpt-", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp_name, path)
    except BaseException:
        if os.path.exists(tmp_name):
            os.unlink(tmp_name)
        raise


class _Reader:
    def __init__(self, data: bytes, path: Path):
        self.data = data
        self.pos = 0
        self.path = path

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise CorruptCheckpoint(f"truncated checkpoint file: {self.path}")
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def load_checkpoint(path: str | Path) -> tuple[ParamSet, AdamState, dict]:
    """Restore a checkpoint; raises VersionMismatch / CorruptCheckpoint."""
    path = Path(path)
    try:
        return _load(path)
    except (VersionMismatch, CorruptCheckpoint):
        raise
    except (struct.error, ValueError, KeyError) as exc:
        raise CorruptCheckpoint(f"unreadable checkpoint file: {path}") from exc


def _load(path: Path) -> tuple[ParamSet, AdamState, dict]:
    data = path.read_bytes()
    r = _Reader(data, path)
    if r.take(len(MAGIC)) != MAGIC:
        raise VersionMismatch(f"bad magic in checkpoint file: {path}")
    (version,) = r.unpack("<I")
    if version != FORMAT_VERSION:
        raise VersionMismatch(f"unsupported checkpoint format v{version} in {path}")
    seed, model_version = r.unpack("<QQ")
    (n_dims,) = r.unpack("<I")
    dims = tuple(r.unpack("<I")[0] for _ in range(n_dims))
    (adam_t,) = r.unpack("<Q")

    (n_arrays,) = r.unpack("<I")
    arrays: dict[str, np.ndarray] = {}
    for _ in range(n_arrays):
        (name_len,) = r.unpack("<H")
        name = r.take(name_len).decode("utf-8")
        (ndim,) = r.unpack("<B")
        shape = tuple(r.unpack("<Q")[0] for _ in range(ndim))
        count = int(np.prod(shape)) if shape else 1
        raw = r.take(count * 8)
        arrays[name] = np.frombuffer(raw, dtype="<f8").reshape(shape).copy()

    (blob_len,) = r.unpack("<Q")
    try:
        aux = json.loads(r.take(blob_len).decode("utf-8"))
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise CorruptCheckpoint(f"unreadable aux blob in {path}") from exc
    if r.pos != len(data):
        raise CorruptCheckpoint(f"trailing bytes in checkpoint file: {path}")

    def tree(prefix: str) -> ParamSet:
        layers = []
        for l in range(len(dims) - 1):
            try:
                layers.append(
                    LayerParams(
                        W1=arrays[f"{prefix}layer.{l}.W1"],
                        W2=arrays[f"{prefix}layer.{l}.W2"],
                        a=arrays[f"{prefix}layer.{l}.a"],
                    )
                )
            except KeyError as exc:
                raise CorruptCheckpoint(f"missing array {exc} in {path}") from exc
        if f"{prefix}W_o" not in arrays:
            raise CorruptCheckpoint(f"missing array {prefix}W_o in {path}")
        return ParamSet(
            layers=layers, W_o=arrays[f"{prefix}W_o"], dims=dims,
            seed=seed, version=model_version,
        )

    params = tree("")
    params.validate()
    if "adam.m.W_o" in arrays:
        adam = AdamState(m=tree("adam.m."), v=tree("adam.v."), t=adam_t)
    else:
        adam = AdamState.fresh(params)
    return params, adam, aux


def checkpoint_bytes_digest(path: str | Path) -> str:
    import hashlib

    return hashlib.sha256(Path(path).read_bytes()).hexdigest()
