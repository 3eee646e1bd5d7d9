"""Named-tensor archive (NTA) codec.

Layout: ``NTA1`` magic, little-endian uint64 index length, JSON index
``{name: {"dtype": "f32", "shape": [...], "offset": o, "length": n}}``, then
the raw little-endian payloads. Offsets are relative to the payload start.
"""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np
import torch

from .configs import NetError
from .params import ParameterStore

MAGIC = b"NTA1"
_LENGTH = struct.Struct("<Q")
_DTYPES = {"f32": np.dtype("<f4")}


class ArchiveError(NetError):
    pass


def encode_archive(params: ParameterStore) -> bytes:
    index = {}
    chunks = []
    offset = 0
    for name, tensor in params.items():
        payload = tensor.detach().cpu().to(torch.float32).numpy().astype(
            _DTYPES["f32"]).tobytes()
        index[name] = {
            "dtype": "f32",
            "shape": list(tensor.shape),
            "offset": offset,
            "length": len(payload),
        }
        chunks.append(payload)
        offset += len(payload)
    header = json.dumps(index, separators=(",", ":")).encode("utf-8")
    return b"".join([MAGIC, _LENGTH.pack(len(header)), header, *chunks])


def decode_archive(blob: bytes, source: str = "<bytes>") -> ParameterStore:
    if len(blob) < len(MAGIC) + _LENGTH.size or blob[:4] != MAGIC:
        raise ArchiveError(f"{source}: not an NTA1 archive")
    (header_len, ) = _LENGTH.unpack_from(blob, len(MAGIC))
    start = len(MAGIC) + _LENGTH.size
    if start + header_len > len(blob):
        raise ArchiveError(f"{source}: truncated index")
    try:
        index = json.loads(blob[start:start + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ArchiveError(f"{source}: corrupt index ({exc})") from exc
    if not isinstance(index, dict):
        raise ArchiveError(f"{source}: index must be an object")

    payload = memoryview(blob)[start + header_len:]
    tensors = []
    for name, meta in index.items():
        try:
            dtype = _DTYPES[meta["dtype"]]
            shape = tuple(int(d) for d in meta["shape"])
            offset, length = int(meta["offset"]), int(meta["length"])
        except (KeyError, TypeError, ValueError) as exc:
            raise ArchiveError(f"{source}: bad index entry for {name!r}") from exc
        expected = int(np.prod(shape, dtype=np.int64)) * dtype.itemsize
        if length != expected or offset < 0 or offset + length > len(payload):
            raise ArchiveError(f"{source}: payload out of range for {name!r}")
        array = np.frombuffer(payload[offset:offset + length],
                              dtype=dtype).reshape(shape).astype(np.float32)
        tensors.append((name, torch.from_numpy(array)))
    return ParameterStore(tensors)


def write_archive(params: ParameterStore, path: Path | str) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(encode_archive(params))
    return path


def read_archive(path: Path | str) -> ParameterStore:
    path = Path(path)
    if not path.is_file():
        raise ArchiveError(f"archive not found: {path}")
    return decode_archive(path.read_bytes(), source=str(path))
