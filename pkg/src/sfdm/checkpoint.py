"""Binary checkpoints: magic, canonical-JSON header, float32 blob, CRC32.

Layout::

    magic (5 bytes) | header length (uint32 LE) | header JSON (UTF-8)
    | parameters as little-endian float32 in declaration order
    | CRC32 of everything before it (uint32 LE)

The header holds ``{"config": ..., "mode": ..., "params": [[name, shape], ...]}``.
"""

from __future__ import annotations

import json
import os
import struct
import zlib
from pathlib import Path

import numpy as np

from .ndtensor import Tensor

DENOISER_MAGIC = b"SFDM1"
CLASSIFIER_MAGIC = b"SFCL1"


class CheckpointError(ValueError):
    pass


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=True)


def atomic_write(path, data: bytes | str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(f".{path.name}.{os.getpid()}.tmp")
    if isinstance(data, str):
        data = data.encode("utf-8")
    tmp.write_bytes(data)
    os.replace(tmp, path)


def encode(magic: bytes, config: dict, mode: str, params: dict[str, Tensor]) -> bytes:
    header = canonical_json(
        {"config": config, "mode": mode, "params": [[k, list(v.shape)] for k, v in params.items()]}
    ).encode("utf-8")
    blob = b"".join(np.ascontiguousarray(v.data, dtype="<f4").tobytes() for v in params.values())
    body = magic + struct.pack("<I", len(header)) + header + blob
    return body + struct.pack("<I", zlib.crc32(body))


def decode(data: bytes, magic: bytes) -> tuple[dict, str, dict[str, Tensor]]:
    if len(data) < len(magic) + 8 or data[: len(magic)] != magic:
        raise CheckpointError(f"not a {magic.decode()} checkpoint")
    body, crc = data[:-4], struct.unpack("<I", data[-4:])[0]
    if zlib.crc32(body) != crc:
        raise CheckpointError("checkpoint CRC mismatch")
    off = len(magic)
    (hlen,) = struct.unpack("<I", body[off : off + 4])
    off += 4
    header = json.loads(body[off : off + hlen].decode("utf-8"))
    off += hlen
    params = {}
    for name, shape in header["params"]:
        n = int(np.prod(shape, dtype=np.int64))
        arr = np.frombuffer(body, dtype="<f4", count=n, offset=off).reshape(shape)
        params[name] = Tensor(arr.astype(np.float32), requires_grad=True)
        off += 4 * n
    if off != len(body):
        raise CheckpointError("checkpoint blob length does not match its header")
    return header["config"], header["mode"], params


def save(path, magic: bytes, config: dict, mode: str, params: dict[str, Tensor]) -> None:
    atomic_write(path, encode(magic, config, mode, params))


def load(path, magic: bytes):
    return decode(Path(path).read_bytes(), magic)
