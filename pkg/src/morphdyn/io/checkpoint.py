"""Chunked binary checkpoint: magic "MDYN", u32 version, length-prefixed
named tensor chunks, trailing CRC32 over everything before it.

A checkpoint carries the full trained state: hyperparameters (JSON chunk),
normalization constants, encoder and SDF-network weights, the residual
latent table, optimizer moments for exact resume, the step counter and
the seed. Save -> load -> save is byte-identical.
"""

from __future__ import annotations

import json
import struct
import zlib
from dataclasses import dataclass, field

import numpy as np

from .manifest import atomic_write_bytes

MAGIC = b"MDYN"
VERSION = 1

_DTYPE_CODES = {
    np.dtype(np.float32): b"F",
    np.dtype(np.float64): b"D",
    np.dtype(np.int64): b"I",
}
_CODE_DTYPES = {v: k for k, v in _DTYPE_CODES.items()}
_JSON_CODE = b"J"


class CheckpointError(IOError):
    pass


@dataclass
class Checkpoint:
    """Named tensors plus a JSON metadata record, in a stable chunk order."""

    meta: dict = field(default_factory=dict)
    tensors: dict = field(default_factory=dict)
    version: int = VERSION

    def require(self, name: str) -> np.ndarray:
        if name not in self.tensors:
            raise CheckpointError(f"checkpoint is missing tensor {name!r}")
        return self.tensors[name]


def _pack_chunk(name: str, code: bytes, payload: bytes, shape=()) -> bytes:
    nb = name.encode("utf-8")
    head = struct.pack("<H", len(nb)) + nb + code + struct.pack("<B", len(shape))
    for dim in shape:
        head += struct.pack("<I", dim)
    return head + struct.pack("<Q", len(payload)) + payload


def save_checkpoint(path, ckpt: Checkpoint) -> None:
    body = bytearray()
    body += MAGIC
    body += struct.pack("<I", ckpt.version)
    meta_payload = json.dumps(ckpt.meta, sort_keys=True).encode("utf-8")
    body += _pack_chunk("__meta__", _JSON_CODE, meta_payload)
    for name, arr in ckpt.tensors.items():
        arr = np.ascontiguousarray(arr)
        if arr.dtype not in _DTYPE_CODES:
            raise CheckpointError(f"unsupported tensor dtype {arr.dtype} for {name!r}")
        payload = arr.astype(arr.dtype.newbyteorder("<")).tobytes()
        body += _pack_chunk(name, _DTYPE_CODES[arr.dtype], payload, arr.shape)
    body += struct.pack("<I", zlib.crc32(bytes(body)) & 0xFFFFFFFF)
    atomic_write_bytes(path, bytes(body))


def load_checkpoint(path) -> Checkpoint:
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 12 or blob[:4] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint (bad magic)")
    stored_crc = struct.unpack("<I", blob[-4:])[0]
    actual_crc = zlib.crc32(blob[:-4]) & 0xFFFFFFFF
    if stored_crc != actual_crc:
        raise CheckpointError(
            f"{path}: CRC mismatch (stored {stored_crc:#010x}, computed "
            f"{actual_crc:#010x}); file is corrupt or truncated")
    version = struct.unpack("<I", blob[4:8])[0]
    if version != VERSION:
        raise CheckpointError(
            f"{path}: unsupported checkpoint version {version} (expected {VERSION})")
    ckpt = Checkpoint(version=version)
    pos = 8
    end = len(blob) - 4
    while pos < end:
        (name_len,) = struct.unpack_from("<H", blob, pos)
        pos += 2
        name = blob[pos:pos + name_len].decode("utf-8")
        pos += name_len
        code = blob[pos:pos + 1]
        pos += 1
        (ndim,) = struct.unpack_from("<B", blob, pos)
        pos += 1
        shape = struct.unpack_from(f"<{ndim}I", blob, pos) if ndim else ()
        pos += 4 * ndim
        (nbytes,) = struct.unpack_from("<Q", blob, pos)
        pos += 8
        payload = blob[pos:pos + nbytes]
        if len(payload) != nbytes:
            raise CheckpointError(f"{path}: chunk {name!r} truncated")
        pos += nbytes
        if code == _JSON_CODE:
            ckpt.meta = json.loads(payload.decode("utf-8"))
        elif code in _CODE_DTYPES:
            dtype = _CODE_DTYPES[code]
            count = int(np.prod(shape)) if shape else nbytes // dtype.itemsize
            if count * dtype.itemsize != nbytes:
                raise CheckpointError(
                    f"{path}: chunk {name!r} declares shape {shape} but holds "
                    f"{nbytes} bytes")
            arr = np.frombuffer(payload, dtype=dtype.newbyteorder("<")).astype(dtype)
            ckpt.tensors[name] = arr.reshape(shape)
        else:
            raise CheckpointError(f"{path}: unknown chunk code {code!r} for {name!r}")
    return ckpt
