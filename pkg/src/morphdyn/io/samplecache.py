"""Binary cache of a sequence's space-time samples.

One file per sequence: header (magic, version, frame count, per-frame
record counts and phases), then frame-major flat records of little-endian
float32 (px, py, pz, t, d). Reload reproduces the sampled values bit-exactly.
"""

from __future__ import annotations

import struct

import numpy as np

from ..geometry.sampling import FrameSamples
from .manifest import atomic_write_bytes

MAGIC = b"MDSC"
VERSION = 1
RECORD_FLOATS = 5


class SampleCacheError(IOError):
    pass


def save_sample_cache(path, frames: list[FrameSamples]) -> None:
    body = bytearray()
    body += MAGIC
    body += struct.pack("<I", VERSION)
    body += struct.pack("<I", len(frames))
    for f in frames:
        body += struct.pack("<If", len(f), np.float32(f.t))
    for f in frames:
        rec = np.empty((len(f), RECORD_FLOATS), dtype="<f4")
        rec[:, :3] = f.p
        rec[:, 3] = np.float32(f.t)
        rec[:, 4] = f.d
        body += rec.tobytes()
    atomic_write_bytes(path, bytes(body))


def load_sample_cache(path) -> list[FrameSamples]:
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 12 or blob[:4] != MAGIC:
        raise SampleCacheError(f"{path}: not a sample cache (bad magic)")
    version = struct.unpack("<I", blob[4:8])[0]
    if version != VERSION:
        raise SampleCacheError(f"{path}: unsupported version {version}")
    (n_frames,) = struct.unpack_from("<I", blob, 8)
    pos = 12
    counts = []
    phases = []
    for _ in range(n_frames):
        c, t = struct.unpack_from("<If", blob, pos)
        counts.append(c)
        phases.append(t)
        pos += 8
    expected = pos + sum(counts) * RECORD_FLOATS * 4
    if expected != len(blob):
        raise SampleCacheError(
            f"{path}: header declares {sum(counts)} records but file length "
            f"{len(blob)} != {expected}")
    frames = []
    for c, t in zip(counts, phases):
        rec = np.frombuffer(blob, dtype="<f4", count=c * RECORD_FLOATS,
                            offset=pos).reshape(c, RECORD_FLOATS)
        pos += c * RECORD_FLOATS * 4
        frames.append(FrameSamples(p=rec[:, :3].astype(np.float32),
                                   t=float(np.float32(t)),
                                   d=rec[:, 4].astype(np.float32)))
    return frames
