"""Persistence: OBJ meshes, binary checkpoints, sample caches, run manifests."""

from .objio import read_obj, write_obj
from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint, CheckpointError
from .samplecache import load_sample_cache, save_sample_cache, SampleCacheError
from .manifest import atomic_write_bytes, atomic_write_text, config_hash, write_manifest

__all__ = [
    "read_obj", "write_obj",
    "Checkpoint", "load_checkpoint", "save_checkpoint", "CheckpointError",
    "load_sample_cache", "save_sample_cache", "SampleCacheError",
    "atomic_write_bytes", "atomic_write_text", "config_hash", "write_manifest",
]
