import time

import numpy as np
import pytest

from morphdyn.geometry import TriMesh
from morphdyn.geometry.sampling import FrameSamples
from morphdyn.io import (
    Checkpoint,
    CheckpointError,
    SampleCacheError,
    config_hash,
    load_checkpoint,
    load_sample_cache,
    read_obj,
    save_checkpoint,
    save_sample_cache,
    write_obj,
)
from morphdyn.io.objio import ObjError

from conftest import icosphere, unit_cube


# -- OBJ -------------------------------------------------------------------------

def test_obj_roundtrip_cube(tmp_path):
    cube = unit_cube()
    p = tmp_path / "cube.obj"
    write_obj(p, cube)
    back = read_obj(p)
    assert np.array_equal(back.vertices, cube.vertices)
    assert np.array_equal(back.faces, cube.faces)


def test_obj_quad_face_rejected_with_line_number(tmp_path):
    p = tmp_path / "quad.obj"
    p.write_text("v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nf 1 2 3 4\n")
    with pytest.raises(ObjError, match=r"quad\.obj:5"):
        read_obj(p)


def test_obj_malformed_line_reports_position(tmp_path):
    p = tmp_path / "bad.obj"
    p.write_text("v 0 0\n")
    with pytest.raises(ObjError, match=r"bad\.obj:1"):
        read_obj(p)


def test_obj_large_mesh_roundtrip_under_one_second(tmp_path):
    mesh = icosphere(1.0, 5)       # 10242 verts, tiled to a 100k-vertex mesh
    nv = len(mesh.vertices)
    offsets = np.arange(10)[:, None] * np.array([3.0, 0.0, 0.0])
    verts = np.concatenate([mesh.vertices + offsets[k] for k in range(10)])
    faces = np.concatenate([mesh.faces + k * nv for k in range(10)])
    big = TriMesh(verts, faces)
    p = tmp_path / "big.obj"
    t0 = time.time()
    write_obj(p, big)
    back = read_obj(p)
    assert time.time() - t0 < 1.0
    assert len(back.vertices) == 10 * nv
    assert np.abs(back.vertices - big.vertices).max() < 1e-6


def test_obj_float_precision(tmp_path):
    verts = np.array([[0.123456789, -1.98765432e-4, 3.14159265]])
    mesh = TriMesh(np.tile(verts, (3, 1)) + np.eye(3) * 1e-3,
                   np.array([[0, 1, 2]]))
    p = tmp_path / "prec.obj"
    write_obj(p, mesh)
    back = read_obj(p)
    # 9 significant digits: float32-grade precision
    assert np.abs(back.vertices - mesh.vertices).max() < 1e-7


# -- checkpoint ---------------------------------------------------------------------

def sample_checkpoint():
    return Checkpoint(
        meta={"seed": 7, "step": 123, "model": {"latent_dim": 64}},
        tensors={
            "g.0.W": np.arange(12, dtype=np.float32).reshape(3, 4),
            "latent_table": np.random.default_rng(0).normal(
                size=(5, 8)).astype(np.float32),
            "norm.center": np.array([1.0, 2.0, 3.0]),
            "steps": np.arange(5, dtype=np.int64),
        })


def test_checkpoint_roundtrip_byte_identical(tmp_path):
    ck = sample_checkpoint()
    p1 = tmp_path / "a.ck"
    p2 = tmp_path / "b.ck"
    save_checkpoint(p1, ck)
    loaded = load_checkpoint(p1)
    save_checkpoint(p2, loaded)
    assert p1.read_bytes() == p2.read_bytes()
    assert loaded.meta == ck.meta
    for k in ck.tensors:
        assert np.array_equal(loaded.tensors[k], ck.tensors[k])
        assert loaded.tensors[k].dtype == ck.tensors[k].dtype


def test_checkpoint_truncation_detected(tmp_path):
    p = tmp_path / "t.ck"
    save_checkpoint(p, sample_checkpoint())
    blob = p.read_bytes()
    p.write_bytes(blob[:-10])
    with pytest.raises(CheckpointError, match="CRC|truncated"):
        load_checkpoint(p)


def test_checkpoint_corruption_detected(tmp_path):
    p = tmp_path / "c.ck"
    save_checkpoint(p, sample_checkpoint())
    blob = bytearray(p.read_bytes())
    blob[40] ^= 0xFF
    p.write_bytes(bytes(blob))
    with pytest.raises(CheckpointError, match="CRC"):
        load_checkpoint(p)


def test_checkpoint_unknown_version_refused(tmp_path):
    import struct
    import zlib
    p = tmp_path / "v.ck"
    body = b"MDYN" + struct.pack("<I", 99)
    body += struct.pack("<I", zlib.crc32(body) & 0xFFFFFFFF)
    p.write_bytes(body)
    with pytest.raises(CheckpointError, match="version 99"):
        load_checkpoint(p)


def test_checkpoint_bad_magic(tmp_path):
    p = tmp_path / "m.ck"
    p.write_bytes(b"NOPE" + b"\x00" * 20)
    with pytest.raises(CheckpointError, match="magic"):
        load_checkpoint(p)


# -- sample cache ---------------------------------------------------------------------

def make_frames():
    rng = np.random.default_rng(4)
    frames = []
    for k in range(3):
        n = 100 + 10 * k
        frames.append(FrameSamples(
            p=rng.normal(size=(n, 3)).astype(np.float32),
            t=0.05 * k,
            d=rng.normal(size=n).astype(np.float32)))
    return frames


def test_sample_cache_roundtrip_bit_exact(tmp_path):
    frames = make_frames()
    p = tmp_path / "s.msc"
    save_sample_cache(p, frames)
    back = load_sample_cache(p)
    assert len(back) == len(frames)
    for a, b in zip(frames, back):
        assert np.array_equal(a.p, b.p)
        assert np.array_equal(a.d, b.d)
        assert np.float32(a.t) == np.float32(b.t)


def test_sample_cache_count_mismatch_rejected(tmp_path):
    p = tmp_path / "s.msc"
    save_sample_cache(p, make_frames())
    blob = p.read_bytes()
    p.write_bytes(blob[:-8])
    with pytest.raises(SampleCacheError, match="length"):
        load_sample_cache(p)


def test_config_hash_stable_and_order_free():
    a = config_hash({"x": 1, "y": "z"})
    b = config_hash({"y": "z", "x": 1})
    assert a == b
    assert a != config_hash({"x": 2, "y": "z"})
