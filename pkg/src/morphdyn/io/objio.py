"""ASCII OBJ mesh I/O: v/f records, 1-based indices, triangles only."""

from __future__ import annotations

import io
from pathlib import Path

import numpy as np

from ..geometry.mesh import GeometryError, TriMesh
from .manifest import atomic_write_text


class ObjError(GeometryError):
    pass


def write_obj(path, mesh: TriMesh) -> None:
    """Write with 9 significant digits (full float precision round trip)."""
    parts = []
    if len(mesh.vertices):
        v = mesh.vertices
        rows = np.char.add("v ", np.char.add(
            _fmt(v[:, 0]), np.char.add(" ", np.char.add(
                _fmt(v[:, 1]), np.char.add(" ", _fmt(v[:, 2]))))))
        parts.append("\n".join(rows.tolist()))
    if len(mesh.faces):
        f = mesh.faces + 1
        rows = np.char.add("f ", np.char.add(
            f[:, 0].astype("U12"), np.char.add(" ", np.char.add(
                f[:, 1].astype("U12"), np.char.add(" ", f[:, 2].astype("U12"))))))
        parts.append("\n".join(rows.tolist()))
    atomic_write_text(path, "\n".join(parts) + "\n" if parts else "")


def _fmt(col: np.ndarray) -> np.ndarray:
    return np.array([f"{x:.9g}" for x in col], dtype=object)


def read_obj(path) -> TriMesh:
    """Vectorized parse; falls back to a line-by-line pass to pinpoint the
    offending line when anything is malformed."""
    with open(path, "r") as fh:
        text = fh.read()
    lines = text.splitlines()
    v_lines = [l for l in lines if l.startswith("v ")]
    f_lines = [l for l in lines if l.startswith("f ")]
    known = len(v_lines) + len(f_lines) + sum(
        1 for l in lines
        if not l.strip() or l.lstrip().startswith(("#", "vn ", "vt ", "o ", "g ",
                                                   "s ", "usemtl", "mtllib")))
    try:
        if known != len(lines):
            raise ValueError("unrecognized records present")
        verts = np.array(" ".join(l[2:] for l in v_lines).split(),
                         dtype=np.float64) if v_lines else np.zeros(0)
        if verts.size != 3 * len(v_lines):
            raise ValueError("vertex field count")
        faces = np.array(" ".join(l[2:] for l in f_lines).split(),
                         dtype=np.int64) if f_lines else np.zeros(0, dtype=np.int64)
        if faces.size != 3 * len(f_lines) or (faces.size
                                              and (faces < 1).any()):
            raise ValueError("face field count")
        return TriMesh(verts.reshape(-1, 3),
                       faces.reshape(-1, 3) - 1)
    except (ValueError, TypeError):
        return _read_obj_strict(path, lines)


def _read_obj_strict(path, lines) -> TriMesh:
    verts: list[tuple] = []
    faces: list[tuple] = []
    for lineno, raw in enumerate(lines, start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        tag = parts[0]
        if tag == "v":
            if len(parts) != 4:
                raise ObjError(f"{path}:{lineno}: malformed vertex line: {line!r}")
            try:
                verts.append((float(parts[1]), float(parts[2]), float(parts[3])))
            except ValueError:
                raise ObjError(f"{path}:{lineno}: malformed vertex line: {line!r}")
        elif tag == "f":
            if len(parts) != 4:
                raise ObjError(
                    f"{path}:{lineno}: only triangle faces are supported "
                    f"({len(parts) - 1} indices)")
            try:
                idx = tuple(int(p.split("/")[0]) for p in parts[1:])
            except ValueError:
                raise ObjError(f"{path}:{lineno}: malformed face line: {line!r}")
            if any(i < 1 for i in idx):
                raise ObjError(f"{path}:{lineno}: OBJ indices are 1-based")
            faces.append(tuple(i - 1 for i in idx))
        elif tag in ("vn", "vt", "o", "g", "s", "usemtl", "mtllib"):
            continue
        else:
            raise ObjError(f"{path}:{lineno}: unrecognized record {tag!r}")
    if not verts:
        return TriMesh(np.zeros((0, 3)), np.zeros((0, 3), dtype=np.int64))
    return TriMesh(np.array(verts, dtype=np.float64),
                   np.array(faces, dtype=np.int64).reshape(-1, 3))


def write_sequence(dirpath, meshes, prefix: str = "frame") -> list[Path]:
    dirpath = Path(dirpath)
    dirpath.mkdir(parents=True, exist_ok=True)
    paths = []
    for k, mesh in enumerate(meshes):
        p = dirpath / f"{prefix}_{k:02d}.obj"
        write_obj(p, mesh)
        paths.append(p)
    return paths


def read_sequence(dirpath, prefix: str = "frame", count: int = 20) -> list[TriMesh]:
    dirpath = Path(dirpath)
    return [read_obj(dirpath / f"{prefix}_{k:02d}.obj") for k in range(count)]
