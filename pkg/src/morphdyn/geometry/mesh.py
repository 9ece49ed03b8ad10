"""Triangle meshes and the closed-surface primitives built on them."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class GeometryError(ValueError):
    pass


class OrientationError(GeometryError):
    pass


@dataclass
class TriMesh:
    """Closed triangle surface: (V,3) float vertices, (F,3) int faces.

    Faces are expected consistently outward-oriented for anything that
    computes volumes or signs. Validation is cached because meshes are
    immutable by convention once built.
    """

    vertices: np.ndarray
    faces: np.ndarray
    _checked: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        self.vertices = np.ascontiguousarray(self.vertices, dtype=np.float64)
        self.faces = np.ascontiguousarray(self.faces, dtype=np.int64)
        if self.vertices.ndim != 2 or self.vertices.shape[1] != 3:
            raise GeometryError(f"vertices must be (V,3), got {self.vertices.shape}")
        if self.faces.ndim != 2 or self.faces.shape[1] != 3:
            raise GeometryError(f"faces must be (F,3), got {self.faces.shape}")
        if len(self.faces) and (self.faces.min() < 0
                                or self.faces.max() >= len(self.vertices)):
            raise GeometryError("face index out of range")

    @property
    def is_empty(self) -> bool:
        return len(self.faces) == 0

    def triangles(self) -> np.ndarray:
        """(F,3,3) corner coordinates."""
        return self.vertices[self.faces]

    def face_normals(self, normalized: bool = True) -> np.ndarray:
        t = self.triangles()
        n = np.cross(t[:, 1] - t[:, 0], t[:, 2] - t[:, 0])
        if normalized:
            lens = np.linalg.norm(n, axis=1, keepdims=True)
            n = n / np.maximum(lens, 1e-300)
        return n

    def face_areas(self) -> np.ndarray:
        return 0.5 * np.linalg.norm(self.face_normals(normalized=False), axis=1)

    def transformed(self, fn) -> "TriMesh":
        return TriMesh(fn(self.vertices), self.faces)

    # -- topology checks ------------------------------------------------------

    def _edge_counts(self):
        cached = self._checked.get("edges")
        if cached is None:
            e = np.concatenate([self.faces[:, [0, 1]], self.faces[:, [1, 2]],
                                self.faces[:, [2, 0]]])
            und = np.sort(e, axis=1)
            _, und_counts = np.unique(und, axis=0, return_counts=True)
            _, dir_counts = np.unique(e, axis=0, return_counts=True)
            cached = self._checked["edges"] = (und_counts, dir_counts)
        return cached

    def is_closed_manifold(self) -> bool:
        if self.is_empty:
            return False
        und_counts, _ = self._edge_counts()
        return bool(np.all(und_counts == 2))

    def is_consistently_oriented(self) -> bool:
        if self.is_empty:
            return False
        _, dir_counts = self._edge_counts()
        return bool(np.all(dir_counts == 1))

    def require_closed(self, what: str = "operation") -> None:
        if not self.is_closed_manifold():
            raise GeometryError(
                f"{what} requires a closed 2-manifold mesh (every edge shared "
                "by exactly 2 faces)")
        if not self.is_consistently_oriented():
            raise OrientationError(f"{what} requires consistent face orientation")


def euler_characteristic(mesh: TriMesh) -> int:
    e = np.concatenate([mesh.faces[:, [0, 1]], mesh.faces[:, [1, 2]],
                        mesh.faces[:, [2, 0]]])
    n_edges = len(np.unique(np.sort(e, axis=1), axis=0))
    n_verts = len(np.unique(mesh.faces.ravel()))
    return n_verts - n_edges + len(mesh.faces)


def connected_component_count(mesh: TriMesh) -> int:
    """Components of the face adjacency graph (via shared vertices)."""
    if mesh.is_empty:
        return 0
    parent = np.arange(len(mesh.vertices))

    def find(i):
        root = i
        while parent[root] != root:
            root = parent[root]
        while parent[i] != root:
            parent[i], i = root, parent[i]
        return root

    for a, b, c in mesh.faces:
        ra, rb, rc = find(a), find(b), find(c)
        parent[rb] = ra
        parent[rc] = ra
    used = np.unique(mesh.faces.ravel())
    return len({find(i) for i in used})


def mesh_volume(mesh: TriMesh) -> float:
    """Enclosed volume by the divergence theorem: (1/6) sum v0.(v1 x v2).

    Positive for outward orientation; a flipped mesh is rejected rather
    than silently negated.
    """
    mesh.require_closed("mesh_volume")
    t = mesh.triangles()
    vol = float(np.einsum("ij,ij->i", t[:, 0], np.cross(t[:, 1], t[:, 2])).sum() / 6.0)
    if vol <= 0:
        raise OrientationError(
            f"signed volume {vol:.6g} <= 0: faces are inward-oriented")
    return vol


def mesh_centroid(mesh: TriMesh) -> np.ndarray:
    """Center of mass of the enclosed solid (signed tetrahedra about origin)."""
    mesh.require_closed("mesh_centroid")
    t = mesh.triangles()
    det = np.einsum("ij,ij->i", t[:, 0], np.cross(t[:, 1], t[:, 2]))
    centroid_tet = t.sum(axis=1) / 4.0
    vol6 = det.sum()
    if abs(vol6) < 1e-300:
        raise GeometryError("degenerate mesh: zero volume")
    return (centroid_tet * det[:, None]).sum(axis=0) / vol6


def sample_surface(mesh: TriMesh, n: int, rng: np.random.Generator):
    """Area-uniform surface points; returns (points (n,3), face index, normals)."""
    if mesh.is_empty:
        raise GeometryError("cannot sample an empty mesh")
    areas = mesh.face_areas()
    total = areas.sum()
    if total <= 0:
        raise GeometryError("degenerate mesh: zero surface area")
    fidx = rng.choice(len(areas), size=n, p=areas / total)
    t = mesh.vertices[mesh.faces[fidx]]
    # uniform barycentric via the sqrt trick
    r1 = np.sqrt(rng.random(n))
    r2 = rng.random(n)
    a = 1.0 - r1
    b = r1 * (1.0 - r2)
    c = r1 * r2
    pts = (t[:, 0] * a[:, None] + t[:, 1] * b[:, None] + t[:, 2] * c[:, None])
    normals = mesh.face_normals()[fidx]
    return pts, fidx, normals
