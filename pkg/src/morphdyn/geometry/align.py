"""Rigid alignment and unit-sphere normalization.

Sequences are aligned on their first frame: translate the frame-0 center
of mass onto a reference, fine-tune with ICP (closed-form SVD rotation
step with determinant correction), then apply the one found transform to
all 20 frames. Normalization maps the whole training set strictly inside
the unit sphere with a single dataset-wide scale so volumes stay
comparable across subjects.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .mesh import GeometryError, TriMesh, mesh_centroid


@dataclass
class RigidTransform:
    rotation: np.ndarray       # (3,3), orthonormal, det +1
    translation: np.ndarray    # (3,)

    def __post_init__(self):
        self.rotation = np.asarray(self.rotation, dtype=np.float64)
        self.translation = np.asarray(self.translation, dtype=np.float64)
        err = np.abs(self.rotation.T @ self.rotation - np.eye(3)).max()
        if err > 1e-6:
            raise GeometryError(f"rotation is not orthonormal (|R^T R - I| = {err:.2e})")
        if np.linalg.det(self.rotation) < 0:
            raise GeometryError("rotation has negative determinant (reflection)")

    @classmethod
    def identity(cls) -> "RigidTransform":
        return cls(np.eye(3), np.zeros(3))

    def apply(self, points: np.ndarray) -> np.ndarray:
        return points @ self.rotation.T + self.translation

    def compose(self, other: "RigidTransform") -> "RigidTransform":
        """self after other: x -> self(other(x))."""
        return RigidTransform(self.rotation @ other.rotation,
                              self.rotation @ other.translation + self.translation)

    def inverse(self) -> "RigidTransform":
        rt = self.rotation.T
        return RigidTransform(rt, -rt @ self.translation)

    def apply_mesh(self, mesh: TriMesh) -> TriMesh:
        return TriMesh(self.apply(mesh.vertices), mesh.faces)


@dataclass
class NormalizationInfo:
    """Dataset-wide center (mm) and scale mapping surfaces into the unit sphere."""

    center: np.ndarray
    scale: float

    def __post_init__(self):
        self.center = np.asarray(self.center, dtype=np.float64)
        if self.scale <= 0:
            raise GeometryError(f"normalization scale must be positive, got {self.scale}")

    def apply(self, points: np.ndarray) -> np.ndarray:
        return (points - self.center) * self.scale

    def invert(self, points: np.ndarray) -> np.ndarray:
        return points / self.scale + self.center


def center_of_mass_align(meshes, reference_center=np.zeros(3)) -> tuple[list[TriMesh], np.ndarray]:
    """Translate a sequence so frame 0's center of mass hits the reference.

    One translation is computed from frame 0 and applied to every frame,
    so relative offsets between frames are preserved exactly.
    """
    if not meshes:
        raise GeometryError("empty sequence")
    translation = np.asarray(reference_center, dtype=np.float64) - mesh_centroid(meshes[0])
    moved = [TriMesh(m.vertices + translation, m.faces) for m in meshes]
    return moved, translation


def _kabsch(source_pts: np.ndarray, target_pts: np.ndarray) -> RigidTransform:
    """Least-squares rigid transform (Arun): SVD of the cross-covariance with
    determinant correction so the result is a proper rotation."""
    sc = source_pts.mean(axis=0)
    tc = target_pts.mean(axis=0)
    h = (source_pts - sc).T @ (target_pts - tc)
    u, _, vt = np.linalg.svd(h)
    d = np.sign(np.linalg.det(vt.T @ u.T))
    diag = np.diag([1.0, 1.0, d])
    r = vt.T @ diag @ u.T
    t = tc - r @ sc
    return RigidTransform(r, t)


def icp_align(source: TriMesh, target: TriMesh, max_iters: int = 50,
              tol: float = 1e-6) -> RigidTransform:
    """Iterative closest point with vertex-nearest-vertex correspondences.

    Returns the transform mapping source onto target. The per-iteration
    RMS of correspondence distances is non-increasing by construction of
    the closed-form step.
    """
    src = source.vertices
    tgt = target.vertices
    if len(src) < 3 or len(tgt) < 3:
        raise GeometryError("ICP needs at least 3 points on each mesh")
    if np.linalg.matrix_rank(src - src.mean(axis=0), tol=1e-9) < 2:
        raise GeometryError("ICP source points are collinear")
    tree = cKDTree(tgt)
    transform = RigidTransform.identity()
    moved = src.copy()
    prev_rms = np.inf
    for _ in range(max_iters):
        dist, nearest = tree.query(moved)
        rms = float(np.sqrt(np.mean(dist ** 2)))
        if prev_rms < np.inf and prev_rms - rms < tol * max(prev_rms, 1e-30):
            break
        prev_rms = rms
        step = _kabsch(moved, tgt[nearest])
        transform = step.compose(transform)
        moved = transform.apply(src)
    return transform


def compute_normalization(train_sequences, margin: float = 0.97) -> NormalizationInfo:
    """Center = mean of frame-0 centers of mass over the training split;
    scale = margin / max vertex distance to that center over all frames."""
    if not train_sequences:
        raise GeometryError("cannot compute normalization from an empty training split")
    centers = np.stack([mesh_centroid(seq[0]) for seq in train_sequences])
    center = centers.mean(axis=0)
    max_r = 0.0
    for seq in train_sequences:
        for mesh in seq:
            r = float(np.linalg.norm(mesh.vertices - center, axis=1).max())
            max_r = max(max_r, r)
    if max_r <= 0:
        raise GeometryError("degenerate training set: zero extent")
    return NormalizationInfo(center=center, scale=margin / max_r)


def normalize_mesh(mesh: TriMesh, info: NormalizationInfo) -> TriMesh:
    return TriMesh(info.apply(mesh.vertices), mesh.faces)


def denormalize_mesh(mesh: TriMesh, info: NormalizationInfo) -> TriMesh:
    return TriMesh(info.invert(mesh.vertices), mesh.faces)
