"""Surface-distance metrics between meshes.

Both metrics compare fixed-size area-uniform surface samplings point to
point: Chamfer is the symmetric mean of nearest-neighbor distances,
Hausdorff the symmetric max over the same samplings, so HD >= CD on any
input pair. Units follow the mesh coordinates (mm after denormalization).
"""

from __future__ import annotations

import numpy as np
from scipy.spatial import cKDTree

from .. import derive_rng
from .mesh import GeometryError, TriMesh, sample_surface

METRIC_SAMPLES = 10_000


def _surface_points(mesh: TriMesh, n: int, seed: int) -> np.ndarray:
    if mesh.is_empty:
        raise GeometryError("metric on an empty mesh")
    pts, _, _ = sample_surface(mesh, n, derive_rng(seed, "metric"))
    return pts


def _directed(a_pts: np.ndarray, b_pts: np.ndarray) -> np.ndarray:
    d, _ = cKDTree(b_pts).query(a_pts)
    return d


def chamfer_points(a_pts: np.ndarray, b_pts: np.ndarray) -> float:
    """Symmetric mean closest-point distance between two point sets."""
    return float(0.5 * (_directed(a_pts, b_pts).mean()
                        + _directed(b_pts, a_pts).mean()))


def hausdorff_points(a_pts: np.ndarray, b_pts: np.ndarray) -> float:
    """Symmetric max closest-point distance between two point sets."""
    return float(max(_directed(a_pts, b_pts).max(),
                     _directed(b_pts, a_pts).max()))


def chamfer_distance(a: TriMesh, b: TriMesh, n: int = METRIC_SAMPLES,
                     seed: int = 0) -> float:
    return chamfer_points(_surface_points(a, n, seed),
                          _surface_points(b, n, seed))


def hausdorff_distance(a: TriMesh, b: TriMesh, n: int = METRIC_SAMPLES,
                       seed: int = 0) -> float:
    return hausdorff_points(_surface_points(a, n, seed),
                            _surface_points(b, n, seed))


def surface_metrics(a: TriMesh, b: TriMesh, n: int = METRIC_SAMPLES,
                    seed: int = 0) -> tuple[float, float]:
    """(chamfer, hausdorff) on one shared pair of samplings."""
    pa = _surface_points(a, n, seed)
    pb = _surface_points(b, n, seed)
    dab = _directed(pa, pb)
    dba = _directed(pb, pa)
    cd = float(0.5 * (dab.mean() + dba.mean()))
    hd = float(max(dab.max(), dba.max()))
    return cd, hd
