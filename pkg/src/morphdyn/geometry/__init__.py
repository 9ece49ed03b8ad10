"""Explicit-geometry machinery: triangle meshes, signed distances, the
training sampling strategy, rigid alignment, unit-sphere normalization,
isosurface extraction and surface-distance metrics."""

from .mesh import (
    TriMesh,
    GeometryError,
    OrientationError,
    mesh_volume,
    mesh_centroid,
    sample_surface,
    euler_characteristic,
    connected_component_count,
)
from .distance import MeshDistanceField, signed_distance
from .sampling import FrameSamples, sample_frame, sample_sequence, uniform_ball
from .align import (
    RigidTransform,
    NormalizationInfo,
    center_of_mass_align,
    icp_align,
    compute_normalization,
    normalize_mesh,
    denormalize_mesh,
)
from .isosurface import marching_cubes, grid_coordinates
from .metrics import chamfer_distance, hausdorff_distance, chamfer_points, hausdorff_points

__all__ = [
    "TriMesh", "GeometryError", "OrientationError",
    "mesh_volume", "mesh_centroid", "sample_surface",
    "euler_characteristic", "connected_component_count",
    "MeshDistanceField", "signed_distance",
    "FrameSamples", "sample_frame", "sample_sequence", "uniform_ball",
    "RigidTransform", "NormalizationInfo", "center_of_mass_align",
    "icp_align", "compute_normalization", "normalize_mesh", "denormalize_mesh",
    "marching_cubes", "grid_coordinates",
    "chamfer_distance", "hausdorff_distance", "chamfer_points", "hausdorff_points",
]
