import numpy as np
import pytest

from morphdyn.geometry import TriMesh, marching_cubes


def icosphere(radius: float = 1.0, subdivisions: int = 3) -> TriMesh:
    """Icosahedron refined by edge midpoint subdivision, projected to radius."""
    phi = (1.0 + np.sqrt(5.0)) / 2.0
    verts = np.array([
        [-1, phi, 0], [1, phi, 0], [-1, -phi, 0], [1, -phi, 0],
        [0, -1, phi], [0, 1, phi], [0, -1, -phi], [0, 1, -phi],
        [phi, 0, -1], [phi, 0, 1], [-phi, 0, -1], [-phi, 0, 1],
    ], dtype=np.float64)
    verts /= np.linalg.norm(verts, axis=1, keepdims=True)
    faces = np.array([
        [0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11],
        [1, 5, 9], [5, 11, 4], [11, 10, 2], [10, 7, 6], [7, 1, 8],
        [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8], [3, 8, 9],
        [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1],
    ], dtype=np.int64)
    for _ in range(subdivisions):
        verts_list = list(verts)
        midpoint = {}

        def mid(i, j):
            key = (min(i, j), max(i, j))
            if key not in midpoint:
                m = verts_list[i] + verts_list[j]
                m = m / np.linalg.norm(m)
                midpoint[key] = len(verts_list)
                verts_list.append(m)
            return midpoint[key]

        new_faces = []
        for a, b, c in faces:
            ab, bc, ca = mid(a, b), mid(b, c), mid(c, a)
            new_faces += [[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]
        verts = np.array(verts_list)
        faces = np.array(new_faces, dtype=np.int64)
    return TriMesh(verts * radius, faces)


def unit_cube() -> TriMesh:
    """Axis-aligned unit cube at the origin corner, 12 outward triangles."""
    v = np.array([[x, y, z] for x in (0, 1) for y in (0, 1) for z in (0, 1)],
                 dtype=np.float64)
    f = np.array([
        [0, 1, 3], [0, 3, 2],      # x = 0, normal -x
        [4, 6, 7], [4, 7, 5],      # x = 1, normal +x
        [0, 4, 5], [0, 5, 1],      # y = 0, normal -y
        [2, 3, 7], [2, 7, 6],      # y = 1, normal +y
        [0, 2, 6], [0, 6, 4],      # z = 0, normal -z
        [1, 5, 7], [1, 7, 3],      # z = 1, normal +z
    ], dtype=np.int64)
    return TriMesh(v, f)


def sphere_field(resolution: int, radius: float) -> np.ndarray:
    xs = np.linspace(-1, 1, resolution)
    x, y, z = np.meshgrid(xs, xs, xs, indexing="ij")
    return np.sqrt(x * x + y * y + z * z) - radius


@pytest.fixture(scope="session")
def ico3():
    return icosphere(1.0, 3)


@pytest.fixture(scope="session")
def mc_sphere07():
    return marching_cubes(sphere_field(96, 0.7))
