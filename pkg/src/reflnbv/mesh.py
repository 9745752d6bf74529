"""Triangle meshes and a few procedural shapes used as desk-scale test objects."""

from __future__ import annotations

from functools import cached_property

import numpy as np
from scipy.spatial import ConvexHull, QhullError
from scipy.spatial.distance import pdist

from .geometry import RigidPose


class TriangleMesh:
    """Immutable triangle mesh in millimetres.

    Zero-area triangles are dropped on construction.
    """

    def __init__(self, vertices, triangles):
        V = np.array(vertices, dtype=np.float64).reshape(-1, 3)
        F = np.array(triangles, dtype=np.int64).reshape(-1, 3)
        if F.size and (F.min() < 0 or F.max() >= len(V)):
            raise ValueError("triangle index out of range")
        if F.size:
            area2 = np.linalg.norm(np.cross(V[F[:, 1]] - V[F[:, 0]], V[F[:, 2]] - V[F[:, 0]]), axis=1)
            scale = max(np.ptp(V, axis=0).max(), 1e-300)
            F = F[area2 > 1e-12 * scale * scale]
        V.setflags(write=False)
        F.setflags(write=False)
        self.vertices = V
        self.triangles = F

    def __len__(self):
        return len(self.triangles)

    def __repr__(self):
        return f"TriangleMesh({len(self.vertices)} vertices, {len(self.triangles)} triangles)"

    @cached_property
    def diameter(self) -> float:
        return mesh_diameter(self)

    @cached_property
    def face_normals(self) -> np.ndarray:
        V, F = self.vertices, self.triangles
        n = np.cross(V[F[:, 1]] - V[F[:, 0]], V[F[:, 2]] - V[F[:, 0]])
        return n / np.linalg.norm(n, axis=1, keepdims=True)

    @cached_property
    def face_areas(self) -> np.ndarray:
        V, F = self.vertices, self.triangles
        return 0.5 * np.linalg.norm(np.cross(V[F[:, 1]] - V[F[:, 0]], V[F[:, 2]] - V[F[:, 0]]), axis=1)

    @cached_property
    def bvh(self):
        from .bvh import MeshBVH
        return MeshBVH(self)

    @property
    def centroid(self) -> np.ndarray:
        return self.vertices.mean(axis=0)

    def transformed(self, pose: RigidPose) -> TriangleMesh:
        return TriangleMesh(pose.apply(self.vertices), self.triangles)

    def sample_surface(self, count: int, seed: int = 0, return_faces: bool = False):
        """Area-weighted uniform surface samples (and their triangle ids)."""
        rng = np.random.default_rng(seed)
        p = self.face_areas / self.face_areas.sum()
        idx = rng.choice(len(self.triangles), size=count, p=p)
        r1 = np.sqrt(rng.random(count))
        r2 = rng.random(count)
        V, F = self.vertices, self.triangles[idx]
        a, b, c = V[F[:, 0]], V[F[:, 1]], V[F[:, 2]]
        pts = (1 - r1)[:, None] * a + (r1 * (1 - r2))[:, None] * b + (r1 * r2)[:, None] * c
        return (pts, idx) if return_faces else pts


def mesh_diameter(mesh: TriangleMesh) -> float:
    """Largest distance between any two vertices."""
    V = np.unique(mesh.vertices, axis=0) if len(mesh.vertices) else mesh.vertices
    if len(mesh.vertices) < 2:
        raise ValueError("diameter needs at least two vertices")
    if len(V) < 2:
        return 0.0
    # the farthest pair always lies on the convex hull
    if len(V) > 64:
        try:
            V = V[ConvexHull(V).vertices]
        except QhullError:
            pass  # flat or collinear input; fall through to the full search
    return float(pdist(V).max())


# -- procedural shapes -------------------------------------------------------

def plate(width: float = 100.0, height: float = 100.0, divisions: int = 8) -> TriangleMesh:
    """Flat rectangle in the local xy-plane, centred at the origin, normal +z."""
    xs = np.linspace(-width / 2, width / 2, divisions + 1)
    ys = np.linspace(-height / 2, height / 2, divisions + 1)
    X, Y = np.meshgrid(xs, ys)
    V = np.column_stack([X.ravel(), Y.ravel(), np.zeros(X.size)])
    n = divisions + 1
    tris = []
    for j in range(divisions):
        for i in range(divisions):
            a = j * n + i
            tris.append((a, a + 1, a + n + 1))
            tris.append((a, a + n + 1, a + n))
    return TriangleMesh(V, tris)


def icosphere(radius: float = 50.0, subdivisions: int = 3) -> TriangleMesh:
    t = (1.0 + 5 ** 0.5) / 2.0
    V = [(-1, t, 0), (1, t, 0), (-1, -t, 0), (1, -t, 0),
         (0, -1, t), (0, 1, t), (0, -1, -t), (0, 1, -t),
         (t, 0, -1), (t, 0, 1), (-t, 0, -1), (-t, 0, 1)]
    F = [(0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11),
         (1, 5, 9), (5, 11, 4), (11, 10, 2), (10, 7, 6), (7, 1, 8),
         (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8), (3, 8, 9),
         (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1)]
    V = [np.array(v, dtype=np.float64) / np.linalg.norm(v) for v in V]
    for _ in range(subdivisions):
        cache: dict[tuple[int, int], int] = {}

        def midpoint(i, j):
            key = (min(i, j), max(i, j))
            if key not in cache:
                m = V[i] + V[j]
                V.append(m / np.linalg.norm(m))
                cache[key] = len(V) - 1
            return cache[key]

        nf = []
        for a, b, c in F:
            ab, bc, ca = midpoint(a, b), midpoint(b, c), midpoint(c, a)
            nf += [(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)]
        F = nf
    return TriangleMesh(np.array(V) * radius, F)


def box(size=(1.0, 1.0, 1.0)) -> TriangleMesh:
    sx, sy, sz = (np.asarray(size, dtype=np.float64) / 2.0)
    V = np.array([[x, y, z] for x in (-sx, sx) for y in (-sy, sy) for z in (-sz, sz)])
    F = [(0, 1, 3), (0, 3, 2), (4, 6, 7), (4, 7, 5),
         (0, 4, 5), (0, 5, 1), (2, 3, 7), (2, 7, 6),
         (0, 2, 6), (0, 6, 4), (1, 5, 7), (1, 7, 3)]
    return TriangleMesh(V, F)


def bent_plate(width: float = 100.0, length: float = 60.0, dihedral_deg: float = 120.0,
               divisions: int = 6) -> TriangleMesh:
    """Two rectangular wings meeting along the local x axis at a dihedral angle.

    The opening faces +z, so the inside of the fold is the concave side.
    """
    half = np.radians(dihedral_deg) / 2.0
    wing = plate(width, length, divisions)
    V = wing.vertices.copy()
    V[:, 1] += length / 2.0  # hinge along y = 0
    out = []
    tris = []
    for sign in (1.0, -1.0):
        # rotate the wing about x so it opens upward by half the dihedral
        ang = sign * (np.pi / 2.0 - half)
        R = RigidPose.from_rotvec((ang, 0.0, 0.0)).rotation
        W = V.copy()
        W[:, 1] *= sign
        offset = sum(len(o) for o in out)
        out.append(W @ R.T)
        tris.append(wing.triangles + offset)
    verts = np.vstack(out)
    return TriangleMesh(verts, np.vstack(tris))
