"""Triangle mesh files: PLY (ASCII or binary) and OBJ. Polygons are fan-triangulated."""

from __future__ import annotations

from pathlib import Path

import numpy as np
from plyfile import PlyData, PlyElement

from .mesh import TriangleMesh


def _fan(polys):
    tris = []
    for p in polys:
        p = list(p)
        if len(p) < 3:
            continue
        tris.extend((p[0], p[i], p[i + 1]) for i in range(1, len(p) - 1))
    return np.asarray(tris, dtype=np.int64).reshape(-1, 3)


def read_ply(path) -> TriangleMesh:
    ply = PlyData.read(str(path))
    v = ply["vertex"]
    vertices = np.column_stack([v["x"], v["y"], v["z"]]).astype(np.float64)
    face = ply["face"]
    name = "vertex_indices" if "vertex_indices" in face.data.dtype.names else "vertex_index"
    return TriangleMesh(vertices, _fan(face[name]))


def read_obj(path) -> TriangleMesh:
    verts, polys = [], []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        parts = line.split()
        if not parts:
            continue
        if parts[0] == "v":
            verts.append([float(x) for x in parts[1:4]])
        elif parts[0] == "f":
            idx = []
            for tok in parts[1:]:
                i = int(tok.split("/")[0])
                if i == 0:
                    raise ValueError(f"{path}:{lineno}: OBJ indices start at 1")
                idx.append(i - 1 if i > 0 else len(verts) + i)
            polys.append(idx)
    return TriangleMesh(np.asarray(verts, dtype=np.float64).reshape(-1, 3), _fan(polys))


def load_mesh(path) -> TriangleMesh:
    path = Path(path)
    ext = path.suffix.lower()
    if ext == ".ply":
        return read_ply(path)
    if ext == ".obj":
        return read_obj(path)
    raise ValueError(f"{path}: unsupported mesh format {ext!r} (use .ply or .obj)")


def save_mesh(path, mesh: TriangleMesh, binary: bool = True) -> None:
    path = Path(path)
    if path.suffix.lower() == ".obj":
        lines = [f"v {x:.9g} {y:.9g} {z:.9g}" for x, y, z in mesh.vertices]
        lines += [f"f {a + 1} {b + 1} {c + 1}" for a, b, c in mesh.triangles]
        path.write_text("\n".join(lines) + "\n")
        return
    vert = np.array([tuple(p) for p in mesh.vertices],
                    dtype=[("x", "f8"), ("y", "f8"), ("z", "f8")])
    face = np.empty(len(mesh.triangles), dtype=[("vertex_indices", "i4", (3,))])
    face["vertex_indices"] = mesh.triangles
    PlyData([PlyElement.describe(vert, "vertex"), PlyElement.describe(face, "face")],
            text=not binary).write(str(path))
