"""Median-split bounding volume hierarchy over a triangle mesh.

The traversal kernel is compiled (``reflnbv._kernels``) when the extension
was built, otherwise the numpy fallback in ``reflnbv._kernels_py`` is used.
Set ``REFLNBV_PURE_PYTHON=1`` to force the fallback.
"""

from __future__ import annotations

import os

import numpy as np

from . import _kernels_py
from .mesh import TriangleMesh


try:
    if os.environ.get("REFLNBV_PURE_PYTHON"):
        raise ImportError("pure-python backend forced")
    from . import _kernels as _compiled
except ImportError:  # pragma: no cover - depends on build
    _compiled = None

BACKENDS = {"python": _kernels_py.intersect_bvh}
if _compiled is not None:
    BACKENDS["compiled"] = _compiled.intersect_bvh
BACKEND = "compiled" if _compiled is not None else "python"

LEAF_SIZE = 4


class MeshBVH:
    """Flat BVH arrays plus the triangles reordered to match leaf ranges."""

    def __init__(self, mesh: TriangleMesh, leaf_size: int = LEAF_SIZE):
        self.mesh = mesh
        V, F = mesh.vertices, mesh.triangles
        a, b, c = V[F[:, 0]], V[F[:, 1]], V[F[:, 2]]
        lo = np.minimum(np.minimum(a, b), c)
        hi = np.maximum(np.maximum(a, b), c)
        cent = (lo + hi) / 2.0

        order = np.arange(len(F))
        node_min, node_max, left, right, start, count = [], [], [], [], [], []

        def new_node(s, e):
            idx = order[s:e]
            node_min.append(lo[idx].min(axis=0) if e > s else np.zeros(3))
            node_max.append(hi[idx].max(axis=0) if e > s else np.zeros(3))
            left.append(-1)
            right.append(-1)
            start.append(s)
            count.append(e - s)
            return len(left) - 1

        if len(F):
            stack = [(new_node(0, len(F)), 0, len(F))]
            while stack:
                node, s, e = stack.pop()
                if e - s <= leaf_size:
                    continue
                idx = order[s:e]
                extent = np.ptp(cent[idx], axis=0)
                axis = int(np.argmax(extent))
                if extent[axis] <= 0.0:
                    continue
                mid = (e - s) // 2
                part = np.argsort(cent[idx, axis], kind="stable")
                order[s:e] = idx[part]
                m = s + mid
                lch, rch = new_node(s, m), new_node(m, e)
                left[node], right[node] = lch, rch
                count[node] = 0
                stack.append((rch, m, e))
                stack.append((lch, s, m))

        self.node_min = np.ascontiguousarray(node_min, dtype=np.float64).reshape(-1, 3)
        self.node_max = np.ascontiguousarray(node_max, dtype=np.float64).reshape(-1, 3)
        self.node_left = np.asarray(left, dtype=np.int64)
        self.node_right = np.asarray(right, dtype=np.int64)
        self.node_start = np.asarray(start, dtype=np.int64)
        self.node_count = np.asarray(count, dtype=np.int64)
        self.tri_index = order
        self.v0 = np.ascontiguousarray(a[order])
        self.e1 = np.ascontiguousarray(b[order] - a[order])
        self.e2 = np.ascontiguousarray(c[order] - a[order])

    def intersect(self, origins, dirs, tmin=1e-9, tmax=np.inf, any_hit=False, backend=None):
        """Closest hit along each ray.

        Returns ``(t, triangle)`` with ``t = inf`` and ``triangle = -1`` on a
        miss. Hits are accepted on the open interval ``(tmin, tmax)``. With
        ``any_hit`` the traversal stops at the first hit found, so only the
        hit/miss outcome is meaningful.
        """
        origins = np.ascontiguousarray(np.broadcast_to(origins, np.shape(dirs)), dtype=np.float64)
        dirs = np.ascontiguousarray(dirs, dtype=np.float64)
        shape = dirs.shape[:-1]
        o = origins.reshape(-1, 3)
        d = dirs.reshape(-1, 3)
        n = len(d)
        tmin = np.ascontiguousarray(np.broadcast_to(tmin, shape), dtype=np.float64).reshape(n)
        tmax = np.ascontiguousarray(np.broadcast_to(tmax, shape), dtype=np.float64).reshape(n)
        kernel = BACKENDS[backend or BACKEND]
        t, tri = kernel(o, d, tmin, tmax, self.node_min, self.node_max, self.node_left,
                        self.node_right, self.node_start, self.node_count,
                        self.v0, self.e1, self.e2, any_hit)
        tri = np.where(tri >= 0, self.tri_index[np.maximum(tri, 0)], -1)
        return t.reshape(shape), tri.reshape(shape)

