"""Pure-numpy ray/BVH traversal, used when the compiled kernel is unavailable.

Rays are traversed as packets: each BVH node is visited with the subset of
rays whose slab test passes and whose current closest hit lies beyond the
box entry. Results match ``_kernels.intersect_bvh``.
"""

import numpy as np

DET_EPS = 1e-12


def _triangles_hit(o, d, tmin, tbest, v0, e1, e2):
    # Moller-Trumbore on a (rays x triangles) block, two-sided
    p = np.cross(d[:, None, :], e2[None, :, :])
    det = np.einsum("rtk,tk->rt", p, e1)
    ok = np.abs(det) > DET_EPS
    inv = np.where(ok, 1.0 / np.where(ok, det, 1.0), 0.0)
    s = o[:, None, :] - v0[None, :, :]
    u = np.einsum("rtk,rtk->rt", s, p) * inv
    q = np.cross(s, e1[None, :, :])
    v = np.einsum("rk,rtk->rt", d, q) * inv
    t = np.einsum("tk,rtk->rt", e2, q) * inv
    hit = ok & (u >= 0.0) & (v >= 0.0) & (u + v <= 1.0) & (t > tmin[:, None]) & (t < tbest[:, None])
    return np.where(hit, t, np.inf)


def intersect_bvh(origins, dirs, tmin, tmax, node_min, node_max, node_left, node_right,
                  node_start, node_count, v0, e1, e2, any_hit=False):
    n = len(origins)
    t_best = np.array(tmax, dtype=np.float64, copy=True)
    tri_best = np.full(n, -1, dtype=np.int64)
    if n == 0 or len(node_min) == 0:
        return np.where(tri_best >= 0, t_best, np.inf), tri_best
    tmin = np.asarray(tmin, dtype=np.float64)
    with np.errstate(divide="ignore"):
        inv = 1.0 / dirs
    done = np.zeros(n, dtype=bool)
    stack = [(0, np.arange(n))]
    while stack:
        node, rays = stack.pop()
        if any_hit:
            rays = rays[~done[rays]]
        o = origins[rays]
        iv = inv[rays]
        with np.errstate(invalid="ignore"):
            ta = (node_min[node] - o) * iv
            tb = (node_max[node] - o) * iv
        # a ray parallel to a slab is inside it for every t or for none
        par = np.isinf(iv)
        outside = par & ((o < node_min[node]) | (o > node_max[node]))
        tnear = np.where(par, -np.inf, np.minimum(ta, tb)).max(axis=1)
        tfar = np.where(par, np.inf, np.maximum(ta, tb)).min(axis=1)
        keep = ((tnear <= tfar) & (tfar >= tmin[rays]) & (tnear <= t_best[rays])
                & ~outside.any(axis=1))
        rays = rays[keep]
        if rays.size == 0:
            continue
        if node_left[node] < 0:
            s, c = node_start[node], node_count[node]
            th = _triangles_hit(origins[rays], dirs[rays], tmin[rays], t_best[rays],
                                v0[s:s + c], e1[s:s + c], e2[s:s + c])
            j = np.argmin(th, axis=1)
            tj = th[np.arange(len(rays)), j]
            better = np.isfinite(tj)
            r = rays[better]
            t_best[r] = tj[better]
            tri_best[r] = s + j[better]
            if any_hit:
                done[r] = True
        else:
            stack.append((node_right[node], rays))
            stack.append((node_left[node], rays))
    t_out = np.where(tri_best >= 0, t_best, np.inf)
    return t_out, tri_best
