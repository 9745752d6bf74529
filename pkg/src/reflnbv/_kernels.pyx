# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled closest-hit / any-hit ray traversal of a flat BVH."""

import numpy as np
cimport numpy as cnp
from libc.math cimport INFINITY, fabs, fmin, fmax, isinf

cnp.import_array()

cdef double DET_EPS = 1e-12
cdef enum:
    STACK_SIZE = 128


cdef inline bint _slab(const double* o, const double* inv, const double[:, ::1] bmin,
                       const double[:, ::1] bmax, Py_ssize_t node, double tmin,
                       double tbest) noexcept nogil:
    cdef double tnear = -INFINITY, tfar = INFINITY, ta, tb
    cdef int k
    for k in range(3):
        if isinf(inv[k]):
            # ray parallel to this slab: inside or out, independent of t
            if o[k] < bmin[node, k] or o[k] > bmax[node, k]:
                return False
            continue
        ta = (bmin[node, k] - o[k]) * inv[k]
        tb = (bmax[node, k] - o[k]) * inv[k]
        tnear = fmax(tnear, fmin(ta, tb))
        tfar = fmin(tfar, fmax(ta, tb))
    return tnear <= tfar and tfar >= tmin and tnear <= tbest


def intersect_bvh(const double[:, ::1] origins, const double[:, ::1] dirs,
                  const double[::1] tmin, const double[::1] tmax,
                  const double[:, ::1] node_min, const double[:, ::1] node_max,
                  const cnp.int64_t[::1] node_left, const cnp.int64_t[::1] node_right,
                  const cnp.int64_t[::1] node_start, const cnp.int64_t[::1] node_count,
                  const double[:, ::1] v0, const double[:, ::1] e1, const double[:, ::1] e2,
                  bint any_hit=False):
    cdef Py_ssize_t n = origins.shape[0]
    t_out = np.full(n, np.inf)
    tri_out = np.full(n, -1, dtype=np.int64)
    cdef double[::1] t_view = t_out
    cdef cnp.int64_t[::1] tri_view = tri_out
    if n == 0 or node_min.shape[0] == 0:
        return t_out, tri_out

    cdef Py_ssize_t r, node, j, top
    cdef cnp.int64_t stack[STACK_SIZE]
    cdef double inv[3]
    cdef double o[3]
    cdef double d0, d1, d2, px, py, pz, det, idet, sx, sy, sz, qx, qy, qz, u, v, t, tbest
    cdef cnp.int64_t best
    cdef int k
    with nogil:
        for r in range(n):
            for k in range(3):
                o[k] = origins[r, k]
                inv[k] = 1.0 / dirs[r, k]
            d0 = dirs[r, 0]
            d1 = dirs[r, 1]
            d2 = dirs[r, 2]
            tbest = tmax[r]
            best = -1
            top = 0
            stack[top] = 0
            top += 1
            while top > 0:
                top -= 1
                node = stack[top]
                if not _slab(o, inv, node_min, node_max, node, tmin[r], tbest):
                    continue
                if node_left[node] < 0:
                    for j in range(node_start[node], node_start[node] + node_count[node]):
                        px = d1 * e2[j, 2] - d2 * e2[j, 1]
                        py = d2 * e2[j, 0] - d0 * e2[j, 2]
                        pz = d0 * e2[j, 1] - d1 * e2[j, 0]
                        det = e1[j, 0] * px + e1[j, 1] * py + e1[j, 2] * pz
                        if fabs(det) <= DET_EPS:
                            continue
                        idet = 1.0 / det
                        sx = o[0] - v0[j, 0]
                        sy = o[1] - v0[j, 1]
                        sz = o[2] - v0[j, 2]
                        u = (sx * px + sy * py + sz * pz) * idet
                        if u < 0.0 or u > 1.0:
                            continue
                        qx = sy * e1[j, 2] - sz * e1[j, 1]
                        qy = sz * e1[j, 0] - sx * e1[j, 2]
                        qz = sx * e1[j, 1] - sy * e1[j, 0]
                        v = (d0 * qx + d1 * qy + d2 * qz) * idet
                        if v < 0.0 or u + v > 1.0:
                            continue
                        t = (e2[j, 0] * qx + e2[j, 1] * qy + e2[j, 2] * qz) * idet
                        if t > tmin[r] and t < tbest:
                            tbest = t
                            best = j
                    if any_hit and best >= 0:
                        break
                else:
                    if top + 2 > STACK_SIZE:
                        break  # unreachable for balanced median-split trees
                    stack[top] = node_right[node]
                    stack[top + 1] = node_left[node]
                    top += 2
            if best >= 0:
                t_view[r] = tbest
                tri_view[r] = best
    return t_out, tri_out
