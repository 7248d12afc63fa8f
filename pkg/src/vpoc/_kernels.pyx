# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled ray kernels. Same contract as :mod:`vpoc._kernels_py`."""

import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt, fabs, isnan, INFINITY

cnp.import_array()

cdef double EPS = 1e-9


cdef inline double _sphere_hit(double ox, double oy, double oz,
                               double dx, double dy, double dz,
                               const double[:, ::1] sp, Py_ssize_t s) noexcept nogil:
    cdef double cx = ox - sp[s, 0]
    cdef double cy = oy - sp[s, 1]
    cdef double cz = oz - sp[s, 2]
    cdef double a = dx * dx + dy * dy + dz * dz
    cdef double b = cx * dx + cy * dy + cz * dz
    cdef double c = cx * cx + cy * cy + cz * cz - sp[s, 3] * sp[s, 3]
    cdef double disc = b * b - a * c
    cdef double sq, t
    if disc < 0.0:
        return INFINITY
    sq = sqrt(disc)
    t = (-b - sq) / a
    if t > EPS:
        return t
    t = (-b + sq) / a
    if t > EPS:
        return t
    return INFINITY


cdef inline double _disk_hit(double ox, double oy, double oz,
                             double dx, double dy, double dz,
                             const double[:, ::1] dk, Py_ssize_t s) noexcept nogil:
    cdef double nx = dk[s, 3], ny = dk[s, 4], nz = dk[s, 5]
    cdef double ux = dk[s, 6], uy = dk[s, 7], uz = dk[s, 8]
    cdef double vx = ny * uz - nz * uy
    cdef double vy = nz * ux - nx * uz
    cdef double vz = nx * uy - ny * ux
    cdef double denom = dx * nx + dy * ny + dz * nz
    cdef double t, qx, qy, qz, a, b
    if fabs(denom) <= 1e-12:
        return INFINITY
    t = ((dk[s, 0] - ox) * nx + (dk[s, 1] - oy) * ny + (dk[s, 2] - oz) * nz) / denom
    if not (t > EPS):
        return INFINITY
    qx = ox + t * dx - dk[s, 0]
    qy = oy + t * dy - dk[s, 1]
    qz = oz + t * dz - dk[s, 2]
    a = (qx * ux + qy * uy + qz * uz) / dk[s, 9]
    b = (qx * vx + qy * vy + qz * vz) / dk[s, 10]
    if a * a + b * b <= 1.0:
        return t
    return INFINITY


def cast_rays(const double[:, ::1] origins, const double[:, ::1] dirs,
              const double[:, ::1] spheres, const double[:, ::1] disks,
              double ground_z):
    cdef Py_ssize_t n = origins.shape[0]
    cdef Py_ssize_t ns = spheres.shape[0]
    cdef Py_ssize_t nd = disks.shape[0]
    t_out = np.full(n, np.inf)
    kind_out = np.zeros(n, dtype=np.int8)
    idx_out = np.full(n, -1, dtype=np.int32)
    cdef double[::1] tv = t_out
    cdef cnp.int8_t[::1] kv = kind_out
    cdef cnp.int32_t[::1] iv = idx_out
    cdef Py_ssize_t i, s
    cdef double ox, oy, oz, dx, dy, dz, t, best, tg
    cdef bint use_ground = not isnan(ground_z)
    with nogil:
        for i in range(n):
            ox = origins[i, 0]; oy = origins[i, 1]; oz = origins[i, 2]
            dx = dirs[i, 0]; dy = dirs[i, 1]; dz = dirs[i, 2]
            best = INFINITY
            for s in range(ns):
                t = _sphere_hit(ox, oy, oz, dx, dy, dz, spheres, s)
                if t < best:
                    best = t
                    kv[i] = 1
                    iv[i] = <cnp.int32_t>s
            for s in range(nd):
                t = _disk_hit(ox, oy, oz, dx, dy, dz, disks, s)
                if t < best:
                    best = t
                    kv[i] = 2
                    iv[i] = <cnp.int32_t>s
            if use_ground and fabs(dz) > 1e-12:
                tg = (ground_z - oz) / dz
                if tg > EPS and tg < best:
                    best = tg
                    kv[i] = 3
                    iv[i] = 0
            tv[i] = best
    return t_out, kind_out, idx_out


def segments_blocked(const double[:, ::1] points, const double[::1] target,
                     const double[:, ::1] spheres, const double[:, ::1] disks,
                     Py_ssize_t skip_sphere):
    cdef Py_ssize_t n = points.shape[0]
    cdef Py_ssize_t ns = spheres.shape[0]
    cdef Py_ssize_t nd = disks.shape[0]
    out = np.zeros(n, dtype=bool)
    cdef cnp.npy_bool[::1] ov = out
    cdef Py_ssize_t i, s
    cdef double ox, oy, oz, dx, dy, dz
    cdef double lim = 1.0 - EPS
    cdef bint hit
    with nogil:
        for i in range(n):
            ox = points[i, 0]; oy = points[i, 1]; oz = points[i, 2]
            dx = target[0] - ox; dy = target[1] - oy; dz = target[2] - oz
            hit = False
            for s in range(ns):
                if s == skip_sphere:
                    continue
                if _sphere_hit(ox, oy, oz, dx, dy, dz, spheres, s) < lim:
                    hit = True
                    break
            if not hit:
                for s in range(nd):
                    if _disk_hit(ox, oy, oz, dx, dy, dz, disks, s) < lim:
                        hit = True
                        break
            ov[i] = hit
    return out
