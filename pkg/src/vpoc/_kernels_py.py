"""Pure-numpy ray kernels; reference implementation and fallback for ``_kernels``.

Primitive layouts (float64, C-contiguous):

spheres
    ``(S, 4)`` rows of ``cx, cy, cz, radius``.
disks
    ``(D, 11)`` rows of ``cx, cy, cz, nx, ny, nz, ux, uy, uz, semi_u, semi_v``
    where ``n`` is the unit normal and ``u`` a unit in-plane axis.
"""

import numpy as np

EPS = 1e-9

HIT_NONE = 0
HIT_SPHERE = 1
HIT_DISK = 2
HIT_GROUND = 3


def _sphere_t(origins, dirs, spheres):
    # (N, S) nearest positive root, inf where missed
    oc = origins[:, None, :] - spheres[None, :, :3]
    a = np.einsum("nk,nk->n", dirs, dirs)[:, None]
    b = np.einsum("nsk,nk->ns", oc, dirs)
    c = np.einsum("nsk,nsk->ns", oc, oc) - spheres[None, :, 3] ** 2
    disc = b * b - a * c
    hit = disc >= 0.0
    sq = np.sqrt(np.where(hit, disc, 0.0))
    t0 = (-b - sq) / a
    t1 = (-b + sq) / a
    t = np.where(t0 > EPS, t0, t1)
    return np.where(hit & (t > EPS), t, np.inf)


def _disk_t(origins, dirs, disks):
    n = disks[:, 3:6]
    u = disks[:, 6:9]
    v = np.cross(n, u)
    denom = dirs @ n.T
    rel = disks[None, :, :3] - origins[:, None, :]
    num = np.einsum("ndk,dk->nd", rel, n)
    ok = np.abs(denom) > 1e-12
    t = np.where(ok, num / np.where(ok, denom, 1.0), 0.0)
    q = origins[:, None, :] + t[..., None] * dirs[:, None, :] - disks[None, :, :3]
    a = np.einsum("ndk,dk->nd", q, u) / disks[None, :, 9]
    b = np.einsum("ndk,dk->nd", q, v) / disks[None, :, 10]
    inside = ok & (a * a + b * b <= 1.0) & (t > EPS)
    return np.where(inside, t, np.inf)


def cast_rays(origins, dirs, spheres, disks, ground_z):
    """Nearest hit per ray.

    Returns ``(t, kind, index)``; ``kind`` is one of the ``HIT_*`` codes and
    ``t`` is ``inf`` for rays that hit nothing. ``ground_z`` may be ``nan`` to
    disable the ground plane.
    """
    n = origins.shape[0]
    best_t = np.full(n, np.inf)
    kind = np.zeros(n, dtype=np.int8)
    index = np.full(n, -1, dtype=np.int32)
    if spheres.shape[0]:
        ts = _sphere_t(origins, dirs, spheres)
        j = np.argmin(ts, axis=1)
        tj = ts[np.arange(n), j]
        upd = tj < best_t
        best_t[upd] = tj[upd]
        kind[upd] = HIT_SPHERE
        index[upd] = j[upd]
    if disks.shape[0]:
        td = _disk_t(origins, dirs, disks)
        j = np.argmin(td, axis=1)
        tj = td[np.arange(n), j]
        upd = tj < best_t
        best_t[upd] = tj[upd]
        kind[upd] = HIT_DISK
        index[upd] = j[upd]
    if not np.isnan(ground_z):
        dz = dirs[:, 2]
        with np.errstate(divide="ignore", invalid="ignore"):
            tg = (ground_z - origins[:, 2]) / dz
        tg = np.where((np.abs(dz) > 1e-12) & (tg > EPS), tg, np.inf)
        upd = tg < best_t
        best_t[upd] = tg[upd]
        kind[upd] = HIT_GROUND
        index[upd] = 0
    return best_t, kind, index


def segments_blocked(points, target, spheres, disks, skip_sphere):
    """True where the open segment ``points[i] -> target`` meets a primitive.

    Sphere ``skip_sphere`` (use -1 for none) is ignored, so a surface point is
    never blocked by its own sphere.
    """
    n = points.shape[0]
    dirs = target[None, :] - points
    blocked = np.zeros(n, dtype=bool)
    if spheres.shape[0]:
        ts = _sphere_t(points, dirs, spheres)
        if 0 <= skip_sphere < spheres.shape[0]:
            ts[:, skip_sphere] = np.inf
        blocked |= np.any(ts < 1.0 - EPS, axis=1)
    if disks.shape[0]:
        td = _disk_t(points, dirs, disks)
        blocked |= np.any(td < 1.0 - EPS, axis=1)
    return blocked
