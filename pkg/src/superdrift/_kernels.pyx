# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled versions of the two-dimensional hot loops in ``_pykernels``."""

import numpy as np
cimport numpy as cnp
from libc.math cimport floor, sqrt, INFINITY

cnp.import_array()


def interp_periodic(const double[:, :, ::1] values, const double[:, ::1] points, double L):
    """Periodic bilinear interpolation; see ``_pykernels.interp_periodic``."""
    cdef Py_ssize_t c = values.shape[0]
    cdef Py_ssize_t n = values.shape[1]
    cdef Py_ssize_t m = points.shape[0]
    cdef Py_ssize_t p, k, i0, j0, i1, j1
    cdef double sx, sy, wx, wy, scale = n / L
    out_arr = np.empty((m, c))
    cdef double[:, ::1] out = out_arr
    with nogil:
        for p in range(m):
            sx = points[p, 0] - L * floor(points[p, 0] / L)
            sy = points[p, 1] - L * floor(points[p, 1] / L)
            sx = sx * scale
            sy = sy * scale
            i0 = <Py_ssize_t>floor(sx)
            j0 = <Py_ssize_t>floor(sy)
            wx = sx - i0
            wy = sy - j0
            i0 = i0 % n
            j0 = j0 % n
            i1 = (i0 + 1) % n
            j1 = (j0 + 1) % n
            for k in range(c):
                out[p, k] = ((1.0 - wx) * (1.0 - wy) * values[k, i0, j0]
                             + (1.0 - wx) * wy * values[k, i0, j1]
                             + wx * (1.0 - wy) * values[k, i1, j0]
                             + wx * wy * values[k, i1, j1])
    return out_arr


def vortex_run(const double[:, :, ::1] pos0, const double[::1] gam, double delta, double dt,
               const double[:, :, :, ::1] noise):
    """Batch point-vortex Euler-Maruyama; see ``_pykernels.vortex_run``."""
    cdef Py_ssize_t steps = noise.shape[0]
    cdef Py_ssize_t r = noise.shape[1]
    cdef Py_ssize_t n = noise.shape[2]
    traj_arr = np.empty((steps + 1, r, n, 2))
    md_arr = np.empty((steps + 1, r))
    tot_arr = np.empty((steps + 1, r, 2))
    vel_arr = np.empty((n, 2))
    cdef double[:, :, :, ::1] traj = traj_arr
    cdef double[:, ::1] md = md_arr
    cdef double[:, :, ::1] tot = tot_arr
    cdef double[:, ::1] vel = vel_arr
    cdef Py_ssize_t q, k, i, j
    cdef double dx, dy, rr, den, kx, ky, c, d2 = delta * delta, mind, tx, ty
    with nogil:
        for q in range(r):
            for i in range(n):
                traj[0, q, i, 0] = pos0[q, i, 0]
                traj[0, q, i, 1] = pos0[q, i, 1]
            for k in range(steps + 1):
                for i in range(n):
                    vel[i, 0] = 0.0
                    vel[i, 1] = 0.0
                mind = INFINITY
                tx = 0.0
                ty = 0.0
                for i in range(n):
                    for j in range(i + 1, n):
                        dx = traj[k, q, i, 0] - traj[k, q, j, 0]
                        dy = traj[k, q, i, 1] - traj[k, q, j, 1]
                        rr = dx * dx + dy * dy
                        if sqrt(rr) < mind:
                            mind = sqrt(rr)
                        den = rr + d2
                        kx = dy / den
                        ky = -dx / den
                        vel[i, 0] += gam[j] * kx
                        vel[i, 1] += gam[j] * ky
                        vel[j, 0] += gam[i] * -kx
                        vel[j, 1] += gam[i] * -ky
                        c = gam[i] * gam[j]
                        tx += c * kx
                        tx += c * -kx
                        ty += c * ky
                        ty += c * -ky
                md[k, q] = mind
                tot[k, q, 0] = tx
                tot[k, q, 1] = ty
                if k == steps:
                    break
                for i in range(n):
                    traj[k + 1, q, i, 0] = traj[k, q, i, 0] + vel[i, 0] * dt + noise[k, q, i, 0]
                    traj[k + 1, q, i, 1] = traj[k, q, i, 1] + vel[i, 1] * dt + noise[k, q, i, 1]
    return traj_arr, md_arr, tot_arr
