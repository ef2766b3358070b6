"""Pure numpy implementations of the hot loops.

These define the reference semantics; the compiled module ``_kernels``
must agree with them to rounding.
"""

from __future__ import annotations

import itertools

import numpy as np


def interp_periodic(values: np.ndarray, points: np.ndarray, L: float) -> np.ndarray:
    """Periodic multilinear interpolation.

    Parameters
    ----------
    values : ndarray, shape (C, N, ..., N)
        Grid samples at ``x_i = i L / N``.
    points : ndarray, shape (M, d)
        Query points; any real coordinates (wrapped modulo ``L``).
    L : float
        Torus side.

    Returns
    -------
    ndarray, shape (M, C)
    """
    c = values.shape[0]
    n = values.shape[1]
    d = values.ndim - 1
    s = np.mod(points, L) * (n / L)
    i0 = np.floor(s).astype(np.intp)
    w = s - i0
    i0 %= n
    i1 = (i0 + 1) % n
    out = np.zeros((points.shape[0], c))
    flat = values.reshape(c, -1)
    strides = [n ** (d - 1 - a) for a in range(d)]
    for corner in itertools.product((0, 1), repeat=d):
        idx = np.zeros(points.shape[0], dtype=np.intp)
        wt = np.ones(points.shape[0])
        for a, bit in enumerate(corner):
            if bit:
                idx += i1[:, a] * strides[a]
                wt *= w[:, a]
            else:
                idx += i0[:, a] * strides[a]
                wt *= 1.0 - w[:, a]
        out += wt[:, None] * flat[:, idx].T
    return out


def vortex_run(pos0: np.ndarray, gam: np.ndarray, delta: float, dt: float, noise: np.ndarray):
    """Euler-Maruyama for a batch of point-vortex systems.

    Parameters
    ----------
    pos0 : ndarray, shape (R, N, 2)
    gam : ndarray, shape (N,)
    delta : float
        Blob radius; 0 gives the singular kernel.
    dt : float
    noise : ndarray, shape (S, R, N, 2)
        Pre-scaled Brownian increments.

    Returns
    -------
    traj : ndarray, shape (S + 1, R, N, 2)
    min_dist : ndarray, shape (S + 1, R)
    total : ndarray, shape (S + 1, R, 2)
        ``sum_i gam_i sum_{j != i} gam_j K(x_i - x_j)``, accumulated pair by
        pair so the two ordered terms of each pair cancel exactly.
    """
    steps, r, n, _ = noise.shape
    traj = np.empty((steps + 1, r, n, 2))
    traj[0] = pos0
    min_dist = np.full((steps + 1, r), np.inf)
    total = np.zeros((steps + 1, r, 2))
    x = pos0.copy()
    d2 = delta * delta
    for k in range(steps + 1):
        vel = np.zeros_like(x)
        md = np.full(r, np.inf)
        tot = np.zeros((r, 2))
        for i in range(n):
            for j in range(i + 1, n):
                dx = x[:, i, 0] - x[:, j, 0]
                dy = x[:, i, 1] - x[:, j, 1]
                rr = dx * dx + dy * dy
                md = np.minimum(md, np.sqrt(rr))
                den = rr + d2
                kx = dy / den
                ky = -dx / den
                vel[:, i, 0] += gam[j] * kx
                vel[:, i, 1] += gam[j] * ky
                vel[:, j, 0] += gam[i] * -kx
                vel[:, j, 1] += gam[i] * -ky
                c = gam[i] * gam[j]
                tot[:, 0] += c * kx
                tot[:, 0] += c * -kx
                tot[:, 1] += c * ky
                tot[:, 1] += c * -ky
        min_dist[k] = md
        total[k] = tot
        if k == steps:
            break
        x = x + vel * dt + noise[k]
        traj[k + 1] = x
    return traj, min_dist, total
