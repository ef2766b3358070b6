"""Backend selection for the hot loops.

The compiled extension ``superdrift._kernels`` is used when it imports and
the environment variable ``SUPERDRIFT_PURE_PYTHON`` is unset or ``0``.
Otherwise the numpy reference implementations run.  ``BACKEND`` names the
active choice.  The compiled interpolation covers two dimensions only;
other dimensions always use numpy.
"""

from __future__ import annotations

import os

import numpy as np

from . import _pykernels

__all__ = ["BACKEND", "interp_periodic", "vortex_run"]


def _load():
    if os.environ.get("SUPERDRIFT_PURE_PYTHON", "0") not in ("", "0"):
        return None
    try:
        from . import _kernels
    except ImportError:
        return None
    return _kernels


_compiled = _load()
BACKEND = "cython" if _compiled is not None else "python"


def interp_periodic(values: np.ndarray, points: np.ndarray, L: float) -> np.ndarray:
    """Periodic multilinear interpolation, ``(C, N, ..., N)`` at ``(M, d)`` -> ``(M, C)``."""
    if _compiled is not None and values.ndim == 3:
        return _compiled.interp_periodic(
            np.ascontiguousarray(values, dtype=np.float64),
            np.ascontiguousarray(points, dtype=np.float64),
            float(L),
        )
    return _pykernels.interp_periodic(values, points, L)


def vortex_run(pos0, gam, delta, dt, noise):
    """Batch point-vortex stepping; see :func:`superdrift._pykernels.vortex_run`."""
    args = (
        np.ascontiguousarray(pos0, dtype=np.float64),
        np.ascontiguousarray(gam, dtype=np.float64),
        float(delta),
        float(dt),
        np.ascontiguousarray(noise, dtype=np.float64),
    )
    if _compiled is not None:
        return _compiled.vortex_run(*args)
    return _pykernels.vortex_run(*args)
