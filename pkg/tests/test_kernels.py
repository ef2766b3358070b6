import os
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from superdrift import _pykernels, kernels

try:
    from superdrift import _kernels
except ImportError:
    _kernels = None

compiled = pytest.mark.skipif(_kernels is None, reason="compiled extension not built")


def test_interp_reproduces_grid_values():
    rng = np.random.default_rng(0)
    vals = rng.standard_normal((2, 8, 8))
    idx = np.stack(np.indices((8, 8)), axis=-1).reshape(-1, 2)
    pts = idx * (3.0 / 8) + 3.0 * rng.integers(-2, 3, idx.shape)
    out = _pykernels.interp_periodic(vals, pts, 3.0)
    np.testing.assert_allclose(out, vals.reshape(2, -1).T, atol=1e-12)


def test_interp_linear_in_each_cell():
    vals = np.zeros((1, 4, 4))
    vals[0, 1, 0] = 1.0
    out = _pykernels.interp_periodic(vals, np.array([[0.5, 0.0], [1.5, 0.0], [0.25, 0.25]]), 4.0)
    np.testing.assert_allclose(out[:, 0], [0.5, 0.5, 0.1875])


@compiled
@settings(max_examples=25, deadline=None)
@given(st.integers(2, 24), st.integers(1, 3), st.integers(0, 2**31))
def test_interp_backends_agree(n, c, seed):
    rng = np.random.default_rng(seed)
    vals = rng.standard_normal((c, n, n))
    pts = rng.uniform(-5, 5, (200, 2))
    np.testing.assert_allclose(_kernels.interp_periodic(vals, pts, 1.7),
                               _pykernels.interp_periodic(vals, pts, 1.7), rtol=1e-12, atol=1e-13)


@compiled
@pytest.mark.parametrize("delta", [0.0, 0.1])
def test_vortex_backends_agree(delta):
    rng = np.random.default_rng(1)
    pos0 = rng.uniform(-1, 1, (3, 5, 2))
    gam = rng.uniform(-1, 1, 5)
    noise = rng.standard_normal((50, 3, 5, 2)) * 0.01
    a = _kernels.vortex_run(pos0, gam, delta, 1e-3, noise)
    b = _pykernels.vortex_run(pos0, gam, delta, 1e-3, noise)
    for x, y in zip(a, b):
        np.testing.assert_allclose(x, y, rtol=1e-12, atol=1e-14)


def test_readonly_inputs_accepted():
    vals = np.ones((1, 4, 4))
    vals.setflags(write=False)
    pts = np.zeros((3, 2))
    pts.setflags(write=False)
    np.testing.assert_allclose(kernels.interp_periodic(vals, pts, 1.0), 1.0)


def test_three_dimensional_interp_uses_numpy():
    rng = np.random.default_rng(2)
    vals = rng.standard_normal((1, 4, 4, 4))
    pts = rng.uniform(0, 1, (10, 3))
    np.testing.assert_array_equal(kernels.interp_periodic(vals, pts, 1.0),
                                  _pykernels.interp_periodic(vals, pts, 1.0))


def _backend_with(env_value):
    env = dict(os.environ)
    if env_value is None:
        env.pop("SUPERDRIFT_PURE_PYTHON", None)
    else:
        env["SUPERDRIFT_PURE_PYTHON"] = env_value
    out = subprocess.run([sys.executable, "-c", "from superdrift import kernels; print(kernels.BACKEND)"],
                         env=env, capture_output=True, text=True, check=True)
    return out.stdout.strip()


def test_pure_python_fallback_selected():
    assert _backend_with("1") == "python"
    expected = "cython" if _kernels is not None else "python"
    assert _backend_with(None) == expected
    assert _backend_with("0") == expected
