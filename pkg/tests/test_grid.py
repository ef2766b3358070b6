import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from superdrift.errors import ConfigurationError, GridMismatchError
from superdrift.grid import (
    Field, GridSpec, VectorField, check_same_grid, load_field, load_paths, save_field, save_paths,
)


def test_grid_requires_power_of_two():
    with pytest.raises(ConfigurationError):
        GridSpec(2, 1.0, 48, 1.0, 4)


def test_j_max_matches_direct_computation():
    # floor(log2(pi N / L)) - 1 with N=128, L=2 pi
    g = GridSpec(2, 2 * np.pi, 128, 1.0, 4)
    assert g.j_max == int(np.floor(np.log2(np.pi * 128 / (2 * np.pi)))) - 1 == 5


def test_field_slice_count_and_finiteness(grid2):
    with pytest.raises(ConfigurationError):
        Field(grid2, np.zeros((3,) + grid2.shape))
    bad = np.zeros(grid2.shape)
    bad[0, 0] = np.nan
    with pytest.raises(ConfigurationError):
        Field(grid2, bad)
    f = Field(grid2, np.ones(grid2.shape))
    assert f.n_slices == 1 and not f.time_dependent
    assert f.expand_time().n_slices == grid2.time_steps + 1


def test_field_is_read_only(grid2):
    f = Field(grid2, np.ones(grid2.shape))
    with pytest.raises(ValueError):
        f.slices[0, 0, 0] = 2.0


def test_time_interpolation_is_linear(grid2):
    f = Field.from_function(grid2, lambda t, x, y: t + 0 * x, time_dependent=True)
    np.testing.assert_allclose(f.at_time(0.3), 0.3, atol=1e-14)


def test_grid_mismatch():
    a = Field(GridSpec(2, 1.0, 16, 1.0, 2), np.zeros((16, 16)))
    b = Field(GridSpec(2, 2.0, 16, 1.0, 2), np.zeros((16, 16)))
    with pytest.raises(GridMismatchError):
        check_same_grid(a, b)


def test_spectral_derivative_of_single_mode(grid2):
    x, y = grid2.mesh()
    np.testing.assert_allclose(grid2.derivative(np.sin(3 * x), 0), 3 * np.cos(3 * x), atol=1e-12)


def test_field_roundtrip(tmp_path, grid2):
    rng = np.random.default_rng(0)
    f = Field(grid2, rng.standard_normal((grid2.time_steps + 1,) + grid2.shape), "rho")
    paths = save_field(f, tmp_path / "rho.fld")
    assert paths[1].name == "rho.fld.json"
    side = json.loads(paths[1].read_text())
    assert side["N"] == 64 and side["slices"] == grid2.time_steps + 1
    g = load_field(tmp_path / "rho.fld")
    np.testing.assert_array_equal(g.slices, f.slices)
    v = VectorField(grid2, rng.standard_normal((2, 1) + grid2.shape), "b", False)
    save_field(v, tmp_path / "b.fld")
    w = load_field(tmp_path / "b.fld")
    assert isinstance(w, VectorField)
    np.testing.assert_array_equal(w.data, v.data)


def test_paths_roundtrip(tmp_path):
    pos = np.random.default_rng(1).standard_normal((5, 4, 2))
    save_paths(pos, 0.1, tmp_path / "p.fld", "x")
    out, meta = load_paths(tmp_path / "p.fld")
    np.testing.assert_array_equal(out, pos)
    assert meta["dt"] == 0.1


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 3), st.sampled_from([8, 16, 32]), st.floats(0.5, 10.0))
def test_fft_roundtrip_property(d, n, L):
    g = GridSpec(d, L, n, 1.0, 1)
    a = np.random.default_rng(n + d).standard_normal(g.shape)
    np.testing.assert_allclose(g.ifft(g.fft(a)), a, atol=1e-12)
