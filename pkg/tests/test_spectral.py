import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.integrate import quad

from conftest import dealiased, random_band_limited
from superdrift.errors import ConfigurationError, GridMismatchError
from superdrift.grid import Field, GridSpec, VectorField
from superdrift.spectral import (
    BesovIndex, besov_norm, bessel_norm, blocks, bump_profile, b_space_norm_estimate, build_partition,
    drift_gradient_decomp, dyadic_block, low_cutoff, lp_norm, paraproduct_low, paraproduct_resonant,
)


def _h_quad(r):
    """Independent profile oracle: 1 - normalised bump integral over [1/2, 2/3]."""
    if r <= 0.5:
        return 1.0
    if r >= 2 / 3:
        return 0.0
    bump = lambda s: math.exp(-1.0 / (1.0 - s * s))
    total = quad(bump, -1, 1, epsabs=1e-14)[0]
    t = (r - 0.5) * 12 - 1
    return 1.0 - quad(bump, -1, t, epsabs=1e-14)[0] / total


def _mode_index(k):
    return (k, 0)


def test_profile_matches_quadrature_oracle():
    for r in np.linspace(0.45, 0.7, 27):
        assert abs(bump_profile(np.array([r]))[0] - _h_quad(r)) < 1e-12


def test_partition_of_unity_on_resolved_modes(part2):
    total = part2.multipliers.sum(axis=0)
    mask = part2.resolved_mask()
    assert np.abs(total[mask] - 1).max() <= 1e-12


def test_zero_frequency(part2):
    assert part2.phi(-1)[0, 0] == 1.0
    for j in range(part2.j_max + 1):
        assert part2.phi(j)[0, 0] == 0.0


def test_block_scaling(part2, grid2):
    r = grid2.lattice_radius
    phi0 = lambda s: np.vectorize(_h_quad)(s / 2) - np.vectorize(_h_quad)(s)
    mask = part2.resolved_mask()
    for j in range(part2.j_max + 1):
        np.testing.assert_allclose(part2.phi(j)[mask], phi0(r / 2**j)[mask], atol=1e-12)


def test_annulus_support(part2, grid2):
    r = grid2.lattice_radius
    for j in range(part2.j_max + 1):
        outside = (r < 2**j / 2 - 1e-12) | (r > 2 ** (j + 2) / 3 + 1e-12)
        assert np.all(part2.phi(j)[outside] == 0)


def test_constant_lives_in_lowest_block(part2, grid2):
    f = Field(grid2, np.full(grid2.shape, 3.0))
    np.testing.assert_allclose(dyadic_block(f, -1, part2).slices, 3.0, atol=1e-14)
    for j in range(part2.j_max + 1):
        assert np.abs(dyadic_block(f, j, part2).slices).max() < 1e-14


def test_single_mode_blocks(part2, grid2):
    x, _ = grid2.mesh()
    k = 5  # between 2^2 and 2^3
    f = np.cos(k * x)
    total = np.zeros_like(f)
    for i in range(-1, part2.j_max + 1):
        ri = dyadic_block(f, i, part2)
        np.testing.assert_allclose(ri, part2.phi(i)[_mode_index(k)] * f, atol=1e-12)
        total += ri
    np.testing.assert_allclose(total, f, atol=1e-12)


def test_low_cutoff_conventions(part2, grid2):
    f = random_band_limited(grid2, 1)
    assert np.abs(low_cutoff(f, -1, part2)).max() == 0
    np.testing.assert_allclose(low_cutoff(f, 0, part2), dyadic_block(f, -1, part2), atol=1e-14)
    np.testing.assert_allclose(low_cutoff(f, part2.j_max + 2, part2), f, atol=1e-12)
    # on the lattice only k = 0 has phi_{-1} = 1
    c = np.full(grid2.shape, 2.5)
    np.testing.assert_allclose(low_cutoff(c, 0, part2), c, atol=1e-14)
    np.testing.assert_allclose(low_cutoff(c, 1, part2), c, atol=1e-14)


def test_besov_of_zero_and_single_mode(part2, grid2):
    assert besov_norm(np.zeros(grid2.shape), BesovIndex(0.5, 2, 2), part2) == 0
    x, _ = grid2.mesh()
    k, alpha = 5, 0.7
    f = np.cos(k * x)
    oracle = max(2 ** (alpha * i) * abs(part2.phi(i)[_mode_index(k)]) for i in range(-1, part2.j_max + 1))
    assert besov_norm(f, BesovIndex(alpha, math.inf, math.inf), part2) == pytest.approx(oracle, rel=1e-12)


def test_white_noise_block_slope():
    g = GridSpec(2, 2 * np.pi, 64, 1.0, 1)
    part = build_partition(g)
    rng = np.random.default_rng(3)
    acc = np.zeros(part.n_blocks)
    for _ in range(100):
        acc += lp_norm(blocks(rng.standard_normal(g.shape), part), g, 2.0) ** 2
    js = np.arange(2, part.j_max + 1)
    slope = np.polyfit(js, 0.5 * np.log2(acc[js + 1] / 100), 1)[0]
    assert abs(slope - 1.0) <= 0.1


def test_bessel_norm_oracles(grid2):
    x, y = grid2.mesh()
    f = np.cos(3 * x + 2 * y)
    assert bessel_norm(f, 0, 3.0, grid2) == pytest.approx(float(lp_norm(f, grid2, 3.0)), rel=1e-14)
    for a in (-1.3, 0.5, 2.0):
        assert bessel_norm(f, a, 2, grid2) == pytest.approx((1 + 13) ** (a / 2) * float(lp_norm(f, grid2, 2)),
                                                            rel=1e-12)
    g = random_band_limited(grid2, 4)
    assert bessel_norm(grid2.derivative(g, 0), -1, 2, grid2) <= float(lp_norm(g, grid2, 2)) * (1 + 1e-12)


def test_paraproduct_with_constant(part2, grid2):
    g = random_band_limited(grid2, 5)
    one = np.ones(grid2.shape)
    oracle = g - dyadic_block(g, -1, part2) - dyadic_block(g, 0, part2)
    np.testing.assert_allclose(paraproduct_low(one, g, part2), oracle, atol=1e-12)
    assert np.abs(paraproduct_low(np.zeros(grid2.shape), g, part2)).max() == 0
    assert np.abs(paraproduct_resonant(np.zeros(grid2.shape), g, part2)).max() == 0


def test_paraproduct_low_high_support(part2, grid2):
    x, _ = grid2.mesh()
    k1, k2 = 1, 12
    out = paraproduct_low(np.cos(k1 * x), np.cos(k2 * x), part2)
    spec = np.abs(grid2.fft(out))
    r = grid2.lattice_radius
    assert spec[(r < k2 - k1 - 0.5) | (r > k2 + k1 + 0.5)].max() < 1e-10 * spec.max()


def test_paraproduct_grid_mismatch(part2):
    other = GridSpec(2, 1.0, 64, 1.0, 8)
    with pytest.raises(GridMismatchError):
        paraproduct_low(Field(part2.grid, np.zeros((64, 64))), Field(other, np.zeros((64, 64))), part2)


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 2**31))
def test_bony_identity(seed):
    g = GridSpec(2, 2 * np.pi, 64, 1.0, 1)
    part = build_partition(g)
    f, h = dealiased(g, seed), dealiased(g, seed + 1)
    lhs = paraproduct_low(f, h, part) + paraproduct_resonant(f, h, part) + paraproduct_low(h, f, part)
    assert np.abs(lhs - f * h).max() <= 1e-10 * np.abs(f * h).max()
    np.testing.assert_allclose(paraproduct_resonant(f, h, part), paraproduct_resonant(h, f, part),
                               atol=1e-12 * np.abs(f * h).max())


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 2**31))
def test_block_disjointness_and_reconstruction(seed):
    g = GridSpec(2, 2 * np.pi, 64, 1.0, 1)
    part = build_partition(g)
    f = random_band_limited(g, seed)
    scale = np.abs(f).max()
    assert np.abs(blocks(f, part).sum(axis=0) - f).max() <= 1e-10 * scale
    for i in range(-1, part.j_max + 1):
        ri = dyadic_block(f, i, part)
        for j in range(i + 3, part.j_max + 1):
            assert np.abs(dyadic_block(ri, j, part)).max() <= 1e-10 * scale


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**31), st.floats(-5, 5).filter(lambda c: abs(c) > 1e-3),
       st.floats(-2, 2), st.sampled_from([1.0, 2.0, 4.0, math.inf]), st.sampled_from([1.0, 2.0, math.inf]))
def test_besov_homogeneity(seed, c, alpha, p, q):
    g = GridSpec(2, 2 * np.pi, 32, 1.0, 1)
    part = build_partition(g)
    f = random_band_limited(g, seed)
    idx = BesovIndex(alpha, p, q)
    assert besov_norm(c * f, idx, part) == pytest.approx(abs(c) * besov_norm(f, idx, part), rel=1e-12)


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 2**31), st.floats(-1.5, 1.0), st.floats(0.1, 1.5))
def test_besov_embedding(seed, s, gap):
    g = GridSpec(2, 2 * np.pi, 64, 1.0, 1)
    part = build_partition(g)
    f = random_band_limited(g, seed)
    sp = s + gap
    const = sum(2 ** ((s - sp) * j) for j in range(-1, part.j_max + 1))
    lhs = besov_norm(f, BesovIndex(s, 2, 1), part)
    rhs = besov_norm(f, BesovIndex(sp, 2, math.inf), part)
    assert lhs <= const * rhs * (1 + 1e-12)


def test_besov_index_validation():
    with pytest.raises(ConfigurationError):
        BesovIndex(4.0)
    with pytest.raises(ConfigurationError):
        BesovIndex(0.0, 0.5)


def test_drift_gradient_identity(part2, grid2):
    b = VectorField(grid2, random_band_limited(grid2, 7, 0.2, (2,))[:, None], "b")
    u = Field(grid2, random_band_limited(grid2, 8, 0.2), "u")
    odot, lower = drift_gradient_decomp(b, u, part2)
    direct = sum(b.data[i, 0] * grid2.derivative(u.slices[0], i) for i in range(2))
    res = odot.slices[0] - lower.slices[0] - direct
    assert np.abs(res).max() <= 1e-8 * np.abs(direct).max()


def test_drift_gradient_divergence_free_and_constant(part2, grid2):
    from superdrift.fields import leray_project

    raw = random_band_limited(grid2, 9, 0.2, (2,))
    proj = grid2.ifft(leray_project(grid2.fft(raw), grid2))
    b = VectorField(grid2, proj[:, None], "b", True)
    u = Field(grid2, random_band_limited(grid2, 10, 0.2))
    _, lower = drift_gradient_decomp(b, u, part2)
    assert np.abs(lower.slices).max() < 1e-10
    odot, lower = drift_gradient_decomp(b, Field(grid2, np.full(grid2.shape, 2.0)), part2)
    assert np.abs(odot.slices).max() < 1e-12 and np.abs(lower.slices).max() < 1e-12


def test_b_space_estimate(grid2):
    assert b_space_norm_estimate(VectorField.zeros(grid2), 4, 0) == 0
    x, y = grid2.mesh()
    s = 0.7 + 0.3 * np.sin(2 * x) * np.cos(y)
    b = VectorField(grid2, np.stack([grid2.derivative(s, 1), -grid2.derivative(s, 0)])[:, None])
    vals = [b_space_norm_estimate(b, n, 11) for n in (1, 4, 16)]
    assert vals[0] <= vals[1] <= vals[2]
    assert vals[-1] <= np.abs(s).max() * (1 + 1e-6)
