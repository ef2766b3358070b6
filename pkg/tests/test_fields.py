import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from superdrift.errors import ConfigurationError, SingularityError
from superdrift.fields import (
    MollifierSpec, SpectralMeasureSpec, biot_savart_drift, biot_savart_field, biot_savart_kernel,
    leray_project, max_mollifier_scale, mollifier_kernel, mollify, regularity_exponent, she_environment,
    synth_gaussian_field,
)
from superdrift.grid import Field, GridSpec, VectorField
from superdrift.spectral import BesovIndex, besov_norm, build_partition


@pytest.fixture(scope="module")
def g128():
    return GridSpec(2, 2 * np.pi, 128, 1.0, 1)


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 2**63 - 1), st.floats(-1.0, 1.9))
def test_divergence_free_residual(seed, gamma):
    g = GridSpec(2, 2 * np.pi, 64, 1.0, 1)
    b = synth_gaussian_field(g, SpectralMeasureSpec(gamma), seed)
    assert b.fourier_divergence_residual() <= 1e-10


def test_white_scalar_slope():
    g = GridSpec(2, 2 * np.pi, 64, 1.0, 1)
    spec = SpectralMeasureSpec(0.0, divergence_free=False, components=1)
    ens = [synth_gaussian_field(g, spec, s) for s in range(100)]
    slope, _, _ = regularity_exponent(ens)
    assert abs(slope - 2.0) <= 0.2


def test_determinism(g128):
    a = synth_gaussian_field(g128, SpectralMeasureSpec(1.5), 42, 3)
    b = synth_gaussian_field(g128, SpectralMeasureSpec(1.5), 42, 3)
    c = synth_gaussian_field(g128, SpectralMeasureSpec(1.5), 42, 4)
    assert np.array_equal(a.data, b.data)
    assert not np.array_equal(a.data, c.data)


def test_spec_validation():
    with pytest.raises(ConfigurationError):
        SpectralMeasureSpec(2.0)
    with pytest.raises(ConfigurationError):
        SpectralMeasureSpec(1.0, components=1)
    with pytest.raises(ConfigurationError):
        MollifierSpec(0.5)


def test_projection_idempotent_and_real(g128):
    b = synth_gaussian_field(g128, SpectralMeasureSpec(1.0, divergence_free=False), 1)
    h = g128.fft(b.data)
    p1 = leray_project(h, g128)
    p2 = leray_project(p1, g128)
    assert np.abs(p2 - p1).max() <= 1e-15 * np.abs(p1).max()
    full = np.fft.fftn(g128.ifft(p1), axes=(-2, -1))
    assert np.abs(np.fft.ifftn(full, axes=(-2, -1)).imag).max() <= 1e-12 * np.abs(b.data).max()


def test_gaussian_marginals(g128):
    samples = np.concatenate([synth_gaussian_field(g128, SpectralMeasureSpec(1.0), s).data.ravel()
                              for s in range(4)])
    assert samples.size >= 10**4
    kurt = np.mean(samples**4) / np.mean(samples**2) ** 2
    assert abs(kurt - 3) <= 0.1


@pytest.mark.parametrize("gamma", [0.5, 1.0, 1.5])
def test_regularity_exponent_in_range(gamma):
    g = GridSpec(2, 2 * np.pi, 64, 1.0, 1)
    ens = [synth_gaussian_field(g, SpectralMeasureSpec(gamma), s) for s in range(20)]
    _, exponent, _ = regularity_exponent(ens)
    assert -1 < exponent < 0


def test_mollifier_limits():
    g = GridSpec(2, 1.0, 256, 1.0, 1)
    x, y = g.mesh()
    b = VectorField(g, np.stack([np.sin(2 * np.pi * y), np.cos(2 * np.pi * x)])[:, None])
    bn = mollify(b, max_mollifier_scale(g))
    assert np.abs(bn.data - b.data).max() / np.abs(b.data).max() <= 1e-3
    const = VectorField(g, np.full((2, 1, 256, 256), 1.7))
    np.testing.assert_allclose(mollify(const, 8).data, 1.7, atol=1e-13)
    assert mollifier_kernel(g, 8).sum() * g.cell_volume == pytest.approx(1.0, rel=1e-13)
    with pytest.raises(ConfigurationError):
        mollify(b, 2 * max_mollifier_scale(g))


def test_mollifier_convergence_rate():
    # white-type field of regularity (gamma - d)/2; error in B^{a'} decays like n^{a' - a}
    g = GridSpec(2, 1.0, 256, 1.0, 1)
    part = build_partition(g)
    gamma, a_prime = 1.0, -1.5
    a = (gamma - 2) / 2
    ns = [2, 4, 8, 16, 32]
    errs = []
    for n in ns:
        e = 0.0
        for s in range(4):
            b = synth_gaussian_field(g, SpectralMeasureSpec(gamma), s)
            e += besov_norm(mollify(b, n).data[0, 0] - b.data[0, 0], BesovIndex(a_prime, 2, math.inf), part)
        errs.append(e)
    slope = np.polyfit(np.log(ns), np.log(errs), 1)[0]
    assert abs(slope - (a_prime - a)) <= 0.3


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 2**31), st.sampled_from([2.0, 4.0, 8.0]), st.floats(-1.5, 0.5),
       st.sampled_from([1.0, 2.0, math.inf]))
def test_mollifier_besov_monotone(seed, n, alpha, p):
    g = GridSpec(2, 1.0, 64, 1.0, 1)
    part = build_partition(g)
    b = synth_gaussian_field(g, SpectralMeasureSpec(1.2), seed)
    idx = BesovIndex(alpha, p, 2.0)
    assert besov_norm(mollify(b, n).data[0, 0], idx, part) <= besov_norm(b.data[0, 0], idx, part) * (1 + 1e-8)


def test_biot_savart_kernel():
    np.testing.assert_allclose(biot_savart_kernel(np.array([1.0, 0.0])), [0.0, -1.0])
    x = np.random.default_rng(0).standard_normal((20, 2))
    for delta in (0.0, 0.3):
        np.testing.assert_array_equal(biot_savart_kernel(-x, delta), -biot_savart_kernel(x, delta))
    with pytest.raises(SingularityError):
        biot_savart_kernel(np.zeros(2))


def test_biot_savart_two_vortices_at_origin():
    v = biot_savart_drift([[1.0, 0.0], [-1.0, 0.0]], [1.0, 1.0])
    oracle = biot_savart_kernel(np.array([-1.0, 0.0])) + biot_savart_kernel(np.array([1.0, 0.0]))
    np.testing.assert_allclose(v(np.zeros(2)), oracle, atol=1e-15)
    np.testing.assert_allclose(oracle, [0.0, 0.0], atol=1e-15)
    w = biot_savart_drift([[1.0, 0.0], [-1.0, 0.0]], [1.0, -1.0])
    np.testing.assert_allclose(w(np.zeros(2)), [0.0, 2.0], atol=1e-15)


def test_biot_savart_field_matches_kernel_away_from_core():
    # single vortex at the centre of a large torus; background vorticity adds pi r^2 / L^2
    L = 16.0
    g = GridSpec(2, L, 256, 1.0, 1)
    c = np.array([L / 2, L / 2])
    b = biot_savart_field(g, c[None], [1.0], 2.0)
    x, y = g.mesh()
    pts = np.stack([x - c[0], y - c[1]], axis=-1)
    r = np.sqrt((pts**2).sum(-1))
    ring = (r > 1.5) & (r < 2.5)
    radial_free = (b.data[0, 0] * pts[..., 1] - b.data[1, 0] * pts[..., 0])
    # v . (y, -x) = 1 - pi r^2 / L^2 for the neutralised periodic vortex
    np.testing.assert_allclose(radial_free[ring], 1 - np.pi * r[ring] ** 2 / L**2, atol=2e-3)
    assert b.fourier_divergence_residual() <= 1e-10


def test_she_environment():
    g = GridSpec(2, 2 * np.pi, 32, 0.5, 4)
    with pytest.raises(ConfigurationError):
        she_environment(g, 0.5, 0)
    u = she_environment(g, -0.5, 0)
    assert np.all(u.data[:, 0] == 0)
    assert u.fourier_divergence_residual() <= 1e-10
    # E|u_hat(t, xi)|^2 = sigma^2(xi) (1 - e^{-2 |xi|^2 t}) / (2 |xi|^2), pooled over the
    # transverse component of the modes (1, 0) and (0, 1)
    g = GridSpec(2, 2 * np.pi, 16, 0.3, 2)
    t, xi2 = g.time_horizon, 1.0
    vals = []
    for s in range(3000):
        h = g.fft(she_environment(g, -0.5, s).data[:, -1])
        vals += [abs(h[1, 1, 0]) ** 2, abs(h[0, 0, 1]) ** 2]
    sigma2 = g.N**2 * g.N**2 * xi2**0.25 * (2 * np.pi / g.L) ** 2
    oracle = sigma2 * (1 - np.exp(-2 * xi2 * t)) / (2 * xi2)
    assert np.mean(vals) == pytest.approx(oracle, rel=0.05)
