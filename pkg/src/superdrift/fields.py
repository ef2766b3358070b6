"""Synthesis of singular drift fields and their mollifications.

Gaussian fields are generated in Fourier space.  The continuous spectral
measure ``|xi|^{-gamma} dxi`` is discretised as a per-mode variance
``|xi|^{-gamma} (2 pi / L)^d``, optionally followed by the Leray
projection ``I - xi xi^T / |xi|^2``.  The zero mode and all Nyquist modes
are set to zero.  Coefficients are obtained from the ``rfftn`` of real
white noise, which gives exact conjugate symmetry for free.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, SingularityError
from .grid import Field, GridSpec, VectorField
from .rng import generator
from .spectral import DyadicPartition, block_norms, build_partition

__all__ = [
    "SpectralMeasureSpec",
    "MollifierSpec",
    "leray_project",
    "synth_gaussian_field",
    "regularity_exponent",
    "mollifier_kernel",
    "mollify",
    "max_mollifier_scale",
    "biot_savart_kernel",
    "biot_savart_drift",
    "biot_savart_field",
    "she_environment",
]


@dataclass(frozen=True)
class SpectralMeasureSpec:
    """Isotropic spectral measure ``|xi|^{-gamma}``, optionally projected.

    ``components`` defaults to ``dim``; a scalar field uses ``components=1``
    with the projection off.  ``cutoff`` (physical units) removes all modes
    with ``|xi| > cutoff``.
    """

    gamma: float
    dim: int = 2
    divergence_free: bool = True
    cutoff: float | None = None
    components: int | None = None
    amplitude: float = 1.0

    def __post_init__(self):
        if not self.gamma < self.dim:
            raise ConfigurationError(f"gamma must be < d = {self.dim}, got {self.gamma}")
        c = self.n_components
        if self.divergence_free and c != self.dim:
            raise ConfigurationError("the divergence-free projection needs d components")
        if c < 1:
            raise ConfigurationError("components must be >= 1")

    @property
    def n_components(self) -> int:
        return self.dim if self.components is None else int(self.components)


@dataclass(frozen=True)
class MollifierSpec:
    """Scale ``n`` of the mollifier ``phi_n(x) = n^d phi(n x)``."""

    scale_n: float

    def __post_init__(self):
        if not self.scale_n >= 1:
            raise ConfigurationError(f"mollifier scale must be >= 1, got {self.scale_n}")


def leray_project(hats: np.ndarray, grid: GridSpec) -> np.ndarray:
    """Apply ``I - xi xi^T / |xi|^2`` to Fourier coefficients shaped ``(d, ..., rshape)``."""
    xi = grid.wavevector
    xi2 = grid.xi2
    inv = np.zeros_like(xi2)
    np.divide(1.0, xi2, out=inv, where=xi2 > 0)
    dot = sum(xi[i] * hats[i] for i in range(grid.dim))
    out = np.empty_like(hats)
    for i in range(grid.dim):
        out[i] = hats[i] - xi[i] * dot * inv
    return out


def _spectral_amplitude(grid: GridSpec, gamma: float, cutoff=None) -> np.ndarray:
    """``N^{d/2} sqrt(|xi|^{-gamma} (2 pi / L)^d)`` with zero and Nyquist modes removed."""
    xi2 = grid.xi2
    keep = (xi2 > 0) & ~grid.nyquist_mask
    if cutoff is not None:
        keep &= xi2 <= cutoff**2
    amp = np.zeros_like(xi2)
    amp[keep] = xi2[keep] ** (-gamma / 4.0)
    scale = grid.N ** (grid.dim / 2) * math.sqrt((2 * math.pi / grid.L) ** grid.dim)
    return amp * scale


def synth_gaussian_field(grid: GridSpec, spec: SpectralMeasureSpec, seed: int,
                         stream_id: int = 0) -> VectorField:
    """Draw one Gaussian field with spectral measure ``spec``.

    Identical ``(seed, stream_id)`` give bitwise identical output.
    """
    if spec.dim != grid.dim:
        raise ConfigurationError(f"spec dim {spec.dim} does not match grid dim {grid.dim}")
    rng = generator(seed, stream_id)
    c = spec.n_components
    white = rng.standard_normal((c,) + grid.shape)
    hats = grid.fft(white) * _spectral_amplitude(grid, spec.gamma, spec.cutoff)
    if spec.divergence_free:
        hats = leray_project(hats, grid)
    data = grid.ifft(hats) * spec.amplitude
    label = f"gaussian(gamma={spec.gamma:g})"
    return VectorField(grid, data[:, None], label, spec.divergence_free,
                       {"gamma": spec.gamma, "seed": int(seed), "stream": int(stream_id)})


def regularity_exponent(fields, partition: DyadicPartition | None = None,
                        j_range: tuple[int, int] | None = None):
    """Fit the block-norm growth of an ensemble of fields.

    Returns ``(slope, exponent, log2_energy)`` where ``slope`` is the
    least-squares slope of ``log2 E ||R_j b||_2^2`` against ``j`` over
    ``j_range`` (default ``[2, j_max]``), ``exponent = -slope / 2`` is the
    implied Besov regularity and ``log2_energy`` holds the per-block values
    for ``j = -1..j_max``.
    """
    if isinstance(fields, VectorField):
        fields = [fields]
    grid = fields[0].grid
    partition = partition or build_partition(grid)
    acc = np.zeros(partition.n_blocks)
    for b in fields:
        for comp in b.data:
            n = block_norms(comp, partition, 2.0)
            acc += (n**2).sum(axis=1)
    acc /= len(fields) * fields[0].n_slices
    lo, hi = j_range or (2, partition.j_max)
    js = np.arange(lo, hi + 1)
    with np.errstate(divide="ignore"):
        logs = np.log2(acc)
    slope = float(np.polyfit(js, logs[js + 1], 1)[0])
    return slope, -slope / 2.0, logs


# -- mollification -------------------------------------------------------------

def max_mollifier_scale(grid: GridSpec) -> float:
    """Largest ``n`` whose kernel support spans at least four cells."""
    return grid.N / (2.0 * grid.L)


def mollifier_kernel(grid: GridSpec, n: float) -> np.ndarray:
    """Periodised ``phi_n`` sampled on the grid, normalised to unit discrete mass."""
    if n > max_mollifier_scale(grid) * (1 + 1e-12):
        raise ConfigurationError(
            f"mollifier scale n={n} too fine for the grid (max {max_mollifier_scale(grid):g})"
        )
    r2 = np.zeros(grid.shape)
    for c in grid.coordinates():
        # minimum-image displacement from the origin
        dc = np.minimum(c, grid.L - c)
        r2 = r2 + (n * dc) ** 2
    ker = np.zeros(grid.shape)
    inside = r2 < 1.0
    ker[inside] = np.exp(-1.0 / (1.0 - r2[inside]))
    return ker / (ker.sum() * grid.cell_volume)


def mollify(b, m) -> VectorField:
    """Convolve every component and slice with ``phi_n`` via the FFT."""
    n = m.scale_n if isinstance(m, MollifierSpec) else float(m)
    MollifierSpec(n)
    grid = b.grid
    ker_hat = grid.fft(mollifier_kernel(grid, n)) * grid.cell_volume
    if isinstance(b, Field):
        return b.with_data(grid.ifft(grid.fft(b.slices) * ker_hat), f"{b.label}*phi_{n:g}")
    data = grid.ifft(grid.fft(b.data) * ker_hat)
    out = b.with_data(data, f"{b.label}*phi_{n:g}")
    out.meta["mollifier"] = n
    return out


# -- Biot-Savart -----------------------------------------------------------------

def biot_savart_kernel(x: np.ndarray, delta: float = 0.0) -> np.ndarray:
    """``K_delta(x) = (x_2, -x_1) / (|x|^2 + delta^2)`` on the last axis."""
    x = np.asarray(x, dtype=float)
    r2 = x[..., 0] ** 2 + x[..., 1] ** 2 + delta**2
    if delta == 0 and np.any(r2 == 0):
        raise SingularityError("Biot-Savart kernel evaluated at its singularity")
    out = np.empty_like(x)
    out[..., 0] = x[..., 1] / r2
    out[..., 1] = -x[..., 0] / r2
    return out


def biot_savart_drift(positions, intensities, blob_delta: float = 0.0):
    """Velocity induced by point vortices, as a function of points ``(..., 2)``."""
    pos = np.asarray(positions, dtype=float).reshape(-1, 2)
    gam = np.asarray(intensities, dtype=float).ravel()
    if gam.size != pos.shape[0]:
        raise ConfigurationError("positions and intensities differ in length")
    if blob_delta < 0:
        raise ConfigurationError("blob_delta must be >= 0")

    def velocity(x):
        x = np.asarray(x, dtype=float)
        out = np.zeros_like(x)
        for p, g in zip(pos, gam):
            out = out + g * biot_savart_kernel(x - p, blob_delta)
        return out

    return velocity


def biot_savart_field(grid: GridSpec, positions, intensities, scale_n: float) -> VectorField:
    """Periodic velocity of mollified point vortices, computed spectrally.

    Solves ``Delta psi = 2 pi (omega - mean omega)`` with
    ``omega = sum_j gamma_j phi_n(. - x_j)`` and returns
    ``(d_2 psi, -d_1 psi)``, the periodic analogue of ``K * omega``.
    """
    if grid.dim != 2:
        raise ConfigurationError("Biot-Savart fields are two dimensional")
    ker_hat = grid.fft(mollifier_kernel(grid, scale_n)) * grid.cell_volume
    omega_hat = np.zeros(grid.rshape, dtype=complex)
    xi = grid.wavevector
    for p, g in zip(np.asarray(positions, float).reshape(-1, 2), np.asarray(intensities, float).ravel()):
        shift = np.exp(-1j * (xi[0] * p[0] + xi[1] * p[1]))
        omega_hat = omega_hat + g * shift * ker_hat / grid.cell_volume
    inv = np.zeros_like(grid.xi2)
    np.divide(1.0, grid.xi2, out=inv, where=grid.xi2 > 0)
    psi_hat = -2 * math.pi * omega_hat * inv
    keep = ~grid.nyquist_mask
    u = grid.ifft(1j * xi[1] * psi_hat * keep)
    v = grid.ifft(-1j * xi[0] * psi_hat * keep)
    return VectorField(grid, np.stack([u, v])[:, None], "biot-savart", True)


# -- stochastic heat environment -------------------------------------------------------

def she_environment(grid: GridSpec, gamma: float, seed: int, stream_id: int = 0,
                    sigma: float = 1.0) -> VectorField:
    """Divergence-free solution of ``du = Delta u dt + dW^{(gamma)}`` with ``u(0) = 0``.

    Each Fourier mode follows its exact Ornstein-Uhlenbeck transition
    between stored slices; increments are Leray projected.
    """
    d = grid.dim
    if not gamma < d - 2:
        raise ConfigurationError(f"gamma must be < d - 2 = {d - 2}, got {gamma}")
    if grid.time_steps < 2:
        raise ConfigurationError("the stochastic heat environment needs n_t >= 2")
    rng = generator(seed, stream_id)
    dt = grid.dt
    xi2 = grid.xi2
    decay = np.exp(-xi2 * dt)
    var = np.zeros_like(xi2)
    pos = xi2 > 0
    var[pos] = -np.expm1(-2 * xi2[pos] * dt) / (2 * xi2[pos])
    base = _spectral_amplitude(grid, gamma)
    amp = sigma * base * np.sqrt(var)
    hats = np.zeros((d,) + grid.rshape, dtype=complex)
    slices = np.zeros((d, grid.time_steps + 1) + grid.shape)
    for k in range(1, grid.time_steps + 1):
        white = rng.standard_normal((d,) + grid.shape)
        inc = leray_project(grid.fft(white) * amp, grid)
        hats = decay * hats + inc
        slices[:, k] = grid.ifft(hats)
    return VectorField(grid, slices, f"she(gamma={gamma:g})", True,
                       {"gamma": gamma, "seed": int(seed), "stream": int(stream_id)})

