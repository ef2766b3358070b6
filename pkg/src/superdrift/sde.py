"""Monte-Carlo ensembles for the mollified SDE and the checks built on them.

Paths follow Euler-Maruyama

    X_{k+1} = X_k + b_n(t_k, X_k) dt + sqrt(2) (W_{t_{k+1}} - W_{t_k})

with the drift read by periodic multilinear interpolation in space and
linear interpolation in time.  Positions are stored unwrapped; wrapping
happens only inside the interpolation.

Random numbers are drawn per block of paths.  Block ``i`` (paths
``i*B .. (i+1)*B - 1``) uses the Philox stream ``(seed, i)``, so the result
does not depend on the number of worker threads.
"""

from __future__ import annotations

import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from . import kernels
from .errors import ConfigurationError, SimulationError, SingularityError
from .fields import mollify
from .grid import Field, GridSpec, VectorField
from .pde import (
    PicardConfig,
    _auto_substeps,
    _band_drift,
    _jacobian,
    backward_kolmogorov,
    fokker_planck,
    gradient_bound_check,
    lambda_ladder,
    picard_kolmogorov,
    time_norm,
)
from .reports import EstimateReport
from .rng import NoiseSeed, generator
from .spectral import lp_norm

__all__ = [
    "PathEnsemble",
    "AdditiveFunctional",
    "VortexState",
    "VortexResult",
    "simulate_ensemble",
    "additive_functional",
    "cauchy_in_n",
    "krylov_check",
    "zvonkin_transform",
    "young_substitute",
    "martingale_defect",
    "transition_density",
    "vortex_system",
    "resolve_threads",
]

DEFAULT_BLOCK = 4096


def resolve_threads(threads=None) -> int:
    """Explicit value, else ``SUPERDRIFT_THREADS``, else 1."""
    import os

    if threads is None:
        threads = os.environ.get("SUPERDRIFT_THREADS") or 1
    threads = int(threads)
    if threads < 1:
        raise ConfigurationError("threads must be >= 1")
    return threads


@dataclass(eq=False)
class PathEnsemble:
    """``M`` trajectories stored path-major as ``positions[M, n_steps + 1, d]``."""

    grid: GridSpec
    n_paths: int
    dt: float
    positions: np.ndarray
    brownian_seed: NoiseSeed
    drift_label: str = ""
    block_size: int = DEFAULT_BLOCK
    brownian_substeps: int = 1
    init: object = None
    t0: float = 0.0

    @property
    def n_steps(self) -> int:
        return self.positions.shape[1] - 1

    @property
    def times(self) -> np.ndarray:
        return self.t0 + self.dt * np.arange(self.n_steps + 1)

    def wrapped(self, k: int) -> np.ndarray:
        return np.mod(self.positions[:, k], self.grid.L)

    def brownian_increments(self) -> np.ndarray:
        """Regenerate ``sqrt(2) dW`` per step, shape ``(M, n_steps, d)``."""
        d = self.grid.dim
        out = np.empty((self.n_paths, self.n_steps, d))
        for blk, start in enumerate(range(0, self.n_paths, self.block_size)):
            stop = min(start + self.block_size, self.n_paths)
            rng = generator(self.brownian_seed.seed, self.brownian_seed.stream_id + blk)
            if isinstance(self.init, Field):
                rng.random(stop - start)
                rng.random((stop - start, d))
            sub = self.brownian_substeps
            scale = math.sqrt(2 * self.dt / sub)
            for k in range(self.n_steps):
                z = rng.standard_normal((sub, stop - start, d))
                out[start:stop, k] = scale * z.sum(axis=0) if sub > 1 else scale * z[0]
        return out

    def summary(self) -> dict:
        disp = self.positions[:, -1] - self.positions[:, 0]
        return {
            "n_paths": self.n_paths,
            "n_steps": self.n_steps,
            "dt": self.dt,
            "seed": self.brownian_seed.seed,
            "drift": self.drift_label,
            "mean_displacement": disp.mean(axis=0).tolist(),
            "mean_square_displacement": float((disp**2).sum(axis=1).mean()),
        }


@dataclass(eq=False)
class AdditiveFunctional:
    """Left-point Riemann sums ``values[m, k] = sum_{i<k} f(t_i, X^m_i) dt``."""

    ensemble: PathEnsemble
    values: np.ndarray
    integrand_label: str = ""

    @property
    def terminal(self) -> np.ndarray:
        return self.values[:, -1]


# -- interpolation helpers ------------------------------------------------------------------

class _TimeSampler:
    """Return the ``(C, N, ..., N)`` grid values of a field at an arbitrary time."""

    def __init__(self, data: np.ndarray, grid: GridSpec):
        self.data = np.ascontiguousarray(data)
        self.grid = grid
        self._cache_t = None
        self._cache = None

    def __call__(self, t: float) -> np.ndarray:
        if self.data.shape[1] == 1:
            return self.data[:, 0]
        if t == self._cache_t:
            return self._cache
        g = self.grid
        s = min(max(t / g.dt, 0.0), g.time_steps)
        k = min(int(math.floor(s)), g.time_steps - 1)
        w = s - k
        if w == 0.0:
            out = self.data[:, k]
        elif w == 1.0:
            out = self.data[:, k + 1]
        else:
            out = np.ascontiguousarray((1 - w) * self.data[:, k] + w * self.data[:, k + 1])
        self._cache_t, self._cache = t, out
        return out


def _field_data(f) -> np.ndarray:
    if isinstance(f, Field):
        return f.slices[None]
    return f.data


def evaluate(f, t: float, points: np.ndarray) -> np.ndarray:
    """Interpolate a Field (``(M,)``) or VectorField (``(M, C)``) at time ``t``."""
    vals = kernels.interp_periodic(_TimeSampler(_field_data(f), f.grid)(t), points, f.grid.L)
    return vals[:, 0] if isinstance(f, Field) else vals


# -- ensemble simulation -----------------------------------------------------------------------

def morton_order(grid: GridSpec) -> np.ndarray:
    """Flat (row-major) cell indices sorted along the Z-order space-filling curve."""
    d = grid.dim
    bits = int(round(math.log2(grid.N)))
    idx = np.indices(grid.shape).reshape(d, -1).astype(np.uint64)
    code = np.zeros(idx.shape[1], dtype=np.uint64)
    for b in range(bits):
        for a in range(d):
            code |= ((idx[a] >> np.uint64(b)) & np.uint64(1)) << np.uint64(b * d + (d - 1 - a))
    return np.argsort(code, kind="stable")


def _initial_points(init, n: int, d: int, rng, grid: GridSpec) -> np.ndarray:
    if isinstance(init, Field):
        order = morton_order(grid)
        dens = np.clip(init.slices[0], 0.0, None).ravel()[order]
        cdf = np.cumsum(dens)
        if cdf[-1] <= 0:
            raise ConfigurationError("initial density has no positive mass")
        cdf /= cdf[-1]
        u = rng.random(n)
        jitter = rng.random((n, d)) - 0.5
        idx = order[np.minimum(np.searchsorted(cdf, u, side="right"), cdf.size - 1)]
        # each grid point owns the cell centred on it
        cells = np.stack(np.unravel_index(idx, grid.shape), axis=1).astype(float)
        return (cells + jitter) * grid.cell
    x0 = np.asarray(init, dtype=float).reshape(-1)
    if x0.size != d:
        raise ConfigurationError(f"initial point must have {d} coordinates")
    return np.broadcast_to(x0, (n, d)).copy()


def simulate_ensemble(b_n: VectorField, init, M: int, dt: float, seed: int,
                      n_steps: int | None = None, threads=None, brownian_substeps: int = 1,
                      block_size: int = DEFAULT_BLOCK, t0: float = 0.0,
                      stream_offset: int = 0) -> PathEnsemble:
    """Euler-Maruyama ensemble of ``M`` paths for ``dX = b_n dt + sqrt(2) dW``.

    ``init`` is a point or a density Field.  ``n_steps`` defaults to
    ``round((T - t0) / dt)``.  With ``brownian_substeps = s`` each step's
    increment is the sum of ``s`` finer increments drawn in order, which
    couples this ensemble with one run at ``dt / s`` and the same seed.
    """
    g = b_n.grid
    d = g.dim
    if b_n.n_components != d:
        raise ConfigurationError("drift must have d components")
    if M < 1 or dt <= 0:
        raise ConfigurationError("need M >= 1 and dt > 0")
    if n_steps is None:
        n_steps = int(round((g.time_horizon - t0) / dt))
    sampler = _TimeSampler(b_n.data, g)
    positions = np.empty((M, n_steps + 1, d))
    bseed = NoiseSeed(int(seed), int(stream_offset))
    starts = list(range(0, M, block_size))
    sub = int(brownian_substeps)
    scale = math.sqrt(2 * dt / sub)
    zero_drift = not np.any(b_n.data)
    # precompute the drift slices once so worker threads only read them
    drift_at = [sampler(t0 + k * dt) for k in range(n_steps)] if not zero_drift else None

    def run_block(blk):
        start = starts[blk]
        stop = min(start + block_size, M)
        n = stop - start
        rng = generator(seed, stream_offset + blk)
        x = _initial_points(init, n, d, rng, g)
        positions[start:stop, 0] = x
        for k in range(n_steps):
            z = rng.standard_normal((sub, n, d))
            inc = scale * (z.sum(axis=0) if sub > 1 else z[0])
            if zero_drift:
                x = x + inc
            else:
                v = kernels.interp_periodic(drift_at[k], x, g.L)
                if not np.all(np.isfinite(v)):
                    bad = int(np.argwhere(~np.isfinite(v).all(axis=1))[0, 0]) + start
                    raise SimulationError(f"non-finite drift on path {bad}", path_index=bad)
                x = x + v * dt + inc
            positions[start:stop, k + 1] = x

    nthreads = resolve_threads(threads)
    if nthreads == 1 or len(starts) == 1:
        for blk in range(len(starts)):
            run_block(blk)
    else:
        with ThreadPoolExecutor(nthreads) as pool:
            list(pool.map(run_block, range(len(starts))))
    return PathEnsemble(g, M, dt, positions, bseed, b_n.label, block_size, sub, init, t0)


def additive_functional(ens: PathEnsemble, f, stop_radius: float | None = None) -> AdditiveFunctional:
    """Per-path left-point sums of ``f(t_k, X_k) dt``.

    With ``stop_radius`` the sum is frozen once a path first leaves the
    ball of that radius around its starting point (a first-exit time).
    """
    m, s = ens.n_paths, ens.n_steps
    vals = np.zeros((m, s + 1))
    sampler = _TimeSampler(_field_data(f), f.grid)
    alive = np.ones(m, dtype=bool)
    x0 = ens.positions[:, 0]
    for k in range(s):
        x = ens.positions[:, k]
        if stop_radius is not None:
            alive &= ((x - x0) ** 2).sum(axis=1) <= stop_radius**2
        fk = kernels.interp_periodic(sampler(ens.t0 + k * ens.dt), x, ens.grid.L)[:, 0]
        vals[:, k + 1] = vals[:, k] + np.where(alive, fk * ens.dt, 0.0)
    return AdditiveFunctional(ens, vals, getattr(f, "label", ""))


def _vector_functional(ens: PathEnsemble, b: VectorField) -> np.ndarray:
    """Terminal values of ``int_0^T b(s, X_s) ds`` per component, shape ``(M, C)``."""
    sampler = _TimeSampler(b.data, b.grid)
    acc = np.zeros((ens.n_paths, b.n_components))
    for k in range(ens.n_steps):
        acc += kernels.interp_periodic(sampler(ens.t0 + k * ens.dt), ens.positions[:, k], ens.grid.L) * ens.dt
    return acc


def krylov_holder_exponent(af: AdditiveFunctional, m: float = 2.0, lags=None) -> float:
    """Empirical exponent ``h`` in ``||A_{t+s} - A_t||_{L^m} ~ s^h``."""
    s = af.values.shape[1] - 1
    lags = lags or [lag for lag in (1, 2, 4, 8, 16, 32) if lag < s]
    norms = []
    for lag in lags:
        diff = af.values[:, lag:] - af.values[:, :-lag]
        norms.append(np.mean(np.abs(diff) ** m) ** (1 / m))
    return float(np.polyfit(np.log(np.array(lags) * af.ensemble.dt), np.log(norms), 1)[0])


# -- zero-energy Cauchy check -------------------------------------------------------------------

def cauchy_in_n(b: VectorField, mollification_levels, finest: float, M: int, seed: int,
                dt: float | None = None, init=None, threads=None):
    """L2(Omega) gaps of ``int_0^T b_n(s, X_s) ds`` between mollification levels.

    ``X`` is one ensemble driven by ``b_{finest}``.  Returns a list of rows
    ``{n, n_prime, gap, stderr}`` for every pair with ``n <= n_prime`` and a
    trend dict comparing consecutive pairs.
    """
    levels = sorted(float(n) for n in mollification_levels)
    if levels and levels[-1] > finest:
        raise ConfigurationError("all levels must be <= finest")
    g = b.grid
    dt = dt or g.cell**2 / 4
    init = np.full(g.dim, g.L / 2) if init is None else init
    ens = simulate_ensemble(mollify(b, finest), init, M, dt, seed, threads=threads)
    integrals = {n: _vector_functional(ens, mollify(b, n)) for n in levels}
    rows = []
    for i, n in enumerate(levels):
        for n2 in levels[i:]:
            sq = ((integrals[n] - integrals[n2]) ** 2).sum(axis=1)
            rows.append({
                "n": n, "n_prime": n2,
                "gap": float(math.sqrt(sq.mean())),
                "stderr": float(sq.std() / math.sqrt(M) / (2 * math.sqrt(sq.mean()))) if sq.mean() > 0 else 0.0,
            })
    pairs = set(zip(levels, levels[1:]))
    consecutive = [r for r in rows if (r["n"], r["n_prime"]) in pairs]
    gaps = [r["gap"] for r in consecutive]
    trend = {
        "consecutive_gaps": gaps,
        "decreasing": bool(all(a > b_ for a, b_ in zip(gaps, gaps[1:]))),
    }
    return rows, trend


# -- Krylov identity -----------------------------------------------------------------------------

def _pde_second_moment(b_n: VectorField, f: Field, rho0: Field, substeps=None):
    """``-2 int_0^T <f u, rho> dt`` together with ``E int f = -<u(0), rho_0>``."""
    g = b_n.grid
    rho = fokker_planck(b_n, rho0, substeps=substeps)
    u = backward_kolmogorov(b_n, f, g.time_horizon, substeps=substeps)
    fs = f.expand_time().slices
    inner = (fs * u.slices * rho.slices).sum(axis=tuple(range(1, g.dim + 1))) * g.cell_volume
    second = -2.0 * float(np.trapezoid(inner, dx=g.dt))
    simpson = None
    if g.time_steps % 2 == 0:
        w = np.ones(g.time_steps + 1)
        w[1:-1:2] = 4
        w[2:-1:2] = 2
        simpson = -2.0 * float((w * inner).sum() * g.dt / 3)
    mean = -float((u.slices[0] * rho.slices[0]).sum() * g.cell_volume)
    return second, mean, simpson, u, rho


def krylov_check(b: VectorField, levels, f: Field, rho0: Field, M: int, seed: int,
                 dt: float | None = None, index=(0.0, 2.0, math.inf), threads=None,
                 sigma_factor: float = 3.0, uniformity: float = 2.0):
    """Monte-Carlo against PDE value of ``E |int_0^T f(X_s) ds|^2`` per level.

    ``levels`` holds mollification scales; ``None`` uses ``b`` unmollified
    (appropriate for smooth or zero drifts).  The MC estimate is compared
    with ``-2 int <f u_n, rho_n>`` computed by
    :func:`backward_kolmogorov` and :func:`fokker_planck`.  The allowed gap
    is ``sigma_factor`` standard errors plus a truncation budget made of:

    * the change of the PDE value when the solver substeps are doubled,
    * the trapezoid-versus-Simpson difference of the time integral,
    * the change of the MC mean between ``dt`` and a coupled ``2 dt`` run.

    Returns ``(reports, rows)``.
    """
    g = b.grid
    alpha, p, q = index
    d = g.dim
    lhs_idx = (0.0 if math.isinf(p) else d / p) + (0.0 if math.isinf(q) else 2 / q)
    if not lhs_idx < 2 + alpha:
        raise ConfigurationError(
            f"(alpha, p, q) = {index} violates d/p + 2/q < 2 + alpha")
    dt = dt or g.dt
    f_t = f.expand_time()
    ff = f_t.slices
    if alpha != 0:
        ff = g.ifft(g.fft(ff) * (1 + g.xi2) ** (alpha / 2))
    fnorm = time_norm(lp_norm(ff, g, p), g, q)
    rho_norm = float(lp_norm(rho0.slices[0], g, 2.0))
    reports, rows = [], []
    for n in levels:
        bn = b if n is None else mollify(b, n)
        label = "none" if n is None else f"{n:g}"
        fine = simulate_ensemble(bn, rho0, M, dt / 2, seed, n_steps=2 * int(round(g.time_horizon / dt)),
                                 threads=threads)
        coarse = simulate_ensemble(bn, rho0, M, dt, seed, brownian_substeps=2, threads=threads)
        a_f = additive_functional(fine, f).terminal
        a_c = additive_functional(coarse, f).terminal
        mc = float(np.mean(a_f**2))
        se = float(np.std(a_f**2) / math.sqrt(M))
        mc_bias = abs(mc - float(np.mean(a_c**2)))
        pde1, mean_pde, simpson, _, _ = _pde_second_moment(bn, f, rho0)
        base_sub = _substeps_used(bn, g)
        pde2, _, _, _, _ = _pde_second_moment(bn, f, rho0, substeps=2 * base_sub)
        budget = abs(pde2 - pde1) + (abs(simpson - pde1) if simpson is not None else 0.0) + mc_bias
        gap = abs(mc - pde1)
        tol = sigma_factor * se + budget
        ratio_norm = mc / (fnorm**2 * rho_norm) if fnorm > 0 and rho_norm > 0 else 0.0
        row = {
            "level": label, "mc": mc, "mc_stderr": se, "pde": pde1, "gap": gap,
            "budget": budget, "tolerance": tol, "mc_mean": float(a_f.mean()),
            "pde_mean": mean_pde, "normalized": ratio_norm,
        }
        rows.append(row)
        reports.append(EstimateReport(f"krylov_identity[n={label}]", gap, tol, None, gap <= tol,
                                      {k: v for k, v in row.items() if k != "level"}))
    norms = [r["normalized"] for r in rows if r["normalized"] > 0]
    if len(norms) > 1:
        spread = max(norms) / min(norms)
        reports.append(EstimateReport("krylov_uniformity", spread, uniformity, None, spread <= uniformity,
                                      {"normalized": norms}))
    return reports, rows


def _substeps_used(b: VectorField, g: GridSpec) -> int:
    return _auto_substeps(_band_drift(b), g, g.dt)


# -- martingale defect ---------------------------------------------------------------------------

def _dictionary(grid: GridSpec, points: np.ndarray):
    """Bounded test functions: 1 and cos/sin of the lowest mode along each axis."""
    out = [("1", np.ones(points.shape[0]))]
    k = 2 * math.pi / grid.L
    for a in range(grid.dim):
        out.append((f"cos{a}", np.cos(k * points[:, a])))
        out.append((f"sin{a}", np.sin(k * points[:, a])))
    return out


def martingale_defect(ens: PathEnsemble, b_n: VectorField, f: Field, s: float, t: float,
                      u: Field | None = None, return_details: bool = False):
    """Largest |z-score| of ``E[(M_t - M_s) g(X_s)]`` over the test dictionary.

    ``M_t = u(t, X_t) - u(0, X_0) - int_0^t f(X_r) dr`` with ``u`` from
    :func:`backward_kolmogorov` on ``[0, t]``.  The time integral uses the
    trapezoid rule along each path to keep the discretisation bias below
    the Monte-Carlo noise.
    """
    if not 0 <= s < t:
        raise ConfigurationError("need 0 <= s < t")
    ks = int(round((s - ens.t0) / ens.dt))
    kt = int(round((t - ens.t0) / ens.dt))
    if kt > ens.n_steps or abs(ks * ens.dt + ens.t0 - s) > 1e-9 or abs(kt * ens.dt + ens.t0 - t) > 1e-9:
        raise ConfigurationError("s and t must be ensemble step times")
    if u is None:
        u = backward_kolmogorov(b_n, f, t)
    L = ens.grid.L
    fs = _TimeSampler(_field_data(f), f.grid)
    us = _TimeSampler(_field_data(u), u.grid)
    vals = [kernels.interp_periodic(fs(ens.t0 + k * ens.dt), ens.positions[:, k], L)[:, 0]
            for k in range(ks, kt + 1)]
    integral = np.zeros(ens.n_paths)
    for a, b_ in zip(vals[:-1], vals[1:]):
        integral += 0.5 * (a + b_) * ens.dt
    u_t = kernels.interp_periodic(us(t), ens.positions[:, kt], L)[:, 0]
    u_s = kernels.interp_periodic(us(s), ens.positions[:, ks], L)[:, 0]
    inc = u_t - u_s - integral
    xs = np.mod(ens.positions[:, ks], L)
    z = {}
    for name, gv in _dictionary(ens.grid, xs):
        prod = inc * gv
        se = prod.std() / math.sqrt(ens.n_paths)
        z[name] = float(prod.mean() / se) if se > 0 else 0.0
    worst = max(abs(v) for v in z.values())
    if return_details:
        return worst, z
    return worst


# -- Zvonkin transformation ----------------------------------------------------------------------

@dataclass
class ZvonkinReport:
    lam: float
    iterations: int
    gradient_bound: float
    grad_phi: float
    grad_phi_inv: float
    sv_min: float
    sv_max: float
    min_image_distance: float
    cell: float
    history: list = field(default_factory=list)

    def estimates(self) -> list[EstimateReport]:
        return [
            EstimateReport("zvonkin_gradient_bound", self.gradient_bound, 0.5),
            EstimateReport("zvonkin_grad_phi", self.grad_phi, 4.0),
            EstimateReport("zvonkin_grad_phi_inv", self.grad_phi_inv, 4.0),
            EstimateReport("zvonkin_sigma_upper", self.sv_max, 8.0),
            EstimateReport("zvonkin_sigma_lower", self.sv_min, 1 / 8,
                           passed=self.sv_min >= 1 / 8),
            EstimateReport("zvonkin_injective", self.min_image_distance, self.cell / 2,
                           passed=self.min_image_distance >= self.cell / 2),
        ]


def _reverse_time(v: VectorField) -> VectorField:
    if not v.time_dependent:
        return v
    return v.with_data(v.data[:, ::-1])


def _newton_inverse_jacobians(u_slice: np.ndarray, jac: np.ndarray, grid: GridSpec, iters: int = 30):
    """``(grad Phi)^{-1}`` at the preimages of the grid points under ``Phi = x + u``."""
    d = grid.dim
    y = np.stack([c.ravel() for c in grid.mesh()], axis=1)
    x = y.copy()
    jac_flat = np.ascontiguousarray(jac.reshape(-1, d * d).T.reshape((d * d,) + grid.shape))
    eye = np.eye(d)
    for _ in range(iters):
        ux = kernels.interp_periodic(u_slice, x, grid.L)
        jx = kernels.interp_periodic(jac_flat, x, grid.L).reshape(-1, d, d) + eye
        r = x + ux - y
        x = x - np.linalg.solve(jx, r[..., None])[..., 0]
        if np.abs(r).max() < 1e-12:
            break
    jx = kernels.interp_periodic(jac_flat, x, grid.L).reshape(-1, d, d) + eye
    return np.linalg.inv(jx)


def zvonkin_transform(b: VectorField, cfg: PicardConfig, ens: PathEnsemble | None = None,
                      auto_lambda: bool = False, partition=None):
    """Build ``Phi(t, x) = x + u(t, x)`` and transform paths ``Y_t = Phi(t, X_t)``.

    ``u`` solves the backward system ``d_t u + Delta u + b . grad u - lam u + b = 0``
    with ``u(T) = 0``, one scalar Picard solve per component after reversing
    time.  With ``auto_lambda`` the damping is chosen by
    :func:`superdrift.pde.lambda_ladder`.

    Returns ``(Phi, Y, report)`` where ``Phi`` holds grid samples of the
    map, ``Y`` is ``None`` when no ensemble is given and ``report`` is a
    :class:`ZvonkinReport`.
    """
    g = b.grid
    br = _reverse_time(b)
    forcing = [Field(g, br.data[i], f"b_{i}") for i in range(g.dim)]
    history = []
    if auto_lambda:
        lam, sols, its, history = lambda_ladder(br, forcing, cfg, lam_start=max(cfg.lam, 1.0),
                                                partition=partition)
    else:
        lam = cfg.lam
        sols = [picard_kolmogorov(br, fi, cfg, partition) for fi in forcing]
        its = max(s[1] for s in sols)
    v = np.stack([s[0].slices[::-1] for s in sols])
    u = VectorField(g, v, "u^lambda")
    mesh = np.stack(grid_mesh(g))
    phi = VectorField(g, mesh[:, None] + u.data, "Phi")

    grad_u = gradient_bound_check(u)
    jac = _jacobian(u.data, g)
    eye = np.eye(g.dim)
    jphi = jac + eye
    svals = np.linalg.svd(math.sqrt(2.0) * jphi, compute_uv=False)
    grad_phi = float(np.linalg.norm(jphi, ord=2, axis=(-2, -1)).max())
    inv_max = 0.0
    min_dist = math.inf
    for k in range(u.n_slices):
        inv = _newton_inverse_jacobians(np.ascontiguousarray(u.data[:, k]), jac[k], g)
        inv_max = max(inv_max, float(np.linalg.norm(inv, ord=2, axis=(-2, -1)).max()))
        img = np.mod(phi.data[:, k].reshape(g.dim, -1).T, g.L)
        tree = cKDTree(img, boxsize=g.L)
        dist, _ = tree.query(img, k=2)
        min_dist = min(min_dist, float(dist[:, 1].min()))
    report = ZvonkinReport(lam, its, grad_u, grad_phi, inv_max, float(svals.min()),
                           float(svals.max()), min_dist, g.cell, history)
    y = None
    if ens is not None:
        sampler = _TimeSampler(u.data, g)
        pos = np.empty_like(ens.positions)
        for k in range(ens.n_steps + 1):
            x = ens.positions[:, k]
            pos[:, k] = x + kernels.interp_periodic(sampler(ens.t0 + k * ens.dt), x, g.L)
        y = PathEnsemble(g, ens.n_paths, ens.dt, pos, ens.brownian_seed, f"Phi({ens.drift_label})",
                         ens.block_size, ens.brownian_substeps, ens.init, ens.t0)
    return phi, y, report


def grid_mesh(g: GridSpec):
    return [np.array(c) for c in g.mesh()]


# -- Young substitution --------------------------------------------------------------------------

class YoungResult(tuple):
    """``(lhs, rhs, gap)`` with the partition stride and Lipschitz estimate attached."""

    def __new__(cls, lhs, rhs, gap, stride, lipschitz):
        obj = super().__new__(cls, (lhs, rhs, gap))
        obj.stride = stride
        obj.lipschitz = lipschitz
        return obj

    lhs = property(lambda self: self[0])
    rhs = property(lambda self: self[1])
    gap = property(lambda self: self[2])


def young_substitute(ens: PathEnsemble, g: Field, f: Field, stride: int = 1) -> YoungResult:
    """Compare ``int g dA^f`` with ``A^{g f}`` along every path.

    The partition groups ``stride`` consecutive steps.  ``lhs`` sums
    ``g(X_{start}) (A^f_{end} - A^f_{start})`` over partition intervals and
    ``rhs`` sums ``g(X_i) f(X_i) dt``; within each interval both sums run
    in the same order so ``g = 1`` gives identical values.
    """
    if stride < 1 or ens.n_steps % stride:
        raise ConfigurationError("stride must divide the number of steps")
    grid = ens.grid
    fs = _TimeSampler(_field_data(f), f.grid)
    gs = _TimeSampler(_field_data(g), g.grid)
    lhs = np.zeros(ens.n_paths)
    rhs = np.zeros(ens.n_paths)
    for start in range(0, ens.n_steps, stride):
        g0 = kernels.interp_periodic(gs(ens.t0 + start * ens.dt), ens.positions[:, start], grid.L)[:, 0]
        inc_f = np.zeros(ens.n_paths)
        inc_gf = np.zeros(ens.n_paths)
        for k in range(start, start + stride):
            t = ens.t0 + k * ens.dt
            x = ens.positions[:, k]
            fk = kernels.interp_periodic(fs(t), x, grid.L)[:, 0]
            gk = g0 if k == start else kernels.interp_periodic(gs(t), x, grid.L)[:, 0]
            inc_f = inc_f + fk * ens.dt
            inc_gf = inc_gf + (gk * fk) * ens.dt
        lhs = lhs + g0 * inc_f
        rhs = rhs + inc_gf
    gap = float(np.sqrt(np.mean((lhs - rhs) ** 2)))
    lip = 0.0
    for sl in g.slices:
        gr = np.sqrt(sum(grid.derivative(sl, a) ** 2 for a in range(grid.dim)))
        lip = max(lip, float(gr.max()))
    return YoungResult(lhs, rhs, gap, stride, lip)


# -- transition density --------------------------------------------------------------------------

@dataclass
class GaussianEnvelopeReport:
    t: float
    slope: float
    r_squared: float
    gamma0: float
    gamma1: float
    bulk_positive: bool
    bins_used: int
    widened: bool

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def transition_density(ens: PathEnsemble, k: int | None = None, n_bins: int = 40,
                       min_count: int = 50, radius_sigmas: float = 4.0):
    """Histogram estimate of the transition density from a fixed start.

    The radial profile of unwrapped displacements is fitted as
    ``log rho = c - slope |x - x'|^2`` by count-weighted least squares; for
    Brownian motion ``slope = 1 / (4 t)``.  ``gamma0`` and ``gamma1`` are the
    larger and smaller of the decay rates in ``r^2 / t`` fitted separately on
    the inner and outer halves of the bulk (three standard deviations).
    Tail bins with fewer than ``min_count`` samples are merged outward
    (with a warning).

    Returns ``(density Field on the grid, GaussianEnvelopeReport)``.
    """
    k = ens.n_steps if k is None else k
    t = k * ens.dt
    g = ens.grid
    d = g.dim
    disp = ens.positions[:, k] - ens.positions[:, 0]
    if not np.allclose(ens.positions[:, 0], ens.positions[0, 0]):
        raise ConfigurationError("transition_density needs a fixed starting point")
    r = np.sqrt((disp**2).sum(axis=1))
    sigma = math.sqrt(2 * t)
    if math.sqrt(d) * sigma > g.L / 8:
        warnings.warn("rms displacement exceeds L/8; tail statistics may feel the periodic images",
                      stacklevel=2)
    edges = np.linspace(0.0, radius_sigmas * sigma, n_bins + 1)
    counts, _ = np.histogram(r, bins=edges)
    # merge sparse tail bins into wider ones
    widened = False
    merged_edges = [edges[0]]
    merged_counts = []
    acc = 0
    for i in range(n_bins):
        acc += counts[i]
        if acc >= min_count:
            merged_edges.append(edges[i + 1])
            merged_counts.append(acc)
            acc = 0
        elif i + 1 < n_bins:
            widened = True
    if acc:
        widened = True
    if widened:
        warnings.warn("sparse tail bins were widened in the envelope fit", stacklevel=2)
    e = np.array(merged_edges)
    c = np.array(merged_counts, dtype=float)
    shell = math.pi ** (d / 2) / math.gamma(d / 2 + 1) * (e[1:] ** d - e[:-1] ** d)
    dens = c / (ens.n_paths * shell)
    # bin-averaged r^2 matches the shell average of exp(-a r^2) to first order
    r2 = (d / (d + 2)) * (e[1:] ** (d + 2) - e[:-1] ** (d + 2)) / (e[1:] ** d - e[:-1] ** d)
    y = np.log(dens)
    w = c
    A = np.stack([np.ones_like(r2), r2], axis=1)
    coef, *_ = np.linalg.lstsq(A * np.sqrt(w)[:, None], y * np.sqrt(w), rcond=None)
    pred = A @ coef
    ybar = np.sum(w * y) / np.sum(w)
    r_sq = 1 - np.sum(w * (y - pred) ** 2) / np.sum(w * (y - ybar) ** 2)
    # separate rates on the inner and outer halves of the bulk bracket the decay
    inner = e[1:] <= 3 * sigma
    rates = []
    idx = np.flatnonzero(inner)
    for part in (idx[: idx.size // 2 + 1], idx[idx.size // 2:]):
        if part.size >= 2:
            cf = np.polyfit(r2[part] / t, y[part], 1, w=np.sqrt(w[part]))
            rates.append(-cf[0])
    gamma0 = float(max(rates)) if rates else math.nan
    gamma1 = float(min(rates)) if rates else math.nan
    bulk = bool(np.all(c[inner] > 0)) if inner.any() else bool(c[0] > 0)
    hist = np.zeros(g.shape)
    cells = np.floor(np.mod(ens.positions[:, k] + g.cell / 2, g.L) / g.cell).astype(np.intp) % g.N
    np.add.at(hist, tuple(cells.T), 1.0)
    hist /= ens.n_paths * g.cell_volume
    report = GaussianEnvelopeReport(t, float(-coef[1]), float(r_sq), gamma0, gamma1, bulk, len(c), widened)
    return Field(g, hist, f"density(t={t:g})"), report


# -- vortex system -------------------------------------------------------------------------------

@dataclass(frozen=True)
class VortexState:
    """Point vortices in the plane with intensities and a blob radius."""

    positions: np.ndarray
    intensities: np.ndarray
    blob_delta: float = 0.0

    def __post_init__(self):
        pos = np.asarray(self.positions, dtype=float).reshape(-1, 2)
        gam = np.asarray(self.intensities, dtype=float).ravel()
        if pos.shape[0] != gam.size:
            raise ConfigurationError("positions and intensities differ in length")
        if not np.all(np.isfinite(pos)):
            raise ConfigurationError("vortex positions must be finite")
        if self.blob_delta < 0:
            raise ConfigurationError("blob_delta must be >= 0")
        object.__setattr__(self, "positions", pos)
        object.__setattr__(self, "intensities", gam)

    @property
    def n_particles(self) -> int:
        return self.positions.shape[0]


@dataclass
class VortexResult:
    """Trajectories ``(S + 1, R, N, 2)`` and per-step diagnostics for ``R`` runs."""

    trajectory: np.ndarray
    min_distance: np.ndarray
    total_drift: np.ndarray
    center: np.ndarray
    dt: float
    krylov_statistic: np.ndarray

    @property
    def times(self) -> np.ndarray:
        return self.dt * np.arange(self.trajectory.shape[0])


def vortex_system(state0: VortexState, dt: float, n_steps: int, seed: int, runs: int = 1,
                  noise: bool = True, ball_radius: float = math.inf,
                  collision_distance: float = 1e-8) -> VortexResult:
    """Euler-Maruyama for ``dX^i = sum_{j != i} gamma_j K_delta(X^i - X^j) dt + sqrt(2) dW^i``.

    Run ``r`` draws its noise from stream ``(seed, r)``.  Diagnostics per
    step: the minimum pairwise distance, the total interaction drift
    ``sum_i gamma_i sum_{j != i} gamma_j K(X^i - X^j)`` (zero by oddness
    of ``K``), the centre of vorticity ``sum_j gamma_j X^j`` and, per run,
    ``(1/T) int_0^T min_{i != j} |X^i - X^j|^{-1/N} 1{max_i |X^i| <= ball_radius} dt``.
    """
    n = state0.n_particles
    nz = np.zeros((n_steps, runs, n, 2))
    if noise:
        for r in range(runs):
            nz[:, r] = generator(seed, r).standard_normal((n_steps, n, 2)) * math.sqrt(2 * dt)
    pos0 = np.broadcast_to(state0.positions, (runs, n, 2))
    traj, md, tot = kernels.vortex_run(pos0, state0.intensities, state0.blob_delta, dt, nz)
    if state0.blob_delta == 0 and n > 1 and float(md.min()) < collision_distance:
        k = int(np.argwhere(md < collision_distance)[0, 0])
        raise SingularityError(f"vortices collided (distance < {collision_distance:g}) at step {k}")
    center = np.einsum("srnc,n->src", traj, state0.intensities)
    if n > 1:
        inside = np.sqrt((traj**2).sum(axis=-1)).max(axis=-1) <= ball_radius
        integrand = np.where(inside, md ** (-1.0 / n), 0.0)
        stat = integrand[:-1].sum(axis=0) * dt / (n_steps * dt)
    else:
        stat = np.zeros(runs)
    return VortexResult(traj, md, tot, center, dt, stat)


def pooled_center_variance(res: VortexResult, windows: int = 10) -> float:
    """Per-coordinate variance rate of centre-of-vorticity increments.

    The path is cut into ``windows`` disjoint time windows; increments from
    every window, run and coordinate are pooled and their mean square is
    divided by the window length.  For independent Brownian increments the
    result estimates ``2 sum_j gamma_j^2``.
    """
    c = res.center
    s = c.shape[0] - 1
    w = s // windows
    incs = np.stack([c[(i + 1) * w] - c[i * w] for i in range(windows)])
    return float((incs**2).mean() / (w * res.dt))
