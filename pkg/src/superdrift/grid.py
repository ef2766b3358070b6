"""Periodic space-time grids, sampled fields, and the ``.fld`` file format.

Everything in the package lives on the torus ``[0, L)^d`` sampled at
``N`` points per side.  Time-dependent quantities are stored as dense
slices at ``t_k = k T / n_t`` for ``k = 0..n_t``; a time-independent field
stores a single slice.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np

from .errors import ConfigurationError, GridMismatchError

__all__ = [
    "GridSpec",
    "Field",
    "VectorField",
    "save_field",
    "load_field",
    "save_paths",
    "load_paths",
]


def _is_power_of_two(n: int) -> bool:
    return n > 0 and (n & (n - 1)) == 0


@dataclass(frozen=True)
class GridSpec:
    """Discretisation of ``[0, L)^d x [0, T]``.

    Parameters
    ----------
    dim : int
        Spatial dimension ``d >= 1``.
    side_length : float
        Torus side ``L``.
    points_per_side : int
        ``N``, a power of two.
    time_horizon : float
        ``T > 0``.
    time_steps : int
        ``n_t >= 1``; time-dependent fields carry ``n_t + 1`` slices.
    """

    dim: int = 2
    side_length: float = 2 * math.pi
    points_per_side: int = 64
    time_horizon: float = 1.0
    time_steps: int = 1

    def __post_init__(self):
        if self.dim < 1:
            raise ConfigurationError(f"dim must be >= 1, got {self.dim}")
        if not _is_power_of_two(int(self.points_per_side)):
            raise ConfigurationError(
                f"points_per_side must be a power of two, got {self.points_per_side}"
            )
        if not self.side_length > 0:
            raise ConfigurationError("side_length must be positive")
        if not self.time_horizon > 0:
            raise ConfigurationError("time_horizon must be positive")
        if self.time_steps < 1:
            raise ConfigurationError("time_steps must be >= 1")

    # -- geometry -----------------------------------------------------------
    @property
    def N(self) -> int:
        return int(self.points_per_side)

    @property
    def L(self) -> float:
        return float(self.side_length)

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.N,) * self.dim

    @property
    def cell(self) -> float:
        return self.L / self.N

    @property
    def cell_volume(self) -> float:
        return self.cell**self.dim

    @property
    def dt(self) -> float:
        """Spacing between stored time slices."""
        return self.time_horizon / self.time_steps

    @property
    def times(self) -> np.ndarray:
        return np.linspace(0.0, self.time_horizon, self.time_steps + 1)

    @property
    def k_max(self) -> float:
        """Physical Nyquist wavenumber ``pi N / L``."""
        return math.pi * self.N / self.L

    @property
    def j_max(self) -> int:
        # dyadic indices are measured in units of the lattice spacing 2*pi/L,
        # where the Nyquist index is N/2
        return int(math.floor(math.log2(self.N / 2))) - 1

    def coordinates(self) -> list[np.ndarray]:
        """Broadcastable coordinate arrays ``x_1, ..., x_d``."""
        x = np.arange(self.N) * self.cell
        out = []
        for axis in range(self.dim):
            shp = [1] * self.dim
            shp[axis] = self.N
            out.append(x.reshape(shp))
        return out

    def mesh(self) -> list[np.ndarray]:
        return [np.broadcast_to(c, self.shape) for c in self.coordinates()]

    # -- Fourier side -------------------------------------------------------
    @property
    def rshape(self) -> tuple[int, ...]:
        """Shape of the half spectrum returned by ``rfftn``."""
        return (self.N,) * (self.dim - 1) + (self.N // 2 + 1,)

    @cached_property
    def lattice(self) -> list[np.ndarray]:
        """Integer wave indices on the half spectrum (broadcastable)."""
        out = []
        for axis in range(self.dim):
            if axis == self.dim - 1:
                k = np.fft.rfftfreq(self.N, d=1.0 / self.N)
            else:
                k = np.fft.fftfreq(self.N, d=1.0 / self.N)
            shp = [1] * self.dim
            shp[axis] = k.size
            out.append(k.reshape(shp))
        return out

    @cached_property
    def wavevector(self) -> list[np.ndarray]:
        """Physical wave vector components ``xi_i = 2 pi k_i / L``."""
        scale = 2 * math.pi / self.L
        return [scale * k for k in self.lattice]

    @cached_property
    def xi2(self) -> np.ndarray:
        """``|xi|^2`` on the half spectrum (physical units)."""
        out = np.zeros(self.rshape)
        for c in self.wavevector:
            out = out + c**2
        return out

    @cached_property
    def lattice_radius(self) -> np.ndarray:
        """``|k|`` in units of ``2 pi / L``."""
        out = np.zeros(self.rshape)
        for c in self.lattice:
            out = out + c**2
        return np.sqrt(out)

    @cached_property
    def nyquist_mask(self) -> np.ndarray:
        """True on modes with some component at the Nyquist index."""
        mask = np.zeros(self.rshape, dtype=bool)
        for c in self.lattice:
            mask |= np.abs(c) == self.N // 2
        return mask

    @cached_property
    def dealias_mask(self) -> np.ndarray:
        """Two-thirds rule: keep modes with every ``|k_i| < N/3``."""
        mask = np.ones(self.rshape, dtype=bool)
        for c in self.lattice:
            mask &= np.abs(c) < self.N / 3
        return mask

    def fft(self, a: np.ndarray) -> np.ndarray:
        return np.fft.rfftn(a, axes=tuple(range(-self.dim, 0)))

    def ifft(self, a: np.ndarray) -> np.ndarray:
        return np.fft.irfftn(a, s=self.shape, axes=tuple(range(-self.dim, 0)))

    def derivative(self, a: np.ndarray, axis: int) -> np.ndarray:
        """Spectral derivative along ``axis``; Nyquist modes are dropped."""
        fa = self.fft(a)
        mult = 1j * self.wavevector[axis] * ~self.nyquist_mask
        return self.ifft(fa * mult)

    def integrate(self, a: np.ndarray) -> np.ndarray:
        """Rectangle-rule integral over the spatial axes."""
        return a.sum(axis=tuple(range(-self.dim, 0))) * self.cell_volume

    def same_space(self, other: "GridSpec") -> bool:
        return (
            self.dim == other.dim
            and self.N == other.N
            and math.isclose(self.L, other.L, rel_tol=1e-14)
        )

    def with_time(self, time_horizon=None, time_steps=None) -> "GridSpec":
        return GridSpec(
            self.dim,
            self.side_length,
            self.points_per_side,
            self.time_horizon if time_horizon is None else time_horizon,
            self.time_steps if time_steps is None else time_steps,
        )


def _freeze(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a, dtype=np.float64)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Field:
    """Real scalar samples on a grid, one array per time slice.

    ``slices`` has shape ``(n_slices, N, ..., N)``.  It is either one
    slice (time independent) or ``grid.time_steps + 1`` slices.
    """

    grid: GridSpec
    slices: np.ndarray
    label: str = ""

    def __post_init__(self):
        arr = np.asarray(self.slices, dtype=np.float64)
        if arr.shape == self.grid.shape:
            arr = arr[None]
        if arr.shape[1:] != self.grid.shape:
            raise ConfigurationError(
                f"slice shape {arr.shape[1:]} does not match grid {self.grid.shape}"
            )
        if arr.shape[0] not in (1, self.grid.time_steps + 1):
            raise ConfigurationError(
                f"expected 1 or {self.grid.time_steps + 1} slices, got {arr.shape[0]}"
            )
        if not np.all(np.isfinite(arr)):
            raise ConfigurationError(f"field {self.label!r} has non-finite samples")
        object.__setattr__(self, "slices", _freeze(arr))

    @classmethod
    def from_function(cls, grid, func, label="", time_dependent=False):
        """Sample ``func(t, *x)`` (or ``func(*x)`` if time independent)."""
        xs = grid.mesh()
        if time_dependent:
            data = np.stack([np.broadcast_to(func(t, *xs), grid.shape) for t in grid.times])
        else:
            data = np.broadcast_to(func(*xs), grid.shape)[None]
        return cls(grid, data, label)

    @classmethod
    def zeros(cls, grid, label="", time_dependent=False):
        n = grid.time_steps + 1 if time_dependent else 1
        return cls(grid, np.zeros((n,) + grid.shape), label)

    @property
    def n_slices(self) -> int:
        return self.slices.shape[0]

    @property
    def time_dependent(self) -> bool:
        return self.n_slices > 1

    def slice_at(self, k: int) -> np.ndarray:
        return self.slices[0 if self.n_slices == 1 else k]

    def at_time(self, t: float) -> np.ndarray:
        """Linear interpolation in time between stored slices."""
        if self.n_slices == 1:
            return self.slices[0]
        s = np.clip(t / self.grid.dt, 0.0, self.grid.time_steps)
        k = min(int(math.floor(s)), self.grid.time_steps - 1)
        w = s - k
        if w == 0.0:
            return self.slices[k]
        return (1 - w) * self.slices[k] + w * self.slices[k + 1]

    def expand_time(self) -> "Field":
        """Return a field with ``n_t + 1`` slices (copies if constant)."""
        if self.time_dependent:
            return self
        data = np.broadcast_to(self.slices, (self.grid.time_steps + 1,) + self.grid.shape)
        return Field(self.grid, data, self.label)

    def with_data(self, slices, label=None) -> "Field":
        return Field(self.grid, slices, self.label if label is None else label)

    def __mul__(self, c: float) -> "Field":
        return self.with_data(self.slices * c)

    __rmul__ = __mul__

    def __add__(self, other: "Field") -> "Field":
        _check_same(self.grid, other.grid)
        return self.with_data(self.slices + other.slices)

    def __sub__(self, other: "Field") -> "Field":
        _check_same(self.grid, other.grid)
        return self.with_data(self.slices - other.slices)


@dataclass(frozen=True, eq=False)
class VectorField:
    """``C`` component fields sharing one grid and time indexing.

    ``data`` has shape ``(C, n_slices, N, ..., N)``; normally ``C == d``.
    """

    grid: GridSpec
    data: np.ndarray
    label: str = ""
    divergence_free: bool = False
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        arr = np.asarray(self.data, dtype=np.float64)
        if arr.ndim == self.grid.dim + 1:
            arr = arr[:, None]
        if arr.shape[2:] != self.grid.shape:
            raise ConfigurationError(
                f"component shape {arr.shape[2:]} does not match grid {self.grid.shape}"
            )
        if arr.shape[1] not in (1, self.grid.time_steps + 1):
            raise ConfigurationError(
                f"expected 1 or {self.grid.time_steps + 1} slices, got {arr.shape[1]}"
            )
        if not np.all(np.isfinite(arr)):
            raise ConfigurationError(f"vector field {self.label!r} has non-finite samples")
        object.__setattr__(self, "data", _freeze(arr))

    @classmethod
    def from_components(cls, components, label="", divergence_free=False):
        grid = components[0].grid
        for c in components[1:]:
            _check_same(grid, c.grid)
        n = max(c.n_slices for c in components)
        data = np.stack([c.expand_time().slices if n > 1 else c.slices for c in components])
        return cls(grid, data, label, divergence_free)

    @classmethod
    def zeros(cls, grid, label="", time_dependent=False, components=None):
        n = grid.time_steps + 1 if time_dependent else 1
        c = grid.dim if components is None else components
        return cls(grid, np.zeros((c, n) + grid.shape), label, divergence_free=True)

    @property
    def n_components(self) -> int:
        return self.data.shape[0]

    @property
    def n_slices(self) -> int:
        return self.data.shape[1]

    @property
    def time_dependent(self) -> bool:
        return self.n_slices > 1

    @property
    def components(self) -> list[Field]:
        return [Field(self.grid, self.data[i], f"{self.label}[{i}]") for i in range(self.n_components)]

    def slice_at(self, k: int) -> np.ndarray:
        return self.data[:, 0 if self.n_slices == 1 else k]

    def at_time(self, t: float) -> np.ndarray:
        if self.n_slices == 1:
            return self.data[:, 0]
        s = np.clip(t / self.grid.dt, 0.0, self.grid.time_steps)
        k = min(int(math.floor(s)), self.grid.time_steps - 1)
        w = s - k
        if w == 0.0:
            return self.data[:, k]
        return (1 - w) * self.data[:, k] + w * self.data[:, k + 1]

    def with_data(self, data, label=None, divergence_free=None) -> "VectorField":
        return VectorField(
            self.grid,
            data,
            self.label if label is None else label,
            self.divergence_free if divergence_free is None else divergence_free,
            dict(self.meta),
        )

    def __mul__(self, c: float) -> "VectorField":
        return self.with_data(self.data * c)

    __rmul__ = __mul__

    def sup_norm(self) -> float:
        """Max over slices and points of the Euclidean norm."""
        return float(np.sqrt((self.data**2).sum(axis=0)).max())

    def divergence(self) -> np.ndarray:
        """Spectral divergence, per slice."""
        g = self.grid
        acc = np.zeros(self.data.shape[1:2] + g.rshape, dtype=complex)
        for i in range(self.n_components):
            acc += 1j * g.wavevector[i] * g.fft(self.data[i])
        return g.ifft(acc)

    def fourier_divergence_residual(self) -> float:
        """``max |xi . b_hat| / max |b_hat|`` over slices (0 for b = 0)."""
        g = self.grid
        hats = np.stack([g.fft(self.data[i]) for i in range(self.n_components)])
        div = sum(g.wavevector[i] * hats[i] for i in range(self.n_components))
        top = float(np.abs(hats).max())
        if top == 0.0:
            return 0.0
        return float(np.abs(div).max()) / top


def _check_same(a: GridSpec, b: GridSpec):
    if not a.same_space(b):
        raise GridMismatchError(f"grid mismatch: {a} vs {b}")


def check_same_grid(*fields):
    g = fields[0].grid
    for f in fields[1:]:
        _check_same(g, f.grid)
    return g


# -- serialisation ---------------------------------------------------------

def _sidecar(path: Path) -> Path:
    return path.with_name(path.name + ".json")


def save_field(obj, path) -> list[Path]:
    """Write a Field or VectorField as raw little-endian float64 + JSON sidecar.

    Layout is row-major over ``(components, slices, x_1, ..., x_d)``; a
    scalar field has no component axis.  Returns the two written paths.
    """
    path = Path(path)
    if path.suffix != ".fld":
        path = path.with_suffix(".fld")
    path.parent.mkdir(parents=True, exist_ok=True)
    g = obj.grid
    if isinstance(obj, VectorField):
        arr = obj.data
        meta = {"components": obj.n_components, "divergence_free": obj.divergence_free}
    else:
        arr = obj.slices
        meta = {"components": 0}
    arr.astype("<f8", copy=False).tofile(path)
    side = {
        "dim": g.dim,
        "N": g.N,
        "L": g.L,
        "n_t": g.time_steps,
        "T": g.time_horizon,
        "slices": int(arr.shape[-g.dim - 1]),
        "label": obj.label,
        **meta,
    }
    sp = _sidecar(path)
    sp.write_text(json.dumps(side, sort_keys=True, indent=1) + "\n")
    return [path, sp]


def load_field(path):
    """Inverse of :func:`save_field`."""
    path = Path(path)
    sp = _sidecar(path)
    if not path.exists():
        raise FileNotFoundError(f"field file not found: {path}")
    if not sp.exists():
        raise FileNotFoundError(f"field sidecar not found: {sp}")
    side = json.loads(sp.read_text())
    grid = GridSpec(side["dim"], side["L"], side["N"], side.get("T", 1.0), side["n_t"])
    raw = np.fromfile(path, dtype="<f8")
    n = side["slices"]
    if side.get("components", 0):
        shape = (side["components"], n) + grid.shape
        return VectorField(grid, raw.reshape(shape), side["label"], side.get("divergence_free", False))
    return Field(grid, raw.reshape((n,) + grid.shape), side["label"])


def save_paths(positions: np.ndarray, dt: float, path, label="") -> list[Path]:
    """Path-major trajectory dump: ``(M, n_steps + 1, d)`` float64."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    np.ascontiguousarray(positions, dtype="<f8").tofile(path)
    m, s, d = positions.shape
    sp = _sidecar(path)
    sp.write_text(
        json.dumps({"M": m, "n_steps": s - 1, "d": d, "dt": dt, "label": label}, sort_keys=True, indent=1)
        + "\n"
    )
    return [path, sp]


def load_paths(path):
    path = Path(path)
    side = json.loads(_sidecar(path).read_text())
    raw = np.fromfile(path, dtype="<f8")
    return raw.reshape(side["M"], side["n_steps"] + 1, side["d"]), side
