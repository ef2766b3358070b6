"""Experiment configuration: an INI file with five fixed sections.

Grammar: ``[section]`` headers followed by ``key = value`` lines.  Lists
are whitespace separated (vortex positions use ``;`` between points),
booleans are ``yes``/``no`` and ``inf`` is accepted for integrability
exponents.  Every key has a default except ``grid``; unknown sections or
keys are rejected with the offending line number.

Example::

    [grid]
    dim = 2
    N = 64
    L = 1.0
    T = 0.1
    n_t = 20

    [drift]
    kind = gaussian_field
    gamma = 1.5

    [regime]
    kind = supercritical
    alpha = 0
    p = 2
    q = inf

    [run]
    seed = 7
    M = 10000
    dt = 0.0025
    levels = 8 16 32

    [checks]
    names = krylov martingale
"""

from __future__ import annotations

import configparser
import hashlib
import math
import re
from dataclasses import dataclass, fields, replace
from pathlib import Path

from .errors import ConfigurationError
from .grid import GridSpec

__all__ = [
    "GridBlock", "DriftBlock", "RegimeBlock", "RunBlock", "ChecksBlock",
    "ExperimentConfig", "parse_config", "load_config", "serialize_config",
    "DRIFT_KINDS", "CHECK_NAMES",
]

DRIFT_KINDS = ("gaussian_field", "biot_savart", "she", "explicit_file", "zero")
CHECK_NAMES = ("krylov", "cauchy", "martingale", "envelope", "zvonkin", "vortex")
INIT_KINDS = ("point", "uniform", "cosine")


@dataclass(frozen=True)
class GridBlock:
    dim: int = 2
    N: int = 64
    L: float = 1.0
    T: float = 1.0
    n_t: int = 16

    def spec(self) -> GridSpec:
        return GridSpec(self.dim, self.L, self.N, self.T, self.n_t)


@dataclass(frozen=True)
class DriftBlock:
    kind: str = "gaussian_field"
    gamma: float = 1.5
    amplitude: float = 1.0
    mollify: float = 0.0
    seed: int = -1
    ensemble: int = 8
    file: str = ""
    positions: tuple = ()
    intensities: tuple = ()
    blob_delta: float = 0.0
    scale_n: float = 16.0
    sigma: float = 1.0


@dataclass(frozen=True)
class RegimeBlock:
    kind: str = "supercritical"
    alpha: float = 0.0
    p: float = 2.0
    q: float = math.inf


@dataclass(frozen=True)
class RunBlock:
    seed: int = 0
    M: int = 10000
    dt: float = 0.0
    levels: tuple = (8.0, 16.0, 32.0)
    finest: float = 64.0
    init: str = "cosine"
    x0: tuple = ()
    lam: float = 1.0
    lam_max: float = 65536.0
    max_iters: int = 200
    tol: float = 1e-8
    save_paths: bool = False
    vortex_dt: float = 1e-3
    vortex_steps: int = 1000
    vortex_runs: int = 1
    vortex_noise: bool = True
    out: str = "runs"


@dataclass(frozen=True)
class ChecksBlock:
    names: tuple = ()
    sigma: float = 3.0
    uniformity: float = 2.0
    martingale: float = 3.0
    r_squared: float = 0.9
    slope_rel: float = 0.05
    block_slope: float = 0.2
    gradient: float = 0.5
    residual_ratio: float = 0.9
    radius: float = 1e-4
    variance_rel: float = 0.05
    cauchy_fraction: float = 0.8


_SECTIONS = {
    "grid": GridBlock,
    "drift": DriftBlock,
    "regime": RegimeBlock,
    "run": RunBlock,
    "checks": ChecksBlock,
}


@dataclass(frozen=True)
class ExperimentConfig:
    grid: GridBlock
    drift: DriftBlock = DriftBlock()
    regime: RegimeBlock = RegimeBlock()
    run: RunBlock = RunBlock()
    checks: ChecksBlock = ChecksBlock()
    source: str = ""

    def grid_spec(self) -> GridSpec:
        return self.grid.spec()

    def with_seed(self, seed: int) -> "ExperimentConfig":
        return replace(self, run=replace(self.run, seed=int(seed)))

    def config_hash(self) -> str:
        return hashlib.sha256(serialize_config(self).encode()).hexdigest()

    def __eq__(self, other):
        if not isinstance(other, ExperimentConfig):
            return NotImplemented
        return all(getattr(self, s) == getattr(other, s) for s in _SECTIONS)

    def __hash__(self):
        return hash(tuple(getattr(self, s) for s in _SECTIONS))


# -- value conversion ------------------------------------------------------------------------

def _to_float(s: str) -> float:
    s = s.strip().lower()
    if s in ("inf", "+inf", "infinity"):
        return math.inf
    return float(s)


def _to_bool(s: str) -> bool:
    s = s.strip().lower()
    if s in ("yes", "true", "1", "on"):
        return True
    if s in ("no", "false", "0", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _to_tuple(section: str, key: str, s: str) -> tuple:
    s = s.strip()
    if not s:
        return ()
    if section == "checks":
        return tuple(x for x in re.split(r"[\s,]+", s) if x)
    if key == "positions":
        return tuple(tuple(float(v) for v in pt.split()) for pt in s.split(";") if pt.strip())
    return tuple(_to_float(v) for v in re.split(r"[\s,]+", s) if v)


def _convert(section: str, key: str, default, raw: str):
    if isinstance(default, bool):
        return _to_bool(raw)
    if isinstance(default, int):
        return int(raw.strip())
    if isinstance(default, float):
        return _to_float(raw)
    if isinstance(default, tuple):
        return _to_tuple(section, key, raw)
    return raw.strip()


def _format(value) -> str:
    if isinstance(value, bool):
        return "yes" if value else "no"
    if isinstance(value, float):
        return "inf" if math.isinf(value) else repr(value)
    if isinstance(value, tuple):
        if value and isinstance(value[0], tuple):
            return "; ".join(" ".join(repr(float(v)) for v in pt) for pt in value)
        return " ".join(v if isinstance(v, str) else repr(float(v)) for v in value)
    return str(value)


def _line_of(text: str, section: str, key: str | None = None) -> int | None:
    current = None
    for i, line in enumerate(text.splitlines(), 1):
        st = line.strip()
        m = re.match(r"^\[(.+)\]$", st)
        if m:
            current = m.group(1).strip()
            if key is None and current == section:
                return i
            continue
        if current == section and key is not None:
            if re.match(rf"^{re.escape(key)}\s*[=:]", st):
                return i
    return None


def _error(text: str, section: str, key: str | None, msg: str) -> ConfigurationError:
    line = _line_of(text, section, key)
    where = f"[{section}]" + (f" {key}" if key else "")
    prefix = f"line {line}: " if line else ""
    return ConfigurationError(f"{prefix}{where}: {msg}")


# -- parsing and validation -----------------------------------------------------------------

def parse_config(text: str) -> ExperimentConfig:
    """Parse and validate configuration text."""
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#",))
    cp.optionxform = str
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigurationError(f"malformed config: {exc}") from exc
    for sec in cp.sections():
        if sec not in _SECTIONS:
            raise _error(text, sec, None, f"unknown section (expected one of {', '.join(_SECTIONS)})")
    if "grid" not in cp:
        raise ConfigurationError("missing [grid] section")
    blocks = {}
    for sec, cls in _SECTIONS.items():
        defaults = {f.name: f.default for f in fields(cls)}
        values = {}
        if sec in cp:
            for key, raw in cp[sec].items():
                if key not in defaults:
                    raise _error(text, sec, key, "unknown key")
                try:
                    values[key] = _convert(sec, key, defaults[key], raw)
                except ValueError as exc:
                    raise _error(text, sec, key, f"bad value {raw!r} ({exc})") from exc
        blocks[sec] = cls(**values)
    cfg = ExperimentConfig(**blocks, source=text)
    _validate(cfg, text)
    return cfg


def _validate(cfg: ExperimentConfig, text: str):
    try:
        g = cfg.grid.spec()
    except ConfigurationError as exc:
        raise _error(text, "grid", None, str(exc)) from exc
    d = g.dim
    dr = cfg.drift
    if dr.kind not in DRIFT_KINDS:
        raise _error(text, "drift", "kind", f"unknown kind {dr.kind!r} (expected one of {', '.join(DRIFT_KINDS)})")
    if dr.kind == "explicit_file" and not dr.file:
        raise _error(text, "drift", "file", "explicit_file needs a file path")
    if dr.kind == "biot_savart" or "vortex" in cfg.checks.names:
        if d != 2:
            raise _error(text, "grid", "dim", "point vortices need dim = 2")
        if len(dr.positions) != len(dr.intensities) or not dr.positions:
            raise _error(text, "drift", "positions", "positions and intensities must be non-empty and match")
        if any(len(pt) != 2 for pt in dr.positions):
            raise _error(text, "drift", "positions", "each position needs two coordinates")
    if dr.amplitude < 0 or dr.mollify < 0:
        raise _error(text, "drift", "amplitude", "amplitude and mollify must be >= 0")
    rg = cfg.regime
    lhs = (0.0 if math.isinf(rg.p) else d / rg.p) + (0.0 if math.isinf(rg.q) else 2 / rg.q)
    if rg.p < 1 or rg.q < 1:
        raise _error(text, "regime", "p", "integrability exponents must be >= 1")
    if rg.kind == "subcritical":
        if not lhs < 1 + rg.alpha:
            raise _error(text, "regime", "alpha",
                         f"subcritical needs d/p + 2/q < 1 + alpha, got {lhs:g} >= {1 + rg.alpha:g}")
    elif rg.kind == "supercritical":
        if not lhs < 2 + rg.alpha:
            raise _error(text, "regime", "alpha",
                         f"supercritical needs d/p + 2/q < 2 + alpha, got {lhs:g} >= {2 + rg.alpha:g}")
    else:
        raise _error(text, "regime", "kind", "kind must be subcritical or supercritical")
    run = cfg.run
    if run.M < 1:
        raise _error(text, "run", "M", "M must be >= 1")
    if run.dt < 0:
        raise _error(text, "run", "dt", "dt must be >= 0 (0 selects the grid time step)")
    if list(run.levels) != sorted(run.levels) or any(n < 1 for n in run.levels):
        raise _error(text, "run", "levels", "levels must be sorted and >= 1")
    if run.levels and run.levels[-1] > run.finest:
        raise _error(text, "run", "finest", "finest must be >= every level")
    if run.init not in INIT_KINDS:
        raise _error(text, "run", "init", f"init must be one of {', '.join(INIT_KINDS)}")
    if run.init == "point" and len(run.x0) != d:
        raise _error(text, "run", "x0", f"init = point needs x0 with {d} coordinates")
    for name in cfg.checks.names:
        if name not in CHECK_NAMES:
            raise _error(text, "checks", "names", f"unknown check {name!r}")


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigurationError(f"cannot read config {path}: {exc}") from exc
    return parse_config(text)


def serialize_config(cfg: ExperimentConfig) -> str:
    """Canonical text with every key written out; ``parse_config`` inverts it."""
    out = []
    for sec in _SECTIONS:
        block = getattr(cfg, sec)
        out.append(f"[{sec}]")
        for f in fields(block):
            out.append(f"{f.name} = {_format(getattr(block, f.name))}")
        out.append("")
    return "\n".join(out)
