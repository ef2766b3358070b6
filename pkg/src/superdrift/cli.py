"""Command-line runner: ``superdrift synth|pde|sde|report --config FILE``.

Each stage writes into ``<out>/<stage>/`` and finishes with a
``manifest.json`` listing the config hash, package version, seeds, wall
clock per step and every artifact with its sha256.  ``report`` collects
the manifests below ``<out>``, verifies the checksums and merges the
reports into one table plus plot-data files.

Seeds: the root seed (``[run] seed`` or ``--seed``) is split per stage by
:func:`superdrift.rng.stage_seed`.  The drift always uses the ``drift``
stage seed unless ``[drift] seed`` is set, so every stage sees the same
drift.

Exit codes: 0 success, 1 a check failed, 2 configuration error,
3 numerical instability.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import math
import os
import sys
import time
from contextlib import contextmanager
from pathlib import Path

import numpy as np

from . import __version__
from .config import ExperimentConfig, load_config, serialize_config
from .errors import (
    ChecksumError,
    ConfigurationError,
    InstabilityError,
    PicardDivergenceError,
    SimulationError,
    SingularityError,
)
from .fields import (
    SpectralMeasureSpec,
    biot_savart_field,
    mollify,
    regularity_exponent,
    she_environment,
    synth_gaussian_field,
)
from .grid import Field, GridSpec, VectorField, load_field, save_field, save_paths
from .pde import (
    PicardConfig,
    backward_kolmogorov,
    fokker_planck,
    fp_energy_report,
    kolmogorov_energy_report,
    lambda_ladder,
)
from .reports import EstimateReport, write_csv, write_plot_data, write_reports
from .rng import stage_seed
from . import sde

EXIT_OK, EXIT_CHECK, EXIT_CONFIG, EXIT_INSTABILITY = 0, 1, 2, 3
STAGES = ("synth", "pde", "sde", "report")


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


class Stage:
    """Collects artifacts and timings, then writes the manifest."""

    def __init__(self, name: str, cfg: ExperimentConfig, out: Path, threads: int):
        self.name = name
        self.cfg = cfg
        self.dir = out / name
        self.dir.mkdir(parents=True, exist_ok=True)
        self.threads = threads
        self.artifacts: list[Path] = []
        self.timings: dict[str, float] = {}
        self.seeds = {"root": cfg.run.seed, name: stage_seed(cfg.run.seed, name)}
        self.reports: list[EstimateReport] = []

    @property
    def seed(self) -> int:
        return self.seeds[self.name]

    @contextmanager
    def timed(self, step: str):
        t0 = time.perf_counter()
        yield
        self.timings[step] = self.timings.get(step, 0.0) + time.perf_counter() - t0

    def add(self, *paths):
        for p in paths:
            if isinstance(p, (list, tuple)):
                self.add(*p)
            else:
                self.artifacts.append(Path(p))

    def write_json(self, name: str, obj) -> Path:
        p = self.dir / name
        p.write_text(json.dumps(_jsonable(obj), indent=1, sort_keys=True) + "\n")
        self.add(p)
        return p

    def finish(self, status: int, failure: dict | None = None) -> Path:
        if self.reports:
            self.add(write_reports(self.reports, self.dir / "reports.json"))
            self.write_json("checks.json", [r.to_check() for r in self.reports])
        if failure is not None:
            self.write_json("failure.json", failure)
        manifest = {
            "stage": self.name,
            "version": __version__,
            "config_hash": self.cfg.config_hash(),
            "config": serialize_config(self.cfg),
            "seeds": self.seeds,
            "threads": self.threads,
            "timings": self.timings,
            "exit_code": status,
            "artifacts": [
                {"path": str(p.relative_to(self.dir)), "sha256": sha256_file(p), "bytes": p.stat().st_size}
                for p in dict.fromkeys(self.artifacts)
            ],
        }
        path = self.dir / "manifest.json"
        path.write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n")
        return path


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist())
    if isinstance(x, (np.floating, float)):
        x = float(x)
        return x if math.isfinite(x) else str(x)
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, np.bool_):
        return bool(x)
    return x


# -- shared builders ------------------------------------------------------------------------

def drift_seed(cfg: ExperimentConfig) -> int:
    return cfg.drift.seed if cfg.drift.seed >= 0 else stage_seed(cfg.run.seed, "drift")


def build_drift(cfg: ExperimentConfig, seed_offset: int = 0) -> VectorField:
    """The configured drift, normalised to ``amplitude`` in sup norm and mollified if asked."""
    g = cfg.grid_spec()
    dr = cfg.drift
    seed = drift_seed(cfg)
    if dr.kind == "zero":
        return VectorField.zeros(g, "zero")
    if dr.kind == "gaussian_field":
        b = synth_gaussian_field(g, SpectralMeasureSpec(dr.gamma, g.dim), seed, stream_id=seed_offset)
    elif dr.kind == "she":
        b = she_environment(g, dr.gamma, seed, stream_id=seed_offset, sigma=dr.sigma)
    elif dr.kind == "biot_savart":
        b = biot_savart_field(g, np.array(dr.positions), np.array(dr.intensities), dr.scale_n)
    else:
        path = Path(dr.file)
        if not path.exists():
            raise ConfigurationError(f"drift file not found: {path}")
        try:
            b = load_field(path)
        except (FileNotFoundError, ValueError, KeyError) as exc:
            raise ConfigurationError(f"cannot load drift file {path}: {exc}") from exc
        if not isinstance(b, VectorField) or not b.grid.same_space(g):
            raise ConfigurationError(f"drift file {path} does not match the [grid] block")
        if b.time_dependent and b.grid.time_steps != g.time_steps:
            raise ConfigurationError(f"drift file {path} has a different number of time steps")
        b = VectorField(g, b.data, b.label, b.divergence_free)
    if dr.amplitude > 0 and dr.kind not in ("explicit_file", "biot_savart"):
        s = b.sup_norm()
        if s > 0:
            b = b * (dr.amplitude / s)
    if dr.mollify > 0:
        b = mollify(b, dr.mollify)
    return b


def initial_density(cfg: ExperimentConfig, g: GridSpec) -> Field:
    if cfg.run.init == "uniform":
        return Field.from_function(g, lambda *x: np.full(g.shape, 1.0 / g.L**g.dim), "uniform")
    # a smooth positive bump, normalised to unit mass
    def bump(*x):
        return 1.0 + 0.5 * np.cos(2 * np.pi * x[0] / g.L)
    f = Field.from_function(g, bump, "cosine")
    return f * (1.0 / float(g.integrate(f.slices[0])))


def probe_function(g: GridSpec) -> Field:
    """Smooth forcing ``1/2 + prod_a cos(2 pi x_a / L)`` used by the PDE and SDE checks."""
    def f(*x):
        out = np.full(g.shape, 0.5)
        prod = np.ones(g.shape)
        for xa in x:
            prod = prod * np.cos(2 * np.pi * xa / g.L)
        return out + prod
    return Field.from_function(g, f, "probe_function")


def _dt(cfg: ExperimentConfig, g: GridSpec) -> float:
    return cfg.run.dt if cfg.run.dt > 0 else g.dt


def _init(cfg: ExperimentConfig, g: GridSpec):
    if cfg.run.init == "point":
        return np.array(cfg.run.x0, dtype=float)
    return initial_density(cfg, g)


def _mollified(b: VectorField, n: float, cfg: ExperimentConfig) -> VectorField:
    # explicit and vortex drifts are already smooth grid fields
    if cfg.drift.kind in ("zero", "explicit_file", "biot_savart"):
        return b
    return mollify(b, n)


# -- stages ----------------------------------------------------------------------------------

def cmd_synth(cfg: ExperimentConfig, out: Path, threads: int) -> int:
    st = Stage("synth", cfg, out, threads)
    with st.timed("synthesis"):
        b = build_drift(cfg)
    st.add(save_field(b, st.dir / "drift.fld"))
    with st.timed("regularity"):
        ens = [b]
        if cfg.drift.kind == "gaussian_field":
            ens += [build_drift(cfg, seed_offset=i) for i in range(1, max(cfg.drift.ensemble, 1))]
        slope, exponent, logs = regularity_exponent(ens)
    payload = {
        "kind": cfg.drift.kind,
        "gamma": cfg.drift.gamma,
        "ensemble": len(ens),
        "slope": slope,
        "measured_exponent": exponent,
        "expected_slope": cfg.grid.dim - cfg.drift.gamma if cfg.drift.kind == "gaussian_field" else None,
        "block_index": list(range(-1, len(logs) - 1)),
        "log2_energy": logs,
        "divergence_residual": b.fourier_divergence_residual(),
        "sup_norm": b.sup_norm(),
    }
    # checks travel inside regularity.json so the stage keeps three artifacts
    reps = []
    if cfg.drift.kind == "gaussian_field":
        expected = payload["expected_slope"]
        reps.append(EstimateReport("synth_block_slope", slope, expected, None,
                                   abs(slope - expected) <= cfg.checks.block_slope,
                                   {"tolerance": cfg.checks.block_slope}))
        res = payload["divergence_residual"]
        reps.append(EstimateReport("synth_divergence", res, 1e-10, None, res <= 1e-10))
    payload["reports"] = [r.to_dict() for r in reps]
    payload["checks"] = [r.to_check() for r in reps]
    st.write_json("regularity.json", payload)
    status = EXIT_OK if all(r.passed for r in reps) else EXIT_CHECK
    st.finish(status)
    return status


def cmd_pde(cfg: ExperimentConfig, out: Path, threads: int) -> int:
    st = Stage("pde", cfg, out, threads)
    g = cfg.grid_spec()
    b = build_drift(cfg)
    ck = cfg.checks
    if cfg.regime.kind == "subcritical":
        pc = PicardConfig(cfg.run.lam, cfg.run.max_iters, cfg.run.tol, cfg.regime.alpha,
                          cfg.regime.p, cfg.regime.q)
        forcing = [Field(g, b.data[i], f"b_{i}") for i in range(g.dim)]
        with st.timed("lambda_ladder"):
            try:
                lam, sols, its, history = lambda_ladder(b, forcing, pc, cfg.run.lam, cfg.run.lam_max,
                                                        ck.gradient)
            except PicardDivergenceError as exc:
                st.reports.append(EstimateReport("picard_lambda_ladder", math.inf, cfg.run.lam_max,
                                                 passed=False, details={"message": str(exc)}))
                st.finish(EXIT_INSTABILITY, {"error": "PicardDivergenceError", "message": str(exc),
                                             "residuals": exc.residuals, "lambda": exc.lam})
                return EXIT_INSTABILITY
        u = VectorField(g, np.stack([s[0].slices for s in sols]), "u^lambda")
        st.add(save_field(u, st.dir / "u.fld"))
        grad = history[-1][2]
        res = sols[0][2]
        ratio = _geometric_ratio(res)
        st.reports.append(EstimateReport("picard_gradient_bound", grad, ck.gradient,
                                         details={"lambda": lam, "iterations": its}))
        st.reports.append(EstimateReport("picard_residual_ratio", ratio, ck.residual_ratio,
                                         passed=ratio < ck.residual_ratio, details={"lambda": lam}))
        rows = [{"lambda": h[0], "converged": h[1], "gradient": h[2], "iterations": h[3]} for h in history]
        st.add(write_csv(rows, ["lambda", "converged", "gradient", "iterations"], st.dir / "lambda.csv"))
    else:
        rho0 = initial_density(cfg, g)
        f = probe_function(g)
        rows = []
        for n in cfg.run.levels:
            bn = _mollified(b, n, cfg)
            with st.timed(f"fokker_planck[n={n:g}]"):
                rho = fokker_planck(bn, rho0)
            with st.timed(f"kolmogorov[n={n:g}]"):
                u = backward_kolmogorov(bn, f)
            fp = fp_energy_report(rho, rho0)
            ko = kolmogorov_energy_report(u, f)
            st.reports.append(fp.as_estimate(f"fp_energy[n={n:g}]"))
            st.reports.append(EstimateReport(f"fp_l2_growth[n={n:g}]", fp.extra["max_l2_growth"], 1e-6))
            st.reports.append(EstimateReport(f"fp_mass[n={n:g}]", fp.extra["mass_error"], 1e-8))
            rows.append({"n": n, "fp_energy": fp.measured, "fp_ratio": fp.ratio,
                         "kolmogorov_energy": ko.measured, "kolmogorov_ratio": ko.ratio,
                         "l2_growth": fp.extra["max_l2_growth"], "mass_error": fp.extra["mass_error"]})
        for key in ("kolmogorov", "fp"):
            ratios = [r[f"{key}_ratio"] for r in rows if r[f"{key}_ratio"] > 0]
            if len(ratios) > 1:
                spread = max(ratios) / min(ratios)
                st.reports.append(EstimateReport(f"{key}_uniformity", spread, ck.uniformity))
        st.add(write_csv(rows, ["n", "fp_energy", "fp_ratio", "kolmogorov_energy", "kolmogorov_ratio",
                                "l2_growth", "mass_error"], st.dir / "energy.csv"))
    status = EXIT_OK if all(r.passed for r in st.reports) else EXIT_CHECK
    st.finish(status)
    return status


def _geometric_ratio(res) -> float:
    """Mean contraction factor of the Picard residuals after the first step."""
    r = [x for x in res[1:] if x > 0]
    if len(r) < 2:
        return 0.0
    return float((r[-1] / r[0]) ** (1.0 / (len(r) - 1)))


def cmd_sde(cfg: ExperimentConfig, out: Path, threads: int) -> int:
    st = Stage("sde", cfg, out, threads)
    g = cfg.grid_spec()
    ck = cfg.checks
    run = cfg.run
    dt = _dt(cfg, g)
    seed = st.seed
    b = build_drift(cfg)
    bn = _mollified(b, run.finest, cfg)
    init = _init(cfg, g)
    with st.timed("ensemble"):
        ens = sde.simulate_ensemble(bn, init, run.M, dt, seed, threads=threads)
    st.write_json("ensemble.json", ens.summary())
    if run.save_paths:
        st.add(save_paths(ens.positions, ens.dt, st.dir / "paths.fld", ens.drift_label))
    f = probe_function(g)
    rho0 = initial_density(cfg, g)
    for name in ck.names:
        with st.timed(name):
            if name == "krylov":
                levels = [None] if cfg.drift.kind == "zero" else list(run.levels)
                reps, rows = sde.krylov_check(b, levels, f, rho0, run.M, seed, dt,
                                              (cfg.regime.alpha, cfg.regime.p, cfg.regime.q), threads,
                                              ck.sigma, ck.uniformity)
                st.reports += reps
                st.add(write_csv(rows, ["level", "mc", "mc_stderr", "pde", "gap", "budget", "tolerance",
                                        "normalized"], st.dir / "krylov.csv"))
            elif name == "cauchy":
                rows, trend = sde.cauchy_in_n(b, run.levels, run.finest, run.M, seed, dt, init, threads)
                gaps = trend["consecutive_gaps"]
                ratio = gaps[-1] / gaps[0] if len(gaps) > 1 and gaps[0] > 0 else 0.0
                st.reports.append(EstimateReport("cauchy_trend", ratio, 1.0, passed=trend["decreasing"],
                                                 details={"gaps": gaps}))
                st.add(write_csv(rows, ["n", "n_prime", "gap", "stderr"], st.dir / "cauchy.csv"))
            elif name == "martingale":
                levels = [None] if cfg.drift.kind == "zero" else list(run.levels)
                for n in levels:
                    bl = b if n is None else _mollified(b, n, cfg)
                    e = ens if n is None else sde.simulate_ensemble(bl, init, run.M, dt, seed, threads=threads)
                    t_end = g.time_horizon
                    s = g.dt * (g.time_steps // 2)
                    z = sde.martingale_defect(e, bl, f, s, t_end)
                    label = "none" if n is None else f"{n:g}"
                    st.reports.append(EstimateReport(f"martingale_defect[n={label}]", z, ck.martingale))
            elif name == "envelope":
                x0 = np.array(run.x0) if run.x0 else np.full(g.dim, g.L / 2)
                e = sde.simulate_ensemble(bn, x0, run.M, dt, seed, threads=threads)
                dens, rep = sde.transition_density(e)
                st.add(save_field(dens, st.dir / "density.fld"))
                st.write_json("envelope.json", rep.to_dict())
                st.reports.append(EstimateReport("envelope_r_squared", rep.r_squared, ck.r_squared,
                                                 passed=rep.r_squared >= ck.r_squared))
                st.reports.append(EstimateReport("envelope_bulk_positive", float(rep.bulk_positive), 1.0,
                                                 passed=rep.bulk_positive))
                if cfg.drift.kind == "zero":
                    rel = abs(rep.slope * 4 * rep.t - 1.0)
                    st.reports.append(EstimateReport("envelope_slope", rel, ck.slope_rel))
            elif name == "zvonkin":
                pc = PicardConfig(run.lam, run.max_iters, run.tol, cfg.regime.alpha, cfg.regime.p,
                                  cfg.regime.q)
                phi, y, rep = sde.zvonkin_transform(bn, pc, ens, auto_lambda=True)
                st.add(save_field(phi, st.dir / "phi.fld"))
                st.reports += rep.estimates()
            elif name == "vortex":
                st.reports += _vortex_reports(cfg, seed)
    status = EXIT_OK if all(r.passed for r in st.reports) else EXIT_CHECK
    st.finish(status)
    return status


def _vortex_reports(cfg: ExperimentConfig, seed: int) -> list[EstimateReport]:
    dr, run, ck = cfg.drift, cfg.run, cfg.checks
    state = sde.VortexState(np.array(dr.positions), np.array(dr.intensities), dr.blob_delta)
    res = sde.vortex_system(state, run.vortex_dt, run.vortex_steps, seed, runs=run.vortex_runs,
                            noise=run.vortex_noise)
    reps = [EstimateReport("vortex_total_drift", float(np.abs(res.total_drift).max()), 0.0,
                           passed=bool(np.all(res.total_drift == 0)))]
    if not run.vortex_noise and state.n_particles == 2:
        x = res.trajectory[:, :, 0] - res.trajectory[:, :, 1]
        r = np.sqrt((x**2).sum(axis=-1)) / 2
        reps.append(EstimateReport("vortex_radius", float(np.abs(r - r[0]).max()), ck.radius))
    if run.vortex_noise:
        target = 2 * float(np.sum(state.intensities**2))
        v = sde.pooled_center_variance(res)
        reps.append(EstimateReport("vortex_center_variance", abs(v / target - 1), ck.variance_rel,
                                   details={"estimate": v, "target": target}))
    reps.append(EstimateReport("vortex_min_distance", float(res.min_distance.min()), 0.0,
                               passed=bool(res.min_distance.min() > 0),
                               details={"krylov_statistic": float(res.krylov_statistic.mean())}))
    return reps


def cmd_report(out: Path) -> int:
    manifests = sorted(p for p in out.rglob("manifest.json") if p.parent.name != "report")
    if not manifests:
        raise ConfigurationError(f"no manifests under {out}")
    rows = []
    plots = {}
    for mp in manifests:
        man = json.loads(mp.read_text())
        run_id = str(mp.parent.relative_to(out))
        for art in man["artifacts"]:
            p = mp.parent / art["path"]
            if not p.exists() or sha256_file(p) != art["sha256"]:
                raise ChecksumError(f"checksum mismatch for {p} listed in {mp}")
        rp = mp.parent / "reports.json"
        reg = mp.parent / "regularity.json"
        if rp.exists():
            stage_reports = json.loads(rp.read_text())
        elif reg.exists():
            stage_reports = json.loads(reg.read_text()).get("reports", [])
        else:
            stage_reports = []
        for d in stage_reports:
            rows.append({"run": run_id, "stage": man["stage"], **{k: d[k] for k in
                         ("name", "measured", "bound", "ratio", "pass")}})
        _collect_plots(mp.parent, run_id, plots)
    rd = out / "report"
    rd.mkdir(parents=True, exist_ok=True)
    write_csv(rows, ["run", "stage", "name", "measured", "bound", "ratio", "pass"], rd / "summary.csv")
    lines = ["| run | name | measured | bound | ratio | pass |", "|---|---|---|---|---|---|"]
    for r in rows:
        lines.append(f"| {r['run']} | {r['name']} | {r['measured']} | {r['bound']} | {r['ratio']} | "
                     f"{'yes' if r['pass'] else 'no'} |")
    (rd / "summary.md").write_text("\n".join(lines) + "\n")
    for fname, (x, y, xl, yl) in plots.items():
        write_plot_data(x, y, rd / fname, xl, yl)
    failed = sum(not r["pass"] for r in rows)
    return EXIT_CHECK if failed else EXIT_OK


def _collect_plots(d: Path, run_id: str, plots: dict):
    tag = run_id.replace("/", "_").replace(os.sep, "_")
    reg = d / "regularity.json"
    if reg.exists():
        data = json.loads(reg.read_text())
        pts = [(j, v) for j, v in zip(data["block_index"], data["log2_energy"])
               if isinstance(v, (int, float))]
        plots[f"{tag}_blocks.dat"] = ([p[0] for p in pts], [p[1] for p in pts], "block_index", "log2_energy")
    for name, xcol, ycol in (("lambda.csv", "lambda", "gradient"), ("cauchy.csv", "n", "gap"),
                             ("energy.csv", "n", "fp_ratio")):
        p = d / name
        if p.exists():
            with p.open() as fh:
                rd = list(csv.DictReader(fh))
            if name == "cauchy.csv":
                rd = [r for r in rd if float(r["n_prime"]) == 2 * float(r["n"])]
            xs, ys = [], []
            for r in rd:
                try:
                    xs.append(float(r[xcol]))
                    ys.append(float(r[ycol]))
                except ValueError:
                    continue
            plots[f"{tag}_{name.split('.')[0]}.dat"] = (xs, ys, xcol, ycol)


def _failure_record(d: Path, exc: Exception):
    d.mkdir(parents=True, exist_ok=True)
    rec = {"error": type(exc).__name__, "message": str(exc)}
    for attr in ("step", "path_index", "lam"):
        if getattr(exc, attr, None) is not None:
            rec[attr] = getattr(exc, attr)
    (d / "failure.json").write_text(json.dumps(_jsonable(rec), indent=1, sort_keys=True) + "\n")


# -- entry point -----------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="superdrift", description="Singular-drift diffusion experiments.")
    p.add_argument("command", choices=STAGES)
    p.add_argument("--config", required=True, help="INI experiment configuration")
    p.add_argument("--out", help="output directory (default: [run] out)")
    p.add_argument("--seed", type=int, help="root seed, overrides [run] seed")
    p.add_argument("--threads", type=int, help="worker threads (default: SUPERDRIFT_THREADS or 1)")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    out = None
    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            if not 0 <= args.seed < 2**64:
                raise ConfigurationError("--seed must be an unsigned 64-bit integer")
            cfg = cfg.with_seed(args.seed)
        threads = sde.resolve_threads(args.threads)
        out = Path(args.out or cfg.run.out)
        if args.command == "synth":
            code = cmd_synth(cfg, out, threads)
        elif args.command == "pde":
            code = cmd_pde(cfg, out, threads)
        elif args.command == "sde":
            code = cmd_sde(cfg, out, threads)
        else:
            code = cmd_report(out)
    except ConfigurationError as exc:
        print(f"superdrift: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (InstabilityError, SimulationError, SingularityError, PicardDivergenceError) as exc:
        print(f"superdrift: numerical instability: {exc}", file=sys.stderr)
        if out is not None:
            _failure_record(out / args.command, exc)
        return EXIT_INSTABILITY
    except ChecksumError as exc:
        print(f"superdrift: {exc}", file=sys.stderr)
        return EXIT_CHECK
    if code != EXIT_OK:
        print(f"superdrift: {args.command} finished with failures (exit {code})", file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
