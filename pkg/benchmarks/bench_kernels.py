"""Compare the compiled kernels against the numpy reference.

Run with ``python3 benchmarks/bench_kernels.py``.  Prints the median wall
time of each backend and the largest absolute difference between them.
"""

import argparse
import time

import numpy as np

from superdrift import _pykernels

try:
    from superdrift import _kernels
except ImportError:
    _kernels = None


def _time(fn, repeats):
    out, times = None, []
    for _ in range(repeats):
        t0 = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t0)
    return float(np.median(times)), out


def bench_interp(n_grid, n_points, repeats):
    rng = np.random.default_rng(0)
    values = rng.standard_normal((2, n_grid, n_grid))
    points = rng.uniform(-1.0, 2.0, (n_points, 2))
    t_py, ref = _time(lambda: _pykernels.interp_periodic(values, points, 1.0), repeats)
    row = {"kernel": f"interp N={n_grid} M={n_points}", "python": t_py}
    if _kernels is not None:
        t_c, out = _time(lambda: _kernels.interp_periodic(values, points, 1.0), repeats)
        row.update(cython=t_c, diff=float(np.abs(out - ref).max()))
    return row


def bench_vortex(n_particles, steps, runs, repeats):
    rng = np.random.default_rng(1)
    pos0 = rng.uniform(-1, 1, (runs, n_particles, 2))
    gam = rng.uniform(0.5, 1.5, n_particles)
    noise = 0.01 * rng.standard_normal((steps, runs, n_particles, 2))
    args = (pos0, gam, 0.05, 1e-3, noise)
    t_py, ref = _time(lambda: _pykernels.vortex_run(*args), repeats)
    row = {"kernel": f"vortex N={n_particles} S={steps} R={runs}", "python": t_py}
    if _kernels is not None:
        t_c, out = _time(lambda: _kernels.vortex_run(*args), repeats)
        row.update(cython=t_c, diff=float(np.abs(out[0] - ref[0]).max()))
    return row


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--repeats", type=int, default=5)
    args = ap.parse_args(argv)
    rows = [
        bench_interp(64, 10_000, args.repeats),
        bench_interp(256, 100_000, args.repeats),
        bench_vortex(2, 2000, 10, args.repeats),
        bench_vortex(50, 100, 4, args.repeats),
    ]
    print(f"{'kernel':34s} {'python [s]':>11s} {'cython [s]':>11s} {'speedup':>8s} {'max diff':>10s}")
    for r in rows:
        if "cython" in r:
            print(f"{r['kernel']:34s} {r['python']:11.4g} {r['cython']:11.4g} "
                  f"{r['python'] / r['cython']:8.1f} {r['diff']:10.2g}")
        else:
            print(f"{r['kernel']:34s} {r['python']:11.4g} {'n/a':>11s}")
    return rows


if __name__ == "__main__":
    main()
