import json
import math
import shutil
import subprocess
import sys
from dataclasses import replace
from pathlib import Path

import pytest
from hypothesis import given, settings, strategies as st

from superdrift.cli import main
from superdrift.config import (
    ChecksBlock, DriftBlock, ExperimentConfig, GridBlock, RegimeBlock, RunBlock, parse_config,
    serialize_config,
)
from superdrift.errors import ConfigurationError

SYNTH = """
[grid]
dim = 2
N = 64
L = 6.283185307179586
T = 1.0
n_t = 4

[drift]
kind = gaussian_field
gamma = 1.5
"""

PDE_SUPER = """
[grid]
N = 32
L = 1.0
T = 0.05
n_t = 10
[drift]
kind = gaussian_field
gamma = 1.5
amplitude = 5
[regime]
kind = supercritical
[run]
levels = 4 8 12
finest = 12
"""

PDE_SUB = """
[grid]
N = 32
L = 6.283185307179586
T = 1.0
n_t = 8
[drift]
kind = gaussian_field
gamma = 1.8
amplitude = 2
mollify = 2
[regime]
kind = subcritical
alpha = -0.15
p = inf
q = inf
"""

KRYLOV_ZERO = """
[grid]
N = 32
L = 1.0
T = 0.05
n_t = 10
[drift]
kind = zero
[run]
M = 20000
init = cosine
[checks]
names = krylov
"""

VORTEX = """
[grid]
N = 16
L = 1.0
T = 0.05
n_t = 4
[drift]
kind = zero
positions = 2 0; -2 0
intensities = 1 1
[run]
M = 10
vortex_dt = 1e-4
vortex_steps = 502655
vortex_noise = no
[checks]
names = vortex
"""


def _write(tmp_path, text, name="c.ini"):
    p = tmp_path / name
    p.write_text(text)
    return str(p)


def _manifest(d):
    return json.loads((Path(d) / "manifest.json").read_text())


# -- configuration ----------------------------------------------------------------------------

finite = st.floats(0.01, 100, allow_nan=False)


@settings(max_examples=40, deadline=None)
@given(
    n=st.sampled_from([8, 16, 32, 64]), L=finite, T=finite, n_t=st.integers(1, 50),
    kind=st.sampled_from(["gaussian_field", "she", "zero"]), gamma=st.floats(-1, 1.9),
    seed=st.integers(0, 2**63), M=st.integers(1, 10**6),
    levels=st.lists(st.sampled_from([2.0, 4.0, 8.0, 16.0]), max_size=3, unique=True),
    names=st.lists(st.sampled_from(["krylov", "cauchy", "martingale", "envelope", "zvonkin"]), unique=True),
    q=st.sampled_from([math.inf, 8.0, 20.0]),
)
def test_config_round_trip(n, L, T, n_t, kind, gamma, seed, M, levels, names, q):
    cfg = ExperimentConfig(
        GridBlock(2, n, L, T, n_t), DriftBlock(kind, gamma), RegimeBlock("supercritical", 0.0, 2.0, q),
        RunBlock(seed=seed, M=M, levels=tuple(sorted(levels))), ChecksBlock(tuple(names)))
    text = serialize_config(cfg)
    back = parse_config(text)
    assert back == cfg
    assert serialize_config(back) == text
    assert back.config_hash() == cfg.config_hash()


def test_unknown_key_reports_line():
    text = "[grid]\nN = 16\n\n[run]\nseed = 1\nbogus = 3\n"
    with pytest.raises(ConfigurationError, match=r"line 6: \[run\] bogus"):
        parse_config(text)
    with pytest.raises(ConfigurationError, match="line 3"):
        parse_config("[grid]\nN = 16\n[extra]\n")
    with pytest.raises(ConfigurationError, match="missing"):
        parse_config("[run]\nseed = 1\n")


def test_regime_index_validation():
    with pytest.raises(ConfigurationError, match="subcritical"):
        parse_config("[grid]\nN = 16\n[regime]\nkind = subcritical\nalpha = 0\np = 2\nq = inf\n")
    with pytest.raises(ConfigurationError, match="supercritical"):
        parse_config("[grid]\nN = 16\n[regime]\nkind = supercritical\nalpha = -1\np = 2\nq = 2\n")
    cfg = parse_config("[grid]\nN = 16\n[regime]\nkind = subcritical\nalpha = -0.5\np = inf\nq = inf\n")
    assert cfg.regime.alpha == -0.5


def test_other_validation():
    for bad in ("[grid]\nN = 16\n[run]\nlevels = 16 8\n",
                "[grid]\nN = 16\n[run]\ninit = point\n",
                "[grid]\nN = 16\n[checks]\nnames = nonsense\n",
                "[grid]\nN = 16\n[drift]\nkind = explicit_file\n",
                "[grid]\nN = 12\n",
                "[grid]\nN = 16\n[run]\nM = many\n"):
        with pytest.raises(ConfigurationError):
            parse_config(bad)


# -- stages -------------------------------------------------------------------------------------

def test_synth_artifacts_and_reproducibility(tmp_path):
    cfg = _write(tmp_path, SYNTH)
    assert main(["synth", "--config", cfg, "--out", str(tmp_path / "a")]) == 0
    man = _manifest(tmp_path / "a" / "synth")
    names = sorted(a["path"] for a in man["artifacts"])
    assert names == ["drift.fld", "drift.fld.json", "regularity.json"]
    reg = json.loads((tmp_path / "a" / "synth" / "regularity.json").read_text())
    assert math.isfinite(reg["measured_exponent"])
    assert {c["name"] for c in reg["checks"]} == {"synth_block_slope", "synth_divergence"}
    assert main(["synth", "--config", cfg, "--out", str(tmp_path / "b"), "--threads", "3"]) == 0
    other = _manifest(tmp_path / "b" / "synth")
    assert [a["sha256"] for a in man["artifacts"]] == [a["sha256"] for a in other["artifacts"]]
    assert main(["synth", "--config", cfg, "--out", str(tmp_path / "c"), "--seed", "99"]) == 0
    third = _manifest(tmp_path / "c" / "synth")
    assert third["artifacts"][0]["sha256"] != man["artifacts"][0]["sha256"]


def test_pde_supercritical(tmp_path):
    assert main(["pde", "--config", _write(tmp_path, PDE_SUPER), "--out", str(tmp_path)]) == 0
    reps = json.loads((tmp_path / "pde" / "reports.json").read_text())
    energy = [r for r in reps if r["name"].startswith("fp_energy")]
    assert len(energy) == 3 and all(math.isfinite(r["ratio"]) for r in energy)
    assert all(set(r) >= {"name", "measured", "bound", "ratio", "pass"} for r in reps)
    assert (tmp_path / "pde" / "energy.csv").exists()


def test_pde_subcritical_lambda(tmp_path):
    assert main(["pde", "--config", _write(tmp_path, PDE_SUB), "--out", str(tmp_path)]) == 0
    reps = {r["name"]: r for r in json.loads((tmp_path / "pde" / "reports.json").read_text())}
    assert reps["picard_gradient_bound"]["measured"] <= 0.5
    assert (tmp_path / "pde" / "u.fld").exists() and (tmp_path / "pde" / "lambda.csv").exists()


def test_solver_diagnostic_fails_closed(tmp_path):
    text = PDE_SUB.replace("amplitude = 2", "amplitude = 400") + "[run]\nlam_max = 4\nmax_iters = 20\n"
    assert main(["pde", "--config", _write(tmp_path, text), "--out", str(tmp_path)]) == 3
    failure = json.loads((tmp_path / "pde" / "failure.json").read_text())
    assert failure["error"] == "PicardDivergenceError" and failure["residuals"]
    assert _manifest(tmp_path / "pde")["exit_code"] == 3


def test_missing_drift_file(tmp_path, capsys):
    text = SYNTH.replace("kind = gaussian_field", "kind = explicit_file\nfile = nowhere/b.fld")
    assert main(["synth", "--config", _write(tmp_path, text), "--out", str(tmp_path)]) == 2
    assert "nowhere/b.fld" in capsys.readouterr().err


def test_explicit_file_round_trip(tmp_path):
    assert main(["synth", "--config", _write(tmp_path, SYNTH), "--out", str(tmp_path / "a")]) == 0
    src = tmp_path / "a" / "synth" / "drift.fld"
    text = SYNTH.replace("kind = gaussian_field", f"kind = explicit_file\nfile = {src}")
    assert main(["synth", "--config", _write(tmp_path, text, "e.ini"), "--out", str(tmp_path / "b")]) == 0
    assert (tmp_path / "b" / "synth" / "drift.fld").read_bytes() == src.read_bytes()


def test_bad_config_exit_code(tmp_path):
    assert main(["sde", "--config", _write(tmp_path, "[grid]\nN = 16\nfoo = 1\n")]) == 2
    assert main(["sde", "--config", str(tmp_path / "absent.ini")]) == 2


def test_sde_krylov_zero_drift(tmp_path):
    assert main(["sde", "--config", _write(tmp_path, KRYLOV_ZERO), "--out", str(tmp_path)]) == 0
    checks = json.loads((tmp_path / "sde" / "checks.json").read_text())
    assert checks and all(set(c) == {"name", "measured", "threshold", "pass"} for c in checks)
    assert all(c["pass"] for c in checks)


def test_sde_vortex_and_check_failure(tmp_path):
    cfg = _write(tmp_path, VORTEX)
    assert main(["sde", "--config", cfg, "--out", str(tmp_path / "ok")]) == 0
    a = _manifest(tmp_path / "ok" / "sde")
    assert main(["sde", "--config", cfg, "--out", str(tmp_path / "again")]) == 0
    b = _manifest(tmp_path / "again" / "sde")
    assert [x["sha256"] for x in a["artifacts"]] == [x["sha256"] for x in b["artifacts"]]
    # a coarse step breaks the radius check, which must surface as exit 1
    coarse = VORTEX.replace("vortex_dt = 1e-4", "vortex_dt = 1e-2").replace("502655", "5027")
    assert main(["sde", "--config", _write(tmp_path, coarse, "v2.ini"), "--out", str(tmp_path / "bad")]) == 1
    checks = json.loads((tmp_path / "bad" / "sde" / "checks.json").read_text())
    assert any(not c["pass"] for c in checks)


def test_threads_do_not_change_outputs(tmp_path, monkeypatch):
    cfg = _write(tmp_path, KRYLOV_ZERO.replace("M = 20000", "M = 9000\nsave_paths = yes"))
    assert main(["sde", "--config", cfg, "--out", str(tmp_path / "t1"), "--threads", "1"]) == 0
    monkeypatch.setenv("SUPERDRIFT_THREADS", "8")
    assert main(["sde", "--config", cfg, "--out", str(tmp_path / "t8")]) == 0
    a, b = _manifest(tmp_path / "t1" / "sde"), _manifest(tmp_path / "t8" / "sde")
    assert b["threads"] == 8
    assert {x["path"]: x["sha256"] for x in a["artifacts"]} == {x["path"]: x["sha256"] for x in b["artifacts"]}


# -- report -------------------------------------------------------------------------------------

def test_report_empty(tmp_path, capsys):
    cfg = _write(tmp_path, SYNTH)
    assert main(["report", "--config", cfg, "--out", str(tmp_path / "empty")]) == 2
    assert "no manifests" in capsys.readouterr().err


def test_report_merges_runs(tmp_path):
    cfg = _write(tmp_path, SYNTH)
    for run in ("r1", "r2"):
        assert main(["synth", "--config", cfg, "--out", str(tmp_path / "all" / run)]) == 0
    assert main(["pde", "--config", _write(tmp_path, PDE_SUPER, "p.ini"), "--out", str(tmp_path / "all" / "r2")]) == 0
    assert main(["report", "--config", cfg, "--out", str(tmp_path / "all")]) == 0
    rd = tmp_path / "all" / "report"
    table = (rd / "summary.csv").read_text().splitlines()
    assert table[0].split(",") == ["run", "stage", "name", "measured", "bound", "ratio", "pass"]
    runs = {line.split(",")[0] for line in table[1:]}
    assert {"r1/synth", "r2/synth", "r2/pde"} <= runs
    plots = sorted(rd.glob("*.dat"))
    assert plots
    for p in plots:
        lines = p.read_text().splitlines()
        assert lines[0].startswith("#")
        for line in lines[1:]:
            cols = line.split()
            assert len(cols) == 2
            [float(c) for c in cols]


def test_report_detects_corruption(tmp_path):
    cfg = _write(tmp_path, SYNTH)
    assert main(["synth", "--config", cfg, "--out", str(tmp_path)]) == 0
    p = tmp_path / "synth" / "regularity.json"
    p.write_text(p.read_text() + " ")
    assert main(["report", "--config", cfg, "--out", str(tmp_path)]) == 1


def test_console_entry_point(tmp_path):
    exe = shutil.which("superdrift")
    cmd = [exe] if exe else [sys.executable, "-m", "superdrift.cli"]
    out = subprocess.run(cmd + ["synth", "--config", _write(tmp_path, SYNTH), "--out", str(tmp_path)],
                         capture_output=True, text=True)
    assert out.returncode == 0, out.stderr
