"""Structured records of verified inequalities and their serialisation."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

__all__ = ["EstimateReport", "write_reports", "read_reports", "write_csv", "write_plot_data"]


def _clean(x):
    """JSON has no inf/nan; encode them as strings."""
    if isinstance(x, float) and not math.isfinite(x):
        return str(x)
    return x


@dataclass
class EstimateReport:
    """One measured quantity checked against a bound.

    ``ratio`` defaults to ``measured / bound``.  ``passed`` defaults to
    ``measured <= bound``; callers checking a two-sided or trend criterion
    set it explicitly.
    """

    name: str
    measured: float
    bound: float
    ratio: float | None = None
    passed: bool | None = None
    details: dict = field(default_factory=dict)

    def __post_init__(self):
        self.measured = float(self.measured)
        self.bound = float(self.bound)
        if self.ratio is None:
            if self.bound != 0:
                self.ratio = self.measured / self.bound
            else:
                self.ratio = 0.0 if self.measured == 0 else math.inf
        self.ratio = float(self.ratio)
        if self.passed is None:
            self.passed = bool(self.measured <= self.bound)
        self.passed = bool(self.passed)

    def to_dict(self) -> dict:
        out = {
            "name": self.name,
            "measured": _clean(self.measured),
            "bound": _clean(self.bound),
            "ratio": _clean(self.ratio),
            "pass": self.passed,
        }
        if self.details:
            out["details"] = {k: _clean(v) for k, v in self.details.items()}
        return out

    def to_check(self) -> dict:
        """Check-record form ``{name, measured, threshold, pass}``."""
        return {
            "name": self.name,
            "measured": _clean(self.measured),
            "threshold": _clean(self.bound),
            "pass": self.passed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "EstimateReport":
        bound = d.get("bound", d.get("threshold"))
        return cls(d["name"], float(d["measured"]), float(bound),
                   float(d["ratio"]) if "ratio" in d else None, d["pass"], d.get("details", {}))

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"{status} {self.name}: measured={self.measured:.6g} bound={self.bound:.6g} ratio={self.ratio:.4g}"


def write_reports(reports, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps([r.to_dict() for r in reports], indent=1, sort_keys=True) + "\n")
    return path


def read_reports(path) -> list[EstimateReport]:
    return [EstimateReport.from_dict(d) for d in json.loads(Path(path).read_text())]


def write_csv(rows, columns, path) -> Path:
    """Write a list of dicts with a fixed header order."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(columns), extrasaction="ignore")
        w.writeheader()
        for row in rows:
            w.writerow({k: _clean(v) for k, v in row.items()})
    return path


def write_plot_data(x, y, path, xlabel="x", ylabel="y") -> Path:
    """Two whitespace-separated columns under a ``#`` header line."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = [f"# {xlabel} {ylabel}"]
    lines += [f"{float(a):.17g} {float(b):.17g}" for a, b in zip(x, y)]
    path.write_text("\n".join(lines) + "\n")
    return path
