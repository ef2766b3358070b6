"""Numerical toolkit for SDEs with distributional divergence-free drifts."""

__version__ = "0.1.0"
