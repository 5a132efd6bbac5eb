"""Estimation laboratory for conditionally specified growth models.

Fit conditional-mean parameters of branching, amplification, and
heteroscedastic-recursion models by windowed weighted least squares or
quasi-likelihood scoring; probe the regression-decomposition conditions that
drive consistency and limit behaviour; and run seeded Monte Carlo studies of
the standardized estimation errors.
"""
from __future__ import annotations

__version__ = "0.1.0"

from . import asymptotics, backend, diagnostics, estimators, io, models, montecarlo, rng

__all__ = [
    "__version__",
    "asymptotics",
    "backend",
    "diagnostics",
    "estimators",
    "io",
    "models",
    "montecarlo",
    "rng",
]
