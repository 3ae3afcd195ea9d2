"""Rotary position embedding kernels, baselines, verification, LM harness."""

from . import analysis, attention, baselines, errors, harness, numerics, rotary

__all__ = [
    "analysis",
    "attention",
    "baselines",
    "errors",
    "harness",
    "numerics",
    "rotary",
]
__version__ = "0.1.0"
