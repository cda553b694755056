"""Spin-squeezing dynamics on diluted power-law XXZ lattices.

Semiclassical phase-space simulator (discrete and cluster truncated
Wigner) plus a small exact-diagonalization oracle and the analysis
pipeline used to extract squeezing optima, late-time magnetization,
scaling exponents, and dilution phase boundaries.
"""

__version__ = "0.1.0"

from .lattice import ModelParams, LatticeRealization, build_lattice, build_couplings

__all__ = [
    "ModelParams",
    "LatticeRealization",
    "build_lattice",
    "build_couplings",
    "__version__",
]
