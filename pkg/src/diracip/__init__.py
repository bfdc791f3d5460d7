"""Numerical toolkit for partial-data inverse problems for the Dirac system.

Modules: ``clifford`` (Pauli/Dirac algebra), ``geometry`` (domains, the
logarithmic phase and convexified weights), ``cauchy`` (planar Cauchy
transforms and transport), ``cgo`` (complex geometrical optics ansatz),
``solver`` (finite-difference forward solvers), ``carleman`` (estimate probes
and decay scans), ``recovery`` (integral identity, plane transforms and
inversion), ``experiments`` and ``cli`` (the command-line driver).
"""

from .coefficients import Coefficients
from .config import load_config, resolve
from .fitting import LogLogSlopeFit, loglog_slope
from .geometry import LogPhase, build_domain, build_phase, convexify, front_face
from .solver import DiracForwardSolver, assemble, assemble_decoupled, gauge_transform

__version__ = "0.1.0"

__all__ = [
    "Coefficients",
    "DiracForwardSolver",
    "LogLogSlopeFit",
    "LogPhase",
    "assemble",
    "assemble_decoupled",
    "build_domain",
    "build_phase",
    "convexify",
    "front_face",
    "gauge_transform",
    "load_config",
    "loglog_slope",
    "resolve",
]
