"""Spectral variational solver for critical levels of the Choquard equation."""

__version__ = "0.1.0"

from .grid import Field, Grid, Params  # noqa: E402
from .riesz import RieszKernel, build_kernel  # noqa: E402
from .solve import SolveOptions, level_report, solve_groundstate, solve_nodal, solve_odd  # noqa: E402

__all__ = [
    "Field", "Grid", "Params", "RieszKernel", "build_kernel", "SolveOptions", "level_report",
    "solve_groundstate", "solve_nodal", "solve_odd", "__version__",
]
