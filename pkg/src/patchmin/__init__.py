"""Stable polynomial minimization on tetrahedral vertex patches.

Tools for building and validating vertex patches (all tetrahedra sharing a
vertex), assembling the discrete polynomial spaces that live on them, solving
constrained and unconstrained least-squares minimization problems in those
spaces, and probing the degree-robustness of the discrete-to-continuous
stability ratio.
"""

from patchmin.mesh import (
    BOUNDARY_KINDS,
    MeshError,
    VertexPatch,
    generate_boundary_patch,
    generate_interior_patch,
    load_patch,
    save_patch,
    validate_patch,
)
from patchmin.minimize import (
    KINDS,
    MinProblem,
    MinResult,
    MinimizeError,
    random_problem,
    reference_min,
    scan_rows,
    solve_patch,
    stability_ratio,
)
from patchmin.spaces import FieldCoeffs, SpaceError, broken_space
from patchmin.sweep import SweepError, sweep_construct, verify_sweep

__version__ = "0.1.0"

__all__ = [
    "BOUNDARY_KINDS",
    "KINDS",
    "FieldCoeffs",
    "MeshError",
    "MinProblem",
    "MinResult",
    "MinimizeError",
    "SpaceError",
    "SweepError",
    "VertexPatch",
    "broken_space",
    "generate_boundary_patch",
    "generate_interior_patch",
    "load_patch",
    "random_problem",
    "reference_min",
    "save_patch",
    "scan_rows",
    "solve_patch",
    "stability_ratio",
    "sweep_construct",
    "validate_patch",
    "verify_sweep",
    "__version__",
]
