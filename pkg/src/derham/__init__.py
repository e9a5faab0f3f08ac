"""Lowest-order discrete de Rham complexes on simplicial meshes.

Triangular/tetrahedral meshes with conforming bisection, Whitney-form
spaces, weighted H(d) and mixed Hodge-Laplacian assembly, residual and
local-problem error estimators, nodal auxiliary-space preconditioning,
and an adaptive solve-estimate-mark-refine loop.
"""

from derham.afem import AfemHistory, afem_loop, dorfler_mark, effectivity, true_error
from derham.assembly import (
    HD_POSITIVE,
    HODGE_LAPLACIAN,
    REACTION_DIFFUSION,
    LinearSystem,
    ProblemSpec,
    assemble_hd,
    assemble_hodge_laplacian,
    assemble_load,
    assemble_mass,
    assemble_stiffness,
    split_hodge_solution,
)
from derham.estimators import (
    EstimatorReport,
    estimate,
    hd_residual_estimator,
    hodge_residual_estimator,
    local_implicit_estimator,
)
from derham.mesh import SimplicialMesh, generate_structured, mark_gamma
from derham.problems import REGISTRY, get_problem, list_problems
from derham.quadrature import integrate, simplex_measure, simplex_rule
from derham.solvers import (
    SolveReport,
    build_hx_preconditioner,
    hodge_riesz_preconditioner,
    solve,
    solve_cg,
    solve_direct,
    solve_minres,
    spectral_interval,
)
from derham.spaces import (
    LAGRANGE_P1,
    PIECEWISE_P0,
    TRIMMED_P1,
    VECTOR_P1,
    DiscreteField,
    FormSpace,
    build_space,
    canonical_interpolate,
    clement_interpolate,
    exterior_derivative,
    quasi_interpolate_pih,
)

__all__ = [
    "AfemHistory",
    "afem_loop",
    "dorfler_mark",
    "effectivity",
    "true_error",
    "HD_POSITIVE",
    "HODGE_LAPLACIAN",
    "REACTION_DIFFUSION",
    "LinearSystem",
    "ProblemSpec",
    "assemble_hd",
    "assemble_hodge_laplacian",
    "assemble_load",
    "assemble_mass",
    "assemble_stiffness",
    "split_hodge_solution",
    "EstimatorReport",
    "estimate",
    "hd_residual_estimator",
    "hodge_residual_estimator",
    "local_implicit_estimator",
    "SimplicialMesh",
    "generate_structured",
    "mark_gamma",
    "REGISTRY",
    "get_problem",
    "list_problems",
    "integrate",
    "simplex_measure",
    "simplex_rule",
    "SolveReport",
    "build_hx_preconditioner",
    "hodge_riesz_preconditioner",
    "solve",
    "solve_cg",
    "solve_direct",
    "solve_minres",
    "spectral_interval",
    "LAGRANGE_P1",
    "PIECEWISE_P0",
    "TRIMMED_P1",
    "VECTOR_P1",
    "DiscreteField",
    "FormSpace",
    "build_space",
    "canonical_interpolate",
    "clement_interpolate",
    "exterior_derivative",
    "quasi_interpolate_pih",
]

__version__ = "0.1.0"
