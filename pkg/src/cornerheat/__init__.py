"""Energy-corrected P1 finite elements for heat flow on re-entrant corners.

The package builds structured triangulations of polygonal model domains,
applies a local stiffness correction on corner patches, and recovers both
optimal-order interior errors and leading corner-intensity coefficients for
elliptic and parabolic problems.
"""

__version__ = "0.1.0"

from .mesh import (
    CornerLayers,
    MeshError,
    ReentrantCorner,
    TriMesh,
    audit,
    build_fan_sector,
    build_l_shape,
    build_notched_rectangle,
    build_square,
    corner_layers,
    dump_mesh,
    graded_refine,
    load_mesh,
    uniform_refine,
)
from .quadrature import QuadratureRule, rule
from .solver import SolverError, max_generalized_eigenvalue, solve_spd
from .fem import (
    DirichletSystem,
    TimeSeparableField,
    apply_dirichlet,
    assemble_advection,
    assemble_load,
    assemble_mass,
    assemble_stiffness,
    boundary_values,
    error_norm,
    integrate,
    integrate_against_p1,
    interpolate,
    lump_mass,
    quad_layout,
)
from .singular import (
    CutoffEta,
    ManufacturedProblem,
    SingularFunction,
    manufactured_solution,
)
from .correction import (
    CorrectionConfig,
    DefectProblem,
    GammaSearchReport,
    PostProcessed,
    build_correction,
    energy_defect,
    extract_k1_elliptic,
    extract_k1_parabolic,
    find_gamma,
    modified_ritz,
    post_process,
    total_correction,
)
from .timestepping import (
    InstabilityError,
    Operators,
    ParabolicProblem,
    SchemeConfig,
    TimeGrid,
    TimeSeriesObserver,
    build_operators,
    cfl_max_dt,
    initial_state,
    run,
    step_crank_nicolson,
    step_explicit_euler,
    step_heun,
)
from .harness import (
    CSV_HEADER,
    ConvergenceRecord,
    LevelRow,
    StudyConfig,
    compute_eoc,
    run_advection_qoi,
    run_cfl_probe,
    run_elliptic_pollution,
    run_gamma,
    run_study,
    run_table1,
)

__all__ = [
    "CSV_HEADER",
    "ConvergenceRecord",
    "CornerLayers",
    "CorrectionConfig",
    "CutoffEta",
    "DefectProblem",
    "DirichletSystem",
    "GammaSearchReport",
    "InstabilityError",
    "LevelRow",
    "ManufacturedProblem",
    "MeshError",
    "Operators",
    "ParabolicProblem",
    "PostProcessed",
    "QuadratureRule",
    "ReentrantCorner",
    "SchemeConfig",
    "SingularFunction",
    "SolverError",
    "StudyConfig",
    "TimeGrid",
    "TimeSeparableField",
    "TimeSeriesObserver",
    "TriMesh",
    "apply_dirichlet",
    "assemble_advection",
    "assemble_load",
    "assemble_mass",
    "assemble_stiffness",
    "audit",
    "boundary_values",
    "build_correction",
    "build_fan_sector",
    "build_l_shape",
    "build_notched_rectangle",
    "build_operators",
    "build_square",
    "cfl_max_dt",
    "compute_eoc",
    "corner_layers",
    "dump_mesh",
    "energy_defect",
    "error_norm",
    "extract_k1_elliptic",
    "extract_k1_parabolic",
    "find_gamma",
    "graded_refine",
    "initial_state",
    "integrate",
    "integrate_against_p1",
    "interpolate",
    "load_mesh",
    "lump_mass",
    "manufactured_solution",
    "max_generalized_eigenvalue",
    "modified_ritz",
    "post_process",
    "quad_layout",
    "rule",
    "run",
    "run_advection_qoi",
    "run_cfl_probe",
    "run_elliptic_pollution",
    "run_gamma",
    "run_study",
    "run_table1",
    "solve_spd",
    "step_crank_nicolson",
    "step_explicit_euler",
    "step_heun",
    "total_correction",
    "uniform_refine",
]
