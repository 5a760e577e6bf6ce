"""Adaptive phase-field simulation of quasi-static brittle fracture.

Quick tour: build or load a :class:`~phasefrac.scenarios.Scenario`, call
:func:`~phasefrac.scenarios.run`, and read the reaction curve off the
returned record.  The lower layers (mesh, sparse, fem, material, solver,
adaptivity) are usable on their own.
"""

from .adaptivity import (
    AdaptiveRefiner,
    ErrorIndicators,
    RecoveredGradient,
    adapt,
    error_indicators,
    mark_l2,
    mark_max,
    recover_gradient,
)
from .fem import (
    CellGradients,
    DofMap,
    basis_gradients,
    elasticity_matrix,
    mass_matrix,
    p1_space,
    stiffness_matrix,
    transfer_cellwise,
    transfer_nodal,
)
from .material import (
    MaterialParams,
    degradation,
    hybrid_stress,
    isotropic_energy,
    lame_from_E_nu,
    macaulay,
    spectral_split,
    strain_from_displacement,
    tensile_energy,
    update_history,
)
from .mesh import (
    Mesh,
    MeshError,
    TransferMap,
    bisect,
    box_mesh_2d,
    box_mesh_3d,
    build_mesh,
    hole_mesh,
    insert_slit,
    lshape_mesh,
    structured_mesh,
    uniform_refine,
)
from .scenarios import (
    RunRecord,
    Scenario,
    ScenarioConfigError,
    ScenarioRunError,
    builtin_scenario,
    load_scenario,
    run,
)
from .solver import (
    BoundaryConditions,
    FemCache,
    SimulationState,
    SolverError,
    StepReport,
    new_state,
    reaction_force,
    residual_displacement,
    residual_phase,
    staggered_step,
    tangent_displacement,
    tangent_phase,
)
from .sparse import CGResult, SparseMatrix, apply_dirichlet, cg_solve
from .vtkio import write_csv, write_vtk

__version__ = "0.1.0"
