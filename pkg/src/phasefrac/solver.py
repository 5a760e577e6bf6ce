"""Staggered solution of the coupled displacement / phase-field problem.

Each load step prescribes boundary displacements and then alternates two
linear SPD solves until a joint relative-residual tolerance is met:

1. displacement update at frozen damage (tangent = degraded elasticity),
2. history update from the tensile energy of the new strains,
3. phase-field update at frozen displacement.

Both subproblems are exactly linear in the hybrid formulation, so one CG
solve per subproblem per iterate suffices.  Convergence is measured as
``max(|R_u| / |R_u0|, |R_d| / |R_d0|)``; the baselines are the solve
right-hand-side norms of the first iterate of the step, which carry the
load increment, and they are re-captured whenever adaptive refinement
changed the mesh mid-step.  A baseline below 1e-14 defines its ratio as
zero, so zero-load steps terminate immediately instead of dividing by
noise.

An optional adaptivity hook runs after every iterate.  When it refines the
mesh, the fields are transferred, all operators are rebuilt and the loop
continues on the new mesh.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from . import fem
from .material import (
    MaterialParams,
    degradation,
    strain_from_displacement,
    tensile_energy,
    update_history,
)
from .mesh import Mesh
from .sparse import SparseMatrix, TripletPattern, apply_dirichlet, cg_solve

__all__ = [
    "SimulationState",
    "StepReport",
    "FemCache",
    "BoundaryConditions",
    "SolverError",
    "new_state",
    "internal_force",
    "residual_displacement",
    "residual_phase",
    "tangent_displacement",
    "tangent_phase",
    "staggered_step",
    "reaction_force",
]

logger = logging.getLogger(__name__)

_BASELINE_FLOOR = 1e-14


class SolverError(RuntimeError):
    """Raised when a linear solve inside the staggered loop breaks down."""


@dataclass
class SimulationState:
    """Nodal displacement u, nodal phase d, per-cell history H."""

    u: np.ndarray
    d: np.ndarray
    H: np.ndarray
    mesh_generation: int

    def copy(self) -> "SimulationState":
        return SimulationState(
            self.u.copy(), self.d.copy(), self.H.copy(), self.mesh_generation
        )


def new_state(mesh: Mesh) -> SimulationState:
    return SimulationState(
        u=np.zeros(mesh.dim * mesh.n_nodes),
        d=np.zeros(mesh.n_nodes),
        H=np.zeros(mesh.n_cells),
        mesh_generation=mesh.generation,
    )


@dataclass
class StepReport:
    """Per-load-step record used for load-displacement curves."""

    load_value: float
    reaction: float
    iterations: int
    n_cells: int
    relative_residuals: tuple[float, float]
    converged: bool
    eta_global: float = float("nan")
    phase_range: tuple[float, float] = (0.0, 0.0)
    residual_history: list = field(default_factory=list)


class FemCache:
    """Per-mesh operators reused across staggered iterates.

    Only the damage coefficient changes between iterates, so the expensive
    pieces (basis gradients, undegraded element stiffness blocks, the unit
    mass/stiffness matrices of the phase space and the triplet index
    pattern) are built once per mesh generation.
    """

    def __init__(self, mesh: Mesh, lam: float, mu: float):
        self.mesh = mesh
        self.lam = lam
        self.mu = mu
        self.gradients = fem.basis_gradients(mesh)
        self.measures = mesh.cell_measures()
        self.space_u = fem.p1_space(mesh, mesh.dim)
        self.B = fem.strain_operators(mesh, self.gradients)
        self.K0 = fem.element_elastic_matrices(mesh, lam, mu, self.gradients)
        k = self.space_u.cell_dofs.shape[1]
        rows_u = np.repeat(self.space_u.cell_dofs, k, axis=1).ravel()
        cols_u = np.tile(self.space_u.cell_dofs, (1, k)).ravel()
        self.pattern_u = TripletPattern(
            self.space_u.n_dofs, self.space_u.n_dofs, rows_u, cols_u
        )
        self.mass = fem.mass_matrix(mesh)
        self.stiffness = fem.stiffness_matrix(mesh, grads=self.gradients)
        d = mesh.dim
        self._mass_template = (np.ones((d + 1, d + 1)) + np.eye(d + 1)) / (
            (d + 1) * (d + 2)
        )
        cells = mesh.cells
        rows_d = np.repeat(cells, d + 1, axis=1).ravel()
        cols_d = np.tile(cells, (1, d + 1)).ravel()
        self.pattern_d = TripletPattern(mesh.n_nodes, mesh.n_nodes, rows_d, cols_d)
        self._phase_base: SparseMatrix | None = None

    # -- elementwise quantities ---------------------------------------
    def cell_mean_phase(self, d: np.ndarray) -> np.ndarray:
        return d[self.mesh.cells].mean(axis=1)

    def cell_strains(self, u: np.ndarray) -> np.ndarray:
        m = self.mesh.n_cells
        disp = u[self.space_u.cell_dofs].reshape(m, self.mesh.dim + 1, self.mesh.dim)
        return strain_from_displacement(disp, self.gradients.grads)

    def weighted_mass(self, coeff: np.ndarray) -> SparseMatrix:
        vals = (coeff * self.measures)[:, None, None] * self._mass_template
        return self.pattern_d.assemble(vals)

    def elasticity(self, g_cell: np.ndarray) -> SparseMatrix:
        return self.pattern_u.assemble(g_cell[:, None, None] * self.K0)

    def phase_base_operator(self, params: MaterialParams) -> SparseMatrix:
        if self._phase_base is None:
            self._phase_base = self.stiffness.scaled(
                params.Gc * params.l0
            ) + self.mass.scaled(params.Gc / params.l0)
        return self._phase_base


@dataclass
class BoundaryConditions:
    """Dirichlet data as mesh-dependent callbacks.

    These are callables because adaptive refinement renumbers dofs mid-step:
    after every mesh change the solver re-derives the constrained sets.

    displacement(mesh) -> (dofs, values): prescribed displacement dofs
    phase(mesh) -> (dofs, values) or None: phase-field constraints
    reaction_dofs(mesh) -> dofs: where the reaction force is accumulated
    """

    displacement: Callable[[Mesh], tuple[np.ndarray, np.ndarray]]
    phase: Optional[Callable[[Mesh], tuple[np.ndarray, np.ndarray]]] = None
    reaction_dofs: Optional[Callable[[Mesh], np.ndarray]] = None


def _check_generation(state: SimulationState, mesh: Mesh) -> None:
    if state.mesh_generation != mesh.generation:
        raise ValueError(
            f"state generation {state.mesh_generation} does not match "
            f"mesh generation {mesh.generation}"
        )


# ----------------------------------------------------------------------
# residuals and tangents
# ----------------------------------------------------------------------

def internal_force(
    state: SimulationState, cache: FemCache, params: MaterialParams
) -> np.ndarray:
    """Raw nodal internal force of the degraded stress, no constraints applied.

    Stress is linear in u at fixed d, so this equals the degraded stiffness
    applied to u.  Used both for residuals and for reaction extraction.
    """
    _check_generation(state, cache.mesh)
    g_cell, _ = degradation(cache.cell_mean_phase(state.d), params.eps_residual)
    return cache.elasticity(g_cell) @ state.u


def residual_displacement(
    state: SimulationState,
    cache: FemCache,
    params: MaterialParams,
    bc_dofs: np.ndarray | None = None,
) -> np.ndarray:
    """Displacement residual (external minus internal force), constrained
    rows zeroed after the raw values have been recorded."""
    r = -internal_force(state, cache, params)  # zero body force and traction
    if bc_dofs is not None and len(bc_dofs):
        r[np.asarray(bc_dofs, dtype=np.int64)] = 0.0
    return r


def residual_phase(
    state: SimulationState,
    cache: FemCache,
    params: MaterialParams,
    bc_dofs: np.ndarray | None = None,
) -> np.ndarray:
    """Phase-field residual 2((1-d)H, phi) - Gc l0 (grad d, grad phi)
    - Gc/l0 (d, phi), assembled with exact P1 moments and per-cell H."""
    _check_generation(state, cache.mesh)
    mass_H = cache.weighted_mass(state.H)
    base = cache.phase_base_operator(params)
    r = 2.0 * (mass_H @ (1.0 - state.d)) - (base @ state.d)
    if bc_dofs is not None and len(bc_dofs):
        r[np.asarray(bc_dofs, dtype=np.int64)] = 0.0
    return r


def tangent_displacement(
    state: SimulationState, cache: FemCache, params: MaterialParams
) -> SparseMatrix:
    """Degraded elasticity operator; SPD once Dirichlet data is applied."""
    _check_generation(state, cache.mesh)
    g_cell, _ = degradation(cache.cell_mean_phase(state.d), params.eps_residual)
    return cache.elasticity(g_cell)


def tangent_phase(
    state: SimulationState, cache: FemCache, params: MaterialParams
) -> SparseMatrix:
    """Phase operator 2 (phi H, phi) + Gc l0 K + Gc/l0 M; SPD since H >= 0."""
    _check_generation(state, cache.mesh)
    return cache.weighted_mass(2.0 * state.H) + cache.phase_base_operator(params)


def reaction_force(
    state: SimulationState,
    cache: FemCache,
    params: MaterialParams,
    loaded_dofs: np.ndarray,
) -> float:
    """Sum of raw internal force over the loaded dofs (before elimination)."""
    loaded_dofs = np.asarray(loaded_dofs, dtype=np.int64)
    if loaded_dofs.size == 0:
        raise ValueError("loaded dof set must be nonempty")
    f = internal_force(state, cache, params)
    return float(f[loaded_dofs].sum())


# ----------------------------------------------------------------------
# staggered iteration
# ----------------------------------------------------------------------

def _ratio(r: float, base: float) -> float:
    return 0.0 if base < _BASELINE_FLOOR else r / base


def staggered_step(
    state: SimulationState,
    cache: FemCache,
    params: MaterialParams,
    bc: BoundaryConditions,
    load_value: float,
    *,
    tol: float = 1e-5,
    max_iter: int = 50,
    cg_tol: float = 1e-10,
    adaptor=None,
    freeze_phase: bool = False,
):
    """Advance one load step; returns ``(cache, state, report, parent_map)``.

    ``parent_map`` composes the cell lineage of all intra-step refinements
    (new cell -> cell index at step entry); it is the identity when the mesh
    did not change.  ``adaptor``, when given, is called after each iterate as
    ``adaptor(state, cache) -> (state, cache, eta_global, changed, tmap)``.

    Non-convergence within ``max_iter`` marks the report as failed; the
    caller decides whether to abort.  A stalled inner CG solve raises
    :class:`SolverError` since it leaves no usable state.

    Besides the residual-ratio test, an iterate whose updates have
    degenerated to solver noise ends the step: once the phase update is
    numerically zero (1e-10 relative) the coupling is frozen and the
    displacement subproblem is a fixed linear system, so its update can
    only be round-off amplified by the conditioning (1e-7 relative covers
    that).  Unloading steps, where the history field freezes and the
    entering residuals are already at machine precision, terminate through
    this path; the residual ratios there compare round-off against
    round-off and never contract.
    """
    _check_generation(state, cache.mesh)
    state = state.copy()
    parent_map = np.arange(cache.mesh.n_cells, dtype=np.int64)

    r0_base = r1_base = 0.0
    capture_baselines = True  # first iterate of the step, and after refinement
    eta_global = float("nan")
    errors: list[float] = []
    converged = False
    err0 = err1 = float("nan")
    iterations = 0

    for it in range(1, max_iter + 1):
        mesh = cache.mesh
        dofs_u, vals_u = bc.displacement(mesh)
        dofs_u = np.asarray(dofs_u, dtype=np.int64)
        vals_u = np.asarray(vals_u, dtype=np.float64)

        # assemble the displacement subproblem around the current state
        K = tangent_displacement(state, cache, params)
        b0 = -(K @ state.u)
        delta_u = vals_u - state.u[dofs_u]
        K_c, b0_c = apply_dirichlet(K, b0, dict(zip(dofs_u.tolist(), delta_u.tolist())))
        r0 = float(np.linalg.norm(b0_c))

        if capture_baselines:
            r0_base = r0
        else:
            # entering residuals of the current state decide convergence
            dofs_d, _ = _phase_bc(bc, mesh)
            r1 = (
                0.0
                if freeze_phase
                else float(
                    np.linalg.norm(
                        residual_phase(state, cache, params, bc_dofs=dofs_d)
                    )
                )
            )
            err0, err1 = _ratio(r0, r0_base), _ratio(r1, r1_base)
            err = max(err0, err1)
            errors.append(err)
            if err < tol:
                converged = True
                break

        iterations = it
        # displacement solve (exactly linear at fixed d)
        x0 = np.zeros(len(b0_c))
        if dofs_u.size:
            x0[dofs_u] = delta_u
        sol = cg_solve(K_c, b0_c, tol=cg_tol, x0=x0)
        if not sol.converged:
            raise SolverError(
                f"displacement CG stalled after {sol.iterations} iterations "
                f"(residual {sol.residual_norm:.3e})"
            )
        state.u = state.u + sol.x
        du_norm = float(np.linalg.norm(sol.x))

        # history update from the new strains
        eps = cache.cell_strains(state.u)
        state.H = update_history(state.H, tensile_energy(eps, params.lam, params.mu))

        dd_norm = 0.0
        if not freeze_phase:
            dofs_d, vals_d = _phase_bc(bc, mesh)
            A1 = tangent_phase(state, cache, params)
            b1 = residual_phase(state, cache, params)
            delta_d = dict(
                zip(dofs_d.tolist(), (vals_d - state.d[dofs_d]).tolist())
            )
            A1_c, b1_c = apply_dirichlet(A1, b1, delta_d)
            if capture_baselines:
                r1_base = float(np.linalg.norm(b1_c))
            x0d = np.zeros(len(b1_c))
            if dofs_d.size:
                x0d[dofs_d] = vals_d - state.d[dofs_d]
            sol_d = cg_solve(A1_c, b1_c, tol=cg_tol, x0=x0d)
            if not sol_d.converged:
                raise SolverError(
                    f"phase CG stalled after {sol_d.iterations} iterations "
                    f"(residual {sol_d.residual_norm:.3e})"
                )
            state.d = state.d + sol_d.x
            dd_norm = float(np.linalg.norm(sol_d.x))
        capture_baselines = False

        # in-loop adaptive refinement
        changed = False
        if adaptor is not None:
            state, cache, eta, changed, tmap = adaptor(state, cache)
            if not math.isnan(eta):
                eta_global = eta
            if changed:
                parent_map = parent_map[tmap.parent_of_cell]
                capture_baselines = True

        # solver-noise fixed point: the phase stopped moving entirely and
        # the displacement update is below the round-off amplification of
        # an already-solved linear system
        if not changed:
            if dd_norm <= 1e-10 * float(np.linalg.norm(state.d)) and (
                du_norm <= 1e-7 * float(np.linalg.norm(state.u))
            ):
                converged = True
                break

    d_min, d_max = (
        (float(state.d.min()), float(state.d.max())) if state.d.size else (0.0, 0.0)
    )
    logger.debug(
        "load=%.6g: %d iterates, %d cells, converged=%s, d in [%.3e, %.3e]",
        load_value,
        iterations,
        cache.mesh.n_cells,
        converged,
        d_min,
        d_max,
    )

    reaction = float("nan")
    if bc.reaction_dofs is not None:
        loaded = np.asarray(bc.reaction_dofs(cache.mesh), dtype=np.int64)
        if loaded.size:
            reaction = reaction_force(state, cache, params, loaded)

    report = StepReport(
        load_value=load_value,
        reaction=reaction,
        iterations=max(iterations, 1),
        n_cells=cache.mesh.n_cells,
        relative_residuals=(err0, err1),
        converged=converged,
        eta_global=eta_global,
        phase_range=(d_min, d_max),
        residual_history=errors,
    )
    return cache, state, report, parent_map


def _phase_bc(bc: BoundaryConditions, mesh: Mesh):
    if bc.phase is None:
        return np.zeros(0, dtype=np.int64), np.zeros(0)
    dofs, vals = bc.phase(mesh)
    return np.asarray(dofs, dtype=np.int64), np.asarray(vals, dtype=np.float64)
