"""Gradient recovery, error indicators, marking, and the refine-transfer pass.

The phase field of a P1 discretization has a piecewise-constant gradient.
Averaging the gradients of the cells around each node lifts it into the
continuous P1 space; on meshes with enough local symmetry that recovered
gradient is superconvergent, so the cellwise distance between the two,

    eta_tau = || R(d_h) - grad d_h ||_{L2(tau)},

behaves like the actual gradient error and makes a cheap refinement
indicator that needs no problem-specific thresholds.  Five averaging weights
are supported: equal, cell measure, inverse measure, vertex angle (solid
angle on tetrahedra), and centroid distance.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import fem
from .mesh import Mesh, TransferMap, bisect
from .solver import FemCache, SimulationState

__all__ = [
    "RecoveredGradient",
    "ErrorIndicators",
    "RECOVERY_METHODS",
    "recover_gradient",
    "error_indicators",
    "mark_max",
    "mark_l2",
    "adapt",
    "AdaptiveRefiner",
]

RECOVERY_METHODS = ("simple", "area", "harmonic_area", "angle", "distance")


@dataclass(frozen=True)
class RecoveredGradient:
    """Nodal gradient field recovered from cellwise-constant gradients."""

    values: np.ndarray  # (n_nodes, dim)
    method: str


@dataclass(frozen=True)
class ErrorIndicators:
    """Per-cell indicators eta_tau >= 0 and the global eta."""

    per_cell: np.ndarray
    total: float


def _vertex_angles(mesh: Mesh) -> np.ndarray:
    """Angle of each cell at each of its vertices, shape (m, dim + 1).

    Planar angles for triangles; solid angles (Van Oosterom / Strackee)
    for tetrahedra.
    """
    pts = mesh.nodes[mesh.cells]
    m = mesh.n_cells
    out = np.empty((m, mesh.dim + 1))
    if mesh.dim == 2:
        for i in range(3):
            u = pts[:, (i + 1) % 3] - pts[:, i]
            v = pts[:, (i + 2) % 3] - pts[:, i]
            cosv = np.einsum("ij,ij->i", u, v) / (
                np.linalg.norm(u, axis=1) * np.linalg.norm(v, axis=1)
            )
            out[:, i] = np.arccos(np.clip(cosv, -1.0, 1.0))
        return out
    for i in range(4):
        others = [k for k in range(4) if k != i]
        a = pts[:, others[0]] - pts[:, i]
        b = pts[:, others[1]] - pts[:, i]
        c = pts[:, others[2]] - pts[:, i]
        la = np.linalg.norm(a, axis=1)
        lb = np.linalg.norm(b, axis=1)
        lc = np.linalg.norm(c, axis=1)
        triple = np.einsum("ij,ij->i", a, np.cross(b, c))
        denom = (
            la * lb * lc
            + np.einsum("ij,ij->i", a, b) * lc
            + np.einsum("ij,ij->i", a, c) * lb
            + np.einsum("ij,ij->i", b, c) * la
        )
        out[:, i] = 2.0 * np.abs(np.arctan2(np.abs(triple), denom))
    return out


def recover_gradient(
    mesh: Mesh,
    d: np.ndarray,
    method: str = "simple",
    grads: fem.CellGradients | None = None,
) -> RecoveredGradient:
    """Weighted average of incident-cell gradients at every node.

    method selects the weights: "simple" (equal), "area" (cell measure),
    "harmonic_area" (inverse measure), "angle" (vertex angle of the cell at
    the node), "distance" (distance from cell centroid to the node).  All
    weights are positive, so the recovered value is a convex combination of
    the patch gradients.
    """
    if method not in RECOVERY_METHODS:
        raise ValueError(f"unknown recovery method {method!r}")
    d = np.asarray(d, dtype=np.float64)
    if d.shape != (mesh.n_nodes,):
        raise ValueError("field length must equal the node count")
    g = (grads or fem.basis_gradients(mesh)).grads
    cell_grad = np.einsum("ei,eid->ed", d[mesh.cells], g)

    cells = mesh.cells
    m, k = cells.shape
    if method == "simple":
        w = np.ones((m, k))
    elif method == "area":
        w = np.repeat(mesh.cell_measures()[:, None], k, axis=1)
    elif method == "harmonic_area":
        w = np.repeat((1.0 / mesh.cell_measures())[:, None], k, axis=1)
    elif method == "angle":
        w = _vertex_angles(mesh)
    else:  # distance
        centroids = mesh.cell_centroids()
        pts = mesh.nodes[cells]
        w = np.linalg.norm(pts - centroids[:, None, :], axis=2)

    flat_nodes = cells.ravel()
    flat_w = w.ravel()
    denom = np.bincount(flat_nodes, weights=flat_w, minlength=mesh.n_nodes)
    values = np.empty((mesh.n_nodes, mesh.dim))
    for c in range(mesh.dim):
        contrib = (flat_w.reshape(m, k) * cell_grad[:, c : c + 1]).ravel()
        values[:, c] = np.bincount(
            flat_nodes, weights=contrib, minlength=mesh.n_nodes
        )
    values /= denom[:, None]
    return RecoveredGradient(values=values, method=method)


def error_indicators(
    mesh: Mesh,
    d: np.ndarray,
    recovered: RecoveredGradient,
    grads: fem.CellGradients | None = None,
) -> ErrorIndicators:
    """Cellwise L2 distance between recovered and raw gradients.

    The recovered field is interpolated linearly over each cell from its
    nodal values, so the squared integrand is a quadratic polynomial and the
    exact P1 mass moments integrate it without quadrature:

        eta_tau^2 = sum_c w_c^T M_tau w_c,   w_c,i = R(d)_i,c - (grad d_h)_c.
    """
    d = np.asarray(d, dtype=np.float64)
    g = (grads or fem.basis_gradients(mesh)).grads
    cell_grad = np.einsum("ei,eid->ed", d[mesh.cells], g)
    k = mesh.dim + 1
    template = (np.ones((k, k)) + np.eye(k)) / (k * (k + 1))
    w = recovered.values[mesh.cells] - cell_grad[:, None, :]  # (m, k, dim)
    quad = np.einsum("eic,ij,ejc->e", w, template, w)
    eta_sq = mesh.cell_measures() * quad
    per_cell = np.sqrt(np.maximum(eta_sq, 0.0))
    return ErrorIndicators(per_cell=per_cell, total=float(math.sqrt(eta_sq.sum())))


def mark_max(eta: ErrorIndicators, theta: float) -> np.ndarray:
    """Maximum criterion: cells with eta_tau strictly above theta * eta_max."""
    if not 0.0 < theta < 1.0:
        raise ValueError("theta must lie in (0, 1)")
    per = eta.per_cell
    if per.size == 0:
        return np.zeros(0, dtype=np.int64)
    return np.where(per > theta * per.max())[0].astype(np.int64)


def mark_l2(eta: ErrorIndicators, theta: float) -> np.ndarray:
    """Bulk criterion: the smallest prefix of cells, sorted by descending
    eta_tau (ties toward the lower index), whose squared sum first exceeds
    theta * eta^2."""
    if not 0.0 < theta < 1.0:
        raise ValueError("theta must lie in (0, 1)")
    per = eta.per_cell
    total_sq = float(np.sum(per**2))
    if total_sq == 0.0:
        return np.zeros(0, dtype=np.int64)
    order = np.lexsort((np.arange(per.size), -per))
    csum = np.cumsum(per[order] ** 2)
    count = int(np.searchsorted(csum, theta * total_sq, side="right")) + 1
    count = min(count, per.size)
    return np.sort(order[:count]).astype(np.int64)


def adapt(
    state: SimulationState,
    mesh: Mesh,
    marked: np.ndarray,
    h_min: float,
) -> tuple[Mesh, SimulationState, bool, TransferMap]:
    """Bisect marked cells above the size floor and transfer the fields.

    u and d move by exact P1 interpolation; H is inherited cellwise so the
    driving force never relaxes under refinement.  Cells whose diameter is
    already h_min or less are dropped from the marked set, which bounds the
    refinement depth.
    """
    if state.mesh_generation != mesh.generation:
        raise ValueError("state does not match the mesh generation")
    marked = np.asarray(marked, dtype=np.int64)
    if marked.size:
        marked = marked[mesh.cell_diameters()[marked] > h_min]
    if marked.size == 0:
        return mesh, state, False, TransferMap.identity(mesh)
    refined, tm = bisect(mesh, marked)
    u = fem.transfer_nodal(state.u, tm, mesh, refined, components=mesh.dim)
    d = fem.transfer_nodal(state.d, tm, mesh, refined, components=1)
    H = fem.transfer_cellwise(state.H, tm)
    new_state = SimulationState(u=u, d=d, H=H, mesh_generation=refined.generation)
    return refined, new_state, True, tm


class AdaptiveRefiner:
    """Refinement hook for the staggered loop.

    Recovers the phase gradient, marks cells, refines with the size floor
    and rebuilds the FEM cache.  At most ``max_passes_per_step`` refinements
    are applied per load step (call :meth:`begin_step` at each step) so one
    step cannot churn the mesh indefinitely.
    """

    def __init__(
        self,
        method: str = "simple",
        criterion: str = "max",
        theta: float = 0.2,
        h_min: float = 1e-3,
        max_passes_per_step: int = 5,
    ):
        if criterion not in ("max", "l2"):
            raise ValueError(f"unknown marking criterion {criterion!r}")
        if method not in RECOVERY_METHODS:
            raise ValueError(f"unknown recovery method {method!r}")
        self.method = method
        self.criterion = criterion
        self.theta = theta
        self.h_min = h_min
        self.max_passes_per_step = max_passes_per_step
        self._passes = 0

    def begin_step(self) -> None:
        self._passes = 0

    def indicators(self, state: SimulationState, cache: FemCache) -> ErrorIndicators:
        rec = recover_gradient(cache.mesh, state.d, self.method, cache.gradients)
        return error_indicators(cache.mesh, state.d, rec, cache.gradients)

    def __call__(self, state: SimulationState, cache: FemCache):
        if self._passes >= self.max_passes_per_step:
            # budget exhausted for this step; skip the indicator work too
            return state, cache, float("nan"), False, None
        eta = self.indicators(state, cache)
        marker = mark_max if self.criterion == "max" else mark_l2
        marked = marker(eta, self.theta)
        mesh2, state2, changed, tm = adapt(state, cache.mesh, marked, self.h_min)
        if not changed:
            return state, cache, eta.total, False, None
        self._passes += 1
        cache2 = FemCache(mesh2, cache.lam, cache.mu)
        return state2, cache2, eta.total, True, tm
