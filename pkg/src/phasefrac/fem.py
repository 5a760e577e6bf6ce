"""Linear Lagrange spaces on simplices with quadrature-free assembly.

All element integrals of products of P1 basis functions have closed forms in
the cell measure (exact simplex moments), so no numerical quadrature appears
anywhere in the production assembly path.  Gradients of the barycentric
basis are cellwise constant and come from the inverse Jacobian of the affine
map.

Degree-of-freedom layout for vector fields is component-major per node:
``dof(node, comp) = node * n_components + comp``, so the x and y (and z)
displacements of a node are contiguous.  This ordering is fixed because file
outputs and tests depend on it.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .mesh import Mesh, TransferMap
from .sparse import SparseMatrix

__all__ = [
    "DofMap",
    "CellGradients",
    "p1_space",
    "basis_gradients",
    "mass_matrix",
    "stiffness_matrix",
    "elasticity_matrix",
    "strain_operators",
    "element_elastic_matrices",
    "elastic_moduli_voigt",
    "transfer_nodal",
    "transfer_cellwise",
]


@dataclass(frozen=True)
class DofMap:
    """Global dof numbering of a scalar or vector P1 space."""

    mesh_generation: int
    n_dofs: int
    cell_dofs: np.ndarray  # (n_cells, (dim + 1) * components)
    components: int


@dataclass(frozen=True)
class CellGradients:
    """Constant gradients of the dim+1 barycentric basis functions per cell."""

    mesh_generation: int
    grads: np.ndarray  # (n_cells, dim + 1, dim), units 1/mm


def p1_space(mesh: Mesh, components: int = 1) -> DofMap:
    """Node-based P1 dof map with ``components`` unknowns per node."""
    if components not in (1, mesh.dim):
        raise ValueError("components must be 1 or the mesh dimension")
    cells = mesh.cells
    base = cells * components
    cell_dofs = (base[:, :, None] + np.arange(components)).reshape(mesh.n_cells, -1)
    return DofMap(
        mesh_generation=mesh.generation,
        n_dofs=components * mesh.n_nodes,
        cell_dofs=cell_dofs.astype(np.int64),
        components=components,
    )


def basis_gradients(mesh: Mesh) -> CellGradients:
    """Exact P1 basis gradients from the inverse of the affine Jacobian."""
    cells = mesh.cells
    pts = mesh.nodes[cells]
    jac = pts[:, 1:, :] - pts[:, :1, :]  # rows: edge vectors from vertex 0
    inv = np.linalg.inv(jac)
    grads = np.empty((mesh.n_cells, mesh.dim + 1, mesh.dim))
    grads[:, 1:, :] = np.transpose(inv, (0, 2, 1))
    grads[:, 0, :] = -grads[:, 1:, :].sum(axis=1)
    return CellGradients(mesh_generation=mesh.generation, grads=grads)


def _coeff_array(mesh: Mesh, cell_coeff) -> np.ndarray:
    if cell_coeff is None:
        return np.ones(mesh.n_cells)
    c = np.asarray(cell_coeff, dtype=np.float64)
    if c.shape != (mesh.n_cells,):
        raise ValueError("cell coefficient length must equal the cell count")
    return c


def mass_matrix(mesh: Mesh, cell_coeff=None) -> SparseMatrix:
    """Scalar P1 mass matrix with a cellwise-constant coefficient.

    The element matrix is ``c * |tau| / ((d+1)(d+2)) * (1 + delta_ij)``,
    the exact value of the simplex moment integrals.
    """
    d = mesh.dim
    c = _coeff_array(mesh, cell_coeff)
    template = (np.ones((d + 1, d + 1)) + np.eye(d + 1)) / ((d + 1) * (d + 2))
    vals = (c * mesh.cell_measures())[:, None, None] * template
    dofs = mesh.cells
    rows = np.repeat(dofs, d + 1, axis=1).ravel()
    cols = np.tile(dofs, (1, d + 1)).ravel()
    return SparseMatrix.from_arrays(
        mesh.n_nodes, mesh.n_nodes, rows, cols, vals.ravel()
    )


def stiffness_matrix(mesh: Mesh, cell_coeff=None, grads: CellGradients | None = None) -> SparseMatrix:
    """Scalar P1 stiffness matrix, ``c * |tau| * grad(phi_i) . grad(phi_j)``."""
    d = mesh.dim
    c = _coeff_array(mesh, cell_coeff)
    g = (grads or basis_gradients(mesh)).grads
    vals = np.einsum("e,eid,ejd->eij", c * mesh.cell_measures(), g, g)
    dofs = mesh.cells
    rows = np.repeat(dofs, d + 1, axis=1).ravel()
    cols = np.tile(dofs, (1, d + 1)).ravel()
    return SparseMatrix.from_arrays(
        mesh.n_nodes, mesh.n_nodes, rows, cols, vals.ravel()
    )


# ----------------------------------------------------------------------
# small-strain elasticity
# ----------------------------------------------------------------------

def elastic_moduli_voigt(dim: int, lam: float, mu: float) -> np.ndarray:
    """Isotropic stiffness in Voigt notation with engineering shear strains."""
    if dim == 2:
        return np.array(
            [
                [lam + 2 * mu, lam, 0.0],
                [lam, lam + 2 * mu, 0.0],
                [0.0, 0.0, mu],
            ]
        )
    C = np.zeros((6, 6))
    C[:3, :3] = lam
    C[np.arange(3), np.arange(3)] += 2 * mu
    C[np.arange(3, 6), np.arange(3, 6)] = mu
    return C


def strain_operators(mesh: Mesh, grads: CellGradients | None = None) -> np.ndarray:
    """Per-cell strain-displacement matrices B, shape (m, n_voigt, k).

    ``B @ u_cell`` gives the Voigt strain [e_xx, e_yy, g_xy] in 2D and
    [e_xx, e_yy, e_zz, g_yz, g_xz, g_xy] in 3D with engineering shears;
    ``u_cell`` follows the component-major-per-node dof ordering.
    """
    d = mesh.dim
    g = (grads or basis_gradients(mesh)).grads
    m = mesh.n_cells
    if d == 2:
        B = np.zeros((m, 3, 6))
        for i in range(3):
            B[:, 0, 2 * i] = g[:, i, 0]
            B[:, 1, 2 * i + 1] = g[:, i, 1]
            B[:, 2, 2 * i] = g[:, i, 1]
            B[:, 2, 2 * i + 1] = g[:, i, 0]
        return B
    B = np.zeros((m, 6, 12))
    for i in range(4):
        gx, gy, gz = g[:, i, 0], g[:, i, 1], g[:, i, 2]
        B[:, 0, 3 * i] = gx
        B[:, 1, 3 * i + 1] = gy
        B[:, 2, 3 * i + 2] = gz
        B[:, 3, 3 * i + 1] = gz
        B[:, 3, 3 * i + 2] = gy
        B[:, 4, 3 * i] = gz
        B[:, 4, 3 * i + 2] = gx
        B[:, 5, 3 * i] = gy
        B[:, 5, 3 * i + 1] = gx
    return B


def element_elastic_matrices(
    mesh: Mesh, lam: float, mu: float, grads: CellGradients | None = None
) -> np.ndarray:
    """Undegraded element stiffness blocks ``|tau| * B^T C B``, shape (m, k, k)."""
    B = strain_operators(mesh, grads)
    C = elastic_moduli_voigt(mesh.dim, lam, mu)
    return np.einsum("e,eik,ij,ejl->ekl", mesh.cell_measures(), B, C, B)


def elasticity_matrix(
    mesh: Mesh,
    lam: float,
    mu: float,
    cell_degradation=None,
    grads: CellGradients | None = None,
) -> SparseMatrix:
    """Vector P1 stiffness with a per-cell stiffness multiplier g(d)."""
    if mu <= 0.0 or lam + 2.0 * mu <= 0.0:
        raise ValueError("elastic moduli must satisfy mu > 0 and lam + 2 mu > 0")
    g = _coeff_array(mesh, cell_degradation)
    K0 = element_elastic_matrices(mesh, lam, mu, grads)
    vals = g[:, None, None] * K0
    space = p1_space(mesh, mesh.dim)
    k = space.cell_dofs.shape[1]
    rows = np.repeat(space.cell_dofs, k, axis=1).ravel()
    cols = np.tile(space.cell_dofs, (1, k)).ravel()
    return SparseMatrix.from_arrays(
        space.n_dofs, space.n_dofs, rows, cols, vals.ravel()
    )


# ----------------------------------------------------------------------
# transfer between refinement levels
# ----------------------------------------------------------------------

def transfer_nodal(
    field: np.ndarray,
    tm: TransferMap,
    old_mesh: Mesh,
    new_mesh: Mesh,
    components: int = 1,
) -> np.ndarray:
    """Carry a nodal field to the refined mesh by exact P1 interpolation.

    Old nodes copy their values; every bisection node takes the average of
    its origin-edge endpoints.  New nodes are processed in creation order,
    so endpoint values from the same pass are already available.
    """
    field = np.asarray(field, dtype=np.float64)
    if tm.n_old_nodes != old_mesh.n_nodes or tm.n_new_nodes != new_mesh.n_nodes:
        raise ValueError("transfer map does not match the given meshes")
    if field.shape != (components * old_mesh.n_nodes,):
        raise ValueError("field length does not match the old dof count")
    out = np.empty(components * new_mesh.n_nodes)
    vals = field.reshape(old_mesh.n_nodes, components)
    new = out.reshape(new_mesh.n_nodes, components)
    new[: old_mesh.n_nodes] = vals
    for k, (a, b) in enumerate(tm.edge_endpoints):
        new[old_mesh.n_nodes + k] = 0.5 * (new[a] + new[b])
    return out


def transfer_cellwise(field: np.ndarray, tm: TransferMap) -> np.ndarray:
    """Carry a per-cell field to the refined mesh: children inherit parents."""
    field = np.asarray(field, dtype=np.float64)
    if field.shape[0] != tm.n_old_cells:
        raise ValueError("field length does not match the old cell count")
    return field[tm.parent_of_cell]
