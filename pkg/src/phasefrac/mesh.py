"""Conforming simplex meshes with newest-vertex bisection refinement.

A :class:`Mesh` stores triangles (2D) or tetrahedra (3D) together with the
bookkeeping needed for adaptive bisection: every cell carries an ordered
vertex tuple whose first and last entries span the refinement edge, plus a
small cyclic type tag that drives the tetrahedral bisection rule.  Splitting
the refinement edge of a cell produces two children whose own refinement
edges are determined by the same rule, which keeps the number of similarity
classes bounded and therefore the shape regularity of all descendants.

Refinement is conforming: bisecting a cell recursively forces the cells
sharing its refinement edge to be bisected first whenever their refinement
edges disagree, so the final mesh never contains hanging nodes.  In 3D this
recursion is guaranteed to terminate on meshes derived from the Kuhn
subdivision of a hexahedral grid (the builders here produce exactly those);
arbitrary tetrahedral inputs are accepted but closure termination is then
watched by a guard.

Meshes are immutable: :func:`bisect` returns a new mesh plus a
:class:`TransferMap` describing cell lineage and the edge each new node
bisected, which is what field transfer needs.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

__all__ = [
    "Mesh",
    "MeshError",
    "TransferMap",
    "build_mesh",
    "structured_mesh",
    "box_mesh_2d",
    "box_mesh_3d",
    "hole_mesh",
    "lshape_mesh",
    "insert_slit",
    "bisect",
    "uniform_refine",
    "nearest_node",
    "on_plane",
]

FacetKey = tuple[int, ...]
TagPredicate = Callable[[np.ndarray], bool]

_FACTORIAL = {2: 2.0, 3: 6.0}


class MeshError(ValueError):
    """Raised for invalid or non-conforming mesh input."""


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.flags.writeable = False
    return a


def _edge_key(a: int, b: int) -> tuple[int, int]:
    return (a, b) if a < b else (b, a)


def _facet_key(verts: Iterable[int]) -> FacetKey:
    return tuple(sorted(verts))


def _signed_measures(nodes: np.ndarray, cells: np.ndarray) -> np.ndarray:
    vecs = nodes[cells[:, 1:]] - nodes[cells[:, :1]]
    return np.linalg.det(vecs) / _FACTORIAL[nodes.shape[1]]


class Mesh:
    """Simplex mesh with per-cell refinement-edge bookkeeping.

    Parameters are internal; construct meshes through :func:`build_mesh` or
    one of the structured builders.

    Attributes
    ----------
    dim : int
        Spatial dimension, 2 or 3.
    nodes : ndarray, shape (n_nodes, dim)
        Vertex coordinates in mm.  Read-only.
    cells : ndarray, shape (n_cells, dim + 1)
        Connectivity with positive signed measure per cell.  Read-only.
    generation : int
        Incremented by every refinement pass that changed the mesh.
    boundary_tags : dict
        Maps boundary facet keys (sorted vertex tuples) to group names.
    """

    def __init__(
        self,
        dim: int,
        nodes: np.ndarray,
        tagged: np.ndarray,
        types: np.ndarray,
        generation: int = 0,
        boundary_tags: Mapping[FacetKey, str] | None = None,
    ):
        self.dim = int(dim)
        self.nodes = _frozen(np.asarray(nodes, dtype=np.float64))
        self._tagged = _frozen(np.asarray(tagged, dtype=np.int64))
        self._types = _frozen(np.asarray(types, dtype=np.uint8))
        self.generation = int(generation)
        self.boundary_tags: dict[FacetKey, str] = dict(boundary_tags or {})
        if self.nodes.ndim != 2 or self.nodes.shape[1] != self.dim:
            raise MeshError(f"node array must have shape (n, {self.dim})")
        if self._tagged.ndim != 2 or self._tagged.shape[1] != self.dim + 1:
            raise MeshError(f"cell array must have shape (m, {self.dim + 1})")
        self._cache: dict[str, object] = {}

    # ------------------------------------------------------------------
    # basic queries
    # ------------------------------------------------------------------
    @property
    def n_nodes(self) -> int:
        return self.nodes.shape[0]

    @property
    def n_cells(self) -> int:
        return self._tagged.shape[0]

    @property
    def cells(self) -> np.ndarray:
        """Connectivity with every cell positively oriented."""
        got = self._cache.get("cells")
        if got is None:
            cells = self._tagged.copy()
            neg = _signed_measures(self.nodes, cells) < 0.0
            # a single transposition flips the sign; vertices 1 and 2 are
            # interchangeable for FEM assembly but not for refinement, which
            # keeps using the tagged ordering
            cells[neg, 1], cells[neg, 2] = (
                self._tagged[neg, 2],
                self._tagged[neg, 1],
            )
            got = _frozen(cells)
            self._cache["cells"] = got
        return got  # type: ignore[return-value]

    def cell_measures(self) -> np.ndarray:
        """Per-cell area (2D) or volume (3D); positive by construction."""
        got = self._cache.get("measures")
        if got is None:
            got = _frozen(np.abs(_signed_measures(self.nodes, self._tagged)))
            self._cache["measures"] = got
        return got  # type: ignore[return-value]

    def cell_measure(self, cell: int) -> float:
        return float(self.cell_measures()[cell])

    def cell_centroids(self) -> np.ndarray:
        got = self._cache.get("centroids")
        if got is None:
            got = _frozen(self.nodes[self._tagged].mean(axis=1))
            self._cache["centroids"] = got
        return got  # type: ignore[return-value]

    def cell_diameters(self) -> np.ndarray:
        """Longest edge length per cell."""
        got = self._cache.get("diameters")
        if got is None:
            pts = self.nodes[self._tagged]
            diam = np.zeros(self.n_cells)
            for i, j in itertools.combinations(range(self.dim + 1), 2):
                diam = np.maximum(
                    diam, np.linalg.norm(pts[:, i] - pts[:, j], axis=1)
                )
            got = _frozen(diam)
            self._cache["diameters"] = got
        return got  # type: ignore[return-value]

    @property
    def refinement_edges(self) -> np.ndarray:
        """Local edge index (into ``itertools.combinations`` order of the
        public ``cells`` tuple) of the edge each cell bisects next."""
        got = self._cache.get("refedges")
        if got is None:
            combos = list(itertools.combinations(range(self.dim + 1), 2))
            lookup = {c: k for k, c in enumerate(combos)}
            cells = self.cells
            out = np.empty(self.n_cells, dtype=np.int8)
            for i in range(self.n_cells):
                row = cells[i]
                a = int(np.where(row == self._tagged[i, 0])[0][0])
                b = int(np.where(row == self._tagged[i, -1])[0][0])
                out[i] = lookup[(a, b) if a < b else (b, a)]
            got = _frozen(out)
            self._cache["refedges"] = got
        return got  # type: ignore[return-value]

    def _node_cells(self) -> list[np.ndarray]:
        got = self._cache.get("node_cells")
        if got is None:
            flat = self._tagged.ravel()
            cell_of = np.repeat(
                np.arange(self.n_cells, dtype=np.int64), self.dim + 1
            )
            order = np.argsort(flat, kind="stable")
            flat = flat[order]
            cell_of = cell_of[order]
            starts = np.searchsorted(flat, np.arange(self.n_nodes))
            ends = np.searchsorted(flat, np.arange(self.n_nodes), side="right")
            got = [cell_of[s:e] for s, e in zip(starts, ends)]
            self._cache["node_cells"] = got
        return got  # type: ignore[return-value]

    def vertex_patch(self, vertex: int) -> np.ndarray:
        """Indices of all cells having ``vertex`` as one of their corners."""
        if not 0 <= vertex < self.n_nodes:
            raise MeshError(f"vertex index {vertex} out of range")
        return np.sort(self._node_cells()[int(vertex)])

    def facet_cells(self) -> dict[FacetKey, list[int]]:
        """Map from facet key to the (1 or 2) incident cell indices."""
        got = self._cache.get("facet_cells")
        if got is None:
            fc: dict[FacetKey, list[int]] = {}
            for i, row in enumerate(self._tagged):
                for drop in range(self.dim + 1):
                    key = _facet_key(np.delete(row, drop))
                    fc.setdefault(key, []).append(i)
            got = fc
            self._cache["facet_cells"] = got
        return got  # type: ignore[return-value]

    def boundary_facets(self) -> list[FacetKey]:
        return sorted(k for k, v in self.facet_cells().items() if len(v) == 1)

    def boundary_nodes(self, tag: str | None = None) -> np.ndarray:
        """Sorted node indices on the boundary, optionally restricted to a tag."""
        if tag is None:
            facets = self.boundary_facets()
        else:
            facets = [f for f, t in self.boundary_tags.items() if t == tag]
        out: set[int] = set()
        for f in facets:
            out.update(int(v) for v in f)
        return np.array(sorted(out), dtype=np.int64)

    # ------------------------------------------------------------------
    # quality
    # ------------------------------------------------------------------
    def quality(self) -> tuple[float, float]:
        """Return ``(min_angle_deg, max_aspect)`` over all cells.

        Angles are planar angles for triangles and dihedral angles for
        tetrahedra.  Aspect ratio is longest edge over inradius diameter,
        which is sqrt(3) for the equilateral triangle and sqrt(6) for the
        regular tetrahedron.
        """
        pts = self.nodes[self._tagged]
        if self.dim == 2:
            min_angle = math.inf
            for i in range(3):
                u = pts[:, (i + 1) % 3] - pts[:, i]
                v = pts[:, (i + 2) % 3] - pts[:, i]
                cosv = np.einsum("ij,ij->i", u, v) / (
                    np.linalg.norm(u, axis=1) * np.linalg.norm(v, axis=1)
                )
                ang = np.degrees(np.arccos(np.clip(cosv, -1.0, 1.0)))
                min_angle = min(min_angle, float(ang.min()))
            lengths = [
                np.linalg.norm(pts[:, i] - pts[:, j], axis=1)
                for i, j in itertools.combinations(range(3), 2)
            ]
            perimeter = sum(lengths)
            inradius = 2.0 * self.cell_measures() / perimeter
        else:
            min_angle = math.inf
            for a, b in itertools.combinations(range(4), 2):
                c, d = [k for k in range(4) if k not in (a, b)]
                e = pts[:, b] - pts[:, a]
                e /= np.linalg.norm(e, axis=1, keepdims=True)
                u = pts[:, c] - pts[:, a]
                v = pts[:, d] - pts[:, a]
                u = u - np.einsum("ij,ij->i", u, e)[:, None] * e
                v = v - np.einsum("ij,ij->i", v, e)[:, None] * e
                cosv = np.einsum("ij,ij->i", u, v) / (
                    np.linalg.norm(u, axis=1) * np.linalg.norm(v, axis=1)
                )
                ang = np.degrees(np.arccos(np.clip(cosv, -1.0, 1.0)))
                min_angle = min(min_angle, float(ang.min()))
            area_sum = np.zeros(self.n_cells)
            for drop in range(4):
                face = [k for k in range(4) if k != drop]
                w1 = pts[:, face[1]] - pts[:, face[0]]
                w2 = pts[:, face[2]] - pts[:, face[0]]
                area_sum += 0.5 * np.linalg.norm(np.cross(w1, w2), axis=1)
            inradius = 3.0 * self.cell_measures() / area_sum
        aspect = self.cell_diameters() / (2.0 * inradius)
        return min_angle, float(aspect.max())


@dataclass(frozen=True)
class TransferMap:
    """Lineage record produced by one refinement pass.

    ``parent_of_cell[i]`` is the index, in the pre-refinement mesh, of the
    cell that cell ``i`` of the new mesh descends from.  New nodes are
    numbered ``n_old_nodes ..`` in creation order; ``edge_endpoints[k]``
    holds the two endpoints of the edge that new node ``n_old_nodes + k``
    bisected.  Endpoints may themselves be nodes created earlier in the same
    pass (deep closure), so consumers must process new nodes in index order;
    midpoint interpolation then stays exact for linear fields.
    """

    n_old_nodes: int
    n_old_cells: int
    parent_of_cell: np.ndarray
    edge_endpoints: np.ndarray

    @classmethod
    def identity(cls, mesh: Mesh) -> "TransferMap":
        return cls(
            n_old_nodes=mesh.n_nodes,
            n_old_cells=mesh.n_cells,
            parent_of_cell=np.arange(mesh.n_cells, dtype=np.int64),
            edge_endpoints=np.zeros((0, 2), dtype=np.int64),
        )

    @property
    def n_new_nodes(self) -> int:
        return self.n_old_nodes + self.edge_endpoints.shape[0]


# ----------------------------------------------------------------------
# construction
# ----------------------------------------------------------------------

def on_plane(axis: int, value: float, tol: float = 1e-9) -> TagPredicate:
    """Predicate matching facet centroids on the plane ``x[axis] == value``."""

    def pred(mid: np.ndarray) -> bool:
        return abs(float(mid[axis]) - value) <= tol

    return pred


def _tag_boundary(
    dim: int,
    nodes: np.ndarray,
    facet_cells: dict[FacetKey, list[int]],
    boundary_spec: Mapping[str, TagPredicate] | None,
) -> dict[FacetKey, str]:
    tags: dict[FacetKey, str] = {}
    if not boundary_spec:
        return tags
    for key, inc in facet_cells.items():
        if len(inc) != 1:
            continue
        mid = nodes[list(key)].mean(axis=0)
        for name, pred in boundary_spec.items():
            if pred(mid):
                tags[key] = name
                break
    return tags


def _initial_tagging_2d(nodes: np.ndarray, cells: np.ndarray) -> np.ndarray:
    """Order each triangle so its longest edge spans positions (0, 2).

    Cyclic rotations preserve orientation, so the tagged ordering stays
    positively oriented.  Length ties break toward the smallest opposite
    vertex index.
    """
    pts = nodes[cells]
    tagged = np.empty_like(cells)
    for i, row in enumerate(cells):
        lengths = []
        for peak in range(3):
            a, b = (peak + 1) % 3, (peak + 2) % 3
            lengths.append(
                (-np.linalg.norm(pts[i, a] - pts[i, b]), row[peak], peak)
            )
        lengths.sort()
        peak = lengths[0][2]
        tagged[i] = (row[(peak + 2) % 3], row[peak], row[(peak + 1) % 3])
    return tagged


def _initial_tagging_3d(nodes: np.ndarray, cells: np.ndarray) -> np.ndarray:
    """Order each tetrahedron so its longest edge spans positions (0, 3)."""
    tagged = np.empty_like(cells)
    for i, row in enumerate(cells):
        best = None
        for a, b in itertools.combinations(range(4), 2):
            length = np.linalg.norm(nodes[row[a]] - nodes[row[b]])
            key = (-length, min(row[a], row[b]), max(row[a], row[b]))
            if best is None or key < best[0]:
                best = (key, (a, b))
        a, b = best[1]
        rest = [row[k] for k in range(4) if k not in (a, b)]
        tagged[i] = (row[a], rest[0], rest[1], row[b])
    return tagged


def _check_hanging_nodes(mesh: Mesh) -> None:
    """Geometric scan for nodes lying strictly inside a boundary facet.

    Nodes coincident with one of the facet's vertices are skipped so that
    zero-width slits (intentionally duplicated nodes) pass the check.
    """
    from scipy.spatial import cKDTree

    nodes = mesh.nodes
    scale = float(np.max(nodes.max(axis=0) - nodes.min(axis=0))) or 1.0
    tol = 1e-9 * scale
    tree = cKDTree(nodes)
    for key in mesh.boundary_facets():
        verts = nodes[list(key)]
        center = verts.mean(axis=0)
        radius = float(np.max(np.linalg.norm(verts - center, axis=1)))
        for j in tree.query_ball_point(center, radius + tol):
            if j in key:
                continue
            p = nodes[j]
            if np.any(np.linalg.norm(verts - p, axis=1) <= tol):
                continue  # coincident duplicate (slit construction)
            if _point_inside_facet(p, verts, tol):
                raise MeshError(
                    f"hanging node {j} on facet {key}: mesh is not conforming"
                )


def _point_inside_facet(p: np.ndarray, verts: np.ndarray, tol: float) -> bool:
    if verts.shape[0] == 2:  # segment
        d = verts[1] - verts[0]
        L2 = float(d @ d)
        t = float((p - verts[0]) @ d) / L2
        if not (tol < t * math.sqrt(L2) and (1.0 - t) * math.sqrt(L2) > tol):
            return False
        closest = verts[0] + t * d
        return float(np.linalg.norm(p - closest)) <= tol
    # triangle
    u = verts[1] - verts[0]
    v = verts[2] - verts[0]
    n = np.cross(u, v)
    nn = float(n @ n)
    if abs(float((p - verts[0]) @ n)) > tol * math.sqrt(nn):
        return False
    w = p - verts[0]
    uu, vv, uv = float(u @ u), float(v @ v), float(u @ v)
    wu, wv = float(w @ u), float(w @ v)
    den = uu * vv - uv * uv
    s = (wu * vv - wv * uv) / den
    t = (wv * uu - wu * uv) / den
    eps = tol / math.sqrt(max(uu, vv))
    return s > eps and t > eps and (1.0 - s - t) > eps


def build_mesh(
    nodes: Sequence[Sequence[float]],
    cells: Sequence[Sequence[int]],
    boundary_spec: Mapping[str, TagPredicate] | None = None,
    *,
    validate: bool = True,
) -> Mesh:
    """Build a conforming simplex mesh from raw arrays.

    Refinement edges are initialized to each cell's longest edge, with ties
    broken toward the smallest opposite-vertex index (2D) or the smallest
    endpoint pair (3D).

    Parameters
    ----------
    nodes : sequence of coordinate tuples
    cells : sequence of (dim + 1)-tuples of node indices, positively oriented
    boundary_spec : optional mapping of tag name to facet-centroid predicate;
        predicates are tried in mapping order and the first match wins.
    validate : run full conformity validation, including a geometric
        hanging-node scan (skipped by the structured builders, which are
        conforming by construction).

    Raises
    ------
    MeshError
        On degenerate cells (zero or negative measure), out-of-range indices,
        or non-conforming input.
    """
    nodes_arr = np.asarray(nodes, dtype=np.float64)
    cells_arr = np.asarray(cells, dtype=np.int64)
    if nodes_arr.ndim != 2 or nodes_arr.shape[1] not in (2, 3):
        raise MeshError("nodes must be an (n, 2) or (n, 3) array")
    dim = nodes_arr.shape[1]
    if cells_arr.ndim != 2 or cells_arr.shape[1] != dim + 1:
        raise MeshError(f"cells must be an (m, {dim + 1}) array")
    n = nodes_arr.shape[0]
    if cells_arr.size and (cells_arr.min() < 0 or cells_arr.max() >= n):
        raise MeshError("cell index out of range")
    for i, row in enumerate(cells_arr):
        if len(set(int(v) for v in row)) != dim + 1:
            raise MeshError(f"cell {i} has repeated vertices: degenerate cell")
    meas = _signed_measures(nodes_arr, cells_arr)
    bad = np.where(meas <= 0.0)[0]
    if bad.size:
        raise MeshError(
            f"cell {int(bad[0])} has non-positive measure "
            f"({meas[int(bad[0])]:g}): degenerate cell"
        )

    if dim == 2:
        tagged = _initial_tagging_2d(nodes_arr, cells_arr)
    else:
        tagged = _initial_tagging_3d(nodes_arr, cells_arr)
    types = np.zeros(cells_arr.shape[0], dtype=np.uint8)
    mesh = Mesh(dim, nodes_arr, tagged, types)

    fc = mesh.facet_cells()
    for key, inc in fc.items():
        if len(inc) > 2:
            raise MeshError(f"facet {key} shared by {len(inc)} cells")
    mesh.boundary_tags = _tag_boundary(dim, nodes_arr, fc, boundary_spec)
    if validate:
        _check_hanging_nodes(mesh)
    return mesh


# ----------------------------------------------------------------------
# structured builders
# ----------------------------------------------------------------------

def _quad_triangles(a: int, b: int, c: int, d: int):
    """Split ccw quad (a, b, c, d) along the (a, c) diagonal into two
    tagged triangles.  The diagonal is both refinement edges, so the two
    halves of a square always agree on the edge to bisect first and a
    mark-everything pass splits every triangle exactly once."""
    return (a, b, c), (c, d, a)


def box_mesh_2d(
    bounds: Sequence[Sequence[float]],
    nx: int,
    ny: int,
    boundary_spec: Mapping[str, TagPredicate] | None = None,
) -> Mesh:
    """Uniform criss-cross triangulation of a rectangle (two triangles per
    grid square, all diagonals parallel)."""
    (x0, x1), (y0, y1) = bounds
    xs = np.linspace(x0, x1, nx + 1)
    ys = np.linspace(y0, y1, ny + 1)
    nid = lambda i, j: j * (nx + 1) + i
    nodes = np.array([(x, y) for y in ys for x in xs])
    tagged = []
    for j in range(ny):
        for i in range(nx):
            a, b = nid(i, j), nid(i + 1, j)
            c, d = nid(i + 1, j + 1), nid(i, j + 1)
            tagged.extend(_quad_triangles(a, b, c, d))
    tagged_arr = np.array(tagged, dtype=np.int64)
    mesh = Mesh(2, nodes, tagged_arr, np.zeros(len(tagged), dtype=np.uint8))
    mesh.boundary_tags = _tag_boundary(2, nodes, mesh.facet_cells(), boundary_spec)
    return mesh


def box_mesh_3d(
    bounds: Sequence[Sequence[float]],
    nx: int,
    ny: int,
    nz: int,
    boundary_spec: Mapping[str, TagPredicate] | None = None,
) -> Mesh:
    """Kuhn subdivision of a hexahedral grid: six tetrahedra per cube.

    Every tetrahedron follows a monotone vertex path from the low corner of
    its cube to the high corner, with the full diagonal as refinement edge.
    This family is exactly the one for which 3D bisection closure is
    conforming by construction.
    """
    (x0, x1), (y0, y1), (z0, z1) = bounds
    xs = np.linspace(x0, x1, nx + 1)
    ys = np.linspace(y0, y1, ny + 1)
    zs = np.linspace(z0, z1, nz + 1)
    nid = lambda i, j, k: (k * (ny + 1) + j) * (nx + 1) + i
    nodes = np.array([(x, y, z) for z in zs for y in ys for x in xs])
    steps = {0: (1, 0, 0), 1: (0, 1, 0), 2: (0, 0, 1)}
    tagged = []
    for k in range(nz):
        for j in range(ny):
            for i in range(nx):
                for perm in itertools.permutations((0, 1, 2)):
                    p = [i, j, k]
                    path = [nid(*p)]
                    for ax in perm:
                        p = [p[0] + steps[ax][0], p[1] + steps[ax][1], p[2] + steps[ax][2]]
                        path.append(nid(*p))
                    tagged.append(tuple(path))
    tagged_arr = np.array(tagged, dtype=np.int64)
    mesh = Mesh(3, nodes, tagged_arr, np.zeros(len(tagged), dtype=np.uint8))
    mesh.boundary_tags = _tag_boundary(3, nodes, mesh.facet_cells(), boundary_spec)
    return mesh


def hole_mesh(
    center: Sequence[float] = (0.5, 0.5),
    radius: float = 0.2,
    half_width: float = 0.5,
    n_theta: int = 32,
    n_layers: int = 10,
    boundary_spec: Mapping[str, TagPredicate] | None = None,
) -> Mesh:
    """Square plate with a polygonal circular hole, meshed as a graded ring.

    ``n_theta`` rays connect the inscribed polygon (the hole) to the outer
    square; ``n_layers`` radial layers of quads are split into triangle
    pairs, giving ``2 * n_theta * n_layers`` cells.  With the defaults
    (32 rays, 10 layers) this is a 640-cell mesh whose rays pass exactly
    through the square's corners when ``n_theta`` is a multiple of 8.
    """
    cx, cy = center
    thetas = 2.0 * math.pi * np.arange(n_theta) / n_theta
    cos, sin = np.cos(thetas), np.sin(thetas)
    t_out = half_width / np.maximum(np.abs(cos), np.abs(sin))
    inner = np.stack([cx + radius * cos, cy + radius * sin], axis=1)
    outer = np.stack([cx + t_out * cos, cy + t_out * sin], axis=1)
    rho = np.arange(n_layers + 1) / n_layers
    nodes = np.concatenate(
        [(1.0 - r) * inner + r * outer for r in rho], axis=0
    )
    nid = lambda k, j: j * n_theta + (k % n_theta)
    tagged = []
    for j in range(n_layers):
        for k in range(n_theta):
            a, b = nid(k, j), nid(k + 1, j)
            c, d = nid(k + 1, j + 1), nid(k, j + 1)
            tagged.extend(_quad_triangles(a, b, c, d))
    tagged_arr = np.array(tagged, dtype=np.int64)
    mesh = Mesh(2, nodes, tagged_arr, np.zeros(len(tagged), dtype=np.uint8))
    mesh.boundary_tags = _tag_boundary(2, nodes, mesh.facet_cells(), boundary_spec)
    return mesh


def lshape_mesh(
    size: float,
    n: int,
    boundary_spec: Mapping[str, TagPredicate] | None = None,
) -> Mesh:
    """L-shaped panel: a size x size square minus its lower-right quadrant.

    A full-height column on the left carries a limb extending right in the
    upper half, with the re-entrant corner at the centre; loading the limb's
    free end flexes it about the corner.  Each of the three (size/2)-blocks
    carries an ``n x n`` criss-cross grid, so the cell count is ``6 * n**2``.
    """
    half = size / 2.0
    m = 2 * n  # grid squares per full side
    xs = np.linspace(0.0, size, m + 1)
    ys = np.linspace(0.0, size, m + 1)
    index = -np.ones((m + 1, m + 1), dtype=np.int64)
    coords = []
    for j in range(m + 1):
        for i in range(m + 1):
            if xs[i] <= half + 1e-12 or ys[j] >= half - 1e-12:
                index[i, j] = len(coords)
                coords.append((xs[i], ys[j]))
    tagged = []
    for j in range(m):
        for i in range(m):
            if xs[i] >= half - 1e-12 and ys[j + 1] <= half + 1e-12:
                continue  # removed quadrant
            a, b = index[i, j], index[i + 1, j]
            c, d = index[i + 1, j + 1], index[i, j + 1]
            tagged.extend(_quad_triangles(int(a), int(b), int(c), int(d)))
    nodes = np.array(coords)
    tagged_arr = np.array(tagged, dtype=np.int64)
    mesh = Mesh(2, nodes, tagged_arr, np.zeros(len(tagged), dtype=np.uint8))
    mesh.boundary_tags = _tag_boundary(2, nodes, mesh.facet_cells(), boundary_spec)
    return mesh


def structured_mesh(domain: Mapping[str, object], h: float) -> Mesh:
    """Dispatch a structured mesh for a named domain at target edge length h.

    ``domain["kind"]`` selects the generator: ``"box"`` (2D or 3D bounds),
    ``"box_with_hole"`` or ``"l_shape"``.  Raises :class:`MeshError` when
    ``h`` is non-positive or exceeds the domain extent.
    """
    if h <= 0.0:
        raise MeshError("target edge length h must be positive")
    kind = domain["kind"]
    if kind == "box":
        bounds = domain["bounds"]
        extents = [hi - lo for lo, hi in bounds]
        if any(h > e for e in extents):
            raise MeshError("h larger than domain extent")
        counts = [max(1, math.ceil(e / h)) for e in extents]
        if len(bounds) == 2:
            return box_mesh_2d(bounds, *counts, boundary_spec=domain.get("tags"))
        return box_mesh_3d(bounds, *counts, boundary_spec=domain.get("tags"))
    if kind == "box_with_hole":
        half = float(domain.get("half_width", 0.5))
        radius = float(domain["radius"])
        if h > 2 * half:
            raise MeshError("h larger than domain extent")
        gap = half - radius
        n_layers = max(2, math.ceil(gap / h))
        n_theta = max(8, 8 * math.ceil(2.0 * math.pi * radius / h / 8.0))
        return hole_mesh(
            center=domain.get("center", (half, half)),
            radius=radius,
            half_width=half,
            n_theta=n_theta,
            n_layers=n_layers,
            boundary_spec=domain.get("tags"),
        )
    if kind == "l_shape":
        size = float(domain["size"])
        if h > size:
            raise MeshError("h larger than domain extent")
        n = max(1, math.ceil(size / 2.0 / h))
        return lshape_mesh(size, n, boundary_spec=domain.get("tags"))
    raise MeshError(f"unknown domain kind {kind!r}")


# ----------------------------------------------------------------------
# slits
# ----------------------------------------------------------------------

def insert_slit(
    mesh: Mesh,
    axis: int,
    value: float,
    within: Callable[[np.ndarray], bool],
    tag: str = "crack",
) -> Mesh:
    """Cut the mesh along the grid plane ``x[axis] == value``.

    Nodes on the plane for which ``within`` is true are duplicated; cells on
    the positive side of the plane are rewired to the duplicates, turning the
    selected portion of the plane into a zero-width slit with free faces on
    both flanks.  Nodes on the plane where ``within`` is false stay shared
    and form the crack front.  The plane must be a union of facets of the
    input mesh (true for the structured builders when the plane is a grid
    plane).
    """
    nodes = mesh.nodes
    scale = float(np.max(nodes.max(axis=0) - nodes.min(axis=0))) or 1.0
    tol = 1e-9 * scale
    on_cut = np.abs(nodes[:, axis] - value) <= tol
    split_ids = [
        i for i in np.where(on_cut)[0] if within(nodes[i])
    ]
    if not split_ids:
        raise MeshError("slit selects no nodes")
    twin = {}
    new_nodes = [nodes]
    for k, i in enumerate(split_ids):
        twin[int(i)] = mesh.n_nodes + k
    new_nodes.append(nodes[split_ids])
    all_nodes = np.concatenate(new_nodes, axis=0)

    centroids = mesh.cell_centroids()
    upper = centroids[:, axis] > value
    tagged = mesh._tagged.copy()
    for ci in np.where(upper)[0]:
        for loc in range(mesh.dim + 1):
            t = twin.get(int(tagged[ci, loc]))
            if t is not None:
                tagged[ci, loc] = t

    # remap boundary tags owned by rewired cells, then tag the new crack faces
    fc = mesh.facet_cells()
    new_tags: dict[FacetKey, str] = {}
    for key, name in mesh.boundary_tags.items():
        owner = fc[key][0]
        if upper[owner]:
            key = _facet_key(twin.get(int(v), int(v)) for v in key)
        new_tags[key] = name
    for key, inc in fc.items():
        if len(inc) != 2:
            continue
        if not any(int(v) in twin for v in key):
            continue
        if not all(abs(nodes[v, axis] - value) <= tol for v in key):
            continue
        upper_key = _facet_key(twin.get(int(v), int(v)) for v in key)
        new_tags.setdefault(key, tag)
        new_tags.setdefault(upper_key, tag)

    return Mesh(
        mesh.dim,
        all_nodes,
        tagged,
        mesh._types.copy(),
        generation=mesh.generation,
        boundary_tags=new_tags,
    )


# ----------------------------------------------------------------------
# bisection
# ----------------------------------------------------------------------

class _Refiner:
    """Mutable scratch state for one conforming bisection pass."""

    def __init__(self, mesh: Mesh):
        self.dim = mesh.dim
        self.coords: list[np.ndarray] = [mesh.nodes[i] for i in range(mesh.n_nodes)]
        self.tagged: list[tuple[int, ...]] = [tuple(map(int, r)) for r in mesh._tagged]
        self.types: list[int] = [int(t) for t in mesh._types]
        self.alive: list[bool] = [True] * mesh.n_cells
        self.ancestor: list[int] = list(range(mesh.n_cells))
        self.tags: dict[FacetKey, str] = dict(mesh.boundary_tags)
        self.origins: list[tuple[int, int]] = []
        self.n_old_nodes = mesh.n_nodes
        self.edge_cells: dict[tuple[int, int], set[int]] = {}
        for cid, verts in enumerate(self.tagged):
            self._register(cid, verts)
        # generous budget: closure on a compatible mesh touches each cell a
        # bounded number of times
        self.budget = 200 * (mesh.n_cells + 16) + 10000

    def _register(self, cid: int, verts: tuple[int, ...]) -> None:
        for a, b in itertools.combinations(verts, 2):
            self.edge_cells.setdefault(_edge_key(a, b), set()).add(cid)

    def _unregister(self, cid: int) -> None:
        for a, b in itertools.combinations(self.tagged[cid], 2):
            self.edge_cells[_edge_key(a, b)].discard(cid)

    def ref_edge(self, cid: int) -> tuple[int, int]:
        v = self.tagged[cid]
        return _edge_key(v[0], v[-1])

    def _split_cell(self, cid: int, mid: int) -> None:
        v = self.tagged[cid]
        gamma = self.types[cid]
        dim = self.dim
        self._unregister(cid)
        self.alive[cid] = False
        inner = v[1:dim]
        child1 = (v[0], mid) + inner
        child2 = (v[dim], mid) + (inner[::-1] if gamma == 0 else inner)
        child_type = (gamma + 1) % dim
        for child in (child1, child2):
            nid = len(self.tagged)
            self.tagged.append(child)
            self.types.append(child_type)
            self.alive.append(True)
            self.ancestor.append(self.ancestor[cid])
            self._register(nid, child)
        if dim == 3:
            # boundary faces containing the split edge are halved
            e0, e1 = v[0], v[dim]
            for w in inner:
                face = _facet_key((e0, e1, w))
                name = self.tags.pop(face, None)
                if name is not None:
                    self.tags[_facet_key((e0, mid, w))] = name
                    self.tags[_facet_key((e1, mid, w))] = name

    def split_edge(self, start: tuple[int, int]) -> None:
        stack = [start]
        while stack:
            self.budget -= 1
            if self.budget < 0:
                raise MeshError(
                    "bisection closure did not terminate; the initial mesh "
                    "is not compatible with newest-vertex refinement"
                )
            edge = stack[-1]
            patch = self.edge_cells.get(edge)
            if not patch:
                stack.pop()
                continue
            pending = sorted({self.ref_edge(c) for c in patch} - {edge})
            if pending:
                stack.extend(reversed(pending))
                continue
            stack.pop()
            mid = len(self.coords)
            self.coords.append(0.5 * (self.coords[edge[0]] + self.coords[edge[1]]))
            self.origins.append(edge)
            if self.dim == 2:
                name = self.tags.pop(edge, None)
                if name is not None:
                    self.tags[_facet_key((edge[0], mid))] = name
                    self.tags[_facet_key((edge[1], mid))] = name
            for cid in sorted(patch):
                self._split_cell(cid, mid)
            del self.edge_cells[edge]


def bisect(mesh: Mesh, marked: Iterable[int]) -> tuple[Mesh, TransferMap]:
    """Bisect every marked cell once, with recursive conforming closure.

    Each marked cell's refinement edge is split at its midpoint; cells
    sharing an edge that must be split are refined first until the whole
    edge patch agrees, which is what keeps the result free of hanging
    nodes.  Closure may therefore bisect cells that were never marked, and
    marked cells can be split more than once when a neighbour's closure
    lands on them.

    Returns the refined mesh (generation incremented) and the transfer map.
    An empty ``marked`` set returns the input mesh unchanged together with
    an identity map.
    """
    marked_arr = np.unique(np.asarray(sorted(set(int(c) for c in marked)), dtype=np.int64)) \
        if not isinstance(marked, np.ndarray) else np.unique(marked.astype(np.int64))
    if marked_arr.size == 0:
        return mesh, TransferMap.identity(mesh)
    if marked_arr.min() < 0 or marked_arr.max() >= mesh.n_cells:
        raise MeshError("marked cell index out of range")

    work = _Refiner(mesh)
    for cid in marked_arr:
        if work.alive[int(cid)]:
            work.split_edge(work.ref_edge(int(cid)))

    keep = [i for i, a in enumerate(work.alive) if a]
    new_tagged = np.array([work.tagged[i] for i in keep], dtype=np.int64)
    new_types = np.array([work.types[i] for i in keep], dtype=np.uint8)
    parents = np.array([work.ancestor[i] for i in keep], dtype=np.int64)
    new_nodes = np.vstack([mesh.nodes, np.array(work.coords[mesh.n_nodes:])]) \
        if len(work.coords) > mesh.n_nodes else mesh.nodes.copy()
    refined = Mesh(
        mesh.dim,
        new_nodes,
        new_tagged,
        new_types,
        generation=mesh.generation + 1,
        boundary_tags=work.tags,
    )
    tm = TransferMap(
        n_old_nodes=mesh.n_nodes,
        n_old_cells=mesh.n_cells,
        parent_of_cell=parents,
        edge_endpoints=np.array(work.origins, dtype=np.int64).reshape(-1, 2),
    )
    return refined, tm


def uniform_refine(mesh: Mesh, times: int = 1) -> tuple[Mesh, list[TransferMap]]:
    """Bisect every cell, ``times`` passes; returns the mesh and all maps."""
    maps: list[TransferMap] = []
    for _ in range(times):
        mesh, tm = bisect(mesh, np.arange(mesh.n_cells))
        maps.append(tm)
    return mesh, maps


def nearest_node(mesh: Mesh, point: Sequence[float]) -> int:
    """Index of the mesh node closest to ``point``."""
    d = np.linalg.norm(mesh.nodes - np.asarray(point, dtype=np.float64), axis=1)
    return int(np.argmin(d))
