import math

import numpy as np
import pytest

from phasefrac.mesh import (
    MeshError,
    bisect,
    box_mesh_2d,
    box_mesh_3d,
    build_mesh,
    hole_mesh,
    insert_slit,
    lshape_mesh,
    nearest_node,
    structured_mesh,
    uniform_refine,
)

from oracles import assert_conforming, facet_incidence


REF_TRI = ([(0.0, 0.0), (1.0, 0.0), (0.0, 1.0)], [(0, 1, 2)])
UNIT_SQUARE = (
    [(0.0, 0.0), (1.0, 0.0), (1.0, 1.0), (0.0, 1.0)],
    [(0, 1, 2), (0, 2, 3)],
)


class TestBuildMesh:
    def test_single_reference_triangle(self):
        mesh = build_mesh(*REF_TRI)
        assert mesh.n_cells == 1
        assert mesh.cell_measure(0) == pytest.approx(0.5)

    def test_two_triangle_square_is_conforming(self):
        mesh = build_mesh(*UNIT_SQUARE)
        interior = [k for k, v in mesh.facet_cells().items() if len(v) == 2]
        assert interior == [(0, 2)]

    def test_repeated_index_rejected(self):
        with pytest.raises(MeshError, match="degenerate|repeated"):
            build_mesh([(0, 0), (1, 0), (0, 1)], [(0, 1, 1)])

    def test_negative_orientation_rejected(self):
        with pytest.raises(MeshError, match="measure"):
            build_mesh([(0, 0), (1, 0), (0, 1)], [(0, 2, 1)])

    def test_out_of_range_index_rejected(self):
        with pytest.raises(MeshError, match="range"):
            build_mesh([(0, 0), (1, 0), (0, 1)], [(0, 1, 5)])

    def test_hanging_node_detected(self):
        # small triangles subdivide the big one's bottom edge: node 3 hangs
        nodes = [(0, 0), (1, 0), (0, 1), (0.5, 0.0), (0.5, -0.5)]
        cells = [(0, 1, 2), (0, 4, 3), (3, 4, 1)]
        with pytest.raises(MeshError, match="hanging"):
            build_mesh(nodes, cells)

    def test_boundary_tags_from_predicates(self):
        mesh = build_mesh(
            *UNIT_SQUARE,
            boundary_spec={"bottom": lambda m: abs(m[1]) < 1e-9},
        )
        assert set(mesh.boundary_tags.values()) == {"bottom"}
        assert list(mesh.boundary_nodes("bottom")) == [0, 1]


class TestMeasures:
    def test_reference_tetrahedron(self):
        mesh = build_mesh(
            [(0, 0, 0), (1, 0, 0), (0, 1, 0), (0, 0, 1)], [(0, 1, 2, 3)]
        )
        assert mesh.cell_measure(0) == pytest.approx(1.0 / 6.0)

    def test_scaling_law(self):
        scaled = build_mesh([(0, 0), (2, 0), (0, 2)], [(0, 1, 2)])
        assert scaled.cell_measure(0) == pytest.approx(4 * 0.5)


class TestVertexPatch:
    def test_corner_and_diagonal_nodes(self):
        mesh = build_mesh(*UNIT_SQUARE)
        assert list(mesh.vertex_patch(1)) == [0]
        assert list(mesh.vertex_patch(0)) == [0, 1]

    def test_structured_interior_node_matches_brute_force(self):
        mesh = box_mesh_2d(((0.0, 1.0), (0.0, 1.0)), 4, 4)
        interior = [
            i
            for i in range(mesh.n_nodes)
            if 0.0 < mesh.nodes[i, 0] < 1.0 and 0.0 < mesh.nodes[i, 1] < 1.0
        ]
        for v in interior:
            brute = sorted(i for i, c in enumerate(mesh.cells) if v in c)
            assert list(mesh.vertex_patch(v)) == brute
        # uniform criss-cross: every interior grid node touches 6 cells
        sizes = {len(mesh.vertex_patch(v)) for v in interior}
        assert sizes == {6}


class TestStructured:
    def test_single_square_gives_two_cells(self):
        mesh = structured_mesh({"kind": "box", "bounds": ((0, 1), (0, 1))}, h=1.0)
        assert mesh.n_cells == 2

    def test_unit_cube_kuhn_subdivision(self):
        mesh = structured_mesh(
            {"kind": "box", "bounds": ((0, 1), (0, 1), (0, 1))}, h=1.0
        )
        assert mesh.n_cells == 6
        assert mesh.cell_measures().sum() == pytest.approx(1.0)
        assert_conforming(mesh)

    def test_h_larger_than_extent_rejected(self):
        with pytest.raises(MeshError, match="extent"):
            structured_mesh({"kind": "box", "bounds": ((0, 1), (0, 1))}, h=2.0)

    def test_notch_start_count(self):
        # 16x16 criss-cross grid refined uniformly once (two bisection
        # passes, every triangle into four) gives the 2048-cell start mesh
        mesh = box_mesh_2d(((0.0, 1.0), (0.0, 1.0)), 16, 16)
        assert mesh.n_cells == 512
        refined, _ = uniform_refine(mesh, 2)
        assert refined.n_cells == 2048
        assert_conforming(refined)

    def test_hole_mesh_counts_and_tags(self):
        mesh = hole_mesh()
        assert mesh.n_cells == 640
        assert_conforming(mesh)
        assert mesh.cell_measures().sum() < 1.0  # square minus hole polygon

    def test_lshape_counts(self):
        mesh = lshape_mesh(500.0, 25)
        assert mesh.n_cells == 3750
        assert mesh.cell_measures().sum() == pytest.approx(3 * 250.0**2)
        assert_conforming(mesh)


class TestBisect:
    def test_single_triangle(self):
        mesh = build_mesh(*REF_TRI)
        refined, tm = bisect(mesh, [0])
        assert refined.n_cells == 2
        assert refined.n_nodes == 4
        assert_conforming(refined)
        assert list(tm.parent_of_cell) == [0, 0]

    def test_closure_refines_neighbor(self):
        mesh = build_mesh(*UNIT_SQUARE)
        refined, tm = bisect(mesh, [0])
        assert refined.n_cells == 4
        for key, inc in facet_incidence(refined.cells).items():
            assert len(inc) in (1, 2)

    def test_empty_marked_set_is_identity(self):
        mesh = build_mesh(*UNIT_SQUARE)
        same, tm = bisect(mesh, [])
        assert same is mesh
        assert tm.edge_endpoints.shape == (0, 2)
        assert list(tm.parent_of_cell) == [0, 1]

    def test_measure_conservation_2d(self):
        mesh = box_mesh_2d(((0.0, 1.0), (0.0, 1.0)), 3, 3)
        rng = np.random.default_rng(7)
        total = mesh.cell_measures().sum()
        for _ in range(5):
            marked = rng.choice(mesh.n_cells, size=max(1, mesh.n_cells // 4), replace=False)
            mesh, tm = bisect(mesh, marked)
            assert_conforming(mesh)
            assert mesh.cell_measures().sum() == pytest.approx(total, rel=1e-12)

    def test_lineage_partitions_measure(self):
        mesh = box_mesh_2d(((0.0, 1.0), (0.0, 1.0)), 2, 2)
        refined, tm = bisect(mesh, [0, 3, 5])
        child_measure = np.zeros(mesh.n_cells)
        np.add.at(child_measure, tm.parent_of_cell, refined.cell_measures())
        assert np.allclose(child_measure, mesh.cell_measures(), rtol=1e-12)

    def test_generation_increments(self):
        mesh = build_mesh(*REF_TRI)
        refined, _ = bisect(mesh, [0])
        assert refined.generation == mesh.generation + 1

    def test_boundary_tags_propagate(self):
        mesh = box_mesh_2d(
            ((0.0, 1.0), (0.0, 1.0)),
            2,
            2,
            {"top": lambda m: abs(m[1] - 1.0) < 1e-9},
        )
        refined, _ = uniform_refine(mesh, 3)
        top = refined.boundary_nodes("top")
        assert np.allclose(refined.nodes[top, 1], 1.0)
        # every boundary facet on y=1 carries the tag
        for key, inc in refined.facet_cells().items():
            if len(inc) == 1 and np.allclose(refined.nodes[list(key), 1], 1.0):
                assert refined.boundary_tags.get(key) == "top"

    def test_measure_conservation_3d(self):
        mesh = box_mesh_3d(((0, 1), (0, 1), (0, 1)), 2, 2, 2)
        rng = np.random.default_rng(3)
        for _ in range(4):
            marked = rng.choice(mesh.n_cells, size=mesh.n_cells // 5 + 1, replace=False)
            mesh, _ = bisect(mesh, marked)
            assert_conforming(mesh)
        assert mesh.cell_measures().sum() == pytest.approx(1.0, rel=1e-12)

    def test_marked_cells_are_all_split(self):
        mesh = box_mesh_2d(((0.0, 1.0), (0.0, 1.0)), 4, 4)
        marked = [0, 7, 20]
        refined, tm = bisect(mesh, marked)
        counts = np.bincount(tm.parent_of_cell, minlength=mesh.n_cells)
        for c in marked:
            assert counts[c] >= 2


class TestQuality:
    def test_reference_triangle_min_angle(self):
        mesh = build_mesh(*REF_TRI)
        assert mesh.quality()[0] == pytest.approx(45.0)

    def test_equilateral_triangle(self):
        mesh = build_mesh(
            [(0.0, 0.0), (1.0, 0.0), (0.5, math.sqrt(3) / 2)], [(0, 1, 2)]
        )
        min_angle, aspect = mesh.quality()
        assert min_angle == pytest.approx(60.0)
        assert aspect == pytest.approx(math.sqrt(3.0))

    def test_uniform_bisection_preserves_angles(self):
        mesh = build_mesh(*REF_TRI)
        initial = mesh.quality()[0]
        refined, _ = uniform_refine(mesh, 10)
        assert refined.quality()[0] >= 0.5 * initial - 1e-9

    def test_shape_regularity_under_adaptive_refinement(self):
        mesh = box_mesh_2d(((0.0, 1.0), (0.0, 1.0)), 4, 4)
        initial = mesh.quality()[0]
        for _ in range(8):
            cent = mesh.cell_centroids()
            marked = np.where(np.linalg.norm(cent - 0.3, axis=1) < 0.15)[0]
            mesh, _ = bisect(mesh, marked)
        assert mesh.quality()[0] >= 0.4 * initial


class TestSlit:
    def test_duplicated_nodes_and_crack_tags(self):
        mesh = box_mesh_2d(((0.0, 1.0), (0.0, 1.0)), 8, 8)
        cut = insert_slit(mesh, 1, 0.5, lambda p: p[0] < 0.5 - 1e-9)
        assert cut.n_nodes == mesh.n_nodes + 4  # x in {0, .125, .25, .375}
        crack = [f for f, t in cut.boundary_tags.items() if t == "crack"]
        assert len(crack) == 8  # four segments, two flanks
        assert_conforming(cut)

    def test_slit_survives_refinement(self):
        mesh = box_mesh_2d(((0.0, 1.0), (0.0, 1.0)), 8, 8)
        cut = insert_slit(mesh, 1, 0.5, lambda p: p[0] < 0.5 - 1e-9)
        cent = cut.cell_centroids()
        marked = np.where(np.linalg.norm(cent - (0.5, 0.5), axis=1) < 0.25)[0]
        refined, _ = bisect(cut, marked)
        assert_conforming(refined)
        crack = [f for f, t in refined.boundary_tags.items() if t == "crack"]
        assert len(crack) >= 8


def test_nearest_node():
    mesh = box_mesh_2d(((0.0, 1.0), (0.0, 1.0)), 2, 2)
    assert nearest_node(mesh, (0.49, 0.51)) == np.argmin(
        np.linalg.norm(mesh.nodes - (0.49, 0.51), axis=1)
    )
