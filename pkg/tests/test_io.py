import numpy as np
import pytest

from phasefrac.mesh import box_mesh_2d, build_mesh
from phasefrac.solver import StepReport
from phasefrac.scenarios import RunRecord
from phasefrac.vtkio import write_csv, write_vtk


def parse_vtk(path):
    """Minimal independent legacy-VTK reader: counts and raw blocks."""
    with open(path) as fh:
        lines = [ln.rstrip("\n") for ln in fh]
    assert lines[0].startswith("# vtk DataFile")
    assert lines[2] == "ASCII"
    assert lines[3] == "DATASET UNSTRUCTURED_GRID"
    out = {"points": [], "cells": [], "cell_types": [], "point_data": {}, "cell_data": {}}
    i = 4
    while i < len(lines):
        tok = lines[i].split()
        if not tok:
            i += 1
            continue
        if tok[0] == "POINTS":
            n = int(tok[1])
            out["points"] = [
                tuple(float(v) for v in lines[i + 1 + k].split()) for k in range(n)
            ]
            i += n + 1
        elif tok[0] == "CELLS":
            m = int(tok[1])
            for k in range(m):
                parts = lines[i + 1 + k].split()
                assert int(parts[0]) == len(parts) - 1
                out["cells"].append(tuple(int(v) for v in parts[1:]))
            i += m + 1
        elif tok[0] == "CELL_TYPES":
            m = int(tok[1])
            out["cell_types"] = [int(lines[i + 1 + k]) for k in range(m)]
            i += m + 1
        elif tok[0] in ("POINT_DATA", "CELL_DATA"):
            section = "point_data" if tok[0] == "POINT_DATA" else "cell_data"
            count = int(tok[1])
            i += 1
            while i < len(lines) and lines[i].split() and lines[i].split()[0] in (
                "SCALARS",
                "VECTORS",
            ):
                head = lines[i].split()
                name = head[1]
                if head[0] == "SCALARS":
                    i += 2  # skip LOOKUP_TABLE
                    vals = [float(lines[i + k]) for k in range(count)]
                    i += count
                else:
                    i += 1
                    vals = [
                        tuple(float(v) for v in lines[i + k].split())
                        for k in range(count)
                    ]
                    i += count
                out[section][name] = vals
        else:
            i += 1
    return out


class TestVtk:
    def test_single_triangle_round_trip(self, tmp_path):
        mesh = build_mesh([(0.0, 0.0), (1.0, 0.0), (0.0, 1.0)], [(0, 1, 2)])
        d = np.array([0.0, 0.0, 1.0])
        path = tmp_path / "tri.vtk"
        write_vtk(mesh, {"phase": d}, {}, path)
        parsed = parse_vtk(path)
        assert len(parsed["points"]) == 3
        assert len(parsed["cells"]) == 1
        assert parsed["cell_types"] == [5]
        by_node = {tuple(np.round(p[:2], 9)): v for p, v in zip(parsed["points"], parsed["point_data"]["phase"])}
        assert by_node[(0.0, 1.0)] == 1.0

    def test_vector_and_cell_fields(self, tmp_path):
        mesh = box_mesh_2d(((0, 1), (0, 1)), 2, 2)
        u = np.random.default_rng(0).normal(size=2 * mesh.n_nodes)
        H = np.arange(mesh.n_cells, dtype=float)
        eta = np.ones(mesh.n_cells)
        path = tmp_path / "fields.vtk"
        write_vtk(mesh, {"phase": np.zeros(mesh.n_nodes), "displacement": u}, {"history": H, "error_indicator": eta}, path)
        parsed = parse_vtk(path)
        assert len(parsed["point_data"]["displacement"]) == mesh.n_nodes
        assert parsed["point_data"]["displacement"][0][2] == 0.0  # padded z
        assert parsed["cell_data"]["history"] == pytest.approx(list(H))
        # connectivity round trip
        assert parsed["cells"] == [tuple(int(v) for v in row) for row in mesh.cells]

    def test_tetrahedron_cell_type(self, tmp_path):
        mesh = build_mesh(
            [(0, 0, 0), (1, 0, 0), (0, 1, 0), (0, 0, 1)], [(0, 1, 2, 3)]
        )
        path = tmp_path / "tet.vtk"
        write_vtk(mesh, {}, {}, path)
        parsed = parse_vtk(path)
        assert parsed["cell_types"] == [10]
        assert len(parsed["points"]) == 4

    def test_inconsistent_field_rejected(self, tmp_path):
        mesh = build_mesh([(0.0, 0.0), (1.0, 0.0), (0.0, 1.0)], [(0, 1, 2)])
        with pytest.raises(ValueError):
            write_vtk(mesh, {"phase": np.zeros(5)}, {}, tmp_path / "bad.vtk")


def _report(load, reaction, n_cells=10, eta=0.5):
    return StepReport(
        load_value=load,
        reaction=reaction,
        iterations=3,
        n_cells=n_cells,
        relative_residuals=(1e-6, 1e-7),
        converged=True,
        eta_global=eta,
    )


class TestCsv:
    def test_single_step_two_lines(self, tmp_path):
        rec = RunRecord("demo", steps=[_report(0.01, 1.5)])
        path = tmp_path / "curve.csv"
        write_csv(rec, path)
        lines = path.read_text().splitlines()
        assert len(lines) == 2
        assert lines[0] == "step,load_mm,reaction_kN,iterations,n_cells,eta_global"
        fields = lines[1].split(",")
        assert fields[0] == "1"
        assert float(fields[1]) == 0.01
        assert float(fields[2]) == 1.5

    def test_rows_monotone_in_step(self, tmp_path):
        rec = RunRecord("demo", steps=[_report(0.01 * k, k) for k in range(1, 6)])
        path = tmp_path / "curve.csv"
        write_csv(rec, path)
        lines = path.read_text().splitlines()[1:]
        steps = [int(ln.split(",")[0]) for ln in lines]
        assert steps == sorted(steps) == [1, 2, 3, 4, 5]

    def test_empty_record_rejected(self, tmp_path):
        with pytest.raises(ValueError):
            write_csv(RunRecord("demo"), tmp_path / "x.csv")

    def test_byte_identical_for_identical_records(self, tmp_path):
        rec = RunRecord("demo", steps=[_report(1e-5 * k, k * 0.37) for k in range(1, 9)])
        a, b = tmp_path / "a.csv", tmp_path / "b.csv"
        write_csv(rec, a)
        write_csv(rec, b)
        assert a.read_bytes() == b.read_bytes()
