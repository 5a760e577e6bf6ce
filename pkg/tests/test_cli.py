import json

import pytest

from phasefrac.cli import EXIT_CONFIG, EXIT_OK, main


def test_cli_runs_truncated_builtin(tmp_path):
    code = main(
        [
            "run",
            "notch-tension",
            "--out",
            str(tmp_path),
            "--max-steps",
            "2",
            "--vtk-every",
            "1",
        ]
    )
    assert code == EXIT_OK
    assert (tmp_path / "curve.csv").exists()
    assert (tmp_path / "initial.vtk").exists()
    assert (tmp_path / "step_0001.vtk").exists()
    lines = (tmp_path / "curve.csv").read_text().splitlines()
    assert len(lines) == 3


def test_cli_config_file(tmp_path):
    doc = {
        "name": "from-config",
        "geometry": {
            "kind": "box2d",
            "bounds": [[0.0, 1.0], [0.0, 1.0]],
            "nx": 2,
            "ny": 2,
        },
        "material": {"Gc": 0.05, "l0": 0.2, "lam": 2.0, "mu": 3.0},
        "dirichlet": [
            {"region": "bottom", "component": 0},
            {"region": "bottom", "component": 1},
            {"region": "top", "component": 1, "scale": 1.0, "loaded": True},
        ],
        "schedule": [{"steps": 1, "increment": 1e-3}],
    }
    cfg = tmp_path / "scn.json"
    cfg.write_text(json.dumps(doc))
    code = main(["run", str(cfg), "--out", str(tmp_path / "out")])
    assert code == EXIT_OK
    assert (tmp_path / "out" / "curve.csv").exists()


def test_cli_rejects_bad_scenario(tmp_path, capsys):
    code = main(["run", "not-a-scenario", "--out", str(tmp_path)])
    assert code == EXIT_CONFIG
    assert "configuration error" in capsys.readouterr().err


def test_cli_adaptivity_flags(tmp_path):
    code = main(
        [
            "run",
            "notch-tension",
            "--out",
            str(tmp_path),
            "--max-steps",
            "1",
            "--theta",
            "0.4",
            "--marking",
            "l2",
            "--recovery",
            "harmonic",
            "--hmin",
            "0.01",
        ]
    )
    assert code == EXIT_OK
