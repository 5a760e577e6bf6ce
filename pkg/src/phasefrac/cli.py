"""Command-line entry point for batch fracture simulations."""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace

from .scenarios import (
    BUILTIN_SCENARIOS,
    ScenarioConfigError,
    ScenarioRunError,
    load_scenario,
    run,
)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_SOLVER = 3


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="phasefrac",
        description="Quasi-static brittle fracture with an adaptively refined "
        "hybrid phase-field model.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    p_run = sub.add_parser(
        "run",
        help="run a builtin scenario or a JSON config",
        description="Builtins: " + ", ".join(sorted(BUILTIN_SCENARIOS)),
    )
    p_run.add_argument("scenario", help="builtin scenario name or config path")
    p_run.add_argument("--out", default="out", help="output directory")
    p_run.add_argument("--theta", type=float, default=None, help="marking parameter")
    p_run.add_argument(
        "--marking", choices=("max", "l2"), default=None, help="marking criterion"
    )
    p_run.add_argument(
        "--recovery",
        choices=("simple", "area", "harmonic", "angle", "distance"),
        default=None,
        help="gradient recovery weights",
    )
    p_run.add_argument("--hmin", type=float, default=None, help="refinement size floor (mm)")
    p_run.add_argument(
        "--vtk-every", type=int, default=None, metavar="N", help="VTK snapshot cadence"
    )
    p_run.add_argument(
        "--max-steps", type=int, default=None, metavar="N", help="truncate the schedule"
    )
    p_run.add_argument("-v", "--verbose", action="store_true")
    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )
    log = logging.getLogger("phasefrac")

    try:
        scenario = load_scenario(args.scenario)
        adap = scenario.adaptivity
        if args.theta is not None:
            adap = replace(adap, theta=args.theta)
        if args.marking is not None:
            adap = replace(adap, marking=args.marking)
        if args.recovery is not None:
            method = "harmonic_area" if args.recovery == "harmonic" else args.recovery
            adap = replace(adap, recovery=method)
        if args.hmin is not None:
            adap = replace(adap, h_min=args.hmin)
        scenario = replace(scenario, adaptivity=adap)
    except ScenarioConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    try:
        record = run(
            scenario,
            out_dir=args.out,
            max_steps=args.max_steps,
            vtk_every=args.vtk_every,
        )
    except ScenarioRunError as exc:
        print(f"solver error: {exc}", file=sys.stderr)
        return EXIT_SOLVER

    last = record.steps[-1] if record.steps else None
    log.info(
        "completed %d steps in %.1f s; final mesh %d cells%s",
        len(record.steps),
        record.wall_time,
        record.final_mesh.n_cells,
        f"; final reaction {last.reaction:.6g} kN" if last else "",
    )
    return EXIT_OK


if __name__ == "__main__":
    raise SystemExit(main())
