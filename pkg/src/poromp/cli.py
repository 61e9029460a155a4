"""Command-line entry point.

Subcommands:
  run <config>            time-march a scenario, write requested outputs
  conditioning <config>   translating-domain conditioning sweep to CSV
  oracle --Z --T [--tol]  print the consolidation series value
  infsup [--refinements] [--mode]   pairing eigenvalue test
"""

from __future__ import annotations

import argparse
import sys

from .errors import PorompError


def _cmd_run(args) -> int:
    from .config import build_scenario, parse_config
    from .diagnostics import column_isochrones
    from .io import write_isochrones_csv, write_vtk
    from .solver import run_simulation

    cfg = parse_config(args.config)
    scenario = build_scenario(cfg)
    vtk_every = int(cfg.output.get("vtk_every", 0) or 0)
    vtk_prefix = cfg.output.get("vtk_prefix", "poromp_step")

    def callback(rec, cloud):
        if vtk_every and (rec.index + 1) % vtk_every == 0:
            write_vtk(f"{vtk_prefix}_{rec.index + 1:05d}.vtk", cloud)
        if not args.quiet:
            print(f"step {rec.index + 1}: t = {rec.time:.6g} s, "
                  f"{rec.iterations} iterations", flush=True)

    result = run_simulation(scenario, step_callback=callback)

    times = cfg.output.get("isochrone_times") or []
    csv_path = cfg.output.get("csv")
    if times and csv_path:
        tractions = [s for s in scenario.surfaces if s.kind == "traction"]
        overburden = abs(tractions[0].vector[1]) if tractions else 1.0
        records = column_isochrones(
            result, scenario.material,
            height=float(cfg.output.get("column_height", 1.0)),
            overburden=overburden,
            times_nondim=[float(t) for t in times],
            probe_x=float(cfg.output.get("probe_x", 0.0)),
        )
        write_isochrones_csv(csv_path, records)
        print(f"isochrones written to {csv_path}")
    print(f"completed {len(result.records)} steps")
    return 0


def _cmd_conditioning(args) -> int:
    from .config import parse_config
    from .diagnostics import ellipse_sweep
    from .io import write_conditioning_csv

    cfg = parse_config(args.config)
    records = ellipse_sweep(cfg, samples=args.samples)
    out = args.output or cfg.conditioning.get("csv", "conditioning.csv")
    write_conditioning_csv(out, records)
    print(f"{len(records)} sweep rows written to {out}")
    return 0


def _cmd_oracle(args) -> int:
    from .diagnostics import terzaghi_pressure

    value = terzaghi_pressure(args.Z, args.T, tol=args.tol)
    print(f"{value:.17g}")
    return 0


def _cmd_infsup(args) -> int:
    from .diagnostics import infsup_test

    refinements = [int(v) for v in args.refinements.split(",")]
    modes = ["overlapping", "equal"] if args.mode == "both" else [args.mode]
    for mode in modes:
        vals = infsup_test(refinements, mode=mode)
        for n, v in zip(refinements, vals):
            print(f"{mode} n={n}: min eigenvalue {v:.8e}")
    return 0


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="poromp",
        description="implicit coupled displacement-pressure material point solver",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run a scenario config")
    p_run.add_argument("config")
    p_run.add_argument("--quiet", action="store_true")
    p_run.set_defaults(func=_cmd_run)

    p_cond = sub.add_parser("conditioning", help="conditioning sweep")
    p_cond.add_argument("config")
    p_cond.add_argument("--samples", type=int, default=None)
    p_cond.add_argument("--output", default=None)
    p_cond.set_defaults(func=_cmd_conditioning)

    p_oracle = sub.add_parser("oracle", help="consolidation series value")
    p_oracle.add_argument("--Z", type=float, required=True)
    p_oracle.add_argument("--T", type=float, required=True)
    p_oracle.add_argument("--tol", type=float, default=1e-12)
    p_oracle.set_defaults(func=_cmd_oracle)

    p_infsup = sub.add_parser("infsup", help="pairing eigenvalue test")
    p_infsup.add_argument("--refinements", default="2,4,8")
    p_infsup.add_argument("--mode", default="both",
                          choices=["overlapping", "equal", "both"])
    p_infsup.set_defaults(func=_cmd_infsup)
    return parser


def main(argv=None) -> int:
    parser = make_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except PorompError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
