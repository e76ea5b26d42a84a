"""Command line entry point ``fk``.

    fk run --config cfg.json [--out DIR] [overrides]
    fk sweep --axis h|ell|tau|eps --values v1 v2 ... --config cfg.json [--out DIR]
    fk mesh gen --domain x0,y0,x1,y1 --n N --lloyd L --seed S --out mesh.json
    fk scenarios

Results are echoed to stdout as CSV blocks separated by ``#``-prefixed
headers; files go to the output directory.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import io
from .newton import NewtonError
from .polymesh import MeshError, generate_voronoi
from .runner import ERROR_COLUMNS, convergence_sweep, error_row, exit_status, write_outputs
from .scenarios import scenario_catalog
from .simulation import RunConfig, simulate

OVERRIDES = [
    ("--scenario", str, "scenario"),
    ("--mesh", str, "mesh_file"),
    ("--n-cells", int, "n_cells"),
    ("--lloyd", int, "lloyd_iters"),
    ("--seed", int, "seed"),
    ("--degree", int, "degree"),
    ("--theta", float, "theta"),
    ("--eta0", float, "eta0"),
    ("--epsilon", float, "epsilon"),
    ("--nu", int, "nu"),
    ("--tau", float, "tau"),
    ("--T", float, "T"),
    ("--tol", float, "tol"),
    ("--max-iters", int, "max_iters"),
    ("--linear-solver", str, "linear_solver"),
    ("--init", str, "init"),
    ("--snapshot-every", int, "snapshot_every"),
    ("--sample-level", int, "sample_level"),
    ("--c-crit", float, "c_crit"),
    ("--dump-matrices", str, "dump_matrices"),
]


def _add_overrides(p: argparse.ArgumentParser):
    p.add_argument("--config", type=Path, help="JSON run configuration")
    for flag, typ, dest in OVERRIDES:
        p.add_argument(flag, type=typ, dest=dest, default=None)
    p.add_argument("--use-facet-count", dest="use_facet_count", action=argparse.BooleanOptionalAction, default=None)
    p.add_argument("--no-vtk", dest="vtk", action="store_false", default=None)


def build_config(args) -> RunConfig:
    data = json.loads(args.config.read_text()) if args.config else {}
    for _, _, dest in OVERRIDES + [(None, None, "use_facet_count"), (None, None, "vtk")]:
        v = getattr(args, dest, None)
        if v is not None:
            data[dest] = v
    if getattr(args, "out", None):
        data["output_dir"] = str(args.out)
    return RunConfig.from_dict(data)


def _print_csv(title: str, rows: list[dict], columns: list[str]):
    print(f"# {title}")
    print(",".join(columns))
    for r in rows:
        print(",".join(str(io._fmt(r.get(c))) for c in columns))


def cmd_run(args) -> int:
    cfg = build_config(args)
    try:
        res = simulate(cfg)
    except NewtonError as exc:
        print(f"error: Newton failure: {exc}", file=sys.stderr)
        if exc.trace is not None:
            for i, (inc, r) in enumerate(zip(exc.trace.increments, exc.trace.residuals)):
                print(f"  iteration {i + 1}: increment {inc:.3e} residual {r:.3e}", file=sys.stderr)
        return 2
    if res.config.output_dir:
        write_outputs(res, res.config.output_dir, figures=not args.no_figures)
    row = error_row(res)
    _print_csv("errors", [row], [c for c in ERROR_COLUMNS if c in row])
    summary = {
        "steps": res.steps,
        "newton_iterations": res.newton_iterations,
        "entropy_inequality": "n/a" if res.config.nu != 1 else ("ok" if res.entropy_ok else "violated"),
        "positivity": "ok" if res.positive else "violated",
    }
    _print_csv("summary", [summary], list(summary))
    return exit_status(res)


def cmd_sweep(args) -> int:
    cfg = build_config(args)
    out = Path(args.out) if args.out else None
    csv_path = None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        csv_path = out / f"sweep-{args.axis}.csv"
    cfg = RunConfig.from_dict({**cfg.to_dict(), "output_dir": None})
    try:
        rows = convergence_sweep(cfg, args.axis, args.values, csv_path)
    except NewtonError as exc:
        print(f"error: sweep aborted: {exc}", file=sys.stderr)
        return 2
    cols = ["value", "abscissa", "E_c", "E_sigma", "E_c_degradation", "rate_c", "rate_sigma"]
    _print_csv(f"sweep {args.axis}", rows, cols)
    if out is not None and not args.no_figures:
        from .plotting import plot_convergence

        plot_convergence(rows, args.axis, out / f"sweep-{args.axis}.png")
    return 0


def cmd_mesh_gen(args) -> int:
    try:
        domain = tuple(float(v) for v in args.domain.split(","))
        if len(domain) != 4:
            raise ValueError
    except ValueError:
        print("error: --domain expects x0,y0,x1,y1", file=sys.stderr)
        return 2
    try:
        mesh = generate_voronoi(domain, args.n, args.lloyd, args.seed)
    except (MeshError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    io.save_mesh(mesh, args.out)
    _print_csv("mesh", [{"cells": mesh.n_cells, "facets": mesh.n_facets, "h": mesh.h, "area": mesh.area}], ["cells", "facets", "h", "area"])
    return 0


def cmd_scenarios(args) -> int:
    rows = []
    for name, factory in scenario_catalog().items():
        sc = factory()
        rows.append({"name": name, "domain": " ".join(map(str, sc.domain)), "T": sc.T, "exact": sc.has_exact})
    _print_csv("scenarios", rows, ["name", "domain", "T", "exact"])
    return 0


def make_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="fk", description="Entropy-variable BDF-LDG solver for the Fisher-Kolmogorov equation.")
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run one configuration")
    _add_overrides(r)
    r.add_argument("--out", type=Path, help="output directory")
    r.add_argument("--no-figures", action="store_true")
    r.set_defaults(func=cmd_run)

    s = sub.add_parser("sweep", help="convergence sweep along one parameter")
    _add_overrides(s)
    s.add_argument("--axis", required=True, choices=["h", "ell", "tau", "eps"])
    s.add_argument("--values", required=True, nargs="+")
    s.add_argument("--out", type=Path, help="directory for the rate table and plot")
    s.add_argument("--no-figures", action="store_true")
    s.set_defaults(func=cmd_sweep)

    m = sub.add_parser("mesh", help="mesh utilities")
    msub = m.add_subparsers(dest="mesh_command", required=True)
    g = msub.add_parser("gen", help="generate a Voronoi mesh of a rectangle")
    g.add_argument("--domain", required=True, help="x0,y0,x1,y1")
    g.add_argument("--n", type=int, required=True)
    g.add_argument("--lloyd", type=int, default=50)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", type=Path, required=True)
    g.set_defaults(func=cmd_mesh_gen)

    c = sub.add_parser("scenarios", help="list built-in scenarios")
    c.set_defaults(func=cmd_scenarios)
    return p


def main(argv=None) -> int:
    args = make_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ValueError, MeshError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
