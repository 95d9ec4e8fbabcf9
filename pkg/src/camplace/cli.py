"""Command-line driver.

Exit codes: 0 success, 1 a solve came back infeasible, 2 config or I/O error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys

from camplace.errors import CamplaceError
from camplace.pipeline import (
    Pipeline, any_infeasible, load_config, run_evaluate, run_export_lp, run_solve,
)
from camplace.solvers import METHODS

log = logging.getLogger("camplace")

EXIT_OK, EXIT_INFEASIBLE, EXIT_CONFIG = 0, 1, 2


def _int_list(text: str) -> list[int]:
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _method_list(text: str) -> list[str]:
    out = [v.strip() for v in text.split(",") if v.strip()]
    for m in out:
        if m not in METHODS:
            raise argparse.ArgumentTypeError(f"unknown method {m!r}; choose from {', '.join(METHODS)}")
    return out


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON or TOML pipeline config")
    common.add_argument("--out", help="output directory (overrides config 'out')")
    common.add_argument("--seed", type=int, help="solver seed")
    common.add_argument("--threads", type=int, help="worker threads for the visibility build")
    common.add_argument("--time-budget", type=float, help="wall-clock seconds per solve")
    common.add_argument("--node-limit", type=int,
                        help="search-node cap per solve; makes time-limited runs reproducible")
    common.add_argument("--scene", help="builtin scene name ('store', 'shoebox') or scene JSON path")
    common.add_argument("--voxel-size", type=float, help="voxel edge length in meters")
    common.add_argument("-v", "--verbose", action="store_true", help="debug logging")

    p = argparse.ArgumentParser(prog="camplace", description="Camera placement for voxel coverage.")
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("ingest", parents=[common], help="build the voxel grid")
    sub.add_parser("candidates", parents=[common], help="generate candidate poses")
    sub.add_parser("visibility", parents=[common], help="build and prune the view matrix")
    s = sub.add_parser("solve", parents=[common], help="run the configured solvers")
    s.add_argument("--methods", type=_method_list, help="comma-separated method names")
    s.add_argument("--budgets", type=_int_list, help="comma-separated camera budgets")
    e = sub.add_parser("evaluate", parents=[common], help="recompute metrics for a solution file")
    e.add_argument("solution", help="solution JSON written by 'solve'")
    x = sub.add_parser("export-lp", parents=[common], help="write the MILP in CPLEX LP format")
    x.add_argument("--budget", type=int, required=True, help="camera budget")
    x.add_argument("--lp", help="output path (default <out>/model_ns<budget>.lp)")
    return p


def _overrides(args) -> dict:
    o: dict = {}
    if args.out:
        o["out"] = args.out
    if args.threads is not None:
        o["threads"] = args.threads
    if args.voxel_size is not None:
        o["voxel_size"] = args.voxel_size
    if args.scene:
        o["scene"] = {"synthetic": args.scene}
    solver = {}
    if args.seed is not None:
        solver["seed"] = args.seed
    if args.time_budget is not None:
        solver["time_budget"] = args.time_budget
    if args.node_limit is not None:
        solver["node_limit"] = args.node_limit
    if getattr(args, "methods", None):
        solver["methods"] = args.methods
    if getattr(args, "budgets", None):
        solver["budgets"] = args.budgets
    if solver:
        o["solver"] = solver
    return o


def run(args) -> int:
    cfg = load_config(args.config, _overrides(args))
    pipe = Pipeline(cfg)
    stage = args.command
    try:
        if stage == "ingest":
            grid = pipe.ingest()
            print(json.dumps({"dims": list(grid.dims), "occupied_count": grid.occupied_count,
                              "grid": str(pipe.out / "grid.vgrid")}))
            return EXIT_OK
        if stage == "candidates":
            stage = "ingest"
            grid = pipe.ingest()
            stage = "targets"
            pipe.targets(grid)
            stage = "candidates"
            cands = pipe.candidates(grid)
            print(json.dumps({"n_g": cands.n_g, "n_l": cands.n_l}))
            return EXIT_OK
        stage = "build"
        stack = pipe.build()
        if args.command == "visibility":
            print(json.dumps({"n_g": stack.V.n_g, "n_p": stack.V.n_p,
                              "provenance": stack.V.provenance}))
            return EXIT_OK
        stage = args.command
        if stage == "solve":
            rows = run_solve(stack)
            for r in rows:
                gap = r["coverage_gap"]
                print(f"{r['method']:16s} ns={r['budget']:<3d} status={r['status']:22s} "
                      f"gap={'n/a' if gap is None else f'{gap:.4f}'}")
            return EXIT_INFEASIBLE if any_infeasible(rows) else EXIT_OK
        if stage == "evaluate":
            m = run_evaluate(stack, args.solution)
            print(json.dumps({k: m[k] for k in ("deficit_cost", "coverage_gap",
                                                "nontriangulatable_fraction")}))
            return EXIT_OK
        path = run_export_lp(stack, args.budget, args.lp or pipe.out / f"model_ns{args.budget}.lp")
        print(str(path))
        return EXIT_OK
    except CamplaceError as exc:
        raise CamplaceError(f"stage {stage}: {exc}") from exc


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return run(args)
    except (CamplaceError, OSError) as exc:
        print(f"camplace: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
