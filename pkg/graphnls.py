#!/usr/bin/env python3
"""graphnls command line: classify graphs, compute ground states, run the experiment drivers."""

import argparse
import json
import logging
import sys
import time
from datetime import datetime, timezone
from pathlib import Path

from analytic import BlowupMode, blowup_sweep, soliton_certificate
from discretize import DEFAULT_H, DIRICHLET, NEUMANN, MeshParams, build_mesh, resample
from experiments import bisect_alpha_bar, phase_diagram, tip_length_threshold
from functionals import gn_constant
from graph import classify, critical_mass_report, load_graph
from models import CHECKPOINT_DB, GraphNLSError, IndeterminateError, ProblemParams, RunManifest, SolverError, Verdict
from report import append_manifest, emit_profile, to_jsonable, write_json, write_table
from solver import SolverConfig, minimize, refine_newton
from utils import VERSION, file_digest, parse_grid

logger = logging.getLogger(__name__)

LOG_FORMAT = '%(asctime)s - %(levelname)s - %(message)s'
LOG_FILE = "graphnls.log"

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DOMAIN = 2
EXIT_INDETERMINATE = 3


class UsageParser(argparse.ArgumentParser):
    """Usage errors exit with status 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def setup_logging(out_dir, verbose: bool = False):
    handlers = [logging.StreamHandler()]
    if out_dir is not None:
        Path(out_dir).mkdir(parents=True, exist_ok=True)
        handlers.append(logging.FileHandler(Path(out_dir) / LOG_FILE))
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.INFO,
        format=LOG_FORMAT,
        handlers=handlers,
        force=True,
    )


def mesh_from(args, h_default: float = DEFAULT_H, L_default: float = 40.0) -> MeshParams:
    return MeshParams(h=args.h if args.h is not None else h_default,
                      L=args.L if args.L is not None else L_default,
                      far_bc=args.far_bc)


def config_from(args) -> SolverConfig:
    return SolverConfig(restarts=args.restarts, seed=args.seed, max_iters=args.max_iters, processes=args.processes)


def params_from(args) -> ProblemParams:
    if args.mu is None:
        raise argparse.ArgumentTypeError("--mu is required")
    return ProblemParams(p=args.p, alpha=args.alpha, mu=args.mu)



def grid_from(text: str):
    try:
        return parse_grid(text)
    except ValueError as e:
        raise argparse.ArgumentTypeError(str(e))


def cmd_classify(args) -> dict:
    g = load_graph(args.graph)
    c = classify(g)
    payload = {"graph": str(args.graph), **to_jsonable(c), **to_jsonable(critical_mass_report(g, c))}
    logger.info(f"{args.graph}: {c.type_label}, mu_tilde = {payload['mu_tilde']:.6f}")
    return payload


def cmd_gn_const(args) -> dict:
    g = load_graph(args.graph)
    dg = build_mesh(g, mesh_from(args))
    gn = gn_constant(dg, q=args.q, maxit=args.maxit)
    payload = {"q": gn.q, "C_q_estimate": gn.C_q_estimate, "mu_G_estimate": gn.mu_G_estimate,
               "converged": gn.converged, "iterations": gn.iterations, "unconverged": gn.unconverged,
               "mesh": dg.describe(), "maximizer": None}
    if args.out is not None:
        payload["maximizer"] = str(emit_profile(gn.maximizer, Path(args.out) / "gn_maximizer.csv"))
    return payload


def cmd_minimize(args) -> dict:
    g = load_graph(args.graph)
    params = params_from(args)
    mesh = mesh_from(args)
    dg = build_mesh(g, mesh)
    outcome = minimize(dg, params, config_from(args))

    payload = {
        "verdict": outcome.verdict.value,
        "energy": outcome.energy,
        "attained": outcome.attained,
        "lambda": None,
        "pohozaev_residual": None,
        "iterations": len(outcome.energy_history),
        "truncation_suspect": outcome.diagnostics.get("truncation_suspect"),
        "restart_index": outcome.diagnostics.get("restart_index"),
        "restarts": outcome.diagnostics.get("restarts"),
        "mesh": dg.describe(),
        "profile": None,
    }
    if outcome.verdict == Verdict.UNBOUNDED:
        payload["blowup"] = to_jsonable(outcome.witness)
    elif outcome.verdict == Verdict.NO_MINIMIZER:
        payload["escape"] = to_jsonable(outcome.witness)

    if outcome.verdict == Verdict.CONVERGED:
        cp = outcome.witness
        payload.update({"lambda": cp.lam, "pohozaev_residual": cp.pohozaev_residual,
                        "iterations": cp.iterations})
        u = cp.u
        if args.refine_h is not None:
            fine = build_mesh(g, MeshParams(h=args.refine_h, L=args.refine_L or mesh.L, far_bc=mesh.far_bc))
            try:
                refined = refine_newton(resample(cp.u, fine), params)
                payload["refined"] = {"energy": refined.energy, "lambda": refined.lam,
                                      "residual": refined.residual, "pohozaev_residual": refined.pohozaev_residual,
                                      "iterations": refined.iterations, "mesh": fine.describe()}
                u = refined.u
            except SolverError as e:
                logger.warning(f"Newton refinement failed: {e}")
                payload["refined"] = None
        if args.out is not None:
            payload["profile"] = str(emit_profile(u, Path(args.out) / "profile.csv"))
    return payload


def cmd_sweep(args) -> dict:
    g = load_graph(args.graph)
    mesh = mesh_from(args)
    points = phase_diagram(g, args.p, grid_from(args.mu_grid), grid_from(args.alpha_grid),
                           config_from(args), mesh, db_path=None if args.no_checkpoint else args.checkpoint)
    payload = {"cells": to_jsonable(points), "table": None,
               "failed": sum(1 for pt in points if pt.error)}
    if args.out is not None:
        payload["table"] = str(write_table(points, Path(args.out) / "phase.csv"))
    return payload


def cmd_bisect_alpha(args) -> dict:
    g = load_graph(args.graph)
    if args.mu is None:
        raise argparse.ArgumentTypeError("--mu is required")
    result = bisect_alpha_bar(g, args.p, args.mu, args.width, config_from(args), mesh_from(args))
    return to_jsonable(result)


def cmd_tip_threshold(args) -> dict:
    g = load_graph(args.graph)
    if args.mu is None:
        raise argparse.ArgumentTypeError("--mu is required")
    report = tip_length_threshold(g, args.attach, args.p, args.alpha, args.mu, grid_from(args.ell_grid),
                                  config_from(args), mesh_from(args))
    payload = to_jsonable(report)
    payload["table"] = None
    if args.out is not None:
        payload["table"] = str(write_table(report.rows, Path(args.out) / "tip_threshold.csv"))
    return payload


def cmd_blowup(args) -> dict:
    g = load_graph(args.graph)
    trace = blowup_sweep(g, BlowupMode(args.mode), params_from(args), args.lmax, mesh_from(args),
                         floor=args.floor)
    rows = [{"lambda": lam, "energy": E} for lam, E in zip(trace.lams, trace.energies)]
    payload = to_jsonable(trace)
    payload["table"] = None
    if args.out is not None:
        payload["table"] = str(write_table(rows, Path(args.out) / "blowup.csv"))
    return payload


def cmd_soliton_check(args) -> dict:
    return soliton_certificate(lam=args.lam, h=args.h if args.h is not None else 1e-3,
                               L=args.L if args.L is not None else 20.0)


def build_parser() -> UsageParser:
    common = UsageParser(add_help=False)
    common.add_argument("--p", type=float, default=4.0, help="subcritical exponent, 2 < p < 6")
    common.add_argument("--alpha", type=float, default=1.0, help="coefficient of the subcritical term")
    common.add_argument("--mu", type=float, default=None, help="mass")
    common.add_argument("--h", type=float, default=None, help=f"mesh width (default {DEFAULT_H})")
    common.add_argument("--L", type=float, default=None, help="half-line truncation (default 40)")
    common.add_argument("--far-bc", choices=[DIRICHLET, NEUMANN], default=DIRICHLET)
    common.add_argument("--restarts", type=int, default=4)
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--max-iters", type=int, default=3000)
    common.add_argument("--processes", type=int, default=0, help="worker processes for restarts and sweep cells")
    common.add_argument("--out", type=Path, default=None, help="output directory")
    common.add_argument("--verbose", action="store_true")

    with_graph = UsageParser(add_help=False, parents=[common])
    with_graph.add_argument("--graph", type=Path, required=True, help="graph file")

    parser = UsageParser(prog="graphnls", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("classify", parents=[with_graph], help="type label and critical masses")
    p.set_defaults(func=cmd_classify)

    p = sub.add_parser("minimize", parents=[with_graph], help="ground state at one (p, alpha, mu)")
    p.add_argument("--refine-h", type=float, default=None, help="Newton-refine a minimizer on this mesh width")
    p.add_argument("--refine-L", type=float, default=None)
    p.set_defaults(func=cmd_minimize)

    p = sub.add_parser("gn-const", parents=[with_graph], help="Gagliardo-Nirenberg constant estimate")
    p.add_argument("--q", type=float, default=6.0)
    p.add_argument("--maxit", type=int, default=200, help="ascent iteration cap per start")
    p.set_defaults(func=cmd_gn_const)

    p = sub.add_parser("sweep", parents=[with_graph], help="(mu, alpha) phase diagram")
    p.add_argument("--mu-grid", required=True, help="a:b:n or v1,v2,...")
    p.add_argument("--alpha-grid", required=True, help="a:b:n or v1,v2,...")
    p.add_argument("--checkpoint", type=Path, default=CHECKPOINT_DB)
    p.add_argument("--no-checkpoint", action="store_true")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("bisect-alpha", parents=[with_graph], help="bracket alpha_bar at fixed mu")
    p.add_argument("--width", type=float, default=1e-3)
    p.set_defaults(func=cmd_bisect_alpha)

    p = sub.add_parser("tip-threshold", parents=[with_graph], help="verdicts against terminal-edge length")
    p.add_argument("--attach", required=True, help="vertex receiving the terminal edge")
    p.add_argument("--ell-grid", required=True, help="a:b:n or v1,v2,...")
    p.set_defaults(func=cmd_tip_threshold)

    p = sub.add_parser("blowup", parents=[with_graph], help="energies along a blow-up family")
    p.add_argument("--mode", choices=[m.value for m in BlowupMode], default=BlowupMode.TIP.value)
    p.add_argument("--lmax", type=int, default=10, help="lambda = 2^k, k = 0..lmax")
    p.add_argument("--floor", type=float, default=-1e3)
    p.set_defaults(func=cmd_blowup)

    p = sub.add_parser("soliton-check", parents=[common], help="certificate of the sampled soliton")
    p.add_argument("--lambda", "--lam", dest="lam", type=float, default=1.0)
    p.set_defaults(func=cmd_soliton_check)

    return parser


def run(argv) -> int:
    """Parse argv, run one subcommand, print its JSON result; returns the exit code."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_USAGE if e.code not in (0, None) else EXIT_OK

    setup_logging(args.out, args.verbose)
    started = datetime.now(timezone.utc).isoformat()
    t0 = time.time()
    logger.info("=" * 50)
    logger.info(f"graphnls {VERSION}: {args.command}")

    try:
        payload = args.func(args)
        code = EXIT_OK
    except argparse.ArgumentTypeError as e:
        parser.print_usage(sys.stderr)
        logger.error(str(e))
        return EXIT_USAGE
    except IndeterminateError as e:
        logger.error(f"Indeterminate: {e}")
        payload, code = {"error": str(e), "kind": "Indeterminate", "trace": to_jsonable(e.trace)}, EXIT_INDETERMINATE
    except (GraphNLSError, OSError) as e:
        logger.error(f"{type(e).__name__}: {e}")
        payload, code = {"error": str(e), "kind": type(e).__name__}, EXIT_DOMAIN

    wall = time.time() - t0
    if args.out is not None:
        config = {k: v for k, v in vars(args).items() if k != "func"}
        graph = getattr(args, "graph", None)
        manifest = RunManifest(
            command=args.command,
            config=to_jsonable({k: str(v) if isinstance(v, Path) else v for k, v in config.items()}),
            seed=args.seed,
            mesh={"h": args.h, "L": args.L, "far_bc": args.far_bc},
            wall_time=wall,
            tool_version=VERSION,
            input_digests={str(graph): file_digest(graph)} if graph is not None and Path(graph).exists() else {},
            started_at=started,
        )
        payload["run_id"] = append_manifest(manifest, args.out)
        write_json(payload, Path(args.out) / f"{args.command}.json")

    print(json.dumps(to_jsonable(payload), indent=2))
    logger.info(f"{args.command} finished in {wall:.1f}s with exit code {code}")
    logger.info("=" * 50)
    return code


def main():
    sys.exit(run(sys.argv[1:]))


if __name__ == "__main__":
    main()
