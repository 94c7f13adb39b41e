"""Command-line interface: solve, simulate, gap, separation-study, report.

Exit codes: 0 success, 1 infeasible problem, 2 usage/input error,
3 numerical failure.  MFSB_LOG in {error, info, debug} controls logging.
"""

import argparse
import logging
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import conic, mixture, scenario_io, sim
from .dynamics import LTVSystem, TimeGrid
from .errors import (ConditioningError, ConfigurationError, ControllabilityError,
                     DivergenceError, InfeasibleProblemError, InputError,
                     NumericalDomainError, SchemaError, SolverFailureError)
from .meanfield import Scenario, solve_scenario, solve_unconstrained
from .report import render_report

log = logging.getLogger(__name__)

DEFAULT_KNOTS = 101
DEFAULT_AGENTS = 10_000
DEFAULT_GAP_SAMPLES = 200_000


def bundled_scenario_path(name: str) -> Path:
    from importlib.resources import files
    fname = name if name.endswith(".json") else name + ".json"
    cand = files("mfsb").joinpath("scenarios", fname)
    if cand.is_file():
        return Path(str(cand))
    available = sorted(p.name for p in (files("mfsb") / "scenarios").iterdir())
    raise InputError(f"no scenario file or bundled scenario {name!r}; "
                     f"bundled: {available}")


def resolve_scenario(arg: str) -> Path:
    p = Path(arg)
    return p if p.is_file() else bundled_scenario_path(arg)


def regrid_scenario(scn: Scenario, knots: int) -> Scenario:
    """Re-discretize onto a different knot count (constant systems only)."""
    sys_ = scn.sys
    for name in ("A", "Abar", "B", "D"):
        stack = getattr(sys_, name)
        if not np.all(stack == stack[0]):
            raise ConfigurationError(
                "--knots override requires constant system matrices")
    old = scn.grid.count
    grid = TimeGrid.uniform(knots)
    new_sys = LTVSystem(n=sys_.n, m=sys_.m, q=sys_.q, A=sys_.A[0],
                        Abar=sys_.Abar[0], B=sys_.B[0], D=sys_.D[0], grid=grid)
    chance = scn.chance
    obstacles = scn.obstacles
    if chance is not None and chance.window is not None:
        scalefn = lambda k: int(round(k * (knots - 1) / (old - 1)))
        window = (scalefn(chance.window[0]), scalefn(chance.window[1]))
        from .chance import ChanceSpec, HalfSpace, Obstacle
        chance = ChanceSpec(total_budget=chance.total_budget,
                            per_face_budget=chance.per_face_budget,
                            window=window)
        obstacles = tuple(
            Obstacle(tuple(HalfSpace(f.a, f.beta, window) for f in obs.faces))
            for obs in scn.obstacles)
    return Scenario(sys=new_sys, rho0=scn.rho0, rho1=scn.rho1,
                    obstacles=obstacles, routes=scn.routes, chance=chance,
                    name=scn.name)


def _cmd_solve(args) -> int:
    scn = scenario_io.parse_scenario(resolve_scenario(args.scenario))
    if args.knots is not None and args.knots != scn.grid.count:
        scn = regrid_scenario(scn, args.knots)
    tol = conic.Tolerances(feas=args.tol * 1e-2, gap_abs=args.tol * 1e-2,
                           gap_rel=args.tol * 1e-2)
    started = time.perf_counter()
    result = solve_scenario(scn, max_iters=args.max_iters, tol=tol,
                            threads=args.threads)
    elapsed = time.perf_counter() - started
    scenario_io.write_results(scn, result, args.out,
                              timings={"solve_seconds": elapsed})
    print(f"solved {scn.name}: J_OT = {result.solution.bound:.8g} "
          f"({result.status}, {len(result.iterations)} iteration log entries)")
    print(f"bundle written to {args.out}")
    return 0


def _cmd_simulate(args) -> int:
    scn, result = scenario_io.read_solution(args.solution)
    if args.scenario is not None:
        override = scenario_io.parse_scenario(resolve_scenario(args.scenario))
        if override.grid.count != scn.grid.count or override.sys.n != scn.sys.n:
            raise ConfigurationError(
                "scenario override does not match the solved bundle "
                f"(knots {override.grid.count} vs {scn.grid.count}, "
                f"n {override.sys.n} vs {scn.sys.n})")
        scn = override
    started = time.perf_counter()
    run = sim.simulate_swarm(scn, result.solution, args.agents, args.seed)
    metrics = sim.estimate_metrics(run, scn)
    elapsed = time.perf_counter() - started
    j_hat, j_ot, holds = sim.estimate_bound_check(metrics, result.solution)
    sim.write_trajectories_csv(run, scn.grid,
                               Path(args.solution) / "trajectories.csv",
                               thin=args.thin)
    scenario_io.update_summary(
        args.solution,
        simulation={
            "agents": args.agents,
            "seed": args.seed,
            "total_cost": metrics.j_hat,
            "total_cost_stderr": metrics.j_stderr,
            "max_violation": metrics.max_violation,
            "terminal_mean_errors": list(metrics.terminal_mean_errors),
            "terminal_frequencies": list(metrics.terminal_frequencies),
            "bound_holds": holds,
        })
    log.info("simulation took %.2f s", elapsed)
    print(f"J_hat = {j_hat:.8g} +/- {metrics.j_stderr:.3g}, J_OT = {j_ot:.8g}, "
          f"bound {'holds' if holds else 'VIOLATED'}; "
          f"max violation {metrics.max_violation:.4g}")
    return 0


def _cmd_gap(args) -> int:
    _, result = scenario_io.read_solution(args.solution)
    j_ot, gap, stderr = mixture.bound_and_gap(result.solution, args.samples,
                                              args.seed)
    scenario_io.update_summary(
        args.solution,
        gap={"estimate": gap, "stderr": stderr, "samples": args.samples,
             "seed": args.seed, "j_ot": j_ot})
    print(f"J_OT = {j_ot:.8g}, gap = {gap:.6g} +/- {stderr:.3g} "
          f"(J_GMM estimate {j_ot - gap:.8g})")
    return 0


def _cmd_separation_study(args) -> int:
    scn = scenario_io.parse_scenario(resolve_scenario(args.scenario))
    scales = [float(s) for s in args.scales.split(",") if s]
    if not scales:
        raise InputError("--scales must list at least one factor")
    rows = []
    for c in scales:
        scaled = Scenario(sys=scn.sys, rho0=scn.rho0.scaled_means(c),
                          rho1=scn.rho1.scaled_means(c),
                          obstacles=scn.obstacles, routes=scn.routes,
                          chance=scn.chance, name=f"{scn.name}_x{c:g}")
        result = solve_unconstrained(scaled, threads=args.threads)
        j_ot, gap, stderr = mixture.bound_and_gap(result.solution,
                                                  args.samples, args.seed)
        rows.append((c, j_ot, gap, stderr, gap / j_ot if j_ot else np.nan))
        print(f"scale {c:g}: J_OT = {j_ot:.6g}, gap = {gap:.6g} "
              f"+/- {stderr:.2g}, gap/J_OT = {rows[-1][4]:.3e}")
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "separation.csv", "w", encoding="utf-8") as fh:
            fh.write("scale,j_ot,gap,gap_stderr,gap_ratio\n")
            for row in rows:
                fh.write(",".join(f"{v:.17g}" for v in row) + "\n")
        print(f"study written to {out / 'separation.csv'}")
    return 0


def _cmd_report(args) -> int:
    path = render_report(args.out)
    print((Path(args.out) / "report.txt").read_text(encoding="utf-8"), end="")
    print(f"report written to {path}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mfsb",
        description="Steer a Gaussian-mixture state distribution of a linear "
                    "mean-field system to a target mixture with minimum "
                    "control energy; validate by swarm simulation.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("solve", help="solve a scenario and write a result bundle")
    p.add_argument("--scenario", required=True,
                   help="scenario JSON path or bundled scenario name")
    p.add_argument("--out", required=True, help="output bundle directory")
    p.add_argument("--knots", type=int, default=None,
                   help=f"override grid knot count (default: scenario value, "
                        f"typically {DEFAULT_KNOTS})")
    p.add_argument("--tol", type=float, default=1e-6,
                   help="target solution tolerance (default 1e-6)")
    p.add_argument("--max-iters", type=int, default=20,
                   help="alternation iteration cap (default 20)")
    p.add_argument("--threads", type=int, default=os.cpu_count(),
                   help="worker cap for the conditional-solve grid")
    p.set_defaults(func=_cmd_solve)

    p = sub.add_parser("simulate", help="Monte-Carlo validate a solved bundle")
    p.add_argument("--scenario", default=None,
                   help="scenario override (default: the bundle's scenario.json)")
    p.add_argument("--solution", required=True, help="solved bundle directory")
    p.add_argument("--agents", type=int, default=DEFAULT_AGENTS)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--thin", type=int, default=1,
                   help="export every s-th agent to trajectories.csv")
    p.set_defaults(func=_cmd_simulate)

    p = sub.add_parser("gap", help="Monte-Carlo estimate of the bound gap")
    p.add_argument("--solution", required=True)
    p.add_argument("--samples", type=int, default=DEFAULT_GAP_SAMPLES)
    p.add_argument("--seed", type=int, required=True)
    p.set_defaults(func=_cmd_gap)

    p = sub.add_parser("separation-study",
                       help="bound tightness vs component separation")
    p.add_argument("--scenario", required=True)
    p.add_argument("--scales", default="1,2,4,8",
                   help="comma-separated mean scaling factors")
    p.add_argument("--samples", type=int, default=DEFAULT_GAP_SAMPLES)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=None, help="directory for separation.csv")
    p.add_argument("--threads", type=int, default=os.cpu_count())
    p.set_defaults(func=_cmd_separation_study)

    p = sub.add_parser("report", help="render report.txt and figures for a bundle")
    p.add_argument("--out", required=True, help="bundle directory")
    p.set_defaults(func=_cmd_report)
    return parser


def _configure_logging():
    level = os.environ.get("MFSB_LOG", "error").lower()
    levels = {"error": logging.ERROR, "info": logging.INFO,
              "debug": logging.DEBUG}
    logging.basicConfig(level=levels.get(level, logging.ERROR),
                        format="%(levelname)s %(name)s: %(message)s")


def main(argv=None) -> int:
    _configure_logging()
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except InfeasibleProblemError as exc:
        print(f"infeasible: {exc}", file=sys.stderr)
        return 1
    except (SchemaError, ConfigurationError, InputError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (NumericalDomainError, ControllabilityError, ConditioningError,
            DivergenceError, SolverFailureError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
