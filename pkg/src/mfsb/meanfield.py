"""Mean-field Schrodinger bridge solvers for Gaussian-mixture boundaries.

Unconstrained problems decompose: a deterministic mean steering problem on
the mean-augmented drift (closed form) plus a zero-mean mixture bridge on the
plain drift, reassembled by translating the flow along the mean trajectory.
The conditional means and feedforwards of the zero-mean problems average to
zero under any feasible plan (they are linear in the shifted boundary means,
whose plan-weighted sums vanish), which is what makes the reassembly valid.

Constrained problems stay coupled through the chance constraints and the
mean-field term, and are solved as one conic program per fixed plan inside
an alternating loop over the plan.
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import conic, ocs, transport
from .chance import ChanceSpec, Route, allocate_budget, linearize
from .dynamics import LTVSystem, TimeGrid, discretize_moments, require_controllable
from .errors import (ConfigurationError, InfeasibleProblemError, MfsbError,
                     SolverFailureError)
from .gaussmix import GaussianMixture
from .mixture import MixtureSolution, assemble_solution

log = logging.getLogger(__name__)

ZERO_PLAN_OBJECTIVE_WEIGHT = 1e-8
DEFAULT_REL_TOL = 1e-4
DEFAULT_MAX_ITERS = 20
PROP1_WARN_TOL = 1e-6


@dataclass(frozen=True, eq=False)
class Scenario:
    sys: LTVSystem
    rho0: GaussianMixture
    rho1: GaussianMixture
    obstacles: tuple = ()
    routes: tuple = (Route("direct"),)
    chance: ChanceSpec | None = None
    name: str = "scenario"

    def __post_init__(self):
        n = self.sys.n
        if self.rho0.dim != n or self.rho1.dim != n:
            raise ConfigurationError(f"boundary mixtures must have dimension {n}")
        for obs in self.obstacles:
            for f in obs.faces:
                if f.a.size != n:
                    raise ConfigurationError("obstacle faces must have dimension n")
        if self.obstacles and self.chance is None:
            raise ConfigurationError(
                "obstacles present but no chance budget specified")
        for route in self.routes:
            route.faces(self.obstacles)  # validates face choices

    @property
    def constrained(self) -> bool:
        return bool(self.obstacles)

    @property
    def grid(self) -> TimeGrid:
        return self.sys.grid


@dataclass
class MfsbResult:
    solution: MixtureSolution
    mean_trajectory: np.ndarray           # xbar at every knot
    mean_control: np.ndarray | None       # ubar (unconstrained path only)
    iterations: list = field(default_factory=list)   # J_OT per iteration
    status: str = "optimal"
    prop1_residual: float | None = None
    chance_rows: dict | None = None       # rows enforced by the final solve


def problem1_system(grid: TimeGrid | None = None) -> LTVSystem:
    """The published 2-D system A = Abar = B = D = I2."""
    grid = grid or TimeGrid.uniform(101)
    eye = np.eye(2)
    return LTVSystem.constant(A=eye, B=eye, D=eye, grid=grid, Abar=eye)


def problem2_system(grid: TimeGrid | None = None) -> LTVSystem:
    """The published 4-D system: double-integrator-style A with a repulsive
    mean coupling in the velocity rows."""
    grid = grid or TimeGrid.uniform(101)
    z2, i2 = np.zeros((2, 2)), np.eye(2)
    A = np.block([[z2, i2], [i2, z2]])
    Abar = np.block([[z2, z2], [-i2, z2]])
    B = np.vstack([z2, i2])
    D = np.eye(4)
    return LTVSystem.constant(A=A, B=B, D=D, grid=grid, Abar=Abar)


# -- unconstrained decomposition path ---------------------------------------

def _solve_ocs_grid(sys, rho0, rho1, tol, threads):
    """Solve the N0 x N1 grid of zero-mean conditional problems.

    The grid is embarrassingly parallel; each worker owns its program and
    solver instance.
    """
    pairs = [(i, j) for i in range(rho0.size) for j in range(rho1.size)]

    def run(pair):
        i, j = pair
        prob = ocs.OcsProblem(sys=sys, initial=rho0.components[i],
                              terminal=rho1.components[j])
        try:
            return pair, ocs.solve_ocs(prob, tol)
        except MfsbError as exc:
            raise type(exc)(f"conditional problem {pair}: {exc}") from exc

    if threads and threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return dict(pool.map(run, pairs))
    return dict(run(pair) for pair in pairs)


def _assembled_cost(policy, ubar, dt):
    """Conditional cost in the absolute frame: the zero-mean cost plus the
    cross and mean-control terms (left-endpoint sum)."""
    v = policy.v[:-1]
    u = ubar[:-1]
    return policy.cost + dt * float(np.sum(2.0 * np.sum(v * u, axis=1)
                                           + np.sum(u * u, axis=1)))


def solve_unconstrained(scn: Scenario, tol: conic.Tolerances | None = None,
                        threads: int = 1) -> MfsbResult:
    if scn.constrained:
        raise ConfigurationError(
            "scenario has obstacles; use alternate_optimize")
    sys = scn.sys
    require_controllable(sys, use_meanfield_matrix=False)
    require_controllable(sys, use_meanfield_matrix=True)

    xhat0 = scn.rho0.mean()
    xhat1 = scn.rho1.mean()
    xbar, ubar, mean_cost = ocs.mean_feedforward_closed_form(
        sys, xhat0, xhat1, use_meanfield_matrix=True)
    log.info("mean steering cost %.6g", mean_cost)

    rho0_shifted = scn.rho0.shifted(-xhat0)
    rho1_shifted = scn.rho1.shifted(-xhat1)
    tilde = _solve_ocs_grid(sys, rho0_shifted, rho1_shifted, tol, threads)

    costs = np.array([[tilde[i, j].cost for j in range(scn.rho1.size)]
                      for i in range(scn.rho0.size)])
    plan = transport.solve_plan(costs, scn.rho0.weights, scn.rho1.weights)

    prop1 = _prop1_residual(plan.lam, tilde)
    if prop1 > PROP1_WARN_TOL:
        log.warning("zero-mean reassembly residual %.3e exceeds %.0e",
                    prop1, PROP1_WARN_TOL)

    dt = sys.grid.dt
    policies = {
        (i, j): tilde[i, j].shifted(xbar, ubar,
                                    cost=_assembled_cost(tilde[i, j], ubar, dt))
        for (i, j) in tilde
    }
    meanfield_traj = xbar if sys.has_meanfield else None
    solution = assemble_solution(plan, policies, sys.grid, meanfield_traj)
    return MfsbResult(solution=solution, mean_trajectory=xbar,
                      mean_control=ubar, iterations=[solution.bound],
                      status="optimal", prop1_residual=prop1)


def _prop1_residual(lam, tilde_policies) -> float:
    """max over knots of |sum lambda mu~| and |sum lambda v~|."""
    first = next(iter(tilde_policies.values()))
    mu_sum = np.zeros_like(first.mu)
    v_sum = np.zeros_like(first.v)
    for (i, j), pol in tilde_policies.items():
        mu_sum += lam[i, j] * pol.mu
        v_sum += lam[i, j] * pol.v
    return max(float(np.max(np.linalg.norm(mu_sum, axis=1))),
               float(np.max(np.linalg.norm(v_sum, axis=1))))


# -- constrained coupled path ------------------------------------------------

def _block_tag(idx) -> str:
    return "b" + "_".join(str(k) for k in idx) + ":"


def _chance_rows_for(scn: Scenario, idx, sigma_ref, delta, T):
    """Per-knot linearized rows for the faces assigned to this block's route."""
    route = scn.routes[idx[2]] if len(idx) == 3 else scn.routes[0]
    rows = []
    for face in route.faces(scn.obstacles):
        for k in face.active_knots(T):
            lc = linearize(face, delta, sigma_ref[k], window=(k, k))
            rows.append((k, lc))
    return rows


@dataclass
class CoupledSolve:
    """Result of one fixed-plan coupled solve: per-block policies, the
    realized mean-field trajectory sum(lambda * mu), the plan-weighted
    objective, and the linearized rows that were enforced."""

    policies: dict
    xbar: np.ndarray
    objective: float
    chance_rows: dict

    def __iter__(self):
        return iter((self.policies, self.xbar, self.objective))


def solve_constrained_fixed_plan(scn: Scenario, plan: transport.TransportPlan,
                                 sigma_refs: dict | None = None,
                                 tol: conic.Tolerances | None = None) -> CoupledSolve:
    """One joint conic program over all conditional blocks at a fixed plan.

    All blocks are instantiated (zero-plan entries get a small objective
    weight) so a later plan update can move mass onto them.
    """
    sys = scn.sys
    T = sys.grid.count
    steps = discretize_moments(sys)
    indices = plan.indices()

    delta = None
    if scn.constrained:
        if sigma_refs is None:
            raise ConfigurationError(
                "chance constraints need reference covariances for linearization")
        delta = allocate_budget(scn.chance, n_components=len(indices),
                                n_faces=len(scn.obstacles))
        budget_used = float(sum(plan.lam[idx] * delta * len(scn.obstacles)
                                for idx in indices))
        if budget_used > scn.chance.total_budget + 1e-12:
            raise ConfigurationError(
                f"allocated budget {budget_used:.4g} exceeds total "
                f"{scn.chance.total_budget:.4g}")

    prog = conic.ConicProgram()
    for idx in indices:
        ocs.declare_conditional_blocks(prog, _block_tag(idx), T, sys.n, sys.m)

    coupling = None
    if sys.has_meanfield:
        def coupling(k):
            aff = conic.Aff(sys.n)
            for idx in indices:
                w = plan.lam[idx]
                if w != 0.0:
                    aff.add_term(f"{_block_tag(idx)}mu[{k}]", w * sys.Abar[k])
            return aff

    objective = conic.Aff(1)
    all_rows = {}
    for idx in indices:
        tag = _block_tag(idx)
        i, j = idx[0], idx[1]
        chance_rows = ()
        if scn.constrained:
            chance_rows = _chance_rows_for(scn, idx, sigma_refs[idx], delta, T)
        all_rows[idx] = list(chance_rows)
        ocs.add_conditional_constraints(
            prog, tag, steps,
            initial=scn.rho0.components[i], terminal=scn.rho1.components[j],
            meanfield_term=coupling, chance_rows=chance_rows)
        weight = max(plan.lam[idx], ZERO_PLAN_OBJECTIVE_WEIGHT)
        for name, coef in ocs.conditional_objective_terms(
                tag, T, sys.m, sys.grid.dt, weight).coeffs.items():
            objective.add_term(name, coef)
    prog.set_objective(objective)

    sol = conic.solve(prog, tol)
    if sol.status in ("infeasible", "unbounded"):
        raise InfeasibleProblemError(
            f"coupled conditional program is {sol.status}")
    if sol.status != "optimal":
        raise SolverFailureError(
            f"coupled solve stopped with status {sol.status} "
            f"(residuals {sol.residuals})")

    policies = {idx: ocs.extract_conditional_policy(
        sol, _block_tag(idx), T, sys.n, sys.m, sys.grid.dt) for idx in indices}
    xbar = np.zeros((T, sys.n))
    for idx in indices:
        xbar += plan.lam[idx] * policies[idx].mu
    j_ot = float(sum(plan.lam[idx] * policies[idx].cost for idx in indices))
    return CoupledSolve(policies=policies, xbar=xbar, objective=j_ot,
                        chance_rows=all_rows)


REFERENCE_SHRINK = 0.25
REFERENCE_RETRIES = 6


def _retry_shrunken_references(scn, plan, sigma_refs, tol) -> "CoupledSolve":
    for attempt in range(1, REFERENCE_RETRIES + 1):
        for idx in sigma_refs:
            sigma_refs[idx] = REFERENCE_SHRINK * sigma_refs[idx]
        log.info("initial linearization infeasible, shrinking references "
                 "(attempt %d)", attempt)
        try:
            return solve_constrained_fixed_plan(scn, plan, sigma_refs, tol)
        except InfeasibleProblemError:
            continue
    raise InfeasibleProblemError(
        "constrained problem is infeasible even under the tightest "
        "linearization references tried; the budget is likely too small "
        "for the geometry", iteration=1)


def alternate_optimize(scn: Scenario, rel_tol: float = DEFAULT_REL_TOL,
                       max_iters: int = DEFAULT_MAX_ITERS,
                       tol: conic.Tolerances | None = None,
                       threads: int = 1) -> MfsbResult:
    """Alternate between the coupled policy solve at a fixed plan and the
    transport LP at fixed costs; the returned solution always comes from a
    final policy solve at the last plan, so it is feasible even when the
    plan is sub-optimal."""
    sys = scn.sys
    require_controllable(sys, use_meanfield_matrix=False)
    require_controllable(sys, use_meanfield_matrix=True)
    n_routes = len(scn.routes)

    # initialization: unconstrained conditionals give costs and references
    xhat0 = scn.rho0.mean()
    xhat1 = scn.rho1.mean()
    xbar0, ubar0, _ = ocs.mean_feedforward_closed_form(
        sys, xhat0, xhat1, use_meanfield_matrix=True)
    tilde = _solve_ocs_grid(sys, scn.rho0.shifted(-xhat0),
                            scn.rho1.shifted(-xhat1), tol, threads)
    dt = sys.grid.dt
    base_costs = np.array(
        [[_assembled_cost(tilde[i, j], ubar0, dt) for j in range(scn.rho1.size)]
         for i in range(scn.rho0.size)])

    if n_routes > 1 or scn.constrained:
        costs = np.repeat(base_costs[:, :, None], n_routes, axis=2)
    else:
        costs = base_costs
    plan = transport.solve_plan(costs, scn.rho0.weights, scn.rho1.weights)
    iterations = [plan.objective]
    sigma_refs = {idx: tilde[idx[0], idx[1]].Sigma for idx in plan.indices()}

    status = "max_iterations"
    last = None
    for it in range(1, max_iters + 1):
        try:
            step = solve_constrained_fixed_plan(
                scn, plan, sigma_refs if scn.constrained else None, tol)
        except InfeasibleProblemError as exc:
            if it == 1 and scn.constrained:
                # The tangent surrogate from any reference covariance still
                # dominates the exact constraint, so a fat unconstrained
                # reference can only be too conservative, never unsafe;
                # shrink it until the surrogate admits a solution.
                step = _retry_shrunken_references(scn, plan, sigma_refs, tol)
            else:
                raise InfeasibleProblemError(
                    f"iteration {it}: {exc}", iteration=it,
                    last_result=last) from exc
        for idx in plan.indices():
            costs[idx] = step.policies[idx].cost
            sigma_refs[idx] = step.policies[idx].Sigma
        last = step

        plan = transport.solve_plan(costs, scn.rho0.weights, scn.rho1.weights)
        iterations.append(plan.objective)
        change = abs(iterations[-1] - iterations[-2]) / max(abs(iterations[-2]), 1e-30)
        log.info("alternation iteration %d: J_OT %.8g (rel change %.2e)",
                 it, iterations[-1], change)
        if change < rel_tol:
            status = "converged"
            break

    # feasibility-preserving termination: final policy solve at the last plan
    final = solve_constrained_fixed_plan(
        scn, plan, sigma_refs if scn.constrained else None, tol)
    iterations.append(final.objective)
    meanfield_traj = final.xbar if sys.has_meanfield else None
    solution = assemble_solution(plan, final.policies, sys.grid, meanfield_traj)
    return MfsbResult(solution=solution, mean_trajectory=final.xbar,
                      mean_control=None, iterations=iterations, status=status,
                      chance_rows=final.chance_rows)


def solve_scenario(scn: Scenario, rel_tol: float = DEFAULT_REL_TOL,
                   max_iters: int = DEFAULT_MAX_ITERS,
                   tol: conic.Tolerances | None = None,
                   threads: int = 1) -> MfsbResult:
    """Dispatch: decomposition path without obstacles, alternation otherwise."""
    if scn.constrained:
        return alternate_optimize(scn, rel_tol=rel_tol, max_iters=max_iters,
                                  tol=tol, threads=threads)
    return solve_unconstrained(scn, tol=tol, threads=threads)
