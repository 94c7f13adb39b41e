"""Euler-Maruyama swarm simulation with an empirical mean field.

Validates a mixture solution by simulating N interacting agents: each agent
follows the mixture policy (zero-order hold per knot) while the mean-field
term uses the instantaneous empirical average over all agents.  Per-agent
noise streams derive from (seed, agent index), so worker partitioning cannot
change the result.
"""

import csv
from dataclasses import dataclass

import numpy as np

from .dynamics import TimeGrid
from .errors import ConfigurationError, DivergenceError
from .gaussmix import sample
from .mixture import MixtureSolution, policy_eval_many


@dataclass(frozen=True, eq=False)
class SwarmRun:
    seed: int
    trajectories: np.ndarray     # (T, N, n)
    controls: np.ndarray         # (T-1, N, m)
    empirical_mean: np.ndarray   # (T, n)
    dt: float

    @property
    def agent_count(self) -> int:
        return self.trajectories.shape[1]


@dataclass(frozen=True)
class SwarmMetrics:
    j_hat: float
    j_stderr: float
    max_violation: float
    terminal_mean_errors: np.ndarray   # per target component
    terminal_frequencies: np.ndarray   # empirical share per target component


def simulate_swarm(scn, sol: MixtureSolution, agent_count: int, seed: int) -> SwarmRun:
    if agent_count < 2:
        raise ConfigurationError("simulation needs at least 2 agents")
    sys = scn.sys
    T = sys.grid.count
    dt = sys.grid.dt
    n, m, q = sys.n, sys.m, sys.q

    streams = np.random.SeedSequence(seed).spawn(agent_count + 1)
    init_rng = np.random.default_rng(streams[0])
    x = sample(scn.rho0, agent_count, init_rng)
    noise = np.empty((agent_count, T - 1, q))
    for i in range(agent_count):
        noise[i] = np.random.default_rng(streams[i + 1]).standard_normal((T - 1, q))

    traj = np.empty((T, agent_count, n))
    controls = np.empty((T - 1, agent_count, m))
    means = np.empty((T, n))
    traj[0] = x
    means[0] = x.mean(axis=0)
    sqrt_dt = np.sqrt(dt)

    for k in range(T - 1):
        u = policy_eval_many(sol, k, x)
        controls[k] = u
        drift = x @ sys.A[k].T + means[k] @ sys.Abar[k].T + u @ sys.B[k].T
        x = x + dt * drift + sqrt_dt * noise[:, k, :] @ sys.D[k].T
        if not np.all(np.isfinite(x)):
            agent = int(np.argwhere(~np.isfinite(x))[0][0])
            raise DivergenceError(
                f"trajectory diverged at knot {k + 1}, agent {agent}")
        traj[k + 1] = x
        means[k + 1] = x.mean(axis=0)

    return SwarmRun(seed=seed, trajectories=traj, controls=controls,
                    empirical_mean=means, dt=dt)


def estimate_metrics(run: SwarmRun, scn) -> SwarmMetrics:
    """Realized cost, worst-knot obstacle violation, terminal matching."""
    per_agent = run.dt * np.sum(np.sum(run.controls ** 2, axis=2), axis=0)
    j_hat = float(np.mean(per_agent))
    j_stderr = float(np.std(per_agent, ddof=1) / np.sqrt(run.agent_count))

    max_violation = 0.0
    if scn.obstacles:
        for k in range(run.trajectories.shape[0]):
            inside = np.zeros(run.agent_count, dtype=bool)
            for obs in scn.obstacles:
                inside |= obs.contains(run.trajectories[k])
            max_violation = max(max_violation, float(np.mean(inside)))

    terminal = run.trajectories[-1]
    comps = scn.rho1.components
    dist = np.empty((run.agent_count, len(comps)))
    for j, comp in enumerate(comps):
        delta = terminal - comp.mean
        # Mahalanobis distance in the component's own metric
        inv = np.linalg.inv(comp.cov)
        dist[:, j] = np.sum((delta @ inv) * delta, axis=1)
    assign = np.argmin(dist, axis=1)
    errors = np.full(len(comps), np.nan)
    freqs = np.zeros(len(comps))
    for j, comp in enumerate(comps):
        mask = assign == j
        freqs[j] = float(np.mean(mask))
        if np.any(mask):
            errors[j] = float(np.linalg.norm(terminal[mask].mean(axis=0) - comp.mean))
    return SwarmMetrics(j_hat=j_hat, j_stderr=j_stderr,
                        max_violation=max_violation,
                        terminal_mean_errors=errors,
                        terminal_frequencies=freqs)


def estimate_bound_check(run_or_metrics, sol: MixtureSolution):
    """Upper-bound check: (J_hat, J_OT, holds) with
    holds = J_hat <= J_OT + 3 standard errors.  Accepts a SwarmRun or
    already-computed SwarmMetrics."""
    if isinstance(run_or_metrics, SwarmRun):
        run = run_or_metrics
        per_agent = run.dt * np.sum(np.sum(run.controls ** 2, axis=2), axis=0)
        j_hat = float(np.mean(per_agent))
        stderr = float(np.std(per_agent, ddof=1) / np.sqrt(run.agent_count))
    else:
        j_hat = run_or_metrics.j_hat
        stderr = run_or_metrics.j_stderr
    j_ot = sol.bound
    holds = j_hat <= j_ot + 3.0 * stderr
    return j_hat, j_ot, bool(holds)


def predicted_violation(sol: MixtureSolution, scn) -> np.ndarray:
    """Per-knot plan-weighted Gaussian tail beyond each obstacle's enforced
    face.  Being inside an obstacle implies being beyond its enforced face,
    so this bounds the per-knot violation probability from above."""
    from scipy.stats import norm as _norm
    T = sol.grid.count
    out = np.zeros(T)
    if not scn.obstacles:
        return out
    for k in range(T):
        total = 0.0
        for idx in sol.active:
            pol = sol.policies[idx]
            route = scn.routes[idx[2]] if len(idx) == 3 else scn.routes[0]
            for face in route.faces(scn.obstacles):
                margin = float(face.a @ pol.mu[k]) - face.beta
                sigma = float(np.sqrt(max(face.a @ pol.Sigma[k] @ face.a, 1e-300)))
                total += sol.plan.lam[idx] * float(_norm.sf(-margin / sigma))
        out[k] = total
    return out


def write_trajectories_csv(run: SwarmRun, grid: TimeGrid, path,
                           thin: int = 1) -> None:
    """Rows (knot, time, agent, state..., control...); optional agent thinning."""
    T, N, n = run.trajectories.shape
    m = run.controls.shape[2]
    header = (["knot", "time", "agent"]
              + [f"x_{b}" for b in range(n)]
              + [f"u_{a}" for a in range(m)])
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for k in range(T):
            t = grid.knots[k]
            for i in range(0, N, max(1, thin)):
                u = run.controls[k, i] if k < T - 1 else np.zeros(m)
                row = [str(k), f"{t:.17g}", str(i)]
                row += [f"{v:.17g}" for v in run.trajectories[k, i]]
                row += [f"{v:.17g}" for v in u]
                writer.writerow(row)
