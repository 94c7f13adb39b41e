"""Mixture feedback policy assembled from conditional policies and a plan.

The control at (t, x) is the convex combination of conditional policies
weighted by lambda-scaled conditional densities; the induced probability
flow is the corresponding Gaussian mixture.  Weight arithmetic runs in the
log domain.  Policies are knot-indexed; the simulator consumes them with a
zero-order hold, and no between-knot evaluation is offered.
"""

import csv
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .dynamics import TimeGrid
from .errors import ConfigurationError, NumericalDomainError
from .gaussmix import GaussianMixture
from .transport import TransportPlan


@dataclass(frozen=True, eq=False)
class MixtureSolution:
    plan: TransportPlan
    policies: dict                    # index tuple -> ConditionalPolicy
    grid: TimeGrid
    meanfield_trajectory: np.ndarray  # (T, n); zero trajectory when Abar == 0
    bound: float                      # J_OT = sum(lambda * policy cost)

    def __post_init__(self):
        missing = [idx for idx in self.plan.indices() if idx not in self.policies]
        if missing:
            raise ConfigurationError(f"plan entries without policies: {missing[:4]}")

    @property
    def active(self):
        return self.plan.active()

    def active_weights(self) -> np.ndarray:
        return np.array([self.plan.lam[idx] for idx in self.active])


def assemble_solution(plan: TransportPlan, policies: dict, grid: TimeGrid,
                      meanfield_trajectory=None) -> MixtureSolution:
    bound = float(sum(plan.lam[idx] * policies[idx].cost for idx in plan.indices()))
    n = next(iter(policies.values())).mu.shape[1]
    if meanfield_trajectory is None:
        meanfield_trajectory = np.zeros((grid.count, n))
    return MixtureSolution(plan=plan, policies=policies, grid=grid,
                           meanfield_trajectory=np.asarray(meanfield_trajectory, float),
                           bound=bound)


def _log_weights(sol: MixtureSolution, k: int, x: np.ndarray):
    """Normalized log weights of active entries at knot k, rows of x."""
    active = sol.active
    logw = np.empty((len(active), x.shape[0]))
    for b, idx in enumerate(active):
        pol = sol.policies[idx]
        logw[b] = np.log(sol.plan.lam[idx]) + pol.gaussian(k).log_pdf_many(x)
    norm = logsumexp(logw, axis=0)
    if not np.all(np.isfinite(norm)):
        bad = x[~np.isfinite(norm)][0]
        raise NumericalDomainError(
            f"mixture weights degenerate at knot {k}, point {bad}")
    return logw - norm


def policy_eval(sol: MixtureSolution, t: int, x) -> np.ndarray:
    return policy_eval_many(sol, t, np.asarray(x, float).reshape(1, -1))[0]


def policy_eval_many(sol: MixtureSolution, t: int, x: np.ndarray) -> np.ndarray:
    """Mixture control at knot t for each row of x, shape (N, n) -> (N, m)."""
    x = np.asarray(x, float)
    w = np.exp(_log_weights(sol, t, x))
    out = None
    for b, idx in enumerate(sol.active):
        u = sol.policies[idx].control_many(t, x)
        out = w[b, :, None] * u if out is None else out + w[b, :, None] * u
    return out


def mixture_weights(sol: MixtureSolution, t: int, x: np.ndarray) -> np.ndarray:
    """Per-entry weights (B, N); each column sums to one."""
    return np.exp(_log_weights(sol, t, np.atleast_2d(np.asarray(x, float))))


def flow_density(sol: MixtureSolution, t: int) -> GaussianMixture:
    """The mixture flow at knot t (zero-weight entries dropped)."""
    comps = [sol.policies[idx].gaussian(t) for idx in sol.active]
    return GaussianMixture(sol.active_weights(), tuple(comps))


def flow_mean(sol: MixtureSolution, t: int) -> np.ndarray:
    return flow_density(sol, t).mean()


def bound_and_gap(sol: MixtureSolution, samples: int, seed):
    """Monte-Carlo estimate of the bound tightness gap.

    gap = int_0^1 int sum_b lambda_b rho_{t|b}(x) |u_{t|b}(x) - u_t(x)|^2 dx dt,
    sampled stratified over the left-endpoint knots (each carries weight dt),
    with (i,j) ~ lambda and x ~ rho_{t|ij}.  Returns (J_OT, gap, stderr).
    """
    if samples < 1:
        raise ConfigurationError("gap estimation needs at least one sample")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    active = sol.active
    lam = sol.active_weights()
    T = sol.grid.count
    dt = sol.grid.dt
    n_steps = T - 1
    base, extra = divmod(samples, n_steps)

    gap = 0.0
    var = 0.0
    for k in range(n_steps):
        s_k = base + (1 if k < extra else 0)
        if s_k == 0:
            continue
        picks = rng.choice(len(active), size=s_k, p=lam)
        x = np.empty((s_k, sol.meanfield_trajectory.shape[1]))
        for b, idx in enumerate(active):
            mask = picks == b
            if not np.any(mask):
                continue
            g = sol.policies[idx].gaussian(k)
            z = rng.standard_normal((int(mask.sum()), g.dim))
            x[mask] = g.mean + z @ g._sqrt_factor.T
        u_mix = policy_eval_many(sol, k, x)
        vals = np.empty(s_k)
        for b, idx in enumerate(active):
            mask = picks == b
            if not np.any(mask):
                continue
            diff = sol.policies[idx].control_many(k, x[mask]) - u_mix[mask]
            vals[mask] = np.sum(diff * diff, axis=1)
        gap += dt * float(np.mean(vals))
        if s_k > 1:
            var += dt * dt * float(np.var(vals, ddof=1)) / s_k
    return sol.bound, gap, float(np.sqrt(var))


def write_flow_csv(sol: MixtureSolution, t: int, path) -> None:
    """Snapshot of the flow at knot t: one row per active entry."""
    n = sol.meanfield_trajectory.shape[1]
    tril = list(zip(*np.tril_indices(n)))
    header = (["i", "j", "route", "weight"]
              + [f"mu_{b}" for b in range(n)]
              + [f"Sigma_{i}_{j}" for i, j in tril])
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for idx in sol.active:
            pol = sol.policies[idx]
            i, j = idx[0], idx[1]
            route = idx[2] if len(idx) == 3 else 0
            row = [str(i), str(j), str(route), f"{sol.plan.lam[idx]:.17g}"]
            row += [f"{v:.17g}" for v in pol.mu[t]]
            row += [f"{pol.Sigma[t][a, b]:.17g}" for a, b in tril]
            writer.writerow(row)
