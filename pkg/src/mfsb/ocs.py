"""Gaussian-to-Gaussian optimal covariance steering.

One code path: the time-discretized semidefinite program over per-knot
moment variables (Sigma_k, U_k, Y_k, v_k, mu_k) with Schur-complement blocks
[[Sigma, U'], [U, Y]] >= 0 relaxing Y = U Sigma^-1 U'.  The squared
feedforward norm enters the linear objective through an epigraph scalar s_k
under a small Schur block [[s, v'], [v, I]] >= 0.

The mean/feedforward subproblem also has a closed form in terms of the state
transition matrix and controllability Grammian; it is exposed both for the
mean-field mean steering problem and as a test oracle, alongside the squared
Bures-Wasserstein distance (the zero-noise, zero-drift limit of the cost).
"""

import csv
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from . import conic
from .dynamics import LTVSystem, TimeGrid, discretize_moments, transition_bundle
from .errors import (ConditioningError, ConfigurationError, ControllabilityError,
                     InfeasibleProblemError, NumericalDomainError, SolverFailureError)
from .gaussmix import Gaussian
from .linalg import (cholesky_pd, floored_inverse, psd_sqrt, svec,
                     svec_basis, svec_dim)

GAIN_EIG_FLOOR = 1e-9
GRAMMIAN_EIG_FLOOR = 1e-10


@dataclass(frozen=True)
class OcsProblem:
    sys: LTVSystem
    initial: Gaussian
    terminal: Gaussian
    linear_chance_constraints: tuple = ()
    meanfield_source: np.ndarray | None = None   # per-knot xbar for the Abar term

    def __post_init__(self):
        n = self.sys.n
        if self.initial.dim != n or self.terminal.dim != n:
            raise ConfigurationError(
                f"boundary Gaussians must have dimension {n}")
        cholesky_pd(self.initial.cov, "initial covariance")
        cholesky_pd(self.terminal.cov, "terminal covariance")
        if self.meanfield_source is not None:
            src = np.asarray(self.meanfield_source, float)
            if src.shape != (self.sys.grid.count, n):
                raise ConfigurationError(
                    f"mean-field source shape {src.shape} != ({self.sys.grid.count}, {n})")
            object.__setattr__(self, "meanfield_source", src)

    @property
    def grid(self) -> TimeGrid:
        return self.sys.grid


@dataclass(frozen=True)
class ConditionalPolicy:
    """Feedback gains, feedforward, moment trajectories, and cost of one
    conditional steering problem."""

    K: np.ndarray        # (T, m, n)
    v: np.ndarray        # (T, m)
    mu: np.ndarray       # (T, n)
    Sigma: np.ndarray    # (T, n, n)
    cost: float

    def control(self, k: int, x: np.ndarray) -> np.ndarray:
        return self.K[k] @ (np.asarray(x, float) - self.mu[k]) + self.v[k]

    def control_many(self, k: int, x: np.ndarray) -> np.ndarray:
        return (np.asarray(x, float) - self.mu[k]) @ self.K[k].T + self.v[k]

    def gaussian(self, k: int) -> Gaussian:
        return Gaussian(self.mu[k], self.Sigma[k])

    def shifted(self, offset: np.ndarray, feedforward_shift: np.ndarray,
                cost: float) -> "ConditionalPolicy":
        """Translate the flow by a mean trajectory and add a feedforward term."""
        return ConditionalPolicy(K=self.K, v=self.v + feedforward_shift,
                                 mu=self.mu + offset, Sigma=self.Sigma, cost=cost)


# -- closed-form mean / feedforward ---------------------------------------

def mean_feedforward_closed_form(sys: LTVSystem, mu0, mu1,
                                 use_meanfield_matrix: bool = False):
    """Minimum-energy mean steering between mu0 and mu1.

    Evaluates, at every knot t,
        mu*_t = Phi(t,1) M(1,t) M10^-1 Phi10 mu0 + M(t,0) Phi(1,t)' M10^-1 mu1
        v*_t  = B_t' Phi(1,t)' M10^-1 (mu1 - Phi10 mu0)
    and integrates |v|^2 by trapezoidal quadrature.
    """
    mu0 = np.asarray(mu0, float).reshape(sys.n)
    mu1 = np.asarray(mu1, float).reshape(sys.n)
    bundle = transition_bundle(sys, use_meanfield_matrix)
    last = sys.grid.count - 1
    M10 = bundle.gram(last, 0)
    w = np.linalg.eigvalsh(M10)
    if w[0] <= GRAMMIAN_EIG_FLOOR:
        which = "(A+Abar, B)" if use_meanfield_matrix else "(A, B)"
        raise ControllabilityError(
            f"Grammian M(1,0) of {which} is singular (min eigenvalue {w[0]:.3e})")
    M10_inv = np.linalg.inv(M10)
    lam = M10_inv @ (mu1 - bundle.phi(last, 0) @ mu0)
    pinned0 = M10_inv @ bundle.phi(last, 0) @ mu0
    pinned1 = M10_inv @ mu1

    T = sys.grid.count
    mu = np.empty((T, sys.n))
    v = np.empty((T, sys.m))
    for k in range(T):
        phi_1t = bundle.phi(last, k)
        mu[k] = (bundle.phi(k, last) @ bundle.gram(last, k) @ pinned0
                 + bundle.gram(k, 0) @ phi_1t.T @ pinned1)
        v[k] = sys.B[k].T @ phi_1t.T @ lam
    sq = np.sum(v * v, axis=1)
    dt = sys.grid.dt
    cost = dt * (np.sum(sq) - 0.5 * (sq[0] + sq[-1]))
    return mu, v, float(cost)


def w2_oracle(g0: Gaussian, g1: Gaussian) -> float:
    """Squared Bures-Wasserstein distance between two Gaussians."""
    root0 = psd_sqrt(g0.cov)
    cross = psd_sqrt(root0 @ g1.cov @ root0)
    dmu = g0.mean - g1.mean
    return float(dmu @ dmu + np.trace(g0.cov + g1.cov - 2.0 * cross))


# -- SDP assembly -----------------------------------------------------------

def block_names(tag: str, k: int) -> dict:
    return {key: f"{tag}{key}[{k}]" for key in ("Sigma", "U", "Y", "v", "mu", "s")}


@lru_cache(maxsize=None)
def _schur_embedding(n: int, m: int):
    """Coefficient maps of (Sigma, vec U, Y) into svec([[Sigma, U'],[U, Y]])."""
    p = n + m
    rows = svec_dim(p)
    cols_sigma = np.empty((rows, svec_dim(n)))
    for c, E in enumerate(svec_basis(n)):
        big = np.zeros((p, p))
        big[:n, :n] = E
        cols_sigma[:, c] = svec(big)
    cols_u = np.empty((rows, m * n))
    for a in range(m):
        for b in range(n):
            big = np.zeros((p, p))
            big[n + a, b] = 1.0
            big[b, n + a] = 1.0
            cols_u[:, a * n + b] = svec(big)
    cols_y = np.empty((rows, svec_dim(m)))
    for c, E in enumerate(svec_basis(m)):
        big = np.zeros((p, p))
        big[n:, n:] = E
        cols_y[:, c] = svec(big)
    return cols_sigma, cols_u, cols_y


@lru_cache(maxsize=None)
def _epigraph_embedding(m: int):
    """Coefficient maps of (s, v) into svec([[s, v'],[v, I_m]])."""
    p = m + 1
    rows = svec_dim(p)
    col_s = np.zeros((rows, 1))
    big = np.zeros((p, p))
    big[0, 0] = 1.0
    col_s[:, 0] = svec(big)
    cols_v = np.empty((rows, m))
    for a in range(m):
        big = np.zeros((p, p))
        big[0, 1 + a] = 1.0
        big[1 + a, 0] = 1.0
        cols_v[:, a] = svec(big)
    const = np.zeros((p, p))
    const[1:, 1:] = np.eye(m)
    return col_s, cols_v, svec(const)


def _lyap_op(A: np.ndarray) -> np.ndarray:
    """svec coefficient of Sigma -> A Sigma + Sigma A'."""
    n = A.shape[0]
    out = np.empty((svec_dim(n), svec_dim(n)))
    for c, E in enumerate(svec_basis(n)):
        out[:, c] = svec(A @ E + E @ A.T)
    return out


def _bu_op(B: np.ndarray) -> np.ndarray:
    """svec coefficient of vec(U), row-major -> B U + U' B'."""
    n, m = B.shape
    out = np.empty((svec_dim(n), m * n))
    for a in range(m):
        for b in range(n):
            E = np.zeros((m, n))
            E[a, b] = 1.0
            out[:, a * n + b] = svec(B @ E + E.T @ B.T)
    return out


def declare_conditional_blocks(prog: conic.ConicProgram, tag: str, T: int,
                               n: int, m: int):
    for k in range(T):
        names = block_names(tag, k)
        prog.add_symmetric(names["Sigma"], n)
        prog.add_vector(names["U"], m * n)
        prog.add_symmetric(names["Y"], m)
        prog.add_vector(names["v"], m)
        prog.add_vector(names["mu"], n)
        prog.add_scalar(names["s"])


def add_conditional_constraints(prog: conic.ConicProgram, tag: str,
                                steps, initial: Gaussian, terminal: Gaussian,
                                meanfield_term=None,
                                chance_rows=()):
    """All constraints of one conditional block.

    `meanfield_term(k)` may return None, a constant vector (the evaluated
    Abar_k xbar_k product), or a conic.Aff expressing it over other blocks.
    `chance_rows` is an iterable of (knot, LinearizedConstraint).
    """
    T = len(steps) + 1
    n = initial.dim
    m = steps[0].B.shape[1]
    sd_n = svec_dim(n)
    eye_svec = np.eye(sd_n)
    cols_sigma, cols_u, cols_y = _schur_embedding(n, m)
    col_s, cols_v, epi_const = _epigraph_embedding(m)

    for k, step in enumerate(steps):
        names = block_names(tag, k)
        names1 = block_names(tag, k + 1)
        dt = step.dt

        aff = conic.Aff(sd_n)
        aff.add_term(names1["Sigma"], eye_svec)
        aff.add_term(names["Sigma"], -(eye_svec + dt * _lyap_op(step.A)))
        aff.add_term(names["U"], -dt * _bu_op(step.B))
        aff.add_const(-dt * svec(step.DDt))
        prog.add_equality(aff)

        aff = conic.Aff(n)
        aff.add_term(names1["mu"], np.eye(n))
        aff.add_term(names["mu"], -(np.eye(n) + dt * step.A))
        aff.add_term(names["v"], -dt * step.B)
        mf = meanfield_term(k) if meanfield_term is not None else None
        if isinstance(mf, conic.Aff):
            for name, coef in mf.coeffs.items():
                aff.add_term(name, -dt * coef)
            aff.add_const(-dt * mf.const)
        elif mf is not None:
            aff.add_const(-dt * np.asarray(mf, float))
        prog.add_equality(aff)

    for k in range(T):
        names = block_names(tag, k)
        schur = conic.Aff(svec_dim(n + m))
        schur.add_term(names["Sigma"], cols_sigma)
        schur.add_term(names["U"], cols_u)
        schur.add_term(names["Y"], cols_y)
        prog.add_psd(schur, n + m)

        epi = conic.Aff(svec_dim(m + 1), const=epi_const)
        epi.add_term(names["s"], col_s)
        epi.add_term(names["v"], cols_v)
        prog.add_psd(epi, m + 1)

    first = block_names(tag, 0)
    last = block_names(tag, T - 1)
    prog.add_equality(conic.Aff(sd_n, -svec(initial.cov)).add_term(first["Sigma"], eye_svec))
    prog.add_equality(conic.Aff(n, -initial.mean).add_term(first["mu"], np.eye(n)))
    prog.add_equality(conic.Aff(sd_n, -svec(terminal.cov)).add_term(last["Sigma"], eye_svec))
    prog.add_equality(conic.Aff(n, -terminal.mean).add_term(last["mu"], np.eye(n)))

    # the final knot carries no control interval; pin its control blocks
    prog.add_equality(conic.Aff(m * n).add_term(last["U"], np.eye(m * n)))
    prog.add_equality(conic.Aff(svec_dim(m)).add_term(last["Y"], np.eye(svec_dim(m))))
    prog.add_equality(conic.Aff(m).add_term(last["v"], np.eye(m)))
    prog.add_equality(conic.Aff(1).add_term(last["s"], np.eye(1)))

    for k, lc in chance_rows:
        names = block_names(tag, k)
        row = conic.Aff(1, np.array([lc.b]))
        row.add_term(names["Sigma"], svec(np.outer(lc.ell, lc.ell)).reshape(1, -1))
        row.add_term(names["mu"], lc.a.reshape(1, -1))
        prog.add_nonneg(row.scaled(-1.0))


def conditional_objective_terms(prog_tag: str, T: int, m: int, dt: float,
                                weight: float) -> conic.Aff:
    """weight * sum_k dt (tr Y_k + s_k), left-endpoint Riemann sum."""
    aff = conic.Aff(1)
    tr_row = svec(np.eye(m)).reshape(1, -1)
    for k in range(T - 1):
        names = block_names(prog_tag, k)
        aff.add_term(names["Y"], weight * dt * tr_row)
        aff.add_term(names["s"], np.array([[weight * dt]]))
    return aff


def resolve_chance_rows(constraints, T: int):
    """Expand LinearizedConstraints into (knot, constraint) pairs."""
    rows = []
    for lc in constraints:
        if lc.window is None:
            knots = range(1, T - 1)
        else:
            lo, hi = lc.window
            knots = range(max(1, int(lo)), min(T - 2, int(hi)) + 1)
        rows.extend((k, lc) for k in knots)
    return rows


def build_ocs_sdp(prob: OcsProblem) -> conic.ConicProgram:
    sys = prob.sys
    T = sys.grid.count
    steps = discretize_moments(sys)
    prog = conic.ConicProgram()
    declare_conditional_blocks(prog, "", T, sys.n, sys.m)

    if prob.meanfield_source is not None:
        src = prob.meanfield_source
        meanfield_term = lambda k: sys.Abar[k] @ src[k]
    else:
        meanfield_term = None

    add_conditional_constraints(
        prog, "", steps, prob.initial, prob.terminal,
        meanfield_term=meanfield_term,
        chance_rows=resolve_chance_rows(prob.linear_chance_constraints, T))
    prog.set_objective(conditional_objective_terms("", T, sys.m, sys.grid.dt, 1.0))
    return prog


def extract_conditional_policy(sol: conic.ConicSolution, tag: str, T: int,
                               n: int, m: int, dt: float) -> ConditionalPolicy:
    Sigma = np.empty((T, n, n))
    mu = np.empty((T, n))
    v = np.empty((T, m))
    K = np.empty((T, m, n))
    cost = 0.0
    for k in range(T):
        names = block_names(tag, k)
        Sigma[k] = sol.extract_block(names["Sigma"])
        mu[k] = sol.extract_block(names["mu"])
        v[k] = sol.extract_block(names["v"])
        U = sol.extract_block(names["U"]).reshape(m, n)
        Y = sol.extract_block(names["Y"])
        try:
            K[k] = U @ floored_inverse(Sigma[k], GAIN_EIG_FLOOR)
        except NumericalDomainError as exc:
            raise ConditioningError(
                f"covariance at knot {k} is numerically singular during "
                f"gain recovery: {exc}") from exc
        if k < T - 1:
            cost += dt * (float(np.trace(Y)) + float(v[k] @ v[k]))
    return ConditionalPolicy(K=K, v=v, mu=mu, Sigma=Sigma, cost=cost)


def solve_ocs(prob: OcsProblem, tol: conic.Tolerances | None = None) -> ConditionalPolicy:
    prog = build_ocs_sdp(prob)
    sol = conic.solve(prog, tol)
    if sol.status == "infeasible":
        raise InfeasibleProblemError("covariance steering problem is infeasible")
    if sol.status == "unbounded":
        raise InfeasibleProblemError("covariance steering problem is unbounded")
    if sol.status != "optimal":
        raise SolverFailureError(
            f"conic solver stopped with status {sol.status} "
            f"(residuals {sol.residuals})")
    sys = prob.sys
    return extract_conditional_policy(sol, "", sys.grid.count, sys.n, sys.m,
                                      sys.grid.dt)


def write_policy_csv(policy: ConditionalPolicy, grid: TimeGrid, path) -> None:
    """One row per knot: t, K (row-major), v, mu, Sigma (lower triangle, row-major)."""
    T, m, n = policy.K.shape
    tril = list(zip(*np.tril_indices(n)))
    header = (["t"]
              + [f"K_{a}_{b}" for a in range(m) for b in range(n)]
              + [f"v_{a}" for a in range(m)]
              + [f"mu_{b}" for b in range(n)]
              + [f"Sigma_{i}_{j}" for i, j in tril])
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for k in range(T):
            row = [grid.knots[k]]
            row += list(policy.K[k].reshape(-1))
            row += list(policy.v[k])
            row += list(policy.mu[k])
            row += [policy.Sigma[k][i, j] for i, j in tril]
            writer.writerow([f"{x:.17g}" for x in row])
