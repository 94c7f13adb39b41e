"""Linear time-varying dynamics on a uniform time grid.

Provides state-transition matrices and controllability Grammians (RK4
integrated, both for the plain drift matrix and for the mean-augmented one)
plus the forward-Euler moment-recursion coefficients every solver embeds as
equality constraints.
"""

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import ConfigurationError, ControllabilityError, InputError
from .linalg import min_eig, sym

GRID_UNIFORMITY_TOL = 1e-12
CONTROLLABILITY_EIG_FLOOR = 1e-10
RK4_SUBSTEPS = 4


@dataclass(frozen=True, eq=False)
class TimeGrid:
    """Uniform grid of T >= 2 knots spanning [0, 1]."""

    knots: np.ndarray

    def __post_init__(self):
        k = np.asarray(self.knots, dtype=float)
        object.__setattr__(self, "knots", k)
        if k.ndim != 1 or k.size < 2:
            raise ConfigurationError("time grid needs at least 2 knots")
        if k[0] != 0.0 or k[-1] != 1.0:
            raise ConfigurationError("time grid must start at 0 and end at 1")
        steps = np.diff(k)
        if np.any(steps <= 0):
            raise ConfigurationError("time grid must be strictly increasing")
        if np.max(np.abs(steps - steps[0])) > GRID_UNIFORMITY_TOL:
            raise ConfigurationError("time grid must be uniform")

    @classmethod
    def uniform(cls, count: int) -> "TimeGrid":
        if count < 2:
            raise ConfigurationError("time grid needs at least 2 knots")
        return cls(np.linspace(0.0, 1.0, count))

    @property
    def count(self) -> int:
        return self.knots.size

    @property
    def dt(self) -> float:
        return float(self.knots[1] - self.knots[0])


def _stack(mat, count, rows, cols, name):
    arr = np.asarray(mat, dtype=float)
    if arr.ndim == 2 and arr.shape == (rows, cols):
        arr = np.broadcast_to(arr, (count, rows, cols)).copy()
    if arr.shape != (count, rows, cols):
        raise ConfigurationError(
            f"system matrix {name} has shape {arr.shape}, "
            f"expected ({count}, {rows}, {cols})")
    return arr


@dataclass(frozen=True, eq=False)
class LTVSystem:
    """Per-knot dynamics matrices (A, Abar, B, D) plus their time grid.

    Constant matrices broadcast across knots.  Controllability of (A, B) is
    checked by the operations that actually invert the Grammian, not here,
    so degenerate systems remain constructible for infeasibility tests.
    """

    n: int
    m: int
    q: int
    A: np.ndarray
    Abar: np.ndarray
    B: np.ndarray
    D: np.ndarray
    grid: TimeGrid

    def __post_init__(self):
        T = self.grid.count
        object.__setattr__(self, "A", _stack(self.A, T, self.n, self.n, "A"))
        object.__setattr__(self, "Abar", _stack(self.Abar, T, self.n, self.n, "Abar"))
        object.__setattr__(self, "B", _stack(self.B, T, self.n, self.m, "B"))
        object.__setattr__(self, "D", _stack(self.D, T, self.n, self.q, "D"))

    @classmethod
    def constant(cls, A, B, D, grid: TimeGrid, Abar=None) -> "LTVSystem":
        A = np.atleast_2d(np.asarray(A, dtype=float))
        B = np.asarray(B, dtype=float)
        if B.ndim == 1:
            B = B.reshape(-1, 1)
        D = np.asarray(D, dtype=float)
        if D.ndim == 1:
            D = D.reshape(-1, 1)
        n = A.shape[0]
        if Abar is None:
            Abar = np.zeros((n, n))
        return cls(n=n, m=B.shape[1], q=D.shape[1], A=A, Abar=np.asarray(Abar, float),
                   B=B, D=D, grid=grid)

    def drift(self, use_meanfield_matrix: bool) -> np.ndarray:
        return self.A + self.Abar if use_meanfield_matrix else self.A

    @property
    def has_meanfield(self) -> bool:
        return bool(np.any(self.Abar != 0.0))


@dataclass(frozen=True)
class MomentStep:
    """Coefficients of one forward-Euler step of the moment recursions.

    mu_{k+1}  = mu_k + dt (A mu_k + Abar xbar_k + B v_k)
    Sig_{k+1} = Sig_k + dt (A Sig_k + Sig_k A' + B U_k + U_k' B' + D D')
    """

    A: np.ndarray
    Abar: np.ndarray
    B: np.ndarray
    DDt: np.ndarray
    dt: float

    def step_cov(self, Sigma, U):
        return Sigma + self.dt * (self.A @ Sigma + Sigma @ self.A.T
                                  + self.B @ U + U.T @ self.B.T + self.DDt)

    def step_mean(self, mu, v, xbar=None):
        drift = self.A @ mu + self.B @ v
        if xbar is not None:
            drift = drift + self.Abar @ xbar
        return mu + self.dt * drift


def discretize_moments(sys: LTVSystem, grid: TimeGrid | None = None):
    """Per-step forward-Euler coefficients for the mean/covariance recursions."""
    grid = grid or sys.grid
    if grid.count != sys.grid.count:
        raise ConfigurationError("grid does not match the system's grid")
    dt = grid.dt
    return [MomentStep(A=sys.A[k], Abar=sys.Abar[k], B=sys.B[k],
                       DDt=sys.D[k] @ sys.D[k].T, dt=dt)
            for k in range(grid.count - 1)]


def _rk4_interval_factors(A: np.ndarray, B: np.ndarray, dt: float, substeps: int):
    """RK4 factors over one knot interval with frozen coefficients.

    Returns (F, G) with F ~ state-transition over the interval and
    G ~ local Grammian contribution, integrating
    dPhi/dt = A Phi and dM/dt = A M + M A' + B B'.
    """
    n = A.shape[0]
    h = dt / substeps
    BBt = B @ B.T
    F = np.eye(n)
    G = np.zeros((n, n))

    def dM(M):
        return A @ M + M @ A.T + BBt

    for _ in range(substeps):
        # Phi: linear constant-coefficient ODE, RK4 = 4th-order Taylor of expm
        Ah = A * h
        P = np.eye(n) + Ah + Ah @ Ah / 2 + Ah @ Ah @ Ah / 6 + Ah @ Ah @ Ah @ Ah / 24
        k1 = dM(G)
        k2 = dM(G + 0.5 * h * k1)
        k3 = dM(G + 0.5 * h * k2)
        k4 = dM(G + h * k3)
        G = sym(G + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4))
        F = P @ F
    return F, sym(G)


class TransitionBundle:
    """Cached per-interval transition factors and local Grammians.

    From the factors F_k = Phi(t_{k+1}, t_k) and locals G_k = M(t_{k+1}, t_k),
    any knot pair follows by composition:
    Phi(k,l) = F_{k-1} ... F_l and M(k,l) = F M(k-1,l) F' + G_{k-1}.
    Read-only after construction, safe for concurrent readers.
    """

    def __init__(self, sys: LTVSystem, use_meanfield_matrix: bool):
        A = sys.drift(use_meanfield_matrix)
        dt = sys.grid.dt
        self.n = sys.n
        self.count = sys.grid.count
        self.F = []
        self.G = []
        for k in range(self.count - 1):
            F, G = _rk4_interval_factors(A[k], sys.B[k], dt, RK4_SUBSTEPS)
            self.F.append(F)
            self.G.append(G)
        # prefix arrays Phi(k, 0) and M(k, 0) give O(1) lookups for any pair:
        # Phi(k,l) = Phi(k,0) Phi(l,0)^-1, M(k,l) = M(k,0) - Phi(k,l) M(l,0) Phi(k,l)'
        self._phi0 = [np.eye(self.n)]
        self._gram0 = [np.zeros((self.n, self.n))]
        for k in range(self.count - 1):
            self._phi0.append(self.F[k] @ self._phi0[-1])
            self._gram0.append(sym(self.F[k] @ self._gram0[-1] @ self.F[k].T
                                   + self.G[k]))

    def phi(self, k: int, l: int) -> np.ndarray:
        self._check(k), self._check(l)
        if k == l:
            return np.eye(self.n)
        if l == 0:
            return self._phi0[k].copy()
        return np.linalg.solve(self._phi0[l].T, self._phi0[k].T).T

    def gram(self, k: int, l: int) -> np.ndarray:
        self._check(k), self._check(l)
        if k < l:
            raise InputError(f"grammian requires t >= s (got knots {k} < {l})")
        if k == l:
            return np.zeros((self.n, self.n))
        if l == 0:
            return self._gram0[k].copy()
        P = self.phi(k, l)
        return sym(self._gram0[k] - P @ self._gram0[l] @ P.T)

    def _check(self, k):
        if not 0 <= k < self.count:
            raise InputError(f"knot index {k} outside grid of {self.count} knots")


@lru_cache(maxsize=None)
def _bundle(sys: LTVSystem, use_meanfield_matrix: bool) -> TransitionBundle:
    return TransitionBundle(sys, use_meanfield_matrix)


def transition_bundle(sys: LTVSystem, use_meanfield_matrix: bool = False) -> TransitionBundle:
    return _bundle(sys, bool(use_meanfield_matrix))


def state_transition(sys: LTVSystem, use_meanfield_matrix: bool, t: int, s: int) -> np.ndarray:
    """Phi(t_k, t_l) for knot indices t=k, s=l."""
    return transition_bundle(sys, use_meanfield_matrix).phi(t, s)


def grammian(sys: LTVSystem, use_meanfield_matrix: bool, t: int, s: int) -> np.ndarray:
    """Controllability Grammian M(t_k, t_l), requires t >= s."""
    return transition_bundle(sys, use_meanfield_matrix).gram(t, s)


def controllability_margin(sys: LTVSystem, use_meanfield_matrix: bool = False) -> float:
    """Smallest eigenvalue of M(1, 0)."""
    return min_eig(grammian(sys, use_meanfield_matrix, sys.grid.count - 1, 0))


def require_controllable(sys: LTVSystem, use_meanfield_matrix: bool = False) -> None:
    margin = controllability_margin(sys, use_meanfield_matrix)
    if margin <= CONTROLLABILITY_EIG_FLOOR:
        which = "(A+Abar, B)" if use_meanfield_matrix else "(A, B)"
        raise ControllabilityError(
            f"pair {which} is not controllable on [0,1]: "
            f"min eig M(1,0) = {margin:.3e}")
