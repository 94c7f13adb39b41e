"""Component-level transport plans over the marginal polytope.

Minimizes sum(lambda * J) subject to row marginals alpha0 and column
marginals alpha1, by the transportation simplex on the bipartite graph
(exact vertex solutions, Bland's rule for deterministic anti-cycling
pivoting: the lexicographically smallest improving index enters first).

Three-index route tensors reduce exactly to the matrix problem: at an
optimum only the cheapest route of each (i, j) pair carries flow, with ties
resolved to the lexicographically smallest route.
"""

from dataclasses import dataclass

import numpy as np

from .errors import InputError

WEIGHT_SUM_TOL = 1e-6
REDUCED_COST_TOL = 1e-11


@dataclass(frozen=True)
class TransportPlan:
    lam: np.ndarray          # (N0, N1) or (N0, N1, R)
    alpha0: np.ndarray
    alpha1: np.ndarray
    costs: np.ndarray        # same shape as lam
    objective: float         # J_OT = sum(lam * costs)

    @property
    def has_routes(self) -> bool:
        return self.lam.ndim == 3

    def matrix(self) -> np.ndarray:
        """Pair coupling with the route axis summed out."""
        return self.lam.sum(axis=2) if self.has_routes else self.lam

    def indices(self):
        """All index tuples, lexicographic."""
        return [tuple(idx) for idx in np.ndindex(self.lam.shape)]

    def active(self):
        """Index tuples carrying mass."""
        return [idx for idx in self.indices() if self.lam[idx] > 0.0]


def _checked_weights(w, name):
    w = np.asarray(w, dtype=float).reshape(-1)
    if w.size == 0 or np.any(w <= 0):
        raise InputError(f"{name} must be positive")
    total = w.sum()
    if abs(total - 1.0) > WEIGHT_SUM_TOL:
        raise InputError(f"{name} sums to {total!r}, expected 1")
    return w / total


def marginals(plan: TransportPlan):
    """(row sums, column sums), summing over routes."""
    lam = plan.matrix()
    return lam.sum(axis=1), lam.sum(axis=0)


def independent_plan(costs, alpha0, alpha1) -> TransportPlan:
    """The product coupling alpha0 x alpha1 (all mass on route 0)."""
    costs = np.asarray(costs, dtype=float)
    a0 = _checked_weights(alpha0, "alpha0")
    a1 = _checked_weights(alpha1, "alpha1")
    lam = np.zeros(costs.shape)
    if costs.ndim == 3:
        lam[:, :, 0] = np.outer(a0, a1)
    else:
        lam[:, :] = np.outer(a0, a1)
    return TransportPlan(lam, a0, a1, costs, float(np.sum(lam * costs)))


def solve_plan(costs, alpha0, alpha1) -> TransportPlan:
    costs = np.asarray(costs, dtype=float)
    if costs.ndim not in (2, 3):
        raise InputError(f"cost array must be 2- or 3-dimensional, got {costs.ndim}")
    if not np.all(np.isfinite(costs)):
        raise InputError("costs must be finite")
    a0 = _checked_weights(alpha0, "alpha0")
    a1 = _checked_weights(alpha1, "alpha1")
    if costs.shape[0] != a0.size or costs.shape[1] != a1.size:
        raise InputError(
            f"cost shape {costs.shape} does not match weights ({a0.size}, {a1.size})")

    if costs.ndim == 3:
        flat = _simplex(costs.min(axis=2), a0, a1)
        route = costs.argmin(axis=2)  # first minimizer: lexicographic tie-break
        lam = np.zeros(costs.shape)
        for i in range(a0.size):
            for j in range(a1.size):
                lam[i, j, route[i, j]] = flat[i, j]
    else:
        lam = _simplex(costs, a0, a1)
    return TransportPlan(lam, a0, a1, costs, float(np.sum(lam * costs)))


def _northwest_corner(a, b):
    """Initial basic feasible solution; exactly N0 + N1 - 1 basic cells."""
    n0, n1 = a.size, b.size
    x = np.zeros((n0, n1))
    basis = []
    ra, rb = a.copy(), b.copy()
    i = j = 0
    while True:
        move = min(ra[i], rb[j])
        x[i, j] = move
        basis.append((i, j))
        ra[i] -= move
        rb[j] -= move
        if i == n0 - 1 and j == n1 - 1:
            break
        if ra[i] <= rb[j] and i < n0 - 1:
            i += 1
        else:
            j += 1
    return x, basis


def _duals(costs, basis, n0, n1):
    u = np.full(n0, np.nan)
    v = np.full(n1, np.nan)
    u[0] = 0.0
    adj_r = [[] for _ in range(n0)]
    adj_c = [[] for _ in range(n1)]
    for (i, j) in basis:
        adj_r[i].append(j)
        adj_c[j].append(i)
    stack = [("r", 0)]
    while stack:
        kind, k = stack.pop()
        if kind == "r":
            for j in adj_r[k]:
                if np.isnan(v[j]):
                    v[j] = costs[k, j] - u[k]
                    stack.append(("c", j))
        else:
            for i in adj_c[k]:
                if np.isnan(u[i]):
                    u[i] = costs[i, k] - v[k]
                    stack.append(("r", i))
    return u, v


def _tree_path(basis, start_row, end_col, n0, n1):
    """Alternating path of basic cells from row node to column node."""
    adj_r = [[] for _ in range(n0)]
    adj_c = [[] for _ in range(n1)]
    for (i, j) in basis:
        adj_r[i].append(j)
        adj_c[j].append(i)
    parent = {("r", start_row): None}
    queue = [("r", start_row)]
    while queue:
        node = queue.pop(0)
        kind, k = node
        neighbors = ((("c", j) for j in adj_r[k]) if kind == "r"
                     else (("r", i) for i in adj_c[k]))
        for nxt in neighbors:
            if nxt not in parent:
                parent[nxt] = node
                queue.append(nxt)
    node = ("c", end_col)
    path = []
    while parent[node] is not None:
        prev = parent[node]
        cell = (node[1], prev[1]) if node[0] == "r" else (prev[1], node[1])
        path.append(cell)
        node = prev
    return path


def _simplex(costs, a, b):
    n0, n1 = costs.shape
    x, basis = _northwest_corner(a, b)
    scale = max(1.0, float(np.max(np.abs(costs))))
    tol = REDUCED_COST_TOL * scale
    basis_set = set(basis)

    while True:
        u, v = _duals(costs, basis, n0, n1)
        entering = None
        for i in range(n0):
            for j in range(n1):
                if (i, j) not in basis_set and costs[i, j] - u[i] - v[j] < -tol:
                    entering = (i, j)
                    break
            if entering:
                break
        if entering is None:
            return x

        path = _tree_path(basis, entering[0], entering[1], n0, n1)
        # entering cell gains flow; cells along the path alternate starting
        # with a loss at the cell adjacent to the entering column
        minus = path[::2] if path else []
        plus = path[1::2]
        theta = min(x[c] for c in minus)
        leaving = min(c for c in minus if x[c] <= theta)
        for c in minus:
            x[c] -= theta
        for c in plus:
            x[c] += theta
        x[entering] = theta
        basis.remove(leaving)
        basis.append(entering)
        basis_set.remove(leaving)
        basis_set.add(entering)
