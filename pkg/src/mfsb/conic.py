"""Standard-form conic programs and their solver binding.

A program is a set of named variable blocks (scalar, vector, or symmetric
matrix), a linear objective, affine equality constraints, and cone
memberships (nonnegative scalars, PSD matrices).  Symmetric blocks are stored
in scaled lower-triangular vectorized form (off-diagonals times sqrt(2)) so
that inner products of vectorized matrices equal Frobenius inner products.

The backend is Clarabel, whose PSD triangle cone uses the same vectorization.
"""

from dataclasses import dataclass, field

import clarabel
import numpy as np
import scipy.sparse as sp

from .errors import ConfigurationError
from .linalg import min_eig, smat, svec, svec_dim

DEFAULT_FEAS_TOL = 1e-9
DEFAULT_GAP_TOL = 1e-9
DEFAULT_MAX_ITER = 200


@dataclass(frozen=True)
class Tolerances:
    feas: float = DEFAULT_FEAS_TOL
    gap_abs: float = DEFAULT_GAP_TOL
    gap_rel: float = DEFAULT_GAP_TOL
    max_iter: int = DEFAULT_MAX_ITER


@dataclass(frozen=True)
class Block:
    name: str
    kind: str      # scalar | vector | symmetric
    dim: int       # logical dimension (matrix side for symmetric)
    offset: int
    size: int      # flat entries (svec size for symmetric)


class Aff:
    """Affine expression over named blocks: `rows` stacked scalar rows."""

    __slots__ = ("rows", "coeffs", "const")

    def __init__(self, rows: int, const=None):
        self.rows = rows
        self.coeffs: dict[str, np.ndarray] = {}
        self.const = np.zeros(rows) if const is None else np.asarray(const, float).reshape(rows)

    def add_term(self, name: str, coef: np.ndarray) -> "Aff":
        coef = np.atleast_2d(np.asarray(coef, dtype=float))
        if coef.shape[0] != self.rows:
            raise ConfigurationError(
                f"coefficient rows {coef.shape[0]} != expression rows {self.rows}")
        if name in self.coeffs:
            self.coeffs[name] = self.coeffs[name] + coef
        else:
            self.coeffs[name] = coef
        return self

    def add_const(self, c) -> "Aff":
        self.const = self.const + np.asarray(c, float).reshape(self.rows)
        return self

    def scaled(self, factor: float) -> "Aff":
        out = Aff(self.rows, factor * self.const)
        for name, coef in self.coeffs.items():
            out.coeffs[name] = factor * coef
        return out

    def value(self, block_values: dict) -> np.ndarray:
        """Evaluate rows at flat block values (dict name -> flat ndarray)."""
        out = self.const.copy()
        for name, coef in self.coeffs.items():
            out = out + coef @ block_values[name]
        return out


class ConicProgram:
    def __init__(self):
        self.blocks: dict[str, Block] = {}
        self._n_vars = 0
        self._objective: Aff | None = None
        self._equalities: list[Aff] = []
        self._nonneg: list[Aff] = []
        self._psd: list[tuple[Aff, int]] = []

    # -- variables -----------------------------------------------------

    def _add_block(self, name, kind, dim, size):
        if name in self.blocks:
            raise ConfigurationError(f"duplicate block name {name!r}")
        self.blocks[name] = Block(name, kind, dim, self._n_vars, size)
        self._n_vars += size
        return name

    def add_scalar(self, name: str) -> str:
        return self._add_block(name, "scalar", 1, 1)

    def add_vector(self, name: str, dim: int) -> str:
        return self._add_block(name, "vector", dim, dim)

    def add_symmetric(self, name: str, dim: int) -> str:
        return self._add_block(name, "symmetric", dim, svec_dim(dim))

    @property
    def n_vars(self) -> int:
        return self._n_vars

    def _check(self, aff: Aff):
        for name, coef in aff.coeffs.items():
            blk = self.blocks.get(name)
            if blk is None:
                raise ConfigurationError(f"constraint references unknown block {name!r}")
            if coef.shape[1] != blk.size:
                raise ConfigurationError(
                    f"coefficient width {coef.shape[1]} != size {blk.size} of block {name!r}")

    # -- constraints and objective --------------------------------------

    def set_objective(self, aff: Aff):
        if aff.rows != 1:
            raise ConfigurationError("objective must be a single row")
        self._check(aff)
        self._objective = aff

    def add_equality(self, aff: Aff):
        """Constrain every row of the expression to equal zero."""
        self._check(aff)
        self._equalities.append(aff)

    def add_nonneg(self, aff: Aff):
        """Constrain every row of the expression to be nonnegative."""
        self._check(aff)
        self._nonneg.append(aff)

    def add_psd(self, aff: Aff, dim: int):
        """Constrain mat(aff) (rows = svec entries of a `dim` x `dim` matrix) to be PSD."""
        if aff.rows != svec_dim(dim):
            raise ConfigurationError(
                f"PSD expression has {aff.rows} rows, expected svec dim {svec_dim(dim)}")
        self._check(aff)
        self._psd.append((aff, dim))

    # -- assembly --------------------------------------------------------

    def _triplet_rows(self, affs, row0, coef_sign):
        """Triplets of `coef_sign * coefficients` plus the raw constants."""
        rows, cols, vals, consts = [], [], [], []
        r = row0
        for aff in affs:
            for name, coef in aff.coeffs.items():
                blk = self.blocks[name]
                rr, cc = np.nonzero(coef)
                rows.append(rr + r)
                cols.append(cc + blk.offset)
                vals.append(coef_sign * coef[rr, cc])
            consts.append(aff.const)
            r += aff.rows
        return rows, cols, vals, consts, r

    def assemble(self):
        """Standard form (q, A, b, cones): minimize q'x s.t. Ax + s = b, s in cones."""
        q = np.zeros(self._n_vars)
        obj_const = 0.0
        if self._objective is not None:
            for name, coef in self._objective.coeffs.items():
                blk = self.blocks[name]
                q[blk.offset:blk.offset + blk.size] += coef[0]
            obj_const = float(self._objective.const[0])

        rows, cols, vals = [], [], []
        b_parts = []
        cones = []
        r = 0

        n_eq = sum(a.rows for a in self._equalities)
        if n_eq:
            # Cx + const = 0  ->  Ax = b with A = C, b = -const
            rr, cc, vv, consts, r = self._triplet_rows(self._equalities, r, +1.0)
            rows += rr; cols += cc; vals += vv
            b_parts += [-c for c in consts]
            cones.append(clarabel.ZeroConeT(n_eq))

        n_pos = sum(a.rows for a in self._nonneg)
        if n_pos:
            # Cx + const >= 0  ->  s = b - Ax with A = -C, b = const
            rr, cc, vv, consts, r = self._triplet_rows(self._nonneg, r, -1.0)
            rows += rr; cols += cc; vals += vv
            b_parts += consts
            cones.append(clarabel.NonnegativeConeT(n_pos))

        for aff, dim in self._psd:
            rr, cc, vv, consts, r = self._triplet_rows([aff], r, -1.0)
            rows += rr; cols += cc; vals += vv
            b_parts += consts
            cones.append(clarabel.PSDTriangleConeT(dim))

        if rows:
            A = sp.csc_matrix(
                (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                shape=(r, self._n_vars))
        else:
            A = sp.csc_matrix((r, self._n_vars))
        b = np.concatenate(b_parts) if b_parts else np.zeros(0)
        return q, obj_const, A, b, cones

    def dump(self, path):
        """Write the assembled program as documented sparse triplet text.

        Lines: `VAR offset size kind name`, `OBJ var coef`,
        `A row var coef` (one entry per line: constraint index, variable
        index, coefficient), `B row value`, `CONE kind dim`.
        """
        q, obj_const, A, b, cones = self.assemble()
        coo = A.tocoo()
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("# conic program: minimize OBJ'x + const s.t. Ax + s = B, s in CONEs\n")
            fh.write(f"# vars {self._n_vars} rows {A.shape[0]} const {obj_const!r}\n")
            for blk in self.blocks.values():
                fh.write(f"VAR {blk.offset} {blk.size} {blk.kind} {blk.name}\n")
            for j in np.nonzero(q)[0]:
                fh.write(f"OBJ {j} {float(q[j])!r}\n")
            for i, j, v in zip(coo.row, coo.col, coo.data):
                fh.write(f"A {i} {j} {float(v)!r}\n")
            for i in np.nonzero(b)[0]:
                fh.write(f"B {i} {float(b[i])!r}\n")
            for cone in cones:
                fh.write(f"CONE {type(cone).__name__} {cone}\n")

    # -- external re-verification ----------------------------------------

    def residuals(self, block_values: dict):
        """Re-substitute block values: (max |equality|, min nonneg row, min PSD eig)."""
        flat = {name: _flatten_value(self.blocks[name], val)
                for name, val in block_values.items()}
        eq = max((float(np.max(np.abs(a.value(flat)))) for a in self._equalities),
                 default=0.0)
        pos = min((float(np.min(a.value(flat))) for a in self._nonneg),
                  default=np.inf)
        psd = min((min_eig(smat(a.value(flat))) for a, _ in self._psd),
                  default=np.inf)
        return eq, pos, psd


def _flatten_value(blk: Block, val):
    if blk.kind == "scalar":
        return np.atleast_1d(np.asarray(val, float)).reshape(1)
    if blk.kind == "vector":
        return np.asarray(val, float).reshape(blk.size)
    return svec(np.asarray(val, float))


@dataclass
class ConicSolution:
    status: str                     # optimal | infeasible | unbounded | max_iterations
    objective_value: float
    block_values: dict
    residuals: dict = field(default_factory=dict)
    iterations: int = 0

    def extract_block(self, name: str):
        if name not in self.block_values:
            raise KeyError(f"unknown block {name!r}")
        return self.block_values[name]


def extract_block(sol: "ConicSolution", name: str):
    """Value of the named block (matrix blocks come back exactly symmetric)."""
    return sol.extract_block(name)


_STATUS_MAP = {
    "Solved": "optimal",
    "PrimalInfeasible": "infeasible",
    "AlmostPrimalInfeasible": "infeasible",
    "DualInfeasible": "unbounded",
    "AlmostDualInfeasible": "unbounded",
}


def solve(prog: ConicProgram, tol: Tolerances | None = None) -> ConicSolution:
    """Solve the program; infeasible/unbounded are statuses, not exceptions."""
    tol = tol or Tolerances()
    q, obj_const, A, b, cones = prog.assemble()
    P = sp.csc_matrix((prog.n_vars, prog.n_vars))
    settings = clarabel.DefaultSettings()
    settings.verbose = False
    settings.tol_feas = tol.feas
    settings.tol_gap_abs = tol.gap_abs
    settings.tol_gap_rel = tol.gap_rel
    settings.max_iter = tol.max_iter
    settings.max_threads = 1  # determinism across runs
    solver = clarabel.DefaultSolver(P, q, A, b, cones, settings)
    raw = solver.solve()

    status = _STATUS_MAP.get(str(raw.status), "max_iterations")
    x = np.asarray(raw.x)
    values = {}
    for blk in prog.blocks.values():
        chunk = x[blk.offset:blk.offset + blk.size]
        if blk.kind == "scalar":
            values[blk.name] = float(chunk[0])
        elif blk.kind == "vector":
            values[blk.name] = chunk.copy()
        else:
            values[blk.name] = smat(chunk)

    gap = abs(raw.obj_val - raw.obj_val_dual) / max(1.0, abs(raw.obj_val))
    return ConicSolution(
        status=status,
        objective_value=float(raw.obj_val) + obj_const,
        block_values=values,
        residuals={"primal": float(raw.r_prim), "dual": float(raw.r_dual),
                   "gap": float(gap)},
        iterations=int(raw.iterations),
    )
