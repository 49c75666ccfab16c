"""Minimal LMI modeling layer with conic lowering and pluggable solvers.

Programs are built from symmetric / rectangular / scalar decision variables,
affine matrix equalities, and semidefinite block constraints, then lowered to
a standard conic form (symmetric variables packed with the scaled
upper-triangular vectorization, so packed inner products equal trace inner
products).  Two interior-point backends are provided; any solver that
consumes the conic form can be substituted.
"""

from __future__ import annotations

import hashlib
import time
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np

__all__ = [
    "LmiError",
    "Var",
    "MatExpr",
    "LmiProgram",
    "ConicForm",
    "SolveOptions",
    "SolverReport",
    "lower_to_conic",
    "solve",
    "svec",
    "smat",
    "symm",
    "const",
    "block",
    "trace_expr",
    "export_sdpa",
]

SQRT2 = np.sqrt(2.0)


class LmiError(ValueError):
    """Malformed program: dimension mismatch, unknown variable, asymmetry."""


# ---------------------------------------------------------------------------
# svec packing (column-major upper triangle, off-diagonals scaled by sqrt(2))
# ---------------------------------------------------------------------------


def svec_dim(n: int) -> int:
    return n * (n + 1) // 2


def svec(M: np.ndarray) -> np.ndarray:
    M = np.asarray(M, dtype=float)
    n = M.shape[0]
    out = np.empty(svec_dim(n))
    k = 0
    for j in range(n):
        for i in range(j + 1):
            out[k] = M[i, j] if i == j else SQRT2 * 0.5 * (M[i, j] + M[j, i])
            k += 1
    return out


def smat(v: np.ndarray, n: int) -> np.ndarray:
    M = np.zeros((n, n))
    k = 0
    for j in range(n):
        for i in range(j + 1):
            if i == j:
                M[i, j] = v[k]
            else:
                M[i, j] = M[j, i] = v[k] / SQRT2
            k += 1
    return M


# ---------------------------------------------------------------------------
# Variables and affine matrix expressions
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Var:
    name: str
    kind: str  # 'sym' | 'mat' | 'scalar'
    rows: int
    cols: int

    @property
    def packed_dim(self) -> int:
        if self.kind == "sym":
            return svec_dim(self.rows)
        if self.kind == "scalar":
            return 1
        return self.rows * self.cols

    def basis(self, k: int) -> np.ndarray:
        """The matrix dV/dz_k for packed entry k."""
        if self.kind == "scalar":
            return np.ones((1, 1))
        E = np.zeros((self.rows, self.cols))
        if self.kind == "sym":
            j = 0
            rem = k
            while rem > j:
                rem -= j + 1
                j += 1
            i = rem
            if i == j:
                E[i, j] = 1.0
            else:
                E[i, j] = E[j, i] = 1.0 / SQRT2
        else:  # column-major
            E[k % self.rows, k // self.rows] = 1.0
        return E

    def unpack(self, z: np.ndarray) -> np.ndarray:
        if self.kind == "sym":
            return smat(z, self.rows)
        if self.kind == "scalar":
            return float(z[0])
        return z.reshape((self.cols, self.rows)).T  # column-major

    def expr(self) -> "MatExpr":
        shape = (1, 1) if self.kind == "scalar" else (self.rows, self.cols)
        A = np.eye(shape[0])
        B = np.eye(shape[1])
        return MatExpr(shape, [("lin", A, self, B, False)])


class MatExpr:
    """Affine matrix expression: constants plus A @ op(V) @ B terms.

    Terms:
      ("const", C)
      ("lin", A, var, B, transposed)          A @ op(V) @ B
      ("scal", var, C)                        scalar variable times C
      ("trace", W, var, transposed, C)        sum(W * op(V)) times C
    """

    __array_ufunc__ = None  # make numpy defer to the reflected operators

    def __init__(self, shape: Tuple[int, int], terms: List[tuple]):
        self.shape = shape
        self.terms = terms

    def as_constant(self) -> Optional[np.ndarray]:
        """The expression's value when it contains no variables, else None."""
        if any(t[0] != "const" for t in self.terms):
            return None
        out = np.zeros(self.shape)
        for _, C in self.terms:
            out += C
        return out

    # -- coercion -------------------------------------------------------
    @staticmethod
    def wrap(x) -> "MatExpr":
        if isinstance(x, MatExpr):
            return x
        if isinstance(x, Var):
            return x.expr()
        C = np.atleast_2d(np.asarray(x, dtype=float))
        return MatExpr(C.shape, [("const", C.copy())])

    # -- algebra ----------------------------------------------------------
    def __add__(self, other) -> "MatExpr":
        other = MatExpr.wrap(other)
        if other.shape != self.shape:
            raise LmiError(f"shape mismatch in +: {self.shape} vs {other.shape}")
        return MatExpr(self.shape, self.terms + other.terms)

    __radd__ = __add__

    def __neg__(self) -> "MatExpr":
        return self * (-1.0)

    def __sub__(self, other) -> "MatExpr":
        return self + (-MatExpr.wrap(other))

    def __rsub__(self, other) -> "MatExpr":
        return MatExpr.wrap(other) + (-self)

    def __mul__(self, c) -> "MatExpr":
        c = float(c)
        out = []
        for t in self.terms:
            if t[0] == "const":
                out.append(("const", c * t[1]))
            elif t[0] == "lin":
                out.append(("lin", c * t[1], t[2], t[3], t[4]))
            elif t[0] == "scal":
                out.append(("scal", t[1], c * t[2]))
            else:
                out.append(("trace", t[1], t[2], t[3], c * t[4]))
        return MatExpr(self.shape, out)

    __rmul__ = __mul__

    def lmul(self, C: np.ndarray) -> "MatExpr":
        C = np.atleast_2d(np.asarray(C, dtype=float))
        if C.shape[1] != self.shape[0]:
            raise LmiError("left-multiplier has wrong shape")
        out = []
        for t in self.terms:
            if t[0] == "const":
                out.append(("const", C @ t[1]))
            elif t[0] == "lin":
                out.append(("lin", C @ t[1], t[2], t[3], t[4]))
            elif t[0] == "scal":
                out.append(("scal", t[1], C @ t[2]))
            else:
                out.append(("trace", t[1], t[2], t[3], C @ t[4]))
        return MatExpr((C.shape[0], self.shape[1]), out)

    def rmul(self, C: np.ndarray) -> "MatExpr":
        C = np.atleast_2d(np.asarray(C, dtype=float))
        if C.shape[0] != self.shape[1]:
            raise LmiError("right-multiplier has wrong shape")
        out = []
        for t in self.terms:
            if t[0] == "const":
                out.append(("const", t[1] @ C))
            elif t[0] == "lin":
                out.append(("lin", t[1], t[2], t[3] @ C, t[4]))
            elif t[0] == "scal":
                out.append(("scal", t[1], t[2] @ C))
            else:
                out.append(("trace", t[1], t[2], t[3], t[4] @ C))
        return MatExpr((self.shape[0], C.shape[1]), out)

    def __matmul__(self, other) -> "MatExpr":
        if isinstance(other, (MatExpr, Var)):
            other = MatExpr.wrap(other)
            mine = self.as_constant()
            if mine is not None:
                return other.lmul(mine)
            theirs = other.as_constant()
            if theirs is not None:
                return self.rmul(theirs)
            raise LmiError("products of two non-constant expressions are not affine")
        return self.rmul(np.asarray(other, dtype=float))

    def __rmatmul__(self, other) -> "MatExpr":
        return self.lmul(np.asarray(other, dtype=float))

    @property
    def T(self) -> "MatExpr":
        out = []
        for t in self.terms:
            if t[0] == "const":
                out.append(("const", t[1].T))
            elif t[0] == "lin":
                out.append(("lin", t[3].T, t[2], t[1].T, not t[4]))
            elif t[0] == "scal":
                out.append(("scal", t[1], t[2].T))
            else:
                out.append(("trace", t[1], t[2], t[3], t[4].T))
        return MatExpr((self.shape[1], self.shape[0]), out)

    # -- evaluation -------------------------------------------------------
    def eval(self, values: Dict[str, np.ndarray]) -> np.ndarray:
        out = np.zeros(self.shape)
        for t in self.terms:
            if t[0] == "const":
                out += t[1]
            elif t[0] == "lin":
                _, A, var, B, tr = t
                V = np.atleast_2d(np.asarray(values[var.name], dtype=float))
                out += A @ (V.T if tr else V) @ B
            elif t[0] == "scal":
                out += float(values[t[1].name]) * t[2]
            else:
                _, W, var, tr, C = t
                V = np.atleast_2d(np.asarray(values[var.name], dtype=float))
                out += float(np.sum(W * (V.T if tr else V))) * C
        return out

    def variables(self) -> List[Var]:
        seen = {}
        for t in self.terms:
            if t[0] in ("lin", "scal"):
                v = t[2] if t[0] == "lin" else t[1]
                seen[v.name] = v
            elif t[0] == "trace":
                seen[t[2].name] = t[2]
        return list(seen.values())


def const(C) -> MatExpr:
    return MatExpr.wrap(np.asarray(C, dtype=float))


def scal_expr(var: Var, C) -> MatExpr:
    """A scalar variable times a constant matrix."""
    if var.kind != "scalar":
        raise LmiError("scal_expr needs a scalar variable")
    C = np.atleast_2d(np.asarray(C, dtype=float))
    return MatExpr(C.shape, [("scal", var, C.copy())])


def symm(E: MatExpr) -> MatExpr:
    E = MatExpr.wrap(E)
    return E + E.T


def trace_expr(E: MatExpr) -> MatExpr:
    """Trace of a square affine expression, as a 1x1 expression."""
    E = MatExpr.wrap(E)
    r, c = E.shape
    if r != c:
        raise LmiError("trace needs a square expression")
    one = np.ones((1, 1))
    out: List[tuple] = []
    for t in E.terms:
        if t[0] == "const":
            out.append(("const", np.array([[np.trace(t[1])]])))
        elif t[0] == "lin":
            _, A, var, B, tr = t
            W = (B @ A).T  # trace(A V B) = sum(W * V)
            out.append(("trace", W.T if tr else W, var, tr, one.copy()))
        elif t[0] == "scal":
            out.append(("scal", t[1], np.array([[np.trace(t[2])]])))
        else:
            _, W, var, tr, C = t
            out.append(("trace", W, var, tr, np.array([[np.trace(C)]])))
    return MatExpr((1, 1), out)


def block(rows: List[List]) -> MatExpr:
    """Assemble a block matrix expression from a 2-d grid of expressions."""
    grid = [[MatExpr.wrap(e) for e in row] for row in rows]
    heights = [row[0].shape[0] for row in grid]
    widths = [e.shape[1] for e in grid[0]]
    for i, row in enumerate(grid):
        for j, e in enumerate(row):
            if e.shape != (heights[i], widths[j]):
                raise LmiError(f"block ({i},{j}) has shape {e.shape}, expected {(heights[i], widths[j])}")
    R, C = sum(heights), sum(widths)
    terms: List[tuple] = []
    ro = 0
    for i, row in enumerate(grid):
        co = 0
        for j, e in enumerate(row):
            inj = np.zeros((R, heights[i]))
            inj[ro : ro + heights[i]] = np.eye(heights[i])
            sel = np.zeros((widths[j], C))
            sel[:, co : co + widths[j]] = np.eye(widths[j])
            terms.extend(e.lmul(inj).rmul(sel).terms)
            co += widths[j]
        ro += heights[i]
    return MatExpr((R, C), terms)


# ---------------------------------------------------------------------------
# Programs
# ---------------------------------------------------------------------------


@dataclass
class LmiProgram:
    """Decision variables, affine equalities, PSD blocks, linear objective."""

    name: str = "lmi"
    variables: Dict[str, Var] = field(default_factory=dict)
    equalities: List[tuple] = field(default_factory=list)  # (expr, label)
    psd_blocks: List[tuple] = field(default_factory=list)  # (expr, label), expr >= 0
    objective: tuple = (None, None)  # (sense, 1x1 expr)

    def _register(self, var: Var) -> Var:
        if var.name in self.variables:
            raise LmiError(f"variable {var.name!r} already declared")
        self.variables[var.name] = var
        return var

    def sym_var(self, name: str, n: int) -> Var:
        return self._register(Var(name, "sym", n, n))

    def var(self, name: str, rows: int, cols: int) -> Var:
        return self._register(Var(name, "mat", rows, cols))

    def scalar_var(self, name: str) -> Var:
        return self._register(Var(name, "scalar", 1, 1))

    def _check_known(self, expr: MatExpr) -> None:
        for v in expr.variables():
            if self.variables.get(v.name) is not v:
                raise LmiError(f"expression references undeclared variable {v.name!r}")

    def add_eq(self, expr, label: str = "eq") -> None:
        expr = MatExpr.wrap(expr)
        self._check_known(expr)
        self.equalities.append((expr, label))

    def add_psd(self, expr, label: str = "psd") -> None:
        expr = MatExpr.wrap(expr)
        if expr.shape[0] != expr.shape[1]:
            raise LmiError("semidefinite blocks must be square")
        self._check_known(expr)
        self.psd_blocks.append((expr, label))

    def add_nsd(self, expr, label: str = "nsd") -> None:
        self.add_psd(-MatExpr.wrap(expr), label)

    def set_objective(self, sense: Optional[str], expr=None) -> None:
        if sense is None:
            self.objective = (None, None)
            return
        if sense not in ("min", "max"):
            raise LmiError("objective sense must be 'min', 'max', or None")
        expr = MatExpr.wrap(expr)
        if expr.shape != (1, 1):
            raise LmiError("objective must be scalar (1x1)")
        self._check_known(expr)
        self.objective = (sense, expr)

    def subprogram(self, keep_labels, name: Optional[str] = None) -> "LmiProgram":
        """Copy with only the constraints whose label is in keep_labels."""
        sub = LmiProgram(name or f"{self.name}:sub")
        sub.variables = dict(self.variables)
        sub.equalities = [(e, l) for e, l in self.equalities if l in keep_labels]
        sub.psd_blocks = [(e, l) for e, l in self.psd_blocks if l in keep_labels]
        return sub


# ---------------------------------------------------------------------------
# Conic lowering
# ---------------------------------------------------------------------------


@dataclass
class ConicForm:
    """min c'z (plus offset) s.t. A_eq z = b_eq and smat(h_k + G_k z) >= 0."""

    n_vars: int
    var_offsets: Dict[str, tuple]  # name -> (offset, Var)
    c: np.ndarray
    obj_offset: float
    maximize: bool
    A_eq: np.ndarray
    b_eq: np.ndarray
    blocks: List[tuple]  # (G, h, size, label)
    eq_labels: List[str]

    def unpack(self, z: np.ndarray) -> Dict[str, np.ndarray]:
        out = {}
        for name, (off, var) in self.var_offsets.items():
            out[name] = var.unpack(np.asarray(z[off : off + var.packed_dim]))
        return out

    def digest(self) -> str:
        h = hashlib.sha256()
        h.update(np.int64(self.n_vars).tobytes())
        h.update(self.c.tobytes())
        h.update(self.A_eq.tobytes())
        h.update(self.b_eq.tobytes())
        for G, hh, size, _ in self.blocks:
            h.update(np.int64(size).tobytes())
            h.update(G.tobytes())
            h.update(hh.tobytes())
        return h.hexdigest()


def _expr_coeff_columns(expr: MatExpr, offsets: Dict[str, tuple], n_vars: int):
    """Return (F0, cols) with cols[k] = dF/dz_k as dense r x c matrices."""
    r, c = expr.shape
    F0 = np.zeros((r, c))
    cols: Dict[int, np.ndarray] = {}

    def bump(k: int, M: np.ndarray) -> None:
        if k in cols:
            cols[k] = cols[k] + M
        else:
            cols[k] = M.copy()

    for t in expr.terms:
        if t[0] == "const":
            F0 += t[1]
            continue
        if t[0] == "lin":
            _, A, var, B, tr = t
            off = offsets[var.name][0]
            for k in range(var.packed_dim):
                E = var.basis(k)
                bump(off + k, A @ (E.T if tr else E) @ B)
        elif t[0] == "scal":
            _, var, C = t
            bump(offsets[var.name][0], C)
        else:
            _, W, var, tr, C = t
            off = offsets[var.name][0]
            for k in range(var.packed_dim):
                E = var.basis(k)
                bump(off + k, float(np.sum(W * (E.T if tr else E))) * C)
    return F0, cols


def lower_to_conic(program: LmiProgram) -> ConicForm:
    """Deterministic lowering; identical programs produce identical forms."""
    offsets: Dict[str, tuple] = {}
    pos = 0
    for name, var in program.variables.items():
        offsets[name] = (pos, var)
        pos += var.packed_dim
    n_vars = pos

    eq_rows, eq_rhs, eq_labels = [], [], []
    for expr, label in program.equalities:
        F0, cols = _expr_coeff_columns(expr, offsets, n_vars)
        r, cdim = expr.shape
        nrows = r * cdim
        Arows = np.zeros((nrows, n_vars))
        for k, M in cols.items():
            Arows[:, k] = M.reshape(-1)
        eq_rows.append(Arows)
        eq_rhs.append(-F0.reshape(-1))
        eq_labels.extend([label] * nrows)
    A_eq = np.vstack(eq_rows) if eq_rows else np.zeros((0, n_vars))
    b_eq = np.concatenate(eq_rhs) if eq_rhs else np.zeros(0)

    blocks = []
    for expr, label in program.psd_blocks:
        size = expr.shape[0]
        F0, cols = _expr_coeff_columns(expr, offsets, n_vars)
        _require_symmetric(F0, label)
        h = svec(0.5 * (F0 + F0.T))
        G = np.zeros((svec_dim(size), n_vars))
        for k, M in cols.items():
            _require_symmetric(M, label)
            G[:, k] = svec(0.5 * (M + M.T))
        blocks.append((G, h, size, label))

    sense, obj = program.objective
    c = np.zeros(n_vars)
    offset = 0.0
    if sense is not None:
        F0, cols = _expr_coeff_columns(obj, offsets, n_vars)
        offset = float(F0[0, 0])
        for k, M in cols.items():
            c[k] = M[0, 0]
        if sense == "max":
            c = -c
    return ConicForm(n_vars, offsets, c, offset, sense == "max", A_eq, b_eq, blocks, eq_labels)


def _require_symmetric(M: np.ndarray, label: str) -> None:
    if M.size and np.max(np.abs(M - M.T)) > 1e-9 * (1.0 + np.max(np.abs(M))):
        raise LmiError(f"semidefinite block {label!r} is not symmetric")


# ---------------------------------------------------------------------------
# Solving
# ---------------------------------------------------------------------------


@dataclass
class SolveOptions:
    solver: str = "auto"
    max_iter: int = 200
    tol: float = 1e-9
    verbose: bool = False
    violation_tol: float = 1e-7


@dataclass
class SolverReport:
    status: str  # optimal | infeasible | near-optimal | numerical-failure
    values: Dict[str, np.ndarray]
    objective: Optional[float]
    residual_eq: float
    worst_block_violation: float
    duality_gap: Optional[float]
    solver: str
    solver_status: str
    iterations: int
    solve_time: float
    message: str = ""
    program_hash: str = ""

    @property
    def ok(self) -> bool:
        return self.status in ("optimal", "near-optimal")


class ClarabelBackend:
    name = "clarabel"

    def solve(self, cf: ConicForm, opts: SolveOptions):
        import clarabel
        from scipy import sparse

        rows = [cf.A_eq]
        rhs = [cf.b_eq]
        cones = [clarabel.ZeroConeT(cf.A_eq.shape[0])] if cf.A_eq.shape[0] else []
        for G, h, size, _ in cf.blocks:
            rows.append(-G)
            rhs.append(h)
            cones.append(clarabel.PSDTriangleConeT(size))
        A = sparse.csc_matrix(np.vstack(rows)) if rows else sparse.csc_matrix((0, cf.n_vars))
        b = np.concatenate(rhs) if rhs else np.zeros(0)
        settings = clarabel.DefaultSettings()
        settings.verbose = opts.verbose
        settings.max_iter = opts.max_iter
        settings.tol_feas = opts.tol
        settings.tol_gap_abs = opts.tol
        settings.tol_gap_rel = opts.tol
        solver = clarabel.DefaultSolver(
            sparse.csc_matrix((cf.n_vars, cf.n_vars)), cf.c, A, b, cones, settings
        )
        sol = solver.solve()
        status = str(sol.status)
        mapping = {
            "Solved": "optimal",
            "AlmostSolved": "near-optimal",
            "PrimalInfeasible": "infeasible",
            "AlmostPrimalInfeasible": "infeasible",
            "DualInfeasible": "numerical-failure",
            "AlmostDualInfeasible": "numerical-failure",
        }
        out = mapping.get(status, "numerical-failure")
        z = np.asarray(sol.x) if out in ("optimal", "near-optimal") else None
        info = {
            "solver_status": status,
            "iterations": int(sol.iterations),
            "gap": None,
            "message": "unbounded objective (dual infeasible)" if "Dual" in status else "",
        }
        return out, z, info


class CvxoptBackend:
    """conelp backend; presolves redundancies that conelp cannot tolerate."""

    name = "cvxopt"

    def solve(self, cf: ConicForm, opts: SolveOptions):
        from cvxopt import matrix as cvxmat
        from cvxopt import solvers

        n = cf.n_vars
        A_eq, b_eq, status = _independent_rows(cf.A_eq, cf.b_eq)
        if status == "inconsistent":
            return "infeasible", None, {"solver_status": "presolve", "iterations": 0,
                                        "gap": None, "message": "inconsistent equalities"}

        Gs, hs = [], []
        for G, h, size, _ in cf.blocks:
            Gf = np.zeros((size * size, n))
            hf = np.zeros(size * size)
            for k in range(G.shape[0]):
                M = smat(np.eye(svec_dim(size))[k], size)
                Gf += np.outer(M.reshape(-1, order="F"), -G[k])
                hf += M.reshape(-1, order="F") * h[k]
            Gs.append(Gf)
            hs.append(hf)
        Gcat = np.vstack(Gs) if Gs else np.zeros((0, n))
        hcat = np.concatenate(hs) if hs else np.zeros(0)

        # pin directions no constraint sees, otherwise conelp rejects the data
        stack = np.vstack([A_eq, Gcat]) if A_eq.size or Gcat.size else np.zeros((0, n))
        if stack.shape[0] < n or np.linalg.matrix_rank(stack) < n:
            from scipy.linalg import null_space

            N = null_space(stack) if stack.size else np.eye(n)
            if N.shape[1]:
                A_eq = np.vstack([A_eq, N.T])
                b_eq = np.concatenate([b_eq, np.zeros(N.shape[1])])

        solvers.options["show_progress"] = opts.verbose
        solvers.options["maxiters"] = opts.max_iter
        try:
            sol = solvers.conelp(
                cvxmat(cf.c),
                cvxmat(Gcat),
                cvxmat(hcat),
                dims={"l": 0, "q": [], "s": [size for _, _, size, _ in cf.blocks]},
                A=cvxmat(A_eq),
                b=cvxmat(b_eq),
            )
        except Exception as exc:  # conelp raises on pathological data
            return "numerical-failure", None, {"solver_status": "exception", "iterations": 0,
                                               "gap": None, "message": str(exc)}
        status = sol["status"]
        mapping = {"optimal": "optimal", "primal infeasible": "infeasible",
                   "dual infeasible": "numerical-failure", "unknown": "near-optimal"}
        out = mapping.get(status, "numerical-failure")
        z = np.asarray(sol["x"]).ravel() if sol["x"] is not None and out != "infeasible" else None
        if out == "near-optimal" and z is None:
            out = "numerical-failure"
        info = {"solver_status": status, "iterations": int(sol.get("iterations", 0)),
                "gap": sol.get("gap"), "message": ""}
        return out, z, info


def _independent_rows(A: np.ndarray, b: np.ndarray):
    """Drop linearly dependent equality rows; flag inconsistency."""
    if A.shape[0] == 0:
        return A, b, "ok"
    Ab = np.hstack([A, b[:, None]])
    keep = []
    basis: List[np.ndarray] = []
    for i in range(A.shape[0]):
        v = A[i].copy()
        for u in basis:
            v -= (u @ A[i]) * u
        if np.linalg.norm(v) > 1e-10 * max(1.0, np.linalg.norm(A[i])):
            basis.append(v / np.linalg.norm(v))
            keep.append(i)
        else:
            # dependent row: check b is consistent with the kept rows
            coeffs, *_ = np.linalg.lstsq(A[keep].T, A[i], rcond=None)
            if abs(coeffs @ b[keep] - b[i]) > 1e-8 * max(1.0, abs(b[i])):
                return A, b, "inconsistent"
    return A[keep], b[keep], "ok"


_BACKENDS = {"clarabel": ClarabelBackend, "cvxopt": CvxoptBackend}
AUTO_CHAIN = ("clarabel", "cvxopt")


def get_backend(name: str):
    try:
        return _BACKENDS[name]()
    except KeyError:
        raise LmiError(f"unknown solver {name!r}; available: {sorted(_BACKENDS)} or 'auto'") from None


def _solve_auto(cf: ConicForm, opts: SolveOptions):
    """Try the chain in order; keep the first clean solve, else the most
    definitive verdict (an infeasibility certificate beats a numerical
    failure)."""
    fallback = None
    for name in AUTO_CHAIN:
        backend = get_backend(name)
        status, z, info = backend.solve(cf, opts)
        if status in ("optimal", "near-optimal"):
            return backend.name, status, z, info
        if fallback is None or (status == "infeasible" and fallback[1] != "infeasible"):
            fallback = (backend.name, status, z, info)
    return fallback


def solve(program: LmiProgram, opts: Optional[SolveOptions] = None) -> SolverReport:
    """Lower, solve, recover matrix variables, and re-validate every constraint."""
    opts = opts or SolveOptions()
    cf = lower_to_conic(program)
    t0 = time.perf_counter()
    if opts.solver == "auto":
        used, status, z, info = _solve_auto(cf, opts)
    else:
        backend = get_backend(opts.solver)
        used = backend.name
        status, z, info = backend.solve(cf, opts)
    dt = time.perf_counter() - t0

    values: Dict[str, np.ndarray] = {}
    objective = None
    res_eq = 0.0
    worst = 0.0
    if z is not None:
        values = cf.unpack(z)
        objective = float(cf.c @ z) * (-1.0 if cf.maximize else 1.0) + cf.obj_offset
        for expr, _ in program.equalities:
            R = expr.eval(values)
            if R.size:
                res_eq = max(res_eq, float(np.max(np.abs(R))))
        for expr, _ in program.psd_blocks:
            M = expr.eval(values)
            lam = float(np.linalg.eigvalsh(0.5 * (M + M.T))[0])
            worst = max(worst, max(0.0, -lam))
        if status == "optimal" and (res_eq > opts.violation_tol or worst > opts.violation_tol):
            status = "near-optimal"
    return SolverReport(
        status=status,
        values=values,
        objective=objective,
        residual_eq=res_eq,
        worst_block_violation=worst,
        duality_gap=info.get("gap"),
        solver=used,
        solver_status=info.get("solver_status", ""),
        iterations=info.get("iterations", 0),
        solve_time=dt,
        message=info.get("message", ""),
        program_hash=cf.digest(),
    )


# ---------------------------------------------------------------------------
# SDPA sparse export (for cross-checking with external solvers)
# ---------------------------------------------------------------------------


def export_sdpa(cf: ConicForm, path) -> None:
    """Write the conic form in sparse SDPA (.dat-s) format.

    Equalities are encoded as an LP block holding both signs of A z - b.
    SDPA's standard primal is max -c'x over smat blocks, matching our
    'minimize c'z subject to blocks(z) PSD' after sign conventions.
    """
    n_eq = cf.A_eq.shape[0]
    structs = [s for _, _, s, _ in cf.blocks]
    if n_eq:
        structs.append(-2 * n_eq)
    lines = [f"{cf.n_vars}", f"{len(structs)}", " ".join(str(s) for s in structs)]
    lines.append(" ".join(repr(float(v)) for v in cf.c))
    entries = []

    def emit(matno, blkno, M_diag_or_full, diag):
        if diag:
            for i, v in enumerate(M_diag_or_full):
                if v != 0.0:
                    entries.append(f"{matno} {blkno} {i + 1} {i + 1} {v!r}")
        else:
            M = M_diag_or_full
            for i in range(M.shape[0]):
                for j in range(i, M.shape[1]):
                    if M[i, j] != 0.0:
                        entries.append(f"{matno} {blkno} {i + 1} {j + 1} {M[i, j]!r}")

    for bi, (G, h, size, _) in enumerate(cf.blocks, start=1):
        emit(0, bi, -smat(h, size), diag=False)  # F0 = -h in SDPA's X = sum x_i F_i - F0
        for k in range(cf.n_vars):
            col = G[:, k]
            if np.any(col):
                emit(k + 1, bi, smat(col, size), diag=False)
    if n_eq:
        blk = len(structs)
        emit(0, blk, np.concatenate([cf.b_eq, -cf.b_eq]), diag=True)
        for k in range(cf.n_vars):
            col = cf.A_eq[:, k]
            if np.any(col):
                emit(k + 1, blk, np.concatenate([col, -col]), diag=True)
    with open(path, "w") as fh:
        fh.write("\n".join(lines + entries) + "\n")
