"""Controller synthesis programs: from data matrices to gains with metrics.

Every operation here builds a semidefinite program over the decision
variables (P, Y1, G2, ...) tied together by the data-consistency equalities
Z0 Y1 = [P; 0] and Z0 G2 = [0; I], solves it, and reconstructs the gain
K = U0 [Y1 P^-1, G2] together with the closed-loop representation
M = X1 G1, N = X1 G2.  After solving, the consistency equalities are
re-projected exactly and the contraction margin is re-certified by plain
linear algebra on the recovered matrices, so every reported (P, alpha, beta)
is backed by the numbers actually handed to simulation and certification.
"""

from __future__ import annotations

import json
import warnings as _warnings
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np

from ddcontrol.datamat import AnnihilatorW, DataMatrices, ExtendedDataMatrices
from ddcontrol.dictionary import BoxSet, Dictionary, JacobianBound
from ddcontrol.lmi import (
    LmiProgram,
    SolveOptions,
    SolverReport,
    block,
    const,
    scal_expr,
    solve,
    symm,
    trace_expr,
)

__all__ = [
    "SynthesisError",
    "SynthOptions",
    "NoiseModel",
    "SynthesisResult",
    "synth_contractive",
    "synth_general_nonlin",
    "synth_monotone",
    "synth_convex_hull",
    "synth_taylor_baseline",
    "synth_min_nonlinearity",
    "synth_taylor_remainder",
    "synth_extended",
    "synth_noisy",
    "synth_remainder",
    "synth_known_freq",
    "synth_integral",
]


class SynthesisError(ValueError):
    """Raised for malformed synthesis inputs (not for infeasibility)."""


@dataclass
class SynthOptions:
    """Knobs shared by all synthesis modes.

    The default solves feasibility with alpha fixed; the interior-point
    analytic center then lands well inside the feasible set, which keeps
    gain magnitudes moderate and typically certifies a much larger margin
    than the one requested.  margin=True instead maximizes alpha under the
    normalizations trace(P) <= nP * p_max and P >= p_floor * I (without
    them the optimum runs off along a scaling direction, producing extreme
    high-gain controllers).  Strict inequalities are realized with the
    eps_strict floor.
    """

    margin: bool = False
    alpha: float = 1e-3
    p_max: float = 100.0
    p_floor: float = 1e-2
    eps_strict: float = 1e-6
    mu_floor: float = 1e-8
    fixed_objective: str = "none"  # "none" | "min_trace_p" (margin=False only)
    solver: str = "auto"
    max_iter: int = 200
    solver_tol: float = 1e-9
    violation_tol: float = 1e-7
    refine: bool = True
    diagnose: bool = True

    def solve_options(self) -> SolveOptions:
        return SolveOptions(
            solver=self.solver,
            max_iter=self.max_iter,
            tol=self.solver_tol,
            violation_tol=self.violation_tol,
        )


@dataclass
class NoiseModel:
    """Quadratic disturbance-sample bound D0 D0^T <= Delta Delta^T.

    E (n x q) marks which dynamics the disturbance enters; identity when
    omitted.  ``pointwise`` builds the bound implied by |d(t)| <= delta over
    T samples.
    """

    Delta: np.ndarray
    E: Optional[np.ndarray] = None

    def __post_init__(self):
        self.Delta = np.atleast_2d(np.asarray(self.Delta, dtype=float))

    @staticmethod
    def pointwise(delta: float, T: int, q: int, E: Optional[np.ndarray] = None) -> "NoiseModel":
        return NoiseModel(delta * np.sqrt(T) * np.eye(q), E)

    @property
    def q(self) -> int:
        return self.Delta.shape[0]

    def effective_E(self, n: int) -> np.ndarray:
        if self.E is None:
            if self.q != n:
                raise SynthesisError(f"NoiseModel needs E: n x q with q={self.q}, n={n}")
            return np.eye(n)
        E = np.atleast_2d(np.asarray(self.E, dtype=float))
        if E.shape != (n, self.q):
            raise SynthesisError(f"E has shape {E.shape}, expected {(n, self.q)}")
        return E


@dataclass
class SynthesisResult:
    """A synthesized controller with its metric and certified margin.

    alpha is the post-hoc certified margin of the recovered matrices (the
    largest a with the mode's block LMI still negative semidefinite), and
    beta = alpha * lambda_min(P^-1) is the contraction rate except in hull
    mode, where the assigned rate enters the program directly and beta is
    certified as that rate.
    """

    mode: str
    feasible: bool
    K: Optional[np.ndarray] = None
    P: Optional[np.ndarray] = None
    alpha: float = 0.0
    alpha_solver: float = 0.0
    beta: float = 0.0
    Y1: Optional[np.ndarray] = None
    G1: Optional[np.ndarray] = None
    G2: Optional[np.ndarray] = None
    M: Optional[np.ndarray] = None
    N: Optional[np.ndarray] = None
    mu: Optional[float] = None
    objective_value: Optional[float] = None
    report: Optional[SolverReport] = None
    dims: dict = field(default_factory=dict)
    warnings: list = field(default_factory=list)
    diagnosis: Optional[str] = None

    @property
    def G(self) -> Optional[np.ndarray]:
        if self.G1 is None:
            return None
        if self.G2 is None or self.G2.shape[1] == 0:
            return self.G1
        return np.hstack([self.G1, self.G2])

    @property
    def P_inv(self) -> np.ndarray:
        return np.linalg.inv(self.P)

    @property
    def condition_factor(self) -> float:
        """c = (lambda_max(P^-1)/lambda_min(P^-1))^(1/2), the overshoot factor."""
        ev = np.linalg.eigvalsh(self.P_inv)
        return float(np.sqrt(ev[-1] / ev[0]))

    def to_json_dict(self) -> dict:
        def arr(a):
            return None if a is None else np.asarray(a).tolist()

        return {
            "mode": self.mode,
            "feasible": self.feasible,
            "K": arr(self.K),
            "P": arr(self.P),
            "alpha": self.alpha,
            "alpha_solver": self.alpha_solver,
            "beta": self.beta,
            "mu": self.mu,
            "objective_value": self.objective_value,
            "Y1": arr(self.Y1),
            "G1": arr(self.G1),
            "G2": arr(self.G2),
            "M": arr(self.M),
            "N": arr(self.N),
            "dims": self.dims,
            "warnings": self.warnings,
            "diagnosis": self.diagnosis,
            "solver": None if self.report is None else self.report.solver,
            "solver_status": None if self.report is None else self.report.solver_status,
            "residual_eq": None if self.report is None else self.report.residual_eq,
            "block_violation": None if self.report is None else self.report.worst_block_violation,
            "program_hash": None if self.report is None else self.report.program_hash,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_json_dict(), indent=2, sort_keys=True)

    @staticmethod
    def from_json_dict(d: dict) -> "SynthesisResult":
        def arr(key):
            v = d.get(key)
            return None if v is None else np.asarray(v, dtype=float)

        return SynthesisResult(
            mode=d["mode"],
            feasible=bool(d["feasible"]),
            K=arr("K"),
            P=arr("P"),
            alpha=float(d.get("alpha", 0.0)),
            alpha_solver=float(d.get("alpha_solver", 0.0)),
            beta=float(d.get("beta", 0.0)),
            Y1=arr("Y1"),
            G1=arr("G1"),
            G2=arr("G2"),
            M=arr("M"),
            N=arr("N"),
            mu=d.get("mu"),
            objective_value=d.get("objective_value"),
            dims=d.get("dims", {}),
            warnings=list(d.get("warnings", [])),
            diagnosis=d.get("diagnosis"),
        )


# ---------------------------------------------------------------------------
# Shared construction pieces
# ---------------------------------------------------------------------------


def _start_program(name: str, T: int, nP: int, k: int, opts: SynthOptions):
    """Variables and strictness/normalization constraints common to all modes."""
    p = LmiProgram(name)
    P = p.sym_var("P", nP)
    Y1 = p.var("Y1", T, nP)
    G2 = p.var("G2", T, k) if k > 0 else None
    floor = max(opts.p_floor, opts.eps_strict) if opts.margin else opts.eps_strict
    p.add_psd(P.expr() - floor * np.eye(nP), "strict")
    if opts.margin:
        alpha = p.scalar_var("alpha")
        p.add_psd(alpha.expr() - opts.eps_strict, "strict")
        p.add_psd(const([[nP * opts.p_max]]) - trace_expr(P.expr()), "strict")
        p.set_objective("max", alpha.expr())
        alpha_I = scal_expr(alpha, np.eye(nP))
    else:
        alpha = None
        alpha_I = const(opts.alpha * np.eye(nP))
        if opts.fixed_objective == "min_trace_p":
            p.set_objective("min", trace_expr(P.expr()))
    return p, P, Y1, G2, alpha, alpha_I


def _add_consistency(p: LmiProgram, Z0: np.ndarray, P, Y1, G2) -> None:
    sP = Z0.shape[0]
    nP = P.rows
    k = sP - nP
    rhs_top = block([[P.expr()], [const(np.zeros((k, nP)))]]) if k > 0 else P.expr()
    p.add_eq(const(Z0) @ Y1.expr() - rhs_top, "consistency")
    if k > 0:
        rhs = np.vstack([np.zeros((nP, k)), np.eye(k)])
        p.add_eq(const(Z0) @ G2.expr() - rhs, "consistency")


def _add_annihilator(p: LmiProgram, W: np.ndarray, Y1, G2) -> None:
    p.add_eq(const(W) @ Y1.expr(), "annihilator")
    if G2 is not None:
        p.add_eq(const(W) @ G2.expr(), "annihilator")


def _zeros(r: int, c: int):
    return const(np.zeros((r, c)))


def _theorem1_block(X1, Y1, G2, P, RQ, alpha_I):
    """The 3x3 contraction block; G2/RQ borders drop out when empty."""
    nP = X1.shape[0]
    k = 0 if G2 is None else G2.cols
    tau = RQ.shape[1]
    R11 = symm(const(X1) @ Y1.expr()) + alpha_I
    rows = [[R11]]
    if k > 0:
        R21 = (const(X1) @ G2.expr()).T
        rows = [[R11, R21.T], [R21, const(-np.eye(k))]]
    if tau > 0:
        R31 = const(RQ.T) @ P.expr()
        if k > 0:
            rows = [
                [rows[0][0], rows[0][1], R31.T],
                [rows[1][0], rows[1][1], _zeros(k, tau)],
                [R31, _zeros(tau, k), const(-np.eye(tau))],
            ]
        else:
            rows = [[R11, R31.T], [R31, const(-np.eye(tau))]]
    return block(rows) if len(rows) > 1 or len(rows[0]) > 1 else rows[0][0]


def _np_theorem1_block(X1, Y1, G2, P, RQ, a):
    nP = X1.shape[0]
    S11 = X1 @ Y1 + (X1 @ Y1).T + a * np.eye(nP)
    parts = [[S11]]
    k = 0 if G2 is None else G2.shape[1]
    tau = RQ.shape[1]
    if k > 0:
        B21 = (X1 @ G2).T
        parts = [[S11, B21.T], [B21, -np.eye(k)]]
    if tau > 0:
        B31 = RQ.T @ P
        if k > 0:
            parts = [
                [parts[0][0], parts[0][1], B31.T],
                [parts[1][0], parts[1][1], np.zeros((k, tau))],
                [B31, np.zeros((tau, k)), -np.eye(tau)],
            ]
        else:
            parts = [[S11, B31.T], [B31, -np.eye(tau)]]
    return np.block(parts)


def _certified_margin(assemble: Callable[[float], np.ndarray], hint: float) -> float:
    """Largest a >= 0 with lambda_max(assemble(a)) <= 0, by bisection."""

    def lammax(a):
        M = assemble(a)
        return float(np.linalg.eigvalsh(0.5 * (M + M.T))[-1])

    if lammax(0.0) > 0.0:
        return 0.0
    hi = max(2.0 * abs(hint), 1e-6)
    for _ in range(80):
        if lammax(hi) > 0.0:
            break
        hi *= 2.0
        if hi > 1e12:
            return hi
    lo = 0.0
    for _ in range(70):
        mid = 0.5 * (lo + hi)
        if lammax(mid) <= 0.0:
            lo = mid
        else:
            hi = mid
    return lo


def _refine(values: Dict[str, np.ndarray], Z0: np.ndarray, nP: int, extra_rows=None):
    """Project (Y1, G2) exactly onto the consistency equalities.

    Returns (P, Y1, G2) with Z0 Y1 = [P; 0], Z0 G2 = [0; I] (and the extra
    annihilator rows zeroed) to machine precision; skipped when the stacked
    consistency matrix is row-rank deficient.
    """
    sP, T = Z0.shape
    k = sP - nP
    Y1 = np.asarray(values["Y1"], dtype=float)
    G2 = np.asarray(values.get("G2", np.zeros((T, 0))), dtype=float)
    C = Z0 if extra_rows is None else np.vstack([Z0, extra_rows])
    if np.linalg.matrix_rank(C, tol=1e-10 * max(1.0, np.linalg.norm(C))) < C.shape[0]:
        P = 0.5 * ((Z0 @ Y1)[:nP] + (Z0 @ Y1)[:nP].T)
        return P, Y1, G2, False
    P = 0.5 * ((Z0 @ Y1)[:nP] + (Z0 @ Y1)[:nP].T)
    Cp = np.linalg.pinv(C)
    rhs_Y = np.vstack([P, np.zeros((k, nP))])
    if extra_rows is not None:
        rhs_Y = np.vstack([rhs_Y, np.zeros((extra_rows.shape[0], nP))])
    Y1 = Y1 - Cp @ (C @ Y1 - rhs_Y)
    if k > 0:
        rhs_G = np.vstack([np.zeros((nP, k)), np.eye(k)])
        if extra_rows is not None:
            rhs_G = np.vstack([rhs_G, np.zeros((extra_rows.shape[0], k))])
        G2 = G2 - Cp @ (C @ G2 - rhs_G)
    return P, Y1, G2, True


def _diagnose(program: LmiProgram, opts: SynthOptions, extra: str = "") -> str:
    """Staged relaxation: is it the contraction LMI or the equalities?"""
    sub = program.subprogram({"strict", "consistency", "annihilator"})
    r = solve(sub, opts.solve_options())
    if r.ok:
        msg = "contraction LMI is the failing family (consistency equalities alone are feasible)"
    else:
        msg = "data-consistency equalities are infeasible (rank(Z0) below full row rank is the usual cause)"
    return msg + extra


def _finalize(
    mode: str,
    program: LmiProgram,
    report: SolverReport,
    opts: SynthOptions,
    X1: np.ndarray,
    Z0: np.ndarray,
    U0: np.ndarray,
    assemble: Callable[[Dict[str, np.ndarray], float], np.ndarray],
    extra_rows: Optional[np.ndarray] = None,
    gain: str = "full",
    rate: str = "alpha",
    extra_warnings: Sequence[str] = (),
    diagnosis_note: str = "",
) -> SynthesisResult:
    nP = X1.shape[0]
    sP = Z0.shape[0]
    dims = {"n": nP, "s": sP, "T": Z0.shape[1], "m": U0.shape[0]}
    if not report.ok:
        if report.status == "infeasible" and opts.diagnose:
            diag = _diagnose(program, opts, diagnosis_note)
        else:
            diag = f"solver reported {report.status}: {report.message or report.solver_status}"
        return SynthesisResult(
            mode=mode,
            feasible=False,
            report=report,
            dims=dims,
            diagnosis=diag,
            warnings=list(extra_warnings),
        )

    values = dict(report.values)
    warnings = list(extra_warnings)
    if opts.refine:
        P, Y1, G2, refined = _refine(values, Z0, nP, extra_rows)
        if not refined:
            warnings.append("consistency refinement skipped: stacked equality matrix is rank deficient")
    else:
        Y1 = values["Y1"]
        G2 = values.get("G2", np.zeros((Z0.shape[1], 0)))
        P = 0.5 * ((Z0 @ Y1)[:nP] + (Z0 @ Y1)[:nP].T)
    values["Y1"], values["G2"], values["P"] = Y1, G2, P

    ev = np.linalg.eigvalsh(P)
    if ev[0] <= 0:
        return SynthesisResult(
            mode=mode, feasible=False, report=report, dims=dims,
            diagnosis="recovered P is not positive definite", warnings=warnings,
        )
    G1 = np.linalg.solve(P.T, Y1.T).T
    M = X1 @ G1
    N = X1 @ G2 if G2.shape[1] else np.zeros((nP, 0))
    if gain == "full":
        K = U0 @ np.hstack([G1, G2]) if G2.shape[1] else U0 @ G1
    else:  # linear part only (first-order designs)
        K = U0 @ G1

    alpha_solver = float(values.get("alpha", opts.alpha if not opts.margin else 0.0))
    mu = float(values["mu"]) if "mu" in values else None
    cert = _certified_margin(lambda a: assemble(values, a), alpha_solver or opts.alpha)
    lam_min_Pinv = float(1.0 / ev[-1])
    if rate == "alpha":
        beta = cert * lam_min_Pinv
    else:  # hull mode: the certified quantity multiplies P directly
        beta = cert
    if cert <= 0.0:
        warnings.append("certified margin is zero after refinement; treat the design as marginal")

    return SynthesisResult(
        mode=mode,
        feasible=True,
        K=K,
        P=P,
        alpha=cert,
        alpha_solver=alpha_solver,
        beta=beta,
        Y1=Y1,
        G1=G1,
        G2=G2,
        M=M,
        N=N,
        mu=mu,
        objective_value=report.objective,
        report=report,
        dims=dims,
        warnings=warnings,
    )


def _check_rank(dm, warnings: list) -> None:
    if dm.warnings:
        for w in dm.warnings:
            warnings.append(w)
            _warnings.warn(w, stacklevel=3)


def _bound_matrix(bound, nP: int) -> np.ndarray:
    if isinstance(bound, JacobianBound):
        R = bound.R
    else:
        R = np.atleast_2d(np.asarray(bound, dtype=float))
    if R.shape[0] != nP:
        raise SynthesisError(f"growth bound has {R.shape[0]} rows, expected {nP}")
    return R


# ---------------------------------------------------------------------------
# Theorem-1 family (noise free): plain, extended, annihilator, integral
# ---------------------------------------------------------------------------


def _synth_theorem1(
    mode: str,
    X1: np.ndarray,
    Z0: np.ndarray,
    U0: np.ndarray,
    RQ: np.ndarray,
    opts: SynthOptions,
    annihilator_rows: Optional[np.ndarray] = None,
    extra_warnings: Sequence[str] = (),
    diagnosis_note: str = "",
) -> SynthesisResult:
    nP, T = X1.shape
    sP = Z0.shape[0]
    k = sP - nP
    p, P, Y1, G2, alpha, alpha_I = _start_program(mode, T, nP, k, opts)
    _add_consistency(p, Z0, P, Y1, G2)
    if annihilator_rows is not None and annihilator_rows.size:
        _add_annihilator(p, annihilator_rows, Y1, G2)
    p.add_nsd(_theorem1_block(X1, Y1, G2, P, RQ, alpha_I), "lmi")
    report = solve(p, opts.solve_options())

    def assemble(values, a):
        return _np_theorem1_block(X1, values["Y1"], values.get("G2"), values["P"], RQ, a)

    return _finalize(
        mode, p, report, opts, X1, Z0, U0, assemble,
        extra_rows=annihilator_rows, extra_warnings=extra_warnings,
        diagnosis_note=diagnosis_note,
    )


def synth_contractive(dm: DataMatrices, bound: JacobianBound, opts: Optional[SynthOptions] = None) -> SynthesisResult:
    """Contractivity synthesis from exact data (the base program)."""
    opts = opts or SynthOptions()
    warnings: list = []
    _check_rank(dm, warnings)
    RQ = _bound_matrix(bound, dm.n)
    return _synth_theorem1("contractive", dm.X1, dm.Z0, dm.U0, RQ, opts, extra_warnings=warnings)


def synth_extended(edm: ExtendedDataMatrices, bound, opts: Optional[SynthOptions] = None) -> SynthesisResult:
    """Dynamic-feedback synthesis on the input-extended system xi = (x, u).

    The returned gain drives du/dt = K Zext(x, u).
    """
    if edm.mode != "input":
        raise SynthesisError("synth_extended needs input-extension data matrices")
    opts = opts or SynthOptions()
    warnings: list = []
    _check_rank(edm, warnings)
    RQ = _bound_matrix(bound, edm.n_state)
    return _synth_theorem1("extended", edm.Xi1, edm.Z0, edm.V0, RQ, opts, extra_warnings=warnings)


def synth_known_freq(
    dm: DataMatrices,
    bound: JacobianBound,
    W: AnnihilatorW,
    opts: Optional[SynthOptions] = None,
) -> SynthesisResult:
    """Exact-data program plus the annihilator equality W [Y1 G2] = 0.

    Valid when the data were collected under disturbances generated by
    constants and sinusoids at the known frequencies: the closed-loop
    representation X1 G is then exact regardless of their amplitude/phase.
    """
    opts = opts or SynthOptions()
    warnings: list = []
    _check_rank(dm, warnings)
    RQ = _bound_matrix(bound, dm.n)
    Wred = W.reduced()
    if Wred.shape[1] != dm.T:
        raise SynthesisError("annihilator was built for a different number of samples")
    note = " (the annihilator rows reduce the feasible set; fewer rejected frequencies make this easier)"
    return _synth_theorem1(
        "known-freq", dm.X1, dm.Z0, dm.U0, RQ, opts,
        annihilator_rows=Wred, extra_warnings=warnings, diagnosis_note=note,
    )


def synth_integral(
    edm: ExtendedDataMatrices,
    bound,
    opts: Optional[SynthOptions] = None,
) -> SynthesisResult:
    """Integral-control synthesis on the error-extended system (x, xi).

    ``bound`` may carry n rows (padded with zero rows for the integrator
    states, which never enter Q) or already n+p rows.  The all-ones
    annihilator row removes the unknown constant disturbance from the data.
    """
    if edm.mode != "integral":
        raise SynthesisError("synth_integral needs integral-mode data matrices")
    opts = opts or SynthOptions()
    warnings: list = []
    _check_rank(edm, warnings)
    nP = edm.n_state  # n + p
    p_out = edm.p
    R = _bound_matrix(bound, nP - p_out) if np.atleast_2d(
        bound.R if isinstance(bound, JacobianBound) else bound
    ).shape[0] == nP - p_out else _bound_matrix(bound, nP)
    if R.shape[0] == nP - p_out:
        R = np.vstack([R, np.zeros((p_out, R.shape[1]))])
    ones = np.ones((1, edm.T))
    Y0 = edm.Z1[-p_out:]
    note = ""
    if np.linalg.matrix_rank(Y0, tol=1e-8 * max(1.0, np.linalg.norm(Y0))) < p_out:
        note = (
            " (regulated-output samples are rank deficient: the output map C cannot have "
            "full row rank, which makes the regulation problem ill posed)"
        )
    return _synth_theorem1(
        "integral", edm.Z1, edm.Z0, edm.U0, R, opts,
        annihilator_rows=ones, extra_warnings=warnings, diagnosis_note=note,
    )


# ---------------------------------------------------------------------------
# Variants on the nonlinearity condition
# ---------------------------------------------------------------------------


def _psd_sqrt(W: np.ndarray, name: str) -> np.ndarray:
    W = 0.5 * (W + W.T)
    ev, V = np.linalg.eigh(W)
    if ev[0] < -1e-9 * max(1.0, abs(ev[-1])):
        raise SynthesisError(f"{name} must be positive semidefinite")
    return V @ np.diag(np.sqrt(np.clip(ev, 0.0, None))) @ V.T


def synth_general_nonlin(
    dm: DataMatrices,
    W: np.ndarray,
    R: np.ndarray,
    S: np.ndarray,
    opts: Optional[SynthOptions] = None,
) -> SynthesisResult:
    """Synthesis under the generalized quadratic Jacobian condition (W, R, S).

    The nonlinearity is assumed to satisfy
    dQ' R dQ + S dQ + dQ' S' <= W on the working set; W = RQ RQ', R = I,
    S = 0 recovers the base program.
    """
    opts = opts or SynthOptions()
    warnings: list = []
    _check_rank(dm, warnings)
    n, T, s = dm.n, dm.T, dm.s
    k = s - n
    if k == 0:
        raise SynthesisError("general-nonlinearity mode needs at least one library term")
    W = 0.5 * (np.atleast_2d(np.asarray(W, dtype=float)) + np.atleast_2d(np.asarray(W, dtype=float)).T)
    R = 0.5 * (np.atleast_2d(np.asarray(R, dtype=float)) + np.atleast_2d(np.asarray(R, dtype=float)).T)
    S = np.atleast_2d(np.asarray(S, dtype=float))
    if W.shape != (n, n) or R.shape != (k, k) or S.shape != (n, k):
        raise SynthesisError("W must be n x n, R k x k, S n x k (k = s - n)")
    if np.linalg.eigvalsh(R)[0] < -1e-9 * max(1.0, abs(np.linalg.eigvalsh(R)[-1])):
        raise SynthesisError("R must be positive semidefinite")
    Wh = _psd_sqrt(W, "W")

    p, P, Y1, G2, alpha, alpha_I = _start_program("general", T, n, k, opts)
    _add_consistency(p, dm.Z0, P, Y1, G2)
    R11 = symm(const(dm.X1) @ Y1.expr()) + alpha_I
    R21 = (const(dm.X1) @ G2.expr()).T - const(S.T) @ P.expr()
    R31 = const(Wh) @ P.expr()
    p.add_nsd(
        block(
            [
                [R11, R21.T, R31.T],
                [R21, const(-R), _zeros(k, n)],
                [R31, _zeros(n, k), const(-np.eye(n))],
            ]
        ),
        "lmi",
    )
    report = solve(p, opts.solve_options())

    def assemble(values, a):
        Y1v, G2v, Pv = values["Y1"], values["G2"], values["P"]
        B11 = dm.X1 @ Y1v + (dm.X1 @ Y1v).T + a * np.eye(n)
        B21 = (dm.X1 @ G2v).T - S.T @ Pv
        B31 = Wh @ Pv
        return np.block(
            [
                [B11, B21.T, B31.T],
                [B21, -R, np.zeros((k, n))],
                [B31, np.zeros((n, k)), -np.eye(n)],
            ]
        )

    return _finalize("general", p, report, opts, dm.X1, dm.Z0, dm.U0, assemble, extra_warnings=warnings)


def synth_monotone(
    dm: DataMatrices,
    S: np.ndarray,
    opts: Optional[SynthOptions] = None,
    check_set: Optional[BoxSet] = None,
    check_samples: int = 2000,
) -> SynthesisResult:
    """Monotone-nonlinearity synthesis: assign X1 G2 = P S.

    Requires S dQ + dQ' S' <= 0 on the working set, which the caller
    asserts; when ``check_set`` is given the condition is sampled and a
    violation emits a warning rather than an error (sampling proves
    nothing).  The linear part no longer needs to dominate the growth of Q.
    """
    opts = opts or SynthOptions()
    warnings: list = []
    _check_rank(dm, warnings)
    n, T, s = dm.n, dm.T, dm.s
    k = s - n
    if k == 0:
        raise SynthesisError("monotone mode needs at least one library term")
    S = np.atleast_2d(np.asarray(S, dtype=float))
    if S.shape != (n, k):
        raise SynthesisError(f"S must be n x k = {(n, k)}")
    if check_set is not None:
        rng = np.random.default_rng(0)
        box = check_set.truncate(5.0)
        X = rng.uniform(box.lo, box.hi, (check_samples, n))
        J = dm.dictionary.jac_Q(X)  # (N, k, n)
        Msym = S @ J + np.swapaxes(S @ J, -1, -2)
        worst = float(np.max(np.linalg.eigvalsh(Msym)))
        if worst > 1e-9:
            msg = f"sampled monotonicity check failed: max eig {worst:.3e} > 0"
            warnings.append(msg)
            _warnings.warn(msg, stacklevel=2)

    p, P, Y1, G2, alpha, alpha_I = _start_program("monotone", T, n, k, opts)
    _add_consistency(p, dm.Z0, P, Y1, G2)
    p.add_eq(const(dm.X1) @ G2.expr() - P.expr() @ const(S), "assignment")
    p.add_nsd(symm(const(dm.X1) @ Y1.expr()) + alpha_I, "lmi")
    report = solve(p, opts.solve_options())

    def assemble(values, a):
        Y1v = values["Y1"]
        return dm.X1 @ Y1v + (dm.X1 @ Y1v).T + a * np.eye(n)

    res = _finalize("monotone", p, report, opts, dm.X1, dm.Z0, dm.U0, assemble, extra_warnings=warnings)
    if res.feasible:
        resid = float(np.max(np.abs(dm.X1 @ res.G2 - res.P @ S)))
        if resid > opts.violation_tol * 10:
            res.warnings.append(f"assignment residual |X1 G2 - P S| = {resid:.2e}")
    return res


def synth_convex_hull(
    dm: DataMatrices,
    vertices: Sequence[np.ndarray],
    beta: float,
    opts: Optional[SynthOptions] = None,
) -> SynthesisResult:
    """Vertex synthesis when dQ/dx stays in the convex hull of given matrices.

    One bordered LMI per vertex replaces the single global growth-bound
    block; the assigned rate beta multiplies P in the (1,1) position, so the
    certified contraction rate is beta itself.
    """
    opts = opts or SynthOptions()
    warnings: list = []
    _check_rank(dm, warnings)
    n, T, s = dm.n, dm.T, dm.s
    k = s - n
    verts = [np.atleast_2d(np.asarray(Q, dtype=float)) for Q in vertices]
    if len(verts) < 1:
        raise SynthesisError("need at least one vertex")
    for Q in verts:
        if Q.shape != (k, n):
            raise SynthesisError(f"vertex has shape {Q.shape}, expected {(k, n)}")

    local = SynthOptions(**{**opts.__dict__, "margin": False})
    p, P, Y1, G2, _, _ = _start_program("hull", T, n, k, local)
    _add_consistency(p, dm.Z0, P, Y1, G2)
    for idx, Q in enumerate(verts):
        R11 = symm(const(dm.X1) @ Y1.expr()) + float(beta) * P.expr()
        if k > 0:
            R21 = (const(dm.X1) @ G2.expr()).T
            R31 = const(Q) @ P.expr()
            lmi = block(
                [
                    [R11, R21.T, R31.T],
                    [R21, const(-np.eye(k)), _zeros(k, k)],
                    [R31, _zeros(k, k), const(-np.eye(k))],
                ]
            )
        else:
            lmi = R11
        p.add_nsd(lmi, "lmi")
    report = solve(p, local.solve_options())

    def assemble(values, b):
        Y1v, G2v, Pv = values["Y1"], values["G2"], values["P"]
        worst = None
        for Q in verts:
            B11 = dm.X1 @ Y1v + (dm.X1 @ Y1v).T + b * Pv
            if k > 0:
                B21 = (dm.X1 @ G2v).T
                B31 = Q @ Pv
                Bm = np.block(
                    [
                        [B11, B21.T, B31.T],
                        [B21, -np.eye(k), np.zeros((k, k))],
                        [B31, np.zeros((k, k)), -np.eye(k)],
                    ]
                )
            else:
                Bm = B11
            lam = np.linalg.eigvalsh(0.5 * (Bm + Bm.T))[-1]
            worst = lam if worst is None else max(worst, lam)
        # return a 1x1 stand-in whose top eigenvalue is the worst vertex value
        return np.array([[worst]])

    res = _finalize(
        "hull", p, report, opts, dm.X1, dm.Z0, dm.U0, assemble, rate="hull", extra_warnings=warnings
    )
    return res


# ---------------------------------------------------------------------------
# First-order baselines
# ---------------------------------------------------------------------------


def synth_taylor_baseline(dm: DataMatrices, opts: Optional[SynthOptions] = None) -> SynthesisResult:
    """Local stabilization of the origin: stabilize the linear data part only.

    Milder than the contraction program (no growth-bound border); the gain
    K = U0 Y1 P^-1 feeds back the state alone and the guarantee is local.
    """
    opts = opts or SynthOptions()
    warnings: list = []
    _check_rank(dm, warnings)
    n, T, s = dm.n, dm.T, dm.s
    p, P, Y1, G2, alpha, alpha_I = _start_program("taylor", T, n, s - n, opts)
    _add_consistency(p, dm.Z0, P, Y1, G2)
    p.add_nsd(symm(const(dm.X1) @ Y1.expr()) + alpha_I, "lmi")
    report = solve(p, opts.solve_options())

    def assemble(values, a):
        Y1v = values["Y1"]
        return dm.X1 @ Y1v + (dm.X1 @ Y1v).T + a * np.eye(n)

    res = _finalize("taylor", p, report, opts, dm.X1, dm.Z0, dm.U0, assemble, gain="linear", extra_warnings=warnings)
    res.N = None  # the closed-loop nonlinear block is not identified by this design
    return res


def synth_min_nonlinearity(dm: DataMatrices, opts: Optional[SynthOptions] = None) -> SynthesisResult:
    """Stabilize the linear part while minimizing the residual nonlinearity.

    Minimizes the spectral norm of X1 G2 (epigraph block) under the
    first-order constraints; a zero optimum means the controller cancels
    the nonlinearity exactly and the closed loop is linear and globally
    contractive.
    """
    opts = opts or SynthOptions(margin=False)
    local = SynthOptions(**{**opts.__dict__, "margin": False})
    warnings: list = []
    _check_rank(dm, warnings)
    n, T, s = dm.n, dm.T, dm.s
    k = s - n
    p, P, Y1, G2, _, alpha_I = _start_program("min-nonlin", T, n, k, local)
    _add_consistency(p, dm.Z0, P, Y1, G2)
    p.add_nsd(symm(const(dm.X1) @ Y1.expr()) + alpha_I, "lmi")
    t = p.scalar_var("t")
    p.add_psd(t.expr(), "strict")
    if k > 0:
        X1G2 = const(dm.X1) @ G2.expr()
        p.add_psd(
            block([[scal_expr(t, np.eye(n)), X1G2], [X1G2.T, scal_expr(t, np.eye(k))]]),
            "epigraph",
        )
    p.set_objective("min", t.expr())
    report = solve(p, local.solve_options())

    def assemble(values, a):
        Y1v = values["Y1"]
        return dm.X1 @ Y1v + (dm.X1 @ Y1v).T + a * np.eye(n)

    res = _finalize("min-nonlin", p, report, opts, dm.X1, dm.Z0, dm.U0, assemble, extra_warnings=warnings)
    if res.feasible:
        norm = float(np.linalg.norm(dm.X1 @ res.G2, 2)) if k > 0 else 0.0
        res.objective_value = norm
        res.dims["exact_cancellation"] = bool(norm <= 1e-6)
    return res


def synth_taylor_remainder(
    dm_shifted: DataMatrices,
    Delta: np.ndarray,
    opts: Optional[SynthOptions] = None,
) -> SynthesisResult:
    """First-order design robust to the linearization remainder.

    Expects matrices built from samples shifted around a known equilibrium;
    the remainder samples are assumed to satisfy R0 R0' <= Delta Delta'.
    The gain K = U0 Y1 P^-1 acts on the shifted state.
    """
    opts = opts or SynthOptions()
    warnings: list = []
    _check_rank(dm_shifted, warnings)
    n, T, s = dm_shifted.n, dm_shifted.T, dm_shifted.s
    Delta = np.atleast_2d(np.asarray(Delta, dtype=float))
    if Delta.shape[0] != n:
        raise SynthesisError(f"Delta must have n={n} rows")
    DD = Delta @ Delta.T
    X1 = dm_shifted.X1

    p, P, Y1, G2, alpha, alpha_I = _start_program("taylor-remainder", T, n, s - n, opts)
    _add_consistency(p, dm_shifted.Z0, P, Y1, G2)
    mu = p.scalar_var("mu")
    p.add_psd(mu.expr() - opts.mu_floor, "strict")
    R11 = symm(const(X1) @ Y1.expr()) + alpha_I + scal_expr(mu, DD)
    lmi = block([[R11, Y1.expr().T], [Y1.expr(), scal_expr(mu, -np.eye(T))]])
    p.add_nsd(lmi, "lmi")
    report = solve(p, opts.solve_options())

    def assemble(values, a):
        Y1v, muv = values["Y1"], float(values["mu"])
        B11 = X1 @ Y1v + (X1 @ Y1v).T + a * np.eye(n) + muv * DD
        return np.block([[B11, Y1v.T], [Y1v, -muv * np.eye(T)]])

    res = _finalize(
        "taylor-remainder", p, report, opts, X1, dm_shifted.Z0, dm_shifted.U0,
        assemble, gain="linear", extra_warnings=warnings,
    )
    res.N = None
    return res


# ---------------------------------------------------------------------------
# Perturbed data: quadratic noise bounds and unmodeled remainders
# ---------------------------------------------------------------------------


def synth_noisy(
    dm: DataMatrices,
    bound: JacobianBound,
    noise: NoiseModel,
    opts: Optional[SynthOptions] = None,
) -> SynthesisResult:
    """Contractivity from data perturbed by a disturbance through E.

    The matrix-uncertainty multiplier mu removes the unknown sample matrix
    D0 (bounded by D0 D0' <= Delta Delta') from the design; the resulting
    loop is contractive for every admissible D, not just the realized one.
    """
    opts = opts or SynthOptions()
    warnings: list = []
    _check_rank(dm, warnings)
    n, T, s = dm.n, dm.T, dm.s
    k = s - n
    RQ = _bound_matrix(bound, n)
    tau = RQ.shape[1]
    E = noise.effective_E(n)
    EDD = E @ noise.Delta @ noise.Delta.T @ E.T
    X1 = dm.X1

    p, P, Y1, G2, alpha, alpha_I = _start_program("noisy", T, n, k, opts)
    _add_consistency(p, dm.Z0, P, Y1, G2)
    mu = p.scalar_var("mu")
    p.add_psd(mu.expr() - opts.mu_floor, "strict")
    M11 = symm(const(X1) @ Y1.expr()) + alpha_I + scal_expr(mu, EDD)
    R31 = const(RQ.T) @ P.expr()
    if k > 0:
        R21 = (const(X1) @ G2.expr()).T
        rows = [
            [M11, R21.T, R31.T, Y1.expr().T],
            [R21, const(-np.eye(k)), _zeros(k, tau), G2.expr().T],
            [R31, _zeros(tau, k), const(-np.eye(tau)), _zeros(tau, T)],
            [Y1.expr(), G2.expr(), _zeros(T, tau), scal_expr(mu, -np.eye(T))],
        ]
    else:
        rows = [
            [M11, R31.T, Y1.expr().T],
            [R31, const(-np.eye(tau)), _zeros(tau, T)],
            [Y1.expr(), _zeros(T, tau), scal_expr(mu, -np.eye(T))],
        ]
    p.add_nsd(block(rows), "lmi")
    report = solve(p, opts.solve_options())

    def assemble(values, a):
        Y1v, G2v, Pv, muv = values["Y1"], values["G2"], values["P"], float(values["mu"])
        B11 = X1 @ Y1v + (X1 @ Y1v).T + a * np.eye(n) + muv * EDD
        B31 = RQ.T @ Pv
        if k > 0:
            B21 = (X1 @ G2v).T
            return np.block(
                [
                    [B11, B21.T, B31.T, Y1v.T],
                    [B21, -np.eye(k), np.zeros((k, tau)), G2v.T],
                    [B31, np.zeros((tau, k)), -np.eye(tau), np.zeros((tau, T))],
                    [Y1v, G2v, np.zeros((T, tau)), -muv * np.eye(T)],
                ]
            )
        return np.block(
            [
                [B11, B31.T, Y1v.T],
                [B31, -np.eye(tau), np.zeros((tau, T))],
                [Y1v, np.zeros((T, tau)), -muv * np.eye(T)],
            ]
        )

    return _finalize("noisy", p, report, opts, X1, dm.Z0, dm.U0, assemble, extra_warnings=warnings)


def synth_remainder(
    dm: DataMatrices,
    bound_Q: JacobianBound,
    bound_D: JacobianBound,
    noise: NoiseModel,
    opts: Optional[SynthOptions] = None,
) -> SynthesisResult:
    """Contractivity despite a state-dependent remainder outside the library.

    The remainder enters the dynamics with E = I, its samples obey the
    quadratic bound in ``noise``, and its Jacobian growth on the working set
    is bounded by ``bound_D``; the closed loop is certified with the
    remainder Jacobian included.
    """
    opts = opts or SynthOptions()
    warnings: list = []
    _check_rank(dm, warnings)
    n, T, s = dm.n, dm.T, dm.s
    k = s - n
    RQ = _bound_matrix(bound_Q, n)
    if bound_D is None:
        raise SynthesisError("remainder mode requires the remainder growth bound R_D")
    RD = _bound_matrix(bound_D, n)
    if noise.E is not None and not np.allclose(noise.effective_E(n), np.eye(n)):
        raise SynthesisError("remainder mode assumes E = I")
    RQD = np.hstack([RQ, RD])
    taud = RQD.shape[1]
    DD = noise.Delta @ noise.Delta.T
    X1 = dm.X1

    p, P, Y1, G2, alpha, alpha_I = _start_program("remainder", T, n, k, opts)
    _add_consistency(p, dm.Z0, P, Y1, G2)
    mu = p.scalar_var("mu")
    p.add_psd(mu.expr() - opts.mu_floor, "strict")
    M11 = symm(const(X1) @ Y1.expr()) + alpha_I + scal_expr(mu, DD)
    # stacked second border: [G2' X1'; I_n] with the matching [G2, 0] column
    if k > 0:
        R21 = block([[(const(X1) @ G2.expr()).T], [const(np.eye(n))]])
        C42 = block([[G2.expr(), _zeros(T, n)]])
    else:
        R21 = const(np.eye(n))
        C42 = _zeros(T, n)
    sdim = k + n
    R31 = const(RQD.T) @ P.expr()
    rows = [
        [M11, R21.T, R31.T, Y1.expr().T],
        [R21, const(-np.eye(sdim)), _zeros(sdim, taud), C42.T],
        [R31, _zeros(taud, sdim), const(-np.eye(taud)), _zeros(taud, T)],
        [Y1.expr(), C42, _zeros(T, taud), scal_expr(mu, -np.eye(T))],
    ]
    p.add_nsd(block(rows), "lmi")
    report = solve(p, opts.solve_options())

    def assemble(values, a):
        Y1v, G2v, Pv, muv = values["Y1"], values["G2"], values["P"], float(values["mu"])
        B11 = X1 @ Y1v + (X1 @ Y1v).T + a * np.eye(n) + muv * DD
        B21 = np.vstack([(X1 @ G2v).T, np.eye(n)]) if k > 0 else np.eye(n)
        B42 = np.hstack([G2v, np.zeros((T, n))]) if k > 0 else np.zeros((T, n))
        B31 = RQD.T @ Pv
        return np.block(
            [
                [B11, B21.T, B31.T, Y1v.T],
                [B21, -np.eye(sdim), np.zeros((sdim, taud)), B42.T],
                [B31, np.zeros((taud, sdim)), -np.eye(taud), np.zeros((taud, T))],
                [Y1v, B42, np.zeros((T, taud)), -muv * np.eye(T)],
            ]
        )

    return _finalize("remainder", p, report, opts, X1, dm.Z0, dm.U0, assemble, extra_warnings=warnings)
