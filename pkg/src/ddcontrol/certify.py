"""Independent verification of synthesized controllers.

Nothing here trusts the solver: contraction margins are re-sampled from the
data-dependent representation (or from the true plant when a ground-truth
factorization is supplied), equilibria are recomputed by damped Newton and
cross-checked against long simulations, and regions of attraction are
estimated by Lyapunov sub-level sets certified on grids.  Sampling cannot
prove anything on unbounded sets, so unbounded working sets are truncated to
a finite verification box and reported as "verified on box".
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence, Tuple

import numpy as np
from scipy.stats import qmc

from ddcontrol.dictionary import BoxSet, Dictionary
from ddcontrol.plants import Plant, SimulationError, simulate_closed_loop
from ddcontrol.synthesis import NoiseModel, SynthesisResult

__all__ = [
    "ContractionCertificate",
    "RoaEstimate",
    "certify_contraction",
    "certify_contraction_robust",
    "find_equilibrium",
    "estimate_roa",
    "check_convergent_behavior",
    "check_tracking",
    "check_contraction_envelope",
    "closed_loop_field",
]

TRUNCATION_RADIUS = 5.0  # default box for unbounded working-set coordinates


# ---------------------------------------------------------------------------
# Sampled contraction certificates
# ---------------------------------------------------------------------------


@dataclass
class ContractionCertificate:
    """Worst sampled eigenvalue of Sym(P^-1 J(x)) + beta P^-1 over a box."""

    P: np.ndarray
    beta: float
    box: BoxSet
    n_samples: int
    tol: float
    worst: float
    worst_x: np.ndarray
    mode: str  # 'data' or 'truth'
    passed: bool
    condition_factor: float

    def to_json_dict(self) -> dict:
        return {
            "beta": self.beta,
            "mode": self.mode,
            "n_samples": self.n_samples,
            "tol": self.tol,
            "worst": self.worst,
            "worst_x": self.worst_x.tolist(),
            "passed": self.passed,
            "condition_factor": self.condition_factor,
            "box": self.box.to_bounds(),
            "P": self.P.tolist(),
        }


def _sample_box(box: BoxSet, n_samples: int, seed: int) -> np.ndarray:
    lo, hi = box.lo, box.hi
    if not (np.all(np.isfinite(lo)) and np.all(np.isfinite(hi))):
        raise ValueError("sampling box must be bounded; truncate the set first")
    sampler = qmc.LatinHypercube(d=len(lo), seed=seed)
    return lo + sampler.random(n_samples) * (hi - lo)


def _closed_loop_jacobians(
    result_or_matrix,
    dictionary: Dictionary,
    x: np.ndarray,
    n_aug: int = 0,
    MN: Optional[Tuple[np.ndarray, np.ndarray]] = None,
) -> np.ndarray:
    """J(x) = [M N] dZ/dx at each sample; augmented states carry dQ = 0."""
    if MN is not None:
        M, N = MN
    else:
        M, N = result_or_matrix.M, result_or_matrix.N
    n = dictionary.n
    Jq = dictionary.jac_Q(x[..., :n])  # (..., k, n)
    if n_aug:
        pad = np.zeros(Jq.shape[:-1] + (n_aug,))
        Jq = np.concatenate([Jq, pad], axis=-1)
    J = np.broadcast_to(M, x.shape[:-1] + M.shape).copy()
    if N is not None and N.shape[1]:
        J = J + np.einsum("ij,...jk->...ik", N, Jq)
    return J


def certify_contraction(
    result: SynthesisResult,
    dictionary: Dictionary,
    box: BoxSet,
    n_samples: int = 10_000,
    tol: float = 1e-7,
    mode: str = "data",
    truth: Optional[Tuple[np.ndarray, np.ndarray]] = None,
    n_aug: int = 0,
    seed: int = 0,
    trunc_radius: float = TRUNCATION_RADIUS,
    beta: Optional[float] = None,
) -> ContractionCertificate:
    """Sampled check of the contraction inequality for a synthesized loop.

    mode='data' evaluates the Jacobian from the data representation
    [M N] dZ/dx (no plant knowledge); mode='truth' uses (A + B K) dZ/dx
    from a supplied factorization.  Latin-hypercube samples are drawn from
    the working set truncated to a finite box.
    """
    sample_box = box.truncate(trunc_radius)
    X = _sample_box(sample_box, n_samples, seed)
    if mode == "truth":
        if truth is None:
            raise ValueError("truth mode needs the (A, B) factorization")
        A, B = truth
        Acl = A + B @ result.K if result.K.shape[1] == A.shape[1] else None
        if Acl is None:
            raise ValueError("gain shape does not match the supplied factorization")
        M, N = Acl[:, : X.shape[1]], Acl[:, X.shape[1] :]
        J = _closed_loop_jacobians(None, dictionary, X, n_aug, MN=(M, N))
    elif mode == "data":
        J = _closed_loop_jacobians(result, dictionary, X, n_aug)
    else:
        raise ValueError("mode must be 'data' or 'truth'")
    beta = result.beta if beta is None else beta
    Pinv = result.P_inv
    S = np.einsum("ij,...jk->...ik", Pinv, J)
    S = S + np.swapaxes(S, -1, -2) + beta * Pinv
    lams = np.linalg.eigvalsh(S)[..., -1]
    worst = int(np.argmax(lams))
    return ContractionCertificate(
        P=result.P,
        beta=beta,
        box=sample_box,
        n_samples=n_samples,
        tol=tol,
        worst=float(lams[worst]),
        worst_x=X[worst],
        mode=mode,
        passed=bool(lams[worst] <= tol),
        condition_factor=result.condition_factor,
    )


def certify_contraction_robust(
    result: SynthesisResult,
    dictionary: Dictionary,
    box: BoxSet,
    noise: NoiseModel,
    n_disturbances: int = 100,
    n_samples: int = 10_000,
    tol: float = 1e-7,
    seed: int = 0,
    trunc_radius: float = TRUNCATION_RADIUS,
) -> dict:
    """Monte-Carlo audit of the noisy-mode guarantee over the D ball.

    Draws random sample matrices D with D D' <= Delta Delta', replaces the
    representation by (X1 - E D) G, and repeats the sampled contraction
    check for each draw.  The design promises the certificate for *all*
    admissible D; sampling is evidence, not proof.
    """
    rng = np.random.default_rng(seed)
    sample_box = box.truncate(trunc_radius)
    X = _sample_box(sample_box, n_samples, seed)
    n = dictionary.n
    E = noise.effective_E(n)
    q = noise.q
    T = result.G.shape[0]
    Jq = dictionary.jac_Q(X)
    Pinv = result.P_inv
    beta = result.beta
    XG1 = result.M
    XG2 = result.N
    G1, G2 = result.G1, result.G2
    worst = -np.inf
    worst_draw = -1
    bound = np.linalg.norm(noise.Delta, 2)
    for i in range(n_disturbances):
        D = rng.normal(size=(q, T))
        D *= rng.uniform(0.0, 1.0) * bound / max(np.linalg.norm(D, 2), 1e-300)
        M = XG1 - E @ D @ G1
        N = XG2 - E @ D @ G2 if G2.shape[1] else XG2
        J = np.broadcast_to(M, X.shape[:-1] + M.shape).copy()
        if N.shape[1]:
            J = J + np.einsum("ij,...jk->...ik", N, Jq)
        S = np.einsum("ij,...jk->...ik", Pinv, J)
        S = S + np.swapaxes(S, -1, -2) + beta * Pinv
        lam = float(np.max(np.linalg.eigvalsh(S)[..., -1]))
        if lam > worst:
            worst, worst_draw = lam, i
    return {
        "passed": bool(worst <= tol),
        "worst": worst,
        "worst_draw": worst_draw,
        "n_disturbances": n_disturbances,
        "n_samples": n_samples,
        "tol": tol,
    }


# ---------------------------------------------------------------------------
# Equilibria
# ---------------------------------------------------------------------------


def closed_loop_field(
    closed_loop,
    dictionary: Dictionary,
    n_aug: int = 0,
    offset: Optional[np.ndarray] = None,
) -> Tuple[Callable, Callable]:
    """Vectorized (field, jacobian) callables for a closed loop.

    ``closed_loop`` is a SynthesisResult (uses its M, N) or an explicit
    closed-loop matrix of shape (n+aug) x (s+aug) acting on [x; xi; Q(x)].
    ``offset`` adds a constant (disturbance/reference) term.
    """
    if isinstance(closed_loop, SynthesisResult):
        M, N = closed_loop.M, closed_loop.N
    else:
        Acl = np.atleast_2d(np.asarray(closed_loop, dtype=float))
        nn = Acl.shape[0]
        M, N = Acl[:, :nn], Acl[:, nn:]
    n = dictionary.n
    off = 0.0 if offset is None else np.asarray(offset, dtype=float)

    def f(x):
        x = np.asarray(x, dtype=float)
        out = x @ M.T
        if N is not None and N.shape[1]:
            out = out + dictionary.eval_Q(x[..., :n]) @ N.T
        return out + off

    def jac(x):
        J = _closed_loop_jacobians(None, dictionary, np.asarray(x, dtype=float), n_aug, MN=(M, N))
        return J

    return f, jac


def _integrate_field(f, x0: np.ndarray, horizon: float, dt: float) -> np.ndarray:
    x = np.asarray(x0, dtype=float).copy()
    steps = int(round(horizon / dt))
    for k in range(steps):
        k1 = f(x)
        k2 = f(x + 0.5 * dt * k1)
        k3 = f(x + 0.5 * dt * k2)
        k4 = f(x + dt * k3)
        x = x + (dt / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        if not np.all(np.isfinite(x)):
            raise SimulationError("field integration escaped", (k + 1) * dt)
    return x


def find_equilibrium(
    closed_loop,
    dictionary: Dictionary,
    x_init: Optional[np.ndarray] = None,
    n_aug: int = 0,
    offset: Optional[np.ndarray] = None,
    tol: float = 1e-10,
    max_iter: int = 200,
    sim_check: bool = True,
    sim_horizon: float = 80.0,
    sim_dt: float = 2e-3,
    sim_tol: float = 1e-5,
) -> np.ndarray:
    """Equilibrium of the closed-loop field by damped Newton.

    Falls back to (and cross-validates against) a long simulation endpoint.
    The returned point drives the field below ``tol`` in norm.
    """
    f, jac = closed_loop_field(closed_loop, dictionary, n_aug, offset)
    dim = dictionary.n + n_aug
    x = np.zeros(dim) if x_init is None else np.asarray(x_init, dtype=float).copy()
    converged = False
    for _ in range(max_iter):
        F = f(x)
        nrm = np.linalg.norm(F)
        if nrm <= tol:
            converged = True
            break
        try:
            step = np.linalg.solve(jac(x), -F)
        except np.linalg.LinAlgError:
            step = -np.linalg.pinv(jac(x)) @ F
        t = 1.0
        for _ in range(40):
            cand = x + t * step
            if np.linalg.norm(f(cand)) < (1.0 - 0.25 * t) * nrm:
                break
            t *= 0.5
        x = x + t * step
    if not converged and np.linalg.norm(f(x)) > tol:
        x = _integrate_field(f, x, sim_horizon, sim_dt)
        if np.linalg.norm(f(x)) > 1e-6:
            raise RuntimeError("Newton and simulation both failed to locate an equilibrium")
    if sim_check:
        endpoint = _integrate_field(f, x + 1e-3, sim_horizon, sim_dt)
        if np.linalg.norm(endpoint - x) > sim_tol:
            raise RuntimeError(
                f"simulation endpoint disagrees with equilibrium by {np.linalg.norm(endpoint - x):.2e}"
            )
    return x


# ---------------------------------------------------------------------------
# Region-of-attraction estimation
# ---------------------------------------------------------------------------


@dataclass
class RoaEstimate:
    """Largest grid-certified Lyapunov sub-level set inside {Vdot < 0}."""

    P_inv: np.ndarray
    center: np.ndarray
    gamma: float
    grid: tuple
    r_excl: float
    box: BoxSet
    box_limited: bool
    n_violations: int
    diagnosis: str = ""

    def to_json_dict(self) -> dict:
        return {
            "gamma": self.gamma,
            "grid": list(self.grid),
            "r_excl": self.r_excl,
            "box": self.box.to_bounds(),
            "box_limited": self.box_limited,
            "n_violations": self.n_violations,
            "diagnosis": self.diagnosis,
            "center": self.center.tolist(),
            "P_inv": self.P_inv.tolist(),
        }


def estimate_roa(
    field: Callable,
    P_inv: np.ndarray,
    center: np.ndarray,
    box: BoxSet,
    grid: Sequence[int],
    r_excl: float = 1e-3,
    bisect_iters: int = 40,
    gamma_cap: Optional[float] = None,
) -> RoaEstimate:
    """Certify gamma such that {V <= gamma} lies in the sampled decrease set.

    V(x) = (x-c)' P_inv (x-c); every grid point with V <= gamma outside the
    exclusion ball must have Vdot < 0.  gamma is the infimum of V over
    sampled violations (capped by the V-value reached on the sampling-box
    boundary), floored onto the bisection lattice so refining the gamma
    search never decreases the certified value.
    """
    P_inv = np.asarray(P_inv, dtype=float)
    center = np.asarray(center, dtype=float)
    if not box.is_bounded:
        raise ValueError("ROA estimation needs a bounded sampling box")
    axes = [np.linspace(lo, hi, g) for lo, hi, g in zip(box.lo, box.hi, grid)]
    mesh = np.meshgrid(*axes, indexing="ij")
    X = np.stack([m.ravel() for m in mesh], axis=-1)
    diff = X - center
    V = np.einsum("...i,ij,...j->...", diff, P_inv, diff)
    Vdot = 2.0 * np.einsum("...i,ij,...j->...", diff, P_inv, field(X))
    outside = np.linalg.norm(diff, axis=-1) > r_excl

    boundary = np.zeros(len(X), dtype=bool)
    shape = tuple(grid)
    idx = np.unravel_index(np.arange(len(X)), shape)
    for d in range(len(grid)):
        boundary |= (idx[d] == 0) | (idx[d] == grid[d] - 1)
    gamma_box = float(np.min(V[boundary])) if boundary.any() else np.inf

    viol = outside & (Vdot >= 0.0)
    n_viol = int(np.count_nonzero(viol))
    gamma_viol = float(np.min(V[viol])) if n_viol else np.inf

    cap = gamma_cap if gamma_cap is not None else gamma_box
    raw = min(gamma_viol, gamma_box)
    box_limited = gamma_box <= gamma_viol
    # a level certified by zero decrease evidence below it is vacuous
    supported = bool(np.count_nonzero(outside & ~viol & (V < raw)))
    if not supported:
        return RoaEstimate(
            P_inv, center, 0.0, tuple(grid), r_excl, box, box_limited, n_viol,
            diagnosis="no positive level could be certified on this grid",
        )
    if not np.isfinite(raw) or raw <= 0.0:
        return RoaEstimate(
            P_inv, center, 0.0, tuple(grid), r_excl, box, box_limited, n_viol,
            diagnosis="no positive level could be certified on this grid",
        )
    step = cap / float(2 ** min(bisect_iters, 50)) if np.isfinite(cap) and cap > 0 else 0.0
    gamma = float(np.floor(raw / step) * step) if step > 0 else raw
    return RoaEstimate(P_inv, center, gamma, tuple(grid), r_excl, box, box_limited, n_viol)


# ---------------------------------------------------------------------------
# Behavioral audits: convergence, entrainment, tracking, envelope
# ---------------------------------------------------------------------------


def _batch_x0(box: BoxSet, trials: int, seed: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    return rng.uniform(box.lo, box.hi, (trials, box.dim))


def check_convergent_behavior(
    plant: Plant,
    controller,
    trials: int = 10,
    horizon: float = 40.0,
    dt: float = 2e-3,
    x0_box: Optional[BoxSet] = None,
    seed: int = 0,
    disturbance=None,
    gap_tol: float = 1e-4,
    period: Optional[float] = None,
    record_every: int = 20,
) -> dict:
    """All trajectories must collapse to one steady solution on the tail.

    Checks the pairwise sup-norm gap over the final 10% of the horizon and,
    for periodic forcing, that the tail repeats with the given period.
    """
    box = x0_box or BoxSet.from_bounds([[-1.0, 1.0]] * plant.n)
    x0 = _batch_x0(box, trials, seed)
    traj = simulate_closed_loop(plant, controller, x0, horizon, dt, disturbance, record_every)
    times, X = traj.times, traj.x  # (steps, trials, n)
    tail = times >= times[-1] - 0.1 * (times[-1] - times[0])
    Xt = X[tail]
    gaps = np.linalg.norm(Xt[:, :, None, :] - Xt[:, None, :, :], axis=-1)
    max_gap = float(np.max(gaps))
    report = {
        "trials": trials,
        "max_tail_gap": max_gap,
        "gap_tol": gap_tol,
        "passed": bool(max_gap <= gap_tol),
        "endpoint": X[-1, 0].tolist(),
    }
    if period is not None:
        tail_t = times[tail]
        usable = tail_t + period <= times[-1] + 1e-12
        if not np.any(usable):
            raise ValueError("horizon tail is shorter than one period")
        src_t = tail_t[usable]
        base = Xt[usable]
        shifted = np.empty_like(base)
        flatX = X.reshape(len(times), -1)
        for k in range(flatX.shape[1]):
            shifted.reshape(len(src_t), -1)[:, k] = np.interp(src_t + period, times, flatX[:, k])
        report["max_period_gap"] = float(np.max(np.linalg.norm(shifted - base, axis=-1)))
        report["period"] = period
        report["passed"] = bool(report["passed"] and report["max_period_gap"] <= gap_tol)
    return report


def check_tracking(
    plant: Plant,
    controller,
    trials: int = 10,
    horizon: float = 40.0,
    dt: float = 2e-3,
    x0_box: Optional[BoxSet] = None,
    seed: int = 0,
    disturbance=None,
    tol: float = 1e-3,
    record_every: int = 20,
) -> dict:
    """Tracking-error audit for integral loops: |e(t)| small on the tail."""
    box = x0_box or BoxSet.from_bounds([[-1.0, 1.0]] * plant.n)
    x0 = _batch_x0(box, trials, seed)
    traj = simulate_closed_loop(plant, controller, x0, horizon, dt, disturbance, record_every)
    if traj.e is None:
        raise ValueError("controller does not produce a tracking error")
    times = traj.times
    tail = times >= times[-1] - 0.1 * (times[-1] - times[0])
    tail_err = np.max(np.abs(traj.e[tail]), axis=(0, 2))
    bounded = bool(np.all(np.isfinite(traj.x)))
    return {
        "trials": trials,
        "tol": tol,
        "tail_errors": tail_err.tolist(),
        "max_tail_error": float(np.max(tail_err)),
        "bounded": bounded,
        "passed": bool(bounded and np.max(tail_err) <= tol),
    }


def check_contraction_envelope(
    plant: Plant,
    controller,
    condition_factor: float,
    beta: float,
    trials: int = 10,
    horizon: float = 40.0,
    dt: float = 2e-3,
    x0_box: Optional[BoxSet] = None,
    seed: int = 0,
    disturbance=None,
    slack: float = 0.05,
    record_every: int = 20,
) -> dict:
    """Pairwise gaps must stay under (1+slack) * c * exp(-beta t / 2) * gap(0).

    c is the metric condition factor (sqrt of the eigenvalue ratio of
    P^-1); the envelope is the textbook consequence of the certificate, and
    the slack absorbs integration error.
    """
    box = x0_box or BoxSet.from_bounds([[-1.0, 1.0]] * plant.n)
    x0 = _batch_x0(box, trials, seed)
    traj = simulate_closed_loop(plant, controller, x0, horizon, dt, disturbance, record_every)
    times, X = traj.times, traj.x
    gaps = np.linalg.norm(X[:, :, None, :] - X[:, None, :, :], axis=-1)  # (steps, B, B)
    g0 = gaps[0]
    envelope = (1.0 + slack) * condition_factor * np.exp(-0.5 * beta * times)[:, None, None] * g0
    iu = np.triu_indices(x0.shape[0], k=1)
    excess = gaps[:, iu[0], iu[1]] - envelope[:, iu[0], iu[1]]
    worst = float(np.max(excess))
    return {
        "trials": trials,
        "condition_factor": condition_factor,
        "beta": beta,
        "slack": slack,
        "worst_excess": worst,
        "passed": bool(worst <= 1e-9),
    }
