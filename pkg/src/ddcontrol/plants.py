"""Ground-truth plants, disturbance generators, experiments, and closed loops.

Everything here knows the true vector fields; the synthesis side never sees
them.  Datasets record the state derivative analytically at the sample
instants (no numerical differencing), and all randomness flows through
explicit seeds so datasets and trajectories are reproducible bit for bit.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Union

import numpy as np

from ddcontrol.dictionary import BasisFunction, Dictionary, eval_Z

__all__ = [
    "SimulationError",
    "Plant",
    "ExoModel",
    "BoundedNoise",
    "UniformInput",
    "ExperimentDataset",
    "Trajectory",
    "StaticController",
    "AffineController",
    "IntegralController",
    "builtin_plant",
    "input_extended",
    "run_experiment",
    "run_integral_experiment",
    "simulate_closed_loop",
]


class SimulationError(RuntimeError):
    """Raised when a simulated state stops being finite (plant escaped)."""

    def __init__(self, message: str, t: float):
        super().__init__(f"{message} at t={t:.6g}")
        self.t = t


@dataclass
class Plant:
    """Continuous-time plant dx/dt = f(x, u) [+ E d].

    When the plant is expressible as A Z(x) + B u over ``dictionary``, the
    factorization (A, B) is stored; it is used only by test oracles and by
    dataset generation for synthetic plants, never by the synthesis side.
    """

    name: str
    n: int
    m: int
    f: Callable[[np.ndarray, np.ndarray], np.ndarray]
    dictionary: Optional[Dictionary] = None
    A: Optional[np.ndarray] = None
    B: Optional[np.ndarray] = None
    E: Optional[np.ndarray] = None

    @staticmethod
    def from_factorization(
        name: str,
        dictionary: Dictionary,
        A: np.ndarray,
        B: np.ndarray,
        E: Optional[np.ndarray] = None,
    ) -> "Plant":
        A = np.asarray(A, dtype=float)
        B = np.asarray(B, dtype=float)
        n, m = A.shape[0], B.shape[1]

        def f(x, u):
            return eval_Z(dictionary, x) @ A.T + np.asarray(u) @ B.T

        return Plant(name, n, m, f, dictionary, A, B, E)

    def effective_E(self, q: int) -> np.ndarray:
        if self.E is not None:
            E = np.asarray(self.E, dtype=float)
            if E.shape != (self.n, q):
                raise ValueError(f"E has shape {E.shape}, expected {(self.n, q)}")
            return E
        return np.eye(self.n)[:, :q] if q != self.n else np.eye(self.n)

    def factorization_in(self, target: Dictionary) -> tuple:
        """Re-express (A, B) over a larger dictionary by zero-padding columns.

        Every canonical library entry must appear in ``target`` (coordinates
        always do); extra entries of ``target`` get zero columns.
        """
        if self.dictionary is None or self.A is None:
            raise ValueError(f"plant {self.name!r} has no stored factorization")
        if target.n != self.n:
            raise ValueError("target dictionary has wrong state dimension")
        A_t = np.zeros((self.n, target.s))
        tgt_fns = list(target.functions)
        for col, fn in enumerate(self.dictionary.functions):
            if fn not in tgt_fns:
                raise ValueError(f"target dictionary lacks required term {fn.term_string()}")
            A_t[:, tgt_fns.index(fn)] = self.A[:, col]
        return A_t, np.asarray(self.B, dtype=float)


# ---------------------------------------------------------------------------
# Built-in benchmark plants
# ---------------------------------------------------------------------------

MANIPULATOR_PARAMS = dict(K_c=0.4, J_2=0.2, N_c=2.0, J_1=0.15, m=0.4, g=9.8, d=0.1)


def _manipulator() -> Plant:
    p = MANIPULATOR_PARAMS
    a21 = -p["K_c"] / p["J_2"]
    a23 = p["K_c"] / (p["J_2"] * p["N_c"])
    c2 = -p["m"] * p["g"] * p["d"] / p["J_2"]
    a41 = p["K_c"] / (p["J_1"] * p["N_c"])
    a43 = -p["K_c"] / (p["J_1"] * p["N_c"] ** 2)
    b4 = 1.0 / p["J_1"]
    d = Dictionary(4, (BasisFunction.cosine(0),))
    A = np.array(
        [
            [0.0, 1.0, 0.0, 0.0, 0.0],
            [a21, 0.0, a23, 0.0, c2],
            [0.0, 0.0, 0.0, 1.0, 0.0],
            [a41, 0.0, a43, 0.0, 0.0],
        ]
    )
    B = np.array([[0.0], [0.0], [0.0], [b4]])
    return Plant.from_factorization("manipulator", d, A, B)


def _surge() -> Plant:
    d = Dictionary(2, (BasisFunction.monomial({0: 2}), BasisFunction.monomial({0: 3})))
    A = np.array([[0.0, -1.0, -1.5, -0.5], [0.0, 0.0, 0.0, 0.0]])
    B = np.array([[0.0], [1.0]])
    return Plant.from_factorization("surge", d, A, B)


def _cstr() -> Plant:
    def f(x, u):
        x = np.asarray(x, dtype=float)
        u = np.asarray(u, dtype=float)
        dx1 = 4.25 * x[..., 0] + x[..., 1] - 0.25 * u[..., 0] - x[..., 0] * u[..., 0]
        dx2 = -6.25 * x[..., 0] - 2.0 * x[..., 1]
        return np.stack([dx1, dx2], axis=-1)

    return Plant("cstr", 2, 1, f)


_BUILTINS = {"manipulator": _manipulator, "surge": _surge, "cstr": _cstr}

# Factorizations of the input-integrator extension xi = (x, u), du/dt = v,
# for plants whose f(x, u) lies in the span of an extended library.
_EXTENDED_FACTORIZATIONS = {
    "cstr": (
        Dictionary(3, (BasisFunction.product(0, 2),)),
        np.array([[4.25, 1.0, -0.25, -1.0], [-6.25, -2.0, 0.0, 0.0], [0.0, 0.0, 0.0, 0.0]]),
        np.array([[0.0], [0.0], [1.0]]),
    )
}


def builtin_plant(name: str) -> Plant:
    """Return a benchmark plant: ``manipulator``, ``surge``, or ``cstr``."""
    try:
        return _BUILTINS[name]()
    except KeyError:
        raise ValueError(f"unknown plant {name!r}; choose from {sorted(_BUILTINS)}") from None


def input_extended(
    plant: Plant,
    dictionary: Optional[Dictionary] = None,
    A: Optional[np.ndarray] = None,
    B: Optional[np.ndarray] = None,
) -> Plant:
    """Extend dx/dt = f(x, u) with the input integrator du/dt = v.

    The extended plant has state xi = (x, u) and input v.  A factorization
    over the extended library is attached when supplied (or known for a
    built-in plant), so test oracles can check the extended data identity.
    """
    n, m = plant.n, plant.m

    def f_ext(xi, v):
        xi = np.asarray(xi, dtype=float)
        v = np.asarray(v, dtype=float)
        x, u = xi[..., :n], xi[..., n:]
        return np.concatenate([plant.f(x, u), np.broadcast_to(v, x.shape[:-1] + (m,))], axis=-1)

    if dictionary is None and plant.name in _EXTENDED_FACTORIZATIONS:
        dictionary, A, B = _EXTENDED_FACTORIZATIONS[plant.name]
    return Plant(f"{plant.name}+integrator", n + m, m, f_ext, dictionary, A, B)


# ---------------------------------------------------------------------------
# Disturbance generators
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ExoModel:
    """Marginally stable exogenous generator: sinusoid pairs plus constants.

    ``frequencies`` (rad/s) has length sigma1; the state carries one
    2-dimensional rotation block per frequency followed by sigma2 constants.
    ``Gamma`` maps the exo state to the q disturbance channels.
    """

    sigma1: int
    sigma2: int
    frequencies: tuple
    Gamma: np.ndarray
    w0: np.ndarray

    def __post_init__(self):
        freqs = tuple(float(f) for f in self.frequencies)
        if len(freqs) != self.sigma1:
            raise ValueError("need exactly sigma1 frequencies")
        if any(f <= 0 for f in freqs) or len(set(freqs)) != len(freqs):
            raise ValueError("frequencies must be positive and distinct")
        dim = 2 * self.sigma1 + self.sigma2
        Gamma = np.atleast_2d(np.asarray(self.Gamma, dtype=float))
        w0 = np.asarray(self.w0, dtype=float).ravel()
        if Gamma.shape[1] != dim or w0.shape[0] != dim:
            raise ValueError(f"Gamma/w0 must have {dim} columns/entries")
        object.__setattr__(self, "frequencies", freqs)
        object.__setattr__(self, "Gamma", Gamma)
        object.__setattr__(self, "w0", w0)

    @staticmethod
    def constant(d0: np.ndarray) -> "ExoModel":
        d0 = np.asarray(d0, dtype=float).ravel()
        q = d0.shape[0]
        return ExoModel(0, q, (), np.eye(q), d0)

    @property
    def q(self) -> int:
        return self.Gamma.shape[0]

    @property
    def Psi(self) -> np.ndarray:
        dim = 2 * self.sigma1 + self.sigma2
        Psi = np.zeros((dim, dim))
        for i, w in enumerate(self.frequencies):
            Psi[2 * i, 2 * i + 1] = w
            Psi[2 * i + 1, 2 * i] = -w
        return Psi

    @property
    def L(self) -> np.ndarray:
        """Block-diagonal initial-condition factor (unknown to the designer)."""
        dim = 2 * self.sigma1 + self.sigma2
        L = np.zeros((dim, dim))
        for i in range(self.sigma1):
            a, b = self.w0[2 * i], self.w0[2 * i + 1]
            L[2 * i : 2 * i + 2, 2 * i : 2 * i + 2] = [[a, b], [b, -a]]
        for i in range(self.sigma2):
            k = 2 * self.sigma1 + i
            L[k, k] = self.w0[k]
        return L

    @property
    def Phi(self) -> np.ndarray:
        return self.Gamma @ self.L

    def w(self, t) -> np.ndarray:
        """Exo state at times t (shape (...,)); returns (..., 2*sigma1+sigma2)."""
        t = np.asarray(t, dtype=float)
        parts = []
        for i, om in enumerate(self.frequencies):
            a, b = self.w0[2 * i], self.w0[2 * i + 1]
            c, s = np.cos(om * t), np.sin(om * t)
            parts.append(a * c + b * s)
            parts.append(-a * s + b * c)
        for i in range(self.sigma2):
            parts.append(np.broadcast_to(self.w0[2 * self.sigma1 + i], t.shape))
        return np.stack(parts, axis=-1)

    def d(self, t) -> np.ndarray:
        return self.w(t) @ self.Gamma.T


@dataclass(frozen=True)
class BoundedNoise:
    """Smooth random Fourier-series disturbance with a hard pointwise bound.

    The channel amplitudes are scaled analytically so |d(t)| <= delta for
    every t, which keeps the sampled matrix D_0 inside the quadratic bound
    D_0 D_0^T <= delta^2 T I.
    """

    delta: float
    q: int
    seed: int
    n_modes: int = 6

    def _coeffs(self):
        rng = np.random.default_rng(self.seed)
        amp = rng.uniform(0.2, 1.0, (self.q, self.n_modes))
        freq = rng.uniform(0.2, 3.0, (self.q, self.n_modes))
        phase = rng.uniform(0.0, 2 * np.pi, (self.q, self.n_modes))
        peak = np.linalg.norm(amp.sum(axis=1))  # sup_t |d(t)|_2 <= this
        return amp * (0.999 * self.delta / peak), freq, phase

    def d(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        amp, freq, phase = self._coeffs()
        arg = freq * t[..., None, None] + phase
        return np.sum(amp * np.sin(arg), axis=-1)


@dataclass(frozen=True)
class UniformInput:
    """Per-step i.i.d. uniform input on [lo, hi], drawn from an explicit seed."""

    lo: float
    hi: float
    seed: int

    def sequence(self, T: int, m: int) -> np.ndarray:
        rng = np.random.default_rng(self.seed)
        return rng.uniform(self.lo, self.hi, (T, m))


# ---------------------------------------------------------------------------
# Datasets and experiments
# ---------------------------------------------------------------------------


@dataclass
class ExperimentDataset:
    """Sampled triples (x_i, u_i, dx_i) with optional hidden extras.

    ``d`` holds the true disturbance samples (test oracles only), and the
    integral-control experiments additionally record the regulated output
    ``y`` and the error-integrator state ``xi``.
    """

    times: np.ndarray
    x: np.ndarray
    u: np.ndarray
    xdot: np.ndarray
    d: Optional[np.ndarray] = None
    y: Optional[np.ndarray] = None
    xi: Optional[np.ndarray] = None
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        if t.ndim != 1 or np.any(np.diff(t) <= 0):
            raise ValueError("sampling times must be strictly increasing")

    @property
    def T(self) -> int:
        return len(self.times)

    @property
    def n(self) -> int:
        return self.x.shape[1]

    @property
    def m(self) -> int:
        return self.u.shape[1]

    def to_csv(self, path) -> None:
        """Write t,x*,u*,xdot* columns plus a JSON provenance sidecar."""
        path = Path(path)
        n, m = self.n, self.m
        header = (
            ["t"]
            + [f"x{i + 1}" for i in range(n)]
            + [f"u{i + 1}" for i in range(m)]
            + [f"xdot{i + 1}" for i in range(n)]
        )
        extra = []
        if self.y is not None:
            extra += [(f"y{i + 1}", self.y[:, i]) for i in range(self.y.shape[1])]
        if self.xi is not None:
            extra += [(f"xi{i + 1}", self.xi[:, i]) for i in range(self.xi.shape[1])]
        header += [name for name, _ in extra]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(header)
            for i in range(self.T):
                row = [self.times[i], *self.x[i], *self.u[i], *self.xdot[i]]
                row += [col[i] for _, col in extra]
                w.writerow([repr(float(v)) for v in row])
        sidecar = dict(self.provenance)
        sidecar["columns"] = header
        path.with_suffix(".json").write_text(json.dumps(sidecar, indent=2, sort_keys=True))

    @staticmethod
    def from_csv(path) -> "ExperimentDataset":
        path = Path(path)
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        header, data = rows[0], np.array([[float(v) for v in r] for r in rows[1:]])
        cols = {name: data[:, k] for k, name in enumerate(header)}
        n = sum(1 for h in header if re_fullmatch_x(h))
        m = sum(1 for h in header if h.startswith("u") and h[1:].isdigit())
        p = sum(1 for h in header if h.startswith("y") and h[1:].isdigit())
        x = np.stack([cols[f"x{i + 1}"] for i in range(n)], axis=1)
        u = np.stack([cols[f"u{i + 1}"] for i in range(m)], axis=1)
        xdot = np.stack([cols[f"xdot{i + 1}"] for i in range(n)], axis=1)
        y = np.stack([cols[f"y{i + 1}"] for i in range(p)], axis=1) if p else None
        xi = np.stack([cols[f"xi{i + 1}"] for i in range(p)], axis=1) if p else None
        prov = {}
        sidecar = path.with_suffix(".json")
        if sidecar.exists():
            prov = json.loads(sidecar.read_text())
            prov.pop("columns", None)
        return ExperimentDataset(cols["t"], x, u, xdot, y=y, xi=xi, provenance=prov)


def re_fullmatch_x(h: str) -> bool:
    return h.startswith("x") and h[1:].isdigit() and not h.startswith("xdot")


def _rk4_step(field, t: float, x: np.ndarray, dt: float) -> np.ndarray:
    k1 = field(t, x)
    k2 = field(t + 0.5 * dt, x + 0.5 * dt * k1)
    k3 = field(t + 0.5 * dt, x + 0.5 * dt * k2)
    k4 = field(t + dt, x + dt * k3)
    return x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def _disturbance_fn(plant: Plant, disturbance):
    """Return (d(t) callable or None, effective E)."""
    if disturbance is None:
        return None, None
    d_fn = disturbance.d
    q = disturbance.q
    return d_fn, plant.effective_E(q)


def run_experiment(
    plant: Plant,
    input_law: Union[UniformInput, np.ndarray],
    x0: np.ndarray,
    T: int,
    dt: float = 0.05,
    disturbance=None,
) -> ExperimentDataset:
    """Integrate the plant under a piecewise-constant input and sample it.

    Samples are taken at t_i = i*dt for i = 0..T-1; the recorded derivative
    is the exact vector field (plus disturbance) at the sample instant.
    """
    if T < 1 or dt <= 0:
        raise ValueError("need T >= 1 and dt > 0")
    x = np.asarray(x0, dtype=float).copy()
    if x.shape != (plant.n,):
        raise ValueError(f"x0 has shape {x.shape}, expected ({plant.n},)")
    useq = input_law.sequence(T, plant.m) if isinstance(input_law, UniformInput) else np.asarray(input_law, dtype=float)
    if useq.shape != (T, plant.m):
        raise ValueError(f"input sequence has shape {useq.shape}, expected {(T, plant.m)}")
    d_fn, E = _disturbance_fn(plant, disturbance)

    times = dt * np.arange(T)
    xs, xdots, ds = [], [], []
    for i in range(T):
        t = times[i]
        u = useq[i]
        if not np.all(np.isfinite(x)):
            raise SimulationError("state escaped during experiment", t)
        xs.append(x.copy())
        deriv = plant.f(x, u)
        if d_fn is not None:
            dval = d_fn(t)
            ds.append(dval)
            deriv = deriv + E @ dval
        xdots.append(deriv)

        def field(tt, xx, _u=u):
            dx = plant.f(xx, _u)
            if d_fn is not None:
                dx = dx + d_fn(tt) @ E.T
            return dx

        x = _rk4_step(field, t, x, dt)
    prov = {
        "plant": plant.name,
        "dt": dt,
        "T": T,
        "x0": list(map(float, np.asarray(x0).ravel())),
        "input_law": repr(input_law) if isinstance(input_law, UniformInput) else "sequence",
        "disturbance": repr(disturbance) if disturbance is not None else None,
    }
    return ExperimentDataset(
        times,
        np.array(xs),
        useq.copy(),
        np.array(xdots),
        d=np.array(ds) if ds else None,
        provenance=prov,
    )


def run_integral_experiment(
    plant: Plant,
    dictionary: Dictionary,
    C: np.ndarray,
    r: np.ndarray,
    input_law: Union[UniformInput, np.ndarray],
    x0: np.ndarray,
    T: int,
    dt: float = 0.05,
    disturbance=None,
    xi0: Optional[np.ndarray] = None,
) -> ExperimentDataset:
    """Experiment with the error integrator running alongside the plant.

    The regulated output y = C Z(x) and the integrator state xi (with
    d(xi)/dt = y - r) are recorded at the sample instants.  Exciting xi
    through the open-loop error is an interpretation choice: the data
    identity only needs the y samples, but xi must vary for the extended
    data matrix to reach full row rank.
    """
    C = np.atleast_2d(np.asarray(C, dtype=float))
    r = np.asarray(r, dtype=float).ravel()
    p = C.shape[0]
    if C.shape[1] != dictionary.s or r.shape[0] != p:
        raise ValueError("C must be p x s and r length p")
    x = np.asarray(x0, dtype=float).copy()
    xi = np.zeros(p) if xi0 is None else np.asarray(xi0, dtype=float).copy()
    useq = input_law.sequence(T, plant.m) if isinstance(input_law, UniformInput) else np.asarray(input_law, dtype=float)
    d_fn, E = _disturbance_fn(plant, disturbance)

    times = dt * np.arange(T)
    xs, xis, ys, xdots, ds = [], [], [], [], []
    state = np.concatenate([x, xi])
    for i in range(T):
        t = times[i]
        u = useq[i]
        x, xi = state[: plant.n], state[plant.n :]
        if not np.all(np.isfinite(state)):
            raise SimulationError("state escaped during experiment", t)
        xs.append(x.copy())
        xis.append(xi.copy())
        y = C @ eval_Z(dictionary, x)
        ys.append(y)
        deriv = plant.f(x, u)
        if d_fn is not None:
            dval = d_fn(t)
            ds.append(dval)
            deriv = deriv + E @ dval
        xdots.append(deriv)

        def field(tt, ss, _u=u):
            xx, _ = ss[: plant.n], ss[plant.n :]
            dx = plant.f(xx, _u)
            if d_fn is not None:
                dx = dx + E @ d_fn(tt)
            dxi = C @ eval_Z(dictionary, xx) - r
            return np.concatenate([dx, dxi])

        state = _rk4_step(field, t, state, dt)
    prov = {
        "plant": plant.name,
        "dt": dt,
        "T": T,
        "mode": "integral",
        "r": list(map(float, r)),
        "disturbance": repr(disturbance) if disturbance is not None else None,
    }
    return ExperimentDataset(
        times,
        np.array(xs),
        useq.copy(),
        np.array(xdots),
        d=np.array(ds) if ds else None,
        y=np.array(ys),
        xi=np.array(xis),
        provenance=prov,
    )


# ---------------------------------------------------------------------------
# Closed-loop simulation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class StaticController:
    """u = K Z(x)."""

    K: np.ndarray
    dictionary: Dictionary

    def u(self, x: np.ndarray) -> np.ndarray:
        return eval_Z(self.dictionary, x) @ np.asarray(self.K, dtype=float).T


@dataclass(frozen=True)
class AffineController:
    """u = u_star + K (x - x_star): local design around a known equilibrium."""

    K: np.ndarray
    x_star: np.ndarray
    u_star: np.ndarray

    def u(self, x: np.ndarray) -> np.ndarray:
        K = np.asarray(self.K, dtype=float)
        return np.asarray(self.u_star) + (x - np.asarray(self.x_star)) @ K.T


@dataclass(frozen=True)
class IntegralController:
    """u = K [x; xi; Q(x)] with the error integrator d(xi)/dt = C Z(x) - r."""

    K: np.ndarray
    dictionary: Dictionary
    C: np.ndarray
    r: np.ndarray

    @property
    def p(self) -> int:
        return np.atleast_2d(self.C).shape[0]

    def u(self, x: np.ndarray, xi: np.ndarray) -> np.ndarray:
        d = self.dictionary
        z = np.concatenate([x, xi, d.eval_Q(x)], axis=-1)
        return z @ np.asarray(self.K, dtype=float).T

    def error(self, x: np.ndarray) -> np.ndarray:
        C = np.atleast_2d(np.asarray(self.C, dtype=float))
        return eval_Z(self.dictionary, x) @ C.T - np.asarray(self.r, dtype=float)


@dataclass
class Trajectory:
    """Sampled closed-loop run; state arrays have shape (steps, [batch,] dim)."""

    times: np.ndarray
    x: np.ndarray
    u: np.ndarray
    e: Optional[np.ndarray] = None

    def endpoint(self) -> np.ndarray:
        return self.x[-1]

    def to_csv(self, path) -> None:
        if self.x.ndim != 2:
            raise ValueError("CSV export supports single trajectories only")
        n, m = self.x.shape[1], self.u.shape[1]
        header = ["t"] + [f"x{i + 1}" for i in range(n)] + [f"u{i + 1}" for i in range(m)]
        if self.e is not None:
            header += [f"e{i + 1}" for i in range(self.e.shape[1])]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(header)
            for i in range(len(self.times)):
                row = [self.times[i], *self.x[i], *self.u[i]]
                if self.e is not None:
                    row += list(self.e[i])
                w.writerow([repr(float(v)) for v in row])


def simulate_closed_loop(
    plant: Plant,
    controller,
    x0: np.ndarray,
    horizon: float,
    dt: float = 0.01,
    disturbance=None,
    record_every: int = 1,
) -> Trajectory:
    """RK4 rollout of the plant in feedback; x0 may be one state or a batch.

    For an IntegralController the integrator state starts at zero and the
    tracking error is recorded alongside the trajectory.
    """
    x0 = np.asarray(x0, dtype=float)
    batched = x0.ndim == 2
    d_fn, E = _disturbance_fn(plant, disturbance)
    integral = isinstance(controller, IntegralController)

    if integral:
        p = controller.p
        xi0 = np.zeros(x0.shape[:-1] + (p,))
        state = np.concatenate([x0, xi0], axis=-1)

        def field(t, s):
            x, xi = s[..., : plant.n], s[..., plant.n :]
            u = controller.u(x, xi)
            dx = plant.f(x, u)
            if d_fn is not None:
                dx = dx + np.asarray(d_fn(t)) @ E.T
            return np.concatenate([dx, controller.error(x)], axis=-1)

    else:
        state = x0.copy()

        def field(t, s):
            u = controller.u(s)
            dx = plant.f(s, u)
            if d_fn is not None:
                dx = dx + np.asarray(d_fn(t)) @ E.T
            return dx

    n_steps = int(round(horizon / dt))
    times, xs, us, es = [], [], [], []

    def record(t, s):
        x = s[..., : plant.n]
        times.append(t)
        xs.append(x.copy())
        if integral:
            xi = s[..., plant.n :]
            us.append(controller.u(x, xi))
            es.append(controller.error(x))
        else:
            us.append(controller.u(x))

    record(0.0, state)
    for k in range(n_steps):
        t = k * dt
        state = _rk4_step(field, t, state, dt)
        if not np.all(np.isfinite(state)):
            raise SimulationError("closed-loop state escaped", t + dt)
        if (k + 1) % record_every == 0 or k == n_steps - 1:
            record(t + dt, state)

    return Trajectory(
        np.array(times),
        np.array(xs),
        np.array(us),
        e=np.array(es) if es else None,
    )
