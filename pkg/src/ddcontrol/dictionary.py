"""Function library Z(x) = [x; Q(x)]: evaluation, Jacobians, growth bounds.

The library is restricted to a closed set of basis-function kinds
(coordinates, monomials, sines, cosines, products of two coordinates) so
that every gradient and every worst-case gradient bound over a box is
available in closed form.  Arbitrary symbolic expressions are out of scope.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

__all__ = [
    "DictionaryError",
    "BasisFunction",
    "Dictionary",
    "BoxSet",
    "JacobianBound",
    "eval_Z",
    "jac_Z",
    "bound_jacobian",
]


class DictionaryError(ValueError):
    """Raised for malformed libraries, terms, or unbounded gradient requests."""


@dataclass(frozen=True)
class BasisFunction:
    """One scalar basis function with a closed-form gradient.

    kind is one of ``coordinate``, ``monomial``, ``sine``, ``cosine``,
    ``product``.  ``index`` is used by coordinate/sine/cosine, ``powers``
    (a tuple of (coordinate, exponent) pairs) by monomial, and ``pair`` by
    product.  All coordinate indices are 0-based internally.
    """

    kind: str
    index: int = -1
    powers: tuple = ()
    pair: tuple = ()

    # -- constructors -------------------------------------------------
    @staticmethod
    def coordinate(i: int) -> "BasisFunction":
        return BasisFunction("coordinate", index=i)

    @staticmethod
    def monomial(powers: dict) -> "BasisFunction":
        items = tuple(sorted((int(i), int(p)) for i, p in powers.items() if p != 0))
        if any(p < 0 for _, p in items):
            raise DictionaryError("monomial exponents must be nonnegative")
        return BasisFunction("monomial", powers=items)

    @staticmethod
    def sine(i: int) -> "BasisFunction":
        return BasisFunction("sine", index=i)

    @staticmethod
    def cosine(i: int) -> "BasisFunction":
        return BasisFunction("cosine", index=i)

    @staticmethod
    def product(i: int, j: int) -> "BasisFunction":
        if i == j:
            raise DictionaryError("product requires two distinct coordinates; use a monomial")
        return BasisFunction("product", pair=(min(i, j), max(i, j)))

    # -- evaluation ----------------------------------------------------
    def eval(self, x: np.ndarray) -> np.ndarray:
        """Evaluate at x of shape (..., n); returns shape (...)."""
        x = np.asarray(x, dtype=float)
        if self.kind == "coordinate":
            return x[..., self.index]
        if self.kind == "sine":
            return np.sin(x[..., self.index])
        if self.kind == "cosine":
            return np.cos(x[..., self.index])
        if self.kind == "product":
            i, j = self.pair
            return x[..., i] * x[..., j]
        if self.kind == "monomial":
            out = np.ones(x.shape[:-1])
            for i, p in self.powers:
                out = out * x[..., i] ** p
            return out
        raise DictionaryError(f"unknown basis kind {self.kind!r}")

    def grad(self, x: np.ndarray) -> np.ndarray:
        """Gradient at x of shape (..., n); returns shape (..., n)."""
        x = np.asarray(x, dtype=float)
        g = np.zeros_like(x)
        if self.kind == "coordinate":
            g[..., self.index] = 1.0
        elif self.kind == "sine":
            g[..., self.index] = np.cos(x[..., self.index])
        elif self.kind == "cosine":
            g[..., self.index] = -np.sin(x[..., self.index])
        elif self.kind == "product":
            i, j = self.pair
            g[..., i] = x[..., j]
            g[..., j] = x[..., i]
        elif self.kind == "monomial":
            for i, p in self.powers:
                part = np.full(x.shape[:-1], float(p)) * x[..., i] ** (p - 1)
                for j, q in self.powers:
                    if j != i:
                        part = part * x[..., j] ** q
                g[..., i] = part
        else:
            raise DictionaryError(f"unknown basis kind {self.kind!r}")
        return g

    def grad_box_bound(self, lower: np.ndarray, upper: np.ndarray) -> np.ndarray:
        """Per-coordinate sup of |d(self)/dx_c| over the box [lower, upper].

        Trigonometric derivatives are bounded by 1 regardless of the box
        (this reproduces the diagonal bounds used by the worked benchmarks
        and stays valid on unbounded coordinates).  Entries are +inf when
        the derivative grows unboundedly on an unbounded coordinate.
        """
        n = len(lower)
        mag = np.maximum(np.abs(lower), np.abs(upper))  # sup |x_c|, may be inf
        out = np.zeros(n)
        if self.kind == "coordinate":
            out[self.index] = 1.0
        elif self.kind in ("sine", "cosine"):
            out[self.index] = 1.0
        elif self.kind == "product":
            i, j = self.pair
            out[i] = mag[j]
            out[j] = mag[i]
        elif self.kind == "monomial":
            for i, p in self.powers:
                val = float(p)
                val *= _sup_power(mag[i], p - 1)
                for j, q in self.powers:
                    if j != i:
                        val *= _sup_power(mag[j], q)
                out[i] = val
        else:
            raise DictionaryError(f"unknown basis kind {self.kind!r}")
        return out

    @property
    def is_linear(self) -> bool:
        if self.kind == "coordinate":
            return True
        if self.kind == "monomial":
            return sum(p for _, p in self.powers) <= 1
        return False

    def term_string(self) -> str:
        """Render in the JSON micro-grammar (1-based coordinates)."""
        if self.kind == "coordinate":
            return f"x{self.index + 1}"
        if self.kind == "sine":
            return f"sin(x{self.index + 1})"
        if self.kind == "cosine":
            return f"cos(x{self.index + 1})"
        if self.kind == "product":
            i, j = self.pair
            return f"x{i + 1}*x{j + 1}"
        if self.kind == "monomial":
            if len(self.powers) == 1:
                i, p = self.powers[0]
                return f"x{i + 1}" if p == 1 else f"x{i + 1}^{p}"
            if len(self.powers) == 2 and all(p == 1 for _, p in self.powers):
                (i, _), (j, _) = self.powers
                return f"x{i + 1}*x{j + 1}"
        raise DictionaryError(f"term {self!r} has no micro-grammar rendering")


def _sup_power(m: float, p: int) -> float:
    if p == 0:
        return 1.0
    if not np.isfinite(m):
        return np.inf
    return float(m) ** p


_TERM_RES = [
    (re.compile(r"^x(\d+)$"), "coordinate"),
    (re.compile(r"^sin\(x(\d+)\)$"), "sine"),
    (re.compile(r"^cos\(x(\d+)\)$"), "cosine"),
    (re.compile(r"^x(\d+)\^(\d+)$"), "power"),
    (re.compile(r"^x(\d+)\*x(\d+)$"), "product"),
]


def parse_term(term: str) -> BasisFunction:
    """Parse one micro-grammar term: xK, sin(xK), cos(xK), xK^p, xJ*xK."""
    t = term.replace(" ", "")
    for rex, kind in _TERM_RES:
        m = rex.match(t)
        if not m:
            continue
        if kind == "coordinate":
            return BasisFunction.coordinate(int(m.group(1)) - 1)
        if kind == "sine":
            return BasisFunction.sine(int(m.group(1)) - 1)
        if kind == "cosine":
            return BasisFunction.cosine(int(m.group(1)) - 1)
        if kind == "power":
            return BasisFunction.monomial({int(m.group(1)) - 1: int(m.group(2))})
        if kind == "product":
            i, j = int(m.group(1)) - 1, int(m.group(2)) - 1
            return BasisFunction.product(i, j)
    raise DictionaryError(f"cannot parse term {term!r}")


@dataclass(frozen=True)
class Dictionary:
    """The known library Z(x) = [x; Q(x)] with n coordinates and s entries.

    Only the nonlinear part Q is stored; the n coordinate functions are
    implicit and always come first.
    """

    n: int
    nonlinear: tuple = ()

    def __post_init__(self):
        if self.n < 1:
            raise DictionaryError("state dimension must be positive")
        object.__setattr__(self, "nonlinear", tuple(self.nonlinear))
        rng = np.random.default_rng(0)
        a, b = rng.uniform(-2.0, 2.0, (2, self.n))
        for fn in self.nonlinear:
            if fn.is_linear:
                raise DictionaryError(f"{fn.term_string()} is linear; only Q entries are declared")
            for i in _term_coords(fn):
                if i >= self.n:
                    raise DictionaryError(f"{fn.term_string()} references x{i + 1} but n={self.n}")
            if np.allclose(fn.grad(a), fn.grad(b), atol=1e-12):
                raise DictionaryError(f"{fn.term_string()} has constant gradient at probe points")

    @property
    def s(self) -> int:
        return self.n + len(self.nonlinear)

    @property
    def functions(self) -> tuple:
        return tuple(BasisFunction.coordinate(i) for i in range(self.n)) + self.nonlinear

    def eval_Q(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if not self.nonlinear:
            return np.zeros(x.shape[:-1] + (0,))
        return np.stack([fn.eval(x) for fn in self.nonlinear], axis=-1)

    def jac_Q(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if not self.nonlinear:
            return np.zeros(x.shape[:-1] + (0, self.n))
        return np.stack([fn.grad(x) for fn in self.nonlinear], axis=-2)

    # -- JSON round trip ----------------------------------------------
    @staticmethod
    def from_json(spec) -> "Dictionary":
        """Build from ``{"n": 4, "terms": ["cos(x1)", "x1^2"]}`` (str or dict).

        ``terms`` lists the nonlinear entries Q(x) only; the coordinates are
        implicit.  A bare coordinate term is rejected.
        """
        if isinstance(spec, str):
            spec = json.loads(spec)
        n = int(spec["n"])
        fns = []
        for term in spec.get("terms", []):
            fn = parse_term(term)
            if fn.kind == "coordinate":
                raise DictionaryError(
                    f"term {term!r} is a coordinate; coordinates are implicit in Z(x)"
                )
            fns.append(fn)
        return Dictionary(n, tuple(fns))

    def to_json_dict(self) -> dict:
        return {"n": self.n, "terms": [fn.term_string() for fn in self.nonlinear]}

    def to_json(self) -> str:
        return json.dumps(self.to_json_dict(), sort_keys=True)


def _term_coords(fn: BasisFunction) -> Iterable[int]:
    if fn.kind in ("coordinate", "sine", "cosine"):
        return (fn.index,)
    if fn.kind == "product":
        return fn.pair
    return tuple(i for i, _ in fn.powers)


def eval_Z(dictionary: Dictionary, x: np.ndarray) -> np.ndarray:
    """Z(x) of shape (..., s): the coordinates followed by Q(x)."""
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != dictionary.n:
        raise DictionaryError(f"x has dimension {x.shape[-1]}, expected {dictionary.n}")
    return np.concatenate([x, dictionary.eval_Q(x)], axis=-1)


def jac_Z(dictionary: Dictionary, x: np.ndarray) -> np.ndarray:
    """dZ/dx of shape (..., s, n); the top n-by-n block is the identity."""
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != dictionary.n:
        raise DictionaryError(f"x has dimension {x.shape[-1]}, expected {dictionary.n}")
    eye = np.broadcast_to(np.eye(dictionary.n), x.shape[:-1] + (dictionary.n, dictionary.n))
    return np.concatenate([eye, dictionary.jac_Q(x)], axis=-2)


@dataclass(frozen=True)
class BoxSet:
    """Axis-aligned box, possibly unbounded (entries may be +-inf)."""

    lower: tuple
    upper: tuple

    def __post_init__(self):
        lo = np.asarray(self.lower, dtype=float)
        hi = np.asarray(self.upper, dtype=float)
        if lo.shape != hi.shape or lo.ndim != 1:
            raise DictionaryError("box bounds must be 1-d arrays of equal length")
        if np.any(lo > hi):
            raise DictionaryError("box requires lower <= upper componentwise")
        object.__setattr__(self, "lower", tuple(lo))
        object.__setattr__(self, "upper", tuple(hi))

    @staticmethod
    def full(n: int) -> "BoxSet":
        return BoxSet((-np.inf,) * n, (np.inf,) * n)

    @staticmethod
    def from_bounds(bounds: Sequence) -> "BoxSet":
        """Build from a list of (lo, hi) pairs; None means unbounded."""
        lo, hi = [], []
        for b in bounds:
            if b is None:
                lo.append(-np.inf)
                hi.append(np.inf)
            else:
                lo.append(float(b[0]))
                hi.append(float(b[1]))
        return BoxSet(tuple(lo), tuple(hi))

    @property
    def dim(self) -> int:
        return len(self.lower)

    @property
    def lo(self) -> np.ndarray:
        return np.asarray(self.lower)

    @property
    def hi(self) -> np.ndarray:
        return np.asarray(self.upper)

    @property
    def is_bounded(self) -> bool:
        return bool(np.all(np.isfinite(self.lo)) and np.all(np.isfinite(self.hi)))

    def contains(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return np.all((x >= self.lo) & (x <= self.hi), axis=-1)

    def truncate(self, radius: float) -> "BoxSet":
        """Clip unbounded coordinates to [-radius, radius] for sampling."""
        lo = np.maximum(self.lo, -radius)
        hi = np.minimum(self.hi, radius)
        return BoxSet(tuple(lo), tuple(hi))

    def to_bounds(self) -> list:
        return [
            None if not np.isfinite(l) and not np.isfinite(u) else [l, u]
            for l, u in zip(self.lower, self.upper)
        ]


@dataclass(frozen=True)
class JacobianBound:
    """Matrix R with (dQ/dx)^T (dQ/dx) <= R R^T on the set it was built for."""

    R: np.ndarray

    def __post_init__(self):
        R = np.atleast_2d(np.asarray(self.R, dtype=float))
        if not np.all(np.isfinite(R)):
            raise DictionaryError("Jacobian bound entries must be finite")
        object.__setattr__(self, "R", R)

    @property
    def gram(self) -> np.ndarray:
        return self.R @ self.R.T

    @property
    def tau(self) -> int:
        return self.R.shape[1]


def bound_jacobian(dictionary: Dictionary, box: BoxSet) -> JacobianBound:
    """Diagonal R with R R^T >= (dQ/dx)^T (dQ/dx) everywhere on the box.

    Entry i is sqrt(sum_j sup_box |dQ_j/dx_i|^2), i.e. the per-coordinate
    worst cases are accumulated across library entries.  This is generally
    conservative relative to the tight pointwise bound, but it is automatic
    and exact for the diagonal structures that arise from disjoint-support
    libraries.  Raises when an unboundedly growing entry meets an unbounded
    coordinate.
    """
    if box.dim != dictionary.n:
        raise DictionaryError(f"box dimension {box.dim} does not match n={dictionary.n}")
    lo, hi = box.lo, box.hi
    acc = np.zeros(dictionary.n)
    for fn in dictionary.nonlinear:
        b = fn.grad_box_bound(lo, hi)
        if not np.all(np.isfinite(b)):
            bad = int(np.flatnonzero(~np.isfinite(b))[0])
            raise DictionaryError(
                f"no finite bound on this set: d({fn.term_string()})/dx{bad + 1} "
                "is unbounded on an unbounded coordinate"
            )
        acc += b**2
    return JacobianBound(np.diag(np.sqrt(acc)))
