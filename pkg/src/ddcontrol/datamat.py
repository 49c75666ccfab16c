"""Arrangement of datasets into the matrices consumed by the synthesis programs.

Columns are kept in sample order; everything is dense (the sample counts in
this problem class are tiny).  Rank and conditioning of the library-sample
matrix are diagnosed on construction because the consistency equalities of
every synthesis program are generically infeasible without full row rank.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from ddcontrol.dictionary import Dictionary, eval_Z
from ddcontrol.plants import ExperimentDataset

__all__ = [
    "DataMatrices",
    "AnnihilatorW",
    "ExtendedDataMatrices",
    "build_matrices",
    "build_annihilator",
    "build_extended",
    "build_integral",
]

RANK_RTOL = 1e-8  # sigma > RANK_RTOL * sigma_max counts toward the rank


def _rank_diag(Z0: np.ndarray) -> tuple:
    sv = np.linalg.svd(Z0, compute_uv=False)
    smax = float(sv[0]) if len(sv) else 0.0
    rank = int(np.sum(sv > RANK_RTOL * smax)) if smax > 0 else 0
    smin = float(sv[min(Z0.shape) - 1]) if min(Z0.shape) else 0.0
    return rank, smin, smax


@dataclass
class DataMatrices:
    """U0, X0, X1 and the library-sample matrix Z0, with rank diagnostics."""

    U0: np.ndarray
    X0: np.ndarray
    X1: np.ndarray
    Z0: np.ndarray
    dictionary: Dictionary
    rank_Z0: int = 0
    sigma_min: float = 0.0
    sigma_max: float = 0.0
    warnings: list = field(default_factory=list)

    @property
    def T(self) -> int:
        return self.Z0.shape[1]

    @property
    def n(self) -> int:
        return self.X0.shape[0]

    @property
    def m(self) -> int:
        return self.U0.shape[0]

    @property
    def s(self) -> int:
        return self.Z0.shape[0]

    def diagnostics_table(self) -> str:
        cond = self.sigma_max / self.sigma_min if self.sigma_min > 0 else np.inf
        lines = [
            f"{'matrix':<8}{'shape':<12}{'rank':<6}{'sigma_min':<12}{'cond':<12}",
            f"{'Z0':<8}{str(self.Z0.shape):<12}{self.rank_Z0:<6}{self.sigma_min:<12.4e}{cond:<12.4e}",
        ]
        for w in self.warnings:
            lines.append(f"  ! {w}")
        return "\n".join(lines)

    def to_json_dict(self) -> dict:
        return {
            "U0": self.U0.tolist(),
            "X0": self.X0.tolist(),
            "X1": self.X1.tolist(),
            "Z0": self.Z0.tolist(),
            "dictionary": self.dictionary.to_json_dict(),
        }

    @staticmethod
    def from_json_dict(d: dict) -> "DataMatrices":
        return _with_diag(
            DataMatrices(
                np.array(d["U0"], dtype=float),
                np.array(d["X0"], dtype=float),
                np.array(d["X1"], dtype=float),
                np.array(d["Z0"], dtype=float),
                Dictionary.from_json(d["dictionary"]),
            )
        )


def _with_diag(dm: DataMatrices) -> DataMatrices:
    dm.rank_Z0, dm.sigma_min, dm.sigma_max = _rank_diag(dm.Z0)
    s, T = dm.Z0.shape
    if T < s:
        dm.warnings.append(f"T={T} < s={s}: Z0 cannot have full row rank")
    if dm.rank_Z0 < s:
        dm.warnings.append(
            f"rank(Z0)={dm.rank_Z0} < s={s}: consistency equalities are generically infeasible"
        )
    return dm


def build_matrices(ds: ExperimentDataset, dictionary: Dictionary) -> DataMatrices:
    """Stack the samples column-wise and evaluate the library on each state."""
    if ds.n != dictionary.n:
        raise ValueError(f"dataset state dim {ds.n} != dictionary n {dictionary.n}")
    Z0 = eval_Z(dictionary, ds.x).T
    return _with_diag(
        DataMatrices(ds.u.T.copy(), ds.x.T.copy(), ds.xdot.T.copy(), Z0, dictionary)
    )


@dataclass
class AnnihilatorW:
    """Known sampling-time matrix whose right kernel removes exo disturbances.

    Rows: a cos/sin pair per known frequency, then one all-ones row per
    constant channel.  Only the row space matters for the synthesis
    constraint, so ``reduced()`` drops the duplicated ones rows.
    """

    sigma1: int
    sigma2: int
    frequencies: tuple
    times: np.ndarray
    W: np.ndarray

    def reduced(self) -> np.ndarray:
        if self.sigma2 > 1:
            return self.W[: 2 * self.sigma1 + 1]
        return self.W

    @property
    def rows(self) -> int:
        return self.W.shape[0]


def build_annihilator(
    times: Sequence[float], sigma1: int, frequencies: Sequence[float], sigma2: int
) -> AnnihilatorW:
    times = np.asarray(times, dtype=float)
    freqs = tuple(float(f) for f in frequencies)
    if sigma1 == 0 and sigma2 == 0:
        raise ValueError("no disturbance model: sigma1 = sigma2 = 0")
    if len(freqs) != sigma1:
        raise ValueError(f"need {sigma1} frequencies, got {len(freqs)}")
    if any(f <= 0 for f in freqs) or len(set(freqs)) != sigma1:
        raise ValueError("frequencies must be positive and distinct")
    rows = []
    for f in freqs:
        rows.append(np.cos(f * times))
        rows.append(np.sin(f * times))
    for _ in range(sigma2):
        rows.append(np.ones_like(times))
    return AnnihilatorW(sigma1, sigma2, freqs, times, np.vstack(rows))


@dataclass
class ExtendedDataMatrices:
    """Data matrices for the input-integrator and integral-control designs.

    mode "input":    V0 (m x T), Xi0/Xi1 ((n+m) x T), Z0 (R x T) over the
                     extended library in xi = (x, u).
    mode "integral": U0 (m x T), Z0 ((s+p) x T) = [x; xi; Q(x)] samples,
                     Z1 ((n+p) x T) = [xdot; y] samples.
    """

    mode: str
    dictionary: Dictionary
    Z0: np.ndarray
    Z1: np.ndarray
    U0: np.ndarray
    p: int = 0
    rank_Z0: int = 0
    sigma_min: float = 0.0
    sigma_max: float = 0.0
    warnings: list = field(default_factory=list)

    @property
    def T(self) -> int:
        return self.Z0.shape[1]

    # names matching the input-extension construction
    @property
    def V0(self) -> np.ndarray:
        return self.U0

    @property
    def Xi1(self) -> np.ndarray:
        return self.Z1

    @property
    def n_state(self) -> int:
        """Row count of Z1: n+m in input mode, n+p in integral mode."""
        return self.Z1.shape[0]


def _ext_with_diag(edm: ExtendedDataMatrices) -> ExtendedDataMatrices:
    edm.rank_Z0, edm.sigma_min, edm.sigma_max = _rank_diag(edm.Z0)
    s, T = edm.Z0.shape
    if T < s:
        edm.warnings.append(f"T={T} < {s}: extended sample matrix cannot have full row rank")
    if edm.rank_Z0 < s:
        edm.warnings.append(f"rank={edm.rank_Z0} < {s}: consistency equalities will fail")
    return edm


def build_extended(ds: ExperimentDataset, ext_dictionary: Dictionary) -> ExtendedDataMatrices:
    """Matrices from an experiment on the input-extended plant xi = (x, u).

    The dataset's state samples are xi_i, its inputs are the integrator
    inputs v_i, and its derivatives are d(xi)/dt; the bottom m derivative
    rows must therefore reproduce V0 exactly.
    """
    if ds.n != ext_dictionary.n:
        raise ValueError("dataset does not match the extended dictionary dimension")
    Z0 = eval_Z(ext_dictionary, ds.x).T
    Xi1 = ds.xdot.T.copy()
    V0 = ds.u.T.copy()
    m = V0.shape[0]
    if not np.allclose(Xi1[-m:], V0, atol=1e-9):
        raise ValueError("bottom derivative rows do not equal the integrator input samples")
    return _ext_with_diag(ExtendedDataMatrices("input", ext_dictionary, Z0, Xi1, V0))


def build_integral(ds: ExperimentDataset, dictionary: Dictionary) -> ExtendedDataMatrices:
    """Matrices for the integral-control design from an integral-mode dataset."""
    if ds.y is None or ds.xi is None:
        raise ValueError("integral mode needs recorded y and xi channels")
    if ds.n != dictionary.n:
        raise ValueError(f"dataset state dim {ds.n} != dictionary n {dictionary.n}")
    p = ds.y.shape[1]
    Q0 = dictionary.eval_Q(ds.x).T
    Z0 = np.vstack([ds.x.T, ds.xi.T, Q0])
    Z1 = np.vstack([ds.xdot.T, ds.y.T])
    return _ext_with_diag(
        ExtendedDataMatrices("integral", dictionary, Z0, Z1, ds.u.T.copy(), p=p)
    )
