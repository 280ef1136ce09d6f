"""Core value types and exact small-instance oracles.

Every other module builds on the types defined here. Arrays handed to the
constructors are copied and frozen, so instances can be shared freely
between threads.
"""
from __future__ import annotations

import hashlib
import itertools
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "SparseLabError",
    "InfeasibleError",
    "RankDeficientError",
    "BudgetExceededError",
    "GateOverlapError",
    "ShapeMismatchError",
    "Dictionary",
    "SparseSignal",
    "RecoveryResult",
    "content_hash",
    "brute_force_l0",
    "least_squares_on_support",
    "labels_from_signal",
    "FEASIBILITY_TOL",
]

FEASIBILITY_TOL = 1e-8
UNIT_NORM_TOL = 1e-10
CONDITION_LIMIT = 1e12


class SparseLabError(Exception):
    """Base class for errors raised by this package."""


class InfeasibleError(SparseLabError, ValueError):
    pass


class RankDeficientError(SparseLabError, np.linalg.LinAlgError):
    pass


class BudgetExceededError(SparseLabError, ValueError):
    pass


class GateOverlapError(SparseLabError, ValueError):
    pass


class ShapeMismatchError(SparseLabError, ValueError):
    pass


def _frozen(a, dtype=float):
    arr = np.array(a, dtype=dtype, copy=True)
    arr.setflags(write=False)
    return arr


def content_hash(*arrays) -> str:
    """sha256 over shapes and raw little-endian float64 bytes."""
    h = hashlib.sha256()
    for a in arrays:
        a = np.ascontiguousarray(np.asarray(a, dtype="<f8"))
        h.update(repr(a.shape).encode())
        h.update(a.tobytes())
    return h.hexdigest()


@dataclass(frozen=True)
class Dictionary:
    """An n x m synthesis matrix with optional provenance metadata."""

    entries: np.ndarray
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        entries = _frozen(self.entries)
        if entries.ndim != 2:
            raise ShapeMismatchError(f"dictionary must be 2-D, got shape {entries.shape}")
        object.__setattr__(self, "entries", entries)

    @property
    def n(self) -> int:
        return self.entries.shape[0]

    @property
    def m(self) -> int:
        return self.entries.shape[1]

    @property
    def column_norms_unit(self) -> bool:
        norms = np.linalg.norm(self.entries, axis=0)
        return bool(np.all(np.abs(norms - 1.0) <= UNIT_NORM_TOL))

    @property
    def hash(self) -> str:
        return content_hash(self.entries)

    def __matmul__(self, other):
        return self.entries @ other

    def columns(self, idx) -> np.ndarray:
        return self.entries[:, list(idx)]


def _as_matrix(phi) -> np.ndarray:
    return phi.entries if isinstance(phi, Dictionary) else np.asarray(phi, dtype=float)


@dataclass(frozen=True)
class SparseSignal:
    values: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "values", _frozen(self.values).ravel())

    @property
    def support(self) -> tuple[int, ...]:
        return tuple(int(i) for i in np.flatnonzero(self.values))

    @property
    def m(self) -> int:
        return self.values.shape[0]

    @classmethod
    def from_support(cls, m: int, support, amplitudes) -> "SparseSignal":
        x = np.zeros(m)
        x[list(support)] = amplitudes
        return cls(x)


@dataclass(frozen=True)
class RecoveryResult:
    """Outcome of a solver run.

    ``objective_trace[t]`` is 0.5 * ||y - Phi x_t||^2 with ``x_0`` the
    starting point, so the trace has ``iterations_used + 1`` entries. Runs
    made without tracing keep only the first and last values and mark
    ``info["trace"] = "endpoints"``.
    """

    estimate: SparseSignal
    iterations_used: int
    converged: bool
    objective_trace: tuple[float, ...]
    info: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        want = self.iterations_used + 1
        if self.info.get("trace") == "endpoints":
            want = min(want, 2)
        if len(self.objective_trace) != want:
            raise ValueError("objective_trace must have iterations_used + 1 entries")


def _lstsq_on(y, A, support):
    sub = A[:, support]
    coef, *_ = np.linalg.lstsq(sub, y, rcond=None)
    resid = float(np.linalg.norm(y - sub @ coef))
    return coef, resid


def least_squares_on_support(y, phi, support) -> SparseSignal:
    A = _as_matrix(phi)
    y = np.asarray(y, dtype=float)
    support = sorted(int(i) for i in support)
    n, m = A.shape
    if len(support) > n:
        raise RankDeficientError(f"support of size {len(support)} exceeds n={n}")
    x = np.zeros(m)
    if not support:
        return SparseSignal(x)
    sub = A[:, support]
    if np.linalg.cond(sub) > CONDITION_LIMIT:
        raise RankDeficientError(f"columns {support} are numerically rank deficient")
    coef, *_ = np.linalg.lstsq(sub, y, rcond=None)
    x[support] = coef
    return SparseSignal(x)


def _minimal_support(y, A, k_max, tol):
    """Enumerate supports by increasing size; return (support, coef) or None."""
    if np.linalg.norm(y) <= tol:
        return (), np.zeros(0)
    m = A.shape[1]
    for k in range(1, k_max + 1):
        best = None
        for support in itertools.combinations(range(m), k):
            coef, resid = _lstsq_on(y, A, list(support))
            if resid <= tol and (best is None or resid < best[2]):
                best = (support, coef, resid)
        if best is not None:
            return best[0], best[1]
    return None


def brute_force_l0(y, phi, k_max: int, *, tol: float = FEASIBILITY_TOL) -> SparseSignal:
    """Minimum-cardinality exact representation of ``y`` by enumeration.

    Supports are visited in lexicographic order within each cardinality, so
    ties on the residual resolve to the lexicographically smallest support.
    """
    A = _as_matrix(phi)
    y = np.asarray(y, dtype=float)
    m = A.shape[1]
    if m > 24 or k_max > 4:
        raise BudgetExceededError(f"enumeration guard: need m <= 24 and k_max <= 4 (m={m}, k_max={k_max})")
    found = _minimal_support(y, A, k_max, tol)
    if found is None:
        raise InfeasibleError(f"no support of size <= {k_max} reproduces y within {tol}")
    support, coef = found
    x = np.zeros(m)
    x[list(support)] = coef
    return SparseSignal(x)


def labels_from_signal(x) -> np.ndarray:
    values = x.values if isinstance(x, SparseSignal) else np.asarray(x)
    return (values != 0).astype(np.int8)
