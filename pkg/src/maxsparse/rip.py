"""Exhaustive restricted-isometry constants and the rank-annihilating transform."""
from __future__ import annotations

import itertools
from dataclasses import dataclass
from math import comb

import numpy as np

from .model import BudgetExceededError, Dictionary, SparseLabError, _as_matrix

__all__ = [
    "IHT_RIP_BOUND",
    "RipReport",
    "DegenerateNullSpaceError",
    "delta_k_exhaustive",
    "cor3_transform",
    "transformed_dictionary",
    "iht_condition_holds",
]

IHT_RIP_BOUND = 1.0 / np.sqrt(32.0)
SUBSET_BUDGET = 2_000_000
_CHUNK = 20_000


class DegenerateNullSpaceError(SparseLabError, ValueError):
    pass


@dataclass(frozen=True)
class RipReport:
    k: int
    delta: float
    witness_support: tuple[int, ...]
    side: str  # "upper" when 1 + delta is attained, "lower" for 1 - delta


def _combination_chunks(m, k):
    it = itertools.combinations(range(m), k)
    while True:
        block = list(itertools.islice(it, _CHUNK))
        if not block:
            return
        yield np.array(block, dtype=np.intp)


def delta_k_exhaustive(phi, k: int) -> RipReport:
    """delta_k over every k-column Gram submatrix.

    Ties keep the lexicographically first subset.
    """
    A = _as_matrix(phi)
    n, m = A.shape
    if k < 1 or k > m:
        raise ValueError(f"k must lie in [1, m], got {k}")
    if k > n:
        raise ValueError(f"k={k} exceeds n={n}")
    if comb(m, k) > SUBSET_BUDGET:
        raise BudgetExceededError(f"C({m},{k}) = {comb(m, k)} subsets exceeds budget {SUBSET_BUDGET}")
    G = A.T @ A
    best = (-1.0, None, "upper")
    for idx in _combination_chunks(m, k):
        sub = G[idx[:, :, None], idx[:, None, :]]
        eig = np.linalg.eigvalsh(sub)
        upper = eig[:, -1] - 1.0
        lower = 1.0 - eig[:, 0]
        dev = np.maximum(np.abs(upper), np.abs(lower))
        j = int(np.argmax(dev))
        if dev[j] > best[0]:
            side = "upper" if abs(upper[j]) >= abs(lower[j]) else "lower"
            best = (float(dev[j]), tuple(int(i) for i in idx[j]), side)
    return RipReport(k, best[0], best[1], best[2])


def cor3_transform(phi, perturbation, epsilon: float, norm_scales):
    """Return ``(W, D)`` that cancel a known low-rank component.

    Rows of ``W`` are an orthonormal basis of null(perturbation^T), so
    ``W @ perturbation`` vanishes, and ``D = (epsilon N)^-1`` undoes the
    column normalizer. Then ``W Phi D = W A`` for Phi = [eps A + Delta] N.
    """
    P = np.asarray(perturbation, dtype=float)
    n = P.shape[0]
    U, s, _ = np.linalg.svd(P, full_matrices=True)
    tol = max(P.shape) * np.finfo(float).eps * (s[0] if s.size else 0.0)
    r = int(np.sum(s > tol))
    if r >= n:
        raise DegenerateNullSpaceError(f"perturbation has numerical rank {r} >= n={n}")
    W = U[:, r:].T
    D = np.diag(1.0 / (epsilon * np.asarray(norm_scales, dtype=float)))
    return W, D


def transformed_dictionary(phi, W, D, renormalize: bool = True) -> Dictionary:
    """W Phi D, optionally rescaled to unit columns for RIP comparisons."""
    M = W @ _as_matrix(phi) @ D
    if renormalize:
        M = M / np.linalg.norm(M, axis=0)
    return Dictionary(M, {"kind": "transformed"})


def iht_condition_holds(phi, k: int) -> bool:
    return delta_k_exhaustive(phi, 3 * k).delta < IHT_RIP_BOUND
