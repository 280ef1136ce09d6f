"""Seeded dictionary generators and the plain-text matrix format."""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .model import Dictionary, SparseSignal

__all__ = [
    "ClusteredDictSpec",
    "ClusteredDictionary",
    "normalize_columns",
    "gaussian_unit_columns",
    "rank_perturbed",
    "decaying_spectrum",
    "clustered",
    "cluster_support",
    "save_matrix",
    "load_matrix",
    "read_matrix_meta",
]


def normalize_columns(M):
    """Return (M N, diag(N)) where N rescales every column to unit norm."""
    M = np.asarray(M, dtype=float)
    scales = 1.0 / np.linalg.norm(M, axis=0)
    return M * scales, scales


def _unit_sphere(rng, n, count):
    G = rng.standard_normal((n, count))
    return G / np.linalg.norm(G, axis=0)


def gaussian_unit_columns(n: int, m: int, seed) -> Dictionary:
    rng = np.random.default_rng(seed)
    A = rng.normal(0.0, np.sqrt(1.0 / n), size=(n, m))
    phi, _ = normalize_columns(A)
    return Dictionary(phi, {"kind": "gaussian", "seed": seed})


def rank_perturbed(n: int, m: int, epsilon: float, r: int, seed):
    """Phi = [eps A + Delta_r] N with Delta_r of rank r and unit spectral norm.

    Returns ``(dictionary, delta)``. The normalizer diagonal is kept in
    ``dictionary.meta["norm_scales"]`` and the raw Gaussian part in
    ``dictionary.meta["details"]``; the annihilating transform needs both.
    """
    if not 1 <= r < n:
        raise ValueError(f"need 1 <= r < n, got r={r}, n={n}")
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    rng = np.random.default_rng(seed)
    A = rng.normal(0.0, np.sqrt(1.0 / n), size=(n, m))
    delta = rng.standard_normal((n, r)) @ rng.standard_normal((r, m))
    delta /= np.linalg.norm(delta, 2)
    phi, scales = normalize_columns(epsilon * A + delta)
    meta = {
        "kind": "rank_perturbed",
        "seed": seed,
        "epsilon": epsilon,
        "r": r,
        "norm_scales": scales,
        "details": A,
    }
    return Dictionary(phi, meta), delta


def decaying_spectrum(n: int, m: int, seed) -> Dictionary:
    """Sum of n Gaussian rank-one terms weighted by 1/i^2, columns normalized."""
    if m <= n:
        raise ValueError("decaying_spectrum expects an overcomplete shape (m > n)")
    rng = np.random.default_rng(seed)
    raw = np.zeros((n, m))
    for i in range(1, n + 1):
        u = rng.standard_normal(n)
        v = rng.standard_normal(m)
        raw += np.outer(u, v) / i**2
    phi, _ = normalize_columns(raw)
    return Dictionary(phi, {"kind": "decaying_spectrum", "seed": seed, "raw": raw})


@dataclass(frozen=True)
class ClusteredDictSpec:
    n: int
    cluster_sizes: tuple[int, ...]
    epsilon: float

    def __post_init__(self):
        object.__setattr__(self, "cluster_sizes", tuple(int(s) for s in self.cluster_sizes))
        if self.epsilon <= 0:
            raise ValueError("epsilon must be positive")
        if not self.cluster_sizes or min(self.cluster_sizes) < 1:
            raise ValueError("every cluster needs at least one column")

    @classmethod
    def uniform(cls, n: int, c: int, size: int, epsilon: float) -> "ClusteredDictSpec":
        return cls(n, (size,) * c, epsilon)

    @property
    def c(self) -> int:
        return len(self.cluster_sizes)

    @property
    def m(self) -> int:
        return sum(self.cluster_sizes)

    @property
    def membership(self) -> np.ndarray:
        """Cluster index of every column."""
        return np.repeat(np.arange(self.c), self.cluster_sizes)


@dataclass(frozen=True)
class ClusteredDictionary:
    dictionary: Dictionary
    centers: np.ndarray
    details: np.ndarray
    v: np.ndarray
    norm_scales: np.ndarray
    spec: ClusteredDictSpec

    def reconstruct(self) -> np.ndarray:
        """Rebuild Phi from (U, A, v, N); equals ``dictionary.entries``."""
        U = self.centers[:, self.spec.membership]
        return (U * self.v + self.spec.epsilon * self.details) * self.norm_scales

    def cluster_coefficients(self, x) -> np.ndarray:
        """Exact center weights z with y = U z + nu for y = Phi x.

        z_j sums n_ii v_i x_i over cluster j; the remainder is
        nu = eps * A N x, which is O(eps).
        """
        values = x.values if isinstance(x, SparseSignal) else np.asarray(x, dtype=float)
        weighted = self.norm_scales * self.v * values
        return np.bincount(self.spec.membership, weights=weighted, minlength=self.spec.c)


def clustered(spec: ClusteredDictSpec, seed) -> ClusteredDictionary:
    rng = np.random.default_rng(seed)
    U = _unit_sphere(rng, spec.n, spec.c)
    A = _unit_sphere(rng, spec.n, spec.m)
    v = rng.uniform(0.5, 1.5, size=spec.m)
    raw = U[:, spec.membership] * v + spec.epsilon * A
    phi, scales = normalize_columns(raw)
    meta = {"kind": "clustered", "seed": seed, "epsilon": spec.epsilon, "cluster_sizes": spec.cluster_sizes}
    return ClusteredDictionary(Dictionary(phi, meta), U, A, v, scales, spec)


def cluster_support(x, spec: ClusteredDictSpec) -> set[int]:
    values = x.values if isinstance(x, SparseSignal) else np.asarray(x)
    if values.shape[0] != spec.m:
        raise ValueError(f"signal length {values.shape[0]} != {spec.m}")
    return {int(j) for j in np.unique(spec.membership[values != 0])}


def save_matrix(path, M, meta: dict | None = None) -> None:
    """Optional ``# key=value`` lines, a header ``n m``, then one row per line at 17 significant digits."""
    M = M.entries if isinstance(M, Dictionary) else np.asarray(M, dtype=float)
    lines = [f"# {k}={v}" for k, v in (meta or {}).items()]
    lines.append(f"{M.shape[0]} {M.shape[1]}")
    lines += [" ".join(f"{v:.17g}" for v in row) for row in M]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_matrix_meta(path) -> dict:
    meta = {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if not line.startswith("#"):
                break
            key, _, val = line[1:].strip().partition("=")
            meta[key] = val
    return meta


def load_matrix(path) -> np.ndarray:
    with open(path, encoding="utf-8") as fh:
        line = fh.readline()
        while line.startswith("#"):
            line = fh.readline()
        n, m = (int(t) for t in line.split())
        M = np.loadtxt(fh, ndmin=2)
    if M.shape != (n, m):
        raise ValueError(f"{path}: header says {n}x{m}, body is {M.shape[0]}x{M.shape[1]}")
    return M
