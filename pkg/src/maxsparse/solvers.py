"""Iterative sparse solvers built on one layer-iteration engine.

Every thresholded solver here runs ``x <- H(Psi x + Gamma y)``; plain IHT,
the generalized layer and the weighted variant differ only in the weights
they hand to :func:`generalized_layer_solve`.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .model import (
    GateOverlapError,
    RecoveryResult,
    SparseLabError,
    SparseSignal,
    _as_matrix,
    least_squares_on_support,
)

__all__ = [
    "LayerWeights",
    "SolverConfig",
    "SingularScalingError",
    "hard_threshold",
    "gated_hard_threshold",
    "soft_threshold",
    "iht_weights",
    "apply_layer",
    "generalized_layer_solve",
    "iht",
    "weighted_iht",
    "ista",
    "omp",
    "iht_many",
    "ista_many",
]

FIXED_POINT_TOL = 1e-8


class SingularScalingError(SparseLabError, ValueError):
    pass


@dataclass(frozen=True)
class LayerWeights:
    psi: np.ndarray
    gamma: np.ndarray


@dataclass(frozen=True)
class SolverConfig:
    k: int
    max_iterations: int = 1000
    step_size: float = 1.0
    tolerance: float = 1e-9

    def __post_init__(self):
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if self.tolerance <= 0 or self.step_size <= 0:
            raise ValueError("tolerance and step_size must be positive")


def _keep_largest(x, candidates, k):
    """Indices among ``candidates`` holding the k largest |x|; lowest index wins ties."""
    if k <= 0 or candidates.size == 0:
        return candidates[:0]
    order = np.argsort(-np.abs(x[candidates]), kind="stable")
    return candidates[order[:k]]


def hard_threshold(x, k: int) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    out = np.zeros_like(x)
    keep = _keep_largest(x, np.arange(x.size), k)
    out[keep] = x[keep]
    return out


def gated_hard_threshold(x, k: int, omega_on=(), omega_off=()) -> np.ndarray:
    """Hard threshold with pass-through (``omega_on``) and forced-zero (``omega_off``) sets."""
    x = np.asarray(x, dtype=float)
    on = np.fromiter(sorted(set(int(i) for i in omega_on)), dtype=np.intp)
    off = set(int(i) for i in omega_off)
    if off.intersection(on.tolist()):
        raise GateOverlapError(f"gate sets overlap on {sorted(off.intersection(on.tolist()))}")
    free = np.ones(x.size, dtype=bool)
    free[on] = False
    free[list(off)] = False
    out = np.zeros_like(x)
    out[on] = x[on]
    keep = _keep_largest(x, np.flatnonzero(free), k)
    out[keep] = x[keep]
    return out


def soft_threshold(v, tau):
    v = np.asarray(v, dtype=float)
    return np.sign(v) * np.maximum(np.abs(v) - tau, 0.0)


def iht_weights(phi, step_size: float = 1.0) -> LayerWeights:
    A = _as_matrix(phi)
    return LayerWeights(np.eye(A.shape[1]) - step_size * (A.T @ A), step_size * A.T)


def apply_layer(x, y, weights: LayerWeights, k: int) -> np.ndarray:
    return hard_threshold(weights.psi @ x + weights.gamma @ y, k)


def _objective(y, A, x):
    r = y - A @ x
    return 0.5 * float(r @ r)


def _run_layers(y, weights, config, objective, record_iterates=False):
    x = np.zeros(weights.psi.shape[1])
    trace = [objective(x)]
    iterates = [x] if record_iterates else None
    gy = weights.gamma @ y
    converged = False
    t = 0
    with np.errstate(over="ignore", invalid="ignore"):
        for t in range(1, config.max_iterations + 1):
            x_new = hard_threshold(weights.psi @ x + gy, config.k)
            if not np.all(np.isfinite(x_new)):
                t -= 1
                break
            change = np.linalg.norm(x_new - x)
            x = x_new
            trace.append(objective(x))
            if record_iterates:
                iterates.append(x)
            if change < config.tolerance:
                converged = True
                break
    return x, t, converged, trace, iterates


def generalized_layer_solve(
    y, phi, weights: LayerWeights, config: SolverConfig, *, validate: bool = True, record_iterates: bool = False
) -> RecoveryResult:
    A = _as_matrix(phi)
    y = np.asarray(y, dtype=float)
    if validate:
        gap = np.linalg.norm(weights.psi - (np.eye(A.shape[1]) - weights.gamma @ A))
        if gap > FIXED_POINT_TOL:
            warnings.warn(
                f"Psi deviates from I - Gamma Phi by {gap:.3g}; the true solution is not a fixed point",
                stacklevel=2,
            )
    x, t, converged, trace, iterates = _run_layers(y, weights, config, lambda z: _objective(y, A, z), record_iterates)
    info = {}
    if record_iterates:
        info["iterates"] = iterates
    return RecoveryResult(SparseSignal(x), t, converged, tuple(trace), info)


def iht(y, phi, config: SolverConfig, *, record_iterates: bool = False) -> RecoveryResult:
    """x <- H_k[x + mu Phi^T (y - Phi x)] from x = 0.

    The step is honoured even when ||Phi||_2^2 * mu > 2; the spectral norm
    is returned in ``info`` so divergent runs can be diagnosed.
    """
    A = _as_matrix(phi)
    if config.k > A.shape[0]:
        warnings.warn(f"k={config.k} exceeds n={A.shape[0]}", stacklevel=2)
    res = generalized_layer_solve(
        y, A, iht_weights(A, config.step_size), config, validate=False, record_iterates=record_iterates
    )
    res.info["spectral_norm"] = float(np.linalg.norm(A, 2))
    return res


def weighted_iht(y, phi, W, D, config: SolverConfig, *, record_iterates: bool = False) -> RecoveryResult:
    """IHT on the rescaled system W Phi D, reported in the original coordinates.

    The layer uses Gamma = D Phi^T W^T W and Psi = I - Gamma Phi D; its
    iterates estimate D^-1 x*, and the returned estimate is D times the
    final iterate. Raw iterates go to ``info["iterates"]`` on request.
    """
    A = _as_matrix(phi)
    y = np.asarray(y, dtype=float)
    W = np.asarray(W, dtype=float)
    d = np.diag(np.asarray(D, dtype=float)) if np.ndim(D) == 2 else np.asarray(D, dtype=float)
    if np.any(np.abs(d) < np.finfo(float).tiny) or not np.all(np.isfinite(d)):
        raise SingularScalingError("D must be an invertible diagonal")
    scaled = A * d
    gamma = config.step_size * (scaled.T @ (W.T @ W))
    weights = LayerWeights(np.eye(A.shape[1]) - gamma @ scaled, gamma)
    x, t, converged, trace, iterates = _run_layers(
        y, weights, config, lambda z: _objective(y, A, d * z), record_iterates
    )
    estimate = d * x
    info = {"iterates": iterates} if record_iterates else {}
    return RecoveryResult(SparseSignal(estimate), t, converged, tuple(trace), info)


def ista(y, phi, lam: float, config: SolverConfig, *, step_size: float | None = None,
         record_trace: bool = True) -> RecoveryResult:
    """l1-regularized least squares by proximal gradient.

    ``step_size`` defaults to 1/||Phi||_2^2; ``config.k`` is unused.
    ``info["penalized_trace"]`` holds 0.5||y - Phi x||^2 + lam ||x||_1.
    With ``record_trace=False`` only the endpoints are kept (timing runs).
    """
    A = _as_matrix(phi)
    y = np.asarray(y, dtype=float)
    mu = step_size if step_size is not None else 1.0 / np.linalg.norm(A, 2) ** 2
    x = np.zeros(A.shape[1])
    # x + mu (A^T y - A^T A x) as one affine map
    M = np.eye(A.shape[1]) - mu * (A.T @ A)
    b = mu * (A.T @ y)
    tau = mu * lam
    trace = [_objective(y, A, x)]
    penalized = [trace[0]]
    converged = False
    t = 0
    for t in range(1, config.max_iterations + 1):
        v = M @ x + b
        x_new = np.sign(v) * np.maximum(np.abs(v) - tau, 0.0)
        change = np.linalg.norm(x_new - x)
        x = x_new
        if record_trace:
            trace.append(_objective(y, A, x))
            penalized.append(trace[-1] + lam * float(np.abs(x).sum()))
        if change < config.tolerance:
            converged = True
            break
    info = {"penalized_trace": penalized, "step_size": mu}
    if not record_trace:
        info["trace"] = "endpoints"
        if t:
            trace.append(_objective(y, A, x))
            penalized.append(trace[-1] + lam * float(np.abs(x).sum()))
    return RecoveryResult(SparseSignal(x), t, converged, tuple(trace), info)


def omp(y, phi, k: int) -> RecoveryResult:
    A = _as_matrix(phi)
    y = np.asarray(y, dtype=float)
    n, m = A.shape
    if k > n:
        raise ValueError(f"k={k} exceeds n={n}")
    support: list[int] = []
    x = np.zeros(m)
    residual = y.copy()
    trace = [_objective(y, A, x)]
    floor = 1e-12 * max(np.linalg.norm(y), 1.0)
    for _ in range(k):
        if np.linalg.norm(residual) <= floor:
            break
        corr = np.abs(A.T @ residual)
        corr[support] = -np.inf
        support.append(int(np.argmax(corr)))
        x = least_squares_on_support(y, A, support).values.copy()
        residual = y - A @ x
        trace.append(_objective(y, A, x))
    converged = np.linalg.norm(residual) <= floor
    return RecoveryResult(SparseSignal(x), len(trace) - 1, bool(converged), tuple(trace))


# Column-batched variants for sweeps: Y is n x B, results are m x B.


def _column_hard_threshold(Z, k):
    order = np.argsort(-np.abs(Z), axis=0, kind="stable")
    out = np.zeros_like(Z)
    keep = order[:k]
    cols = np.arange(Z.shape[1])
    out[keep, cols] = Z[keep, cols]
    return out


def iht_many(Y, phi, config: SolverConfig) -> tuple[np.ndarray, np.ndarray]:
    """Run IHT on every column of ``Y``; returns (estimates, iterations_used)."""
    A = _as_matrix(phi)
    Y = np.asarray(Y, dtype=float)
    psi = np.eye(A.shape[1]) - config.step_size * (A.T @ A)
    GY = config.step_size * (A.T @ Y)
    X = np.zeros((A.shape[1], Y.shape[1]))
    iters = np.zeros(Y.shape[1], dtype=int)
    active = np.ones(Y.shape[1], dtype=bool)
    with np.errstate(over="ignore", invalid="ignore"):
        for _ in range(config.max_iterations):
            idx = np.flatnonzero(active)
            if idx.size == 0:
                break
            Xn = _column_hard_threshold(psi @ X[:, idx] + GY[:, idx], config.k)
            finite = np.all(np.isfinite(Xn), axis=0)
            change = np.linalg.norm(Xn - X[:, idx], axis=0)
            X[:, idx[finite]] = Xn[:, finite]
            iters[idx[finite]] += 1
            done = ~finite | (change < config.tolerance)
            active[idx[done]] = False
    return X, iters


def ista_many(Y, phi, lam: float, config: SolverConfig, *, step_size: float | None = None):
    A = _as_matrix(phi)
    Y = np.asarray(Y, dtype=float)
    mu = step_size if step_size is not None else 1.0 / np.linalg.norm(A, 2) ** 2
    AtA = A.T @ A
    AtY = A.T @ Y
    X = np.zeros((A.shape[1], Y.shape[1]))
    iters = np.zeros(Y.shape[1], dtype=int)
    active = np.ones(Y.shape[1], dtype=bool)
    for _ in range(config.max_iterations):
        idx = np.flatnonzero(active)
        if idx.size == 0:
            break
        Xi = X[:, idx]
        Xn = soft_threshold(Xi + mu * (AtY[:, idx] - AtA @ Xi), mu * lam)
        change = np.linalg.norm(Xn - Xi, axis=0)
        X[:, idx] = Xn
        iters[idx] += 1
        active[idx[change < config.tolerance]] = False
    return X, iters

