"""Adaptive iterative hard thresholding with per-layer weights and gates.

The two-phase schedule first locates active clusters with IHT over the
cluster centers U alone, pads the center estimate into the coordinate
system of [U, A], and then runs IHT over [U, A] with the detected centers
held on and the details of every rejected cluster held off.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Union

import numpy as np

from .dictgen import ClusteredDictionary
from .model import RecoveryResult, ShapeMismatchError, SparseSignal, least_squares_on_support
from .solvers import gated_hard_threshold

__all__ = [
    "AihtLayer",
    "AihtSchedule",
    "InvalidScheduleError",
    "run_aiht",
    "constant_schedule",
    "build_cluster_schedule",
    "cluster_residual_monitor",
    "cluster_aiht_recover",
]

GateSet = Union[frozenset, Callable[[np.ndarray], frozenset]]


class InvalidScheduleError(ValueError):
    pass


@dataclass(frozen=True)
class AihtLayer:
    """One layer: gated_H(psi @ x + gamma @ y).

    Gate sets may be fixed index sets or stateless functions of the
    incoming activation. ``synthesis`` maps this layer's output
    coordinates to observation space and is only used for the objective
    trace.
    """

    psi: np.ndarray
    gamma: np.ndarray
    k: int
    omega_on: GateSet = frozenset()
    omega_off: GateSet = frozenset()
    synthesis: np.ndarray | None = None

    @property
    def in_dim(self) -> int:
        return self.psi.shape[1]

    @property
    def out_dim(self) -> int:
        return self.psi.shape[0]


@dataclass(frozen=True)
class AihtSchedule:
    layers: tuple[AihtLayer, ...]
    phase_boundary: int
    decoder: np.ndarray  # final coordinate -> original index, -1 when discarded
    original_dim: int
    early_exit: Callable[[np.ndarray, np.ndarray], bool] | None = field(default=None, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(self.layers))
        if not 0 <= self.phase_boundary <= len(self.layers):
            raise InvalidScheduleError("phase_boundary out of range")
        for prev, nxt in zip(self.layers, self.layers[1:]):
            if prev.out_dim != nxt.in_dim:
                raise ShapeMismatchError(f"layer output {prev.out_dim} does not feed input {nxt.in_dim}")
        dec = np.asarray(self.decoder, dtype=int)
        if self.layers and dec.shape[0] != self.layers[-1].out_dim:
            raise ShapeMismatchError("decoder length must equal the final layer width")
        kept = dec[dec >= 0]
        if np.unique(kept).size != kept.size or (kept.size and kept.max() >= self.original_dim):
            raise InvalidScheduleError("decoder must be injective into the original coordinates")
        object.__setattr__(self, "decoder", dec)


def _resolve(gate, activation):
    return gate(activation) if callable(gate) else gate


def _objective(y, synthesis, x):
    if synthesis is None:
        return float("nan")
    r = y - synthesis @ x
    return 0.5 * float(r @ r)


def run_aiht(y, schedule: AihtSchedule) -> RecoveryResult:
    y = np.asarray(y, dtype=float)
    if not schedule.layers:
        raise InvalidScheduleError("schedule has no layers")
    first = schedule.layers[0]
    if first.gamma.shape[1] != y.shape[0]:
        raise ShapeMismatchError(f"observation length {y.shape[0]} != layer input {first.gamma.shape[1]}")
    x = np.zeros(first.in_dim)
    trace = [_objective(y, first.synthesis, x)]
    phase_one_output = x
    t = 0
    skipped = 0
    while t < len(schedule.layers):
        if t < schedule.phase_boundary and schedule.early_exit is not None and t > 0 and schedule.early_exit(y, x):
            skipped = schedule.phase_boundary - t
            t = schedule.phase_boundary
            phase_one_output = x
            continue
        layer = schedule.layers[t]
        if layer.gamma.shape[1] != y.shape[0]:
            raise ShapeMismatchError(f"layer {t} expects observations of length {layer.gamma.shape[1]}")
        pre = layer.psi @ x + layer.gamma @ y
        x = gated_hard_threshold(pre, layer.k, _resolve(layer.omega_on, x), _resolve(layer.omega_off, x))
        trace.append(_objective(y, layer.synthesis, x))
        t += 1
        if t == schedule.phase_boundary:
            phase_one_output = x
    decoded = np.zeros(schedule.original_dim)
    keep = schedule.decoder >= 0
    decoded[schedule.decoder[keep]] = x[keep]
    info = {"final_activation": x, "phase_one_output": phase_one_output, "phase_one_skipped": skipped}
    return RecoveryResult(SparseSignal(decoded), len(trace) - 1, True, tuple(trace), info)


def constant_schedule(phi, k: int, iterations: int, step_size: float = 1.0) -> AihtSchedule:
    """IHT written as an A-IHT schedule with shared weights and empty gates."""
    A = np.asarray(getattr(phi, "entries", phi), dtype=float)
    m = A.shape[1]
    psi = np.eye(m) - step_size * (A.T @ A)
    gamma = step_size * A.T
    layer = AihtLayer(psi, gamma, k, synthesis=A)
    return AihtSchedule((layer,) * iterations, iterations, np.arange(m), m)


def cluster_residual_monitor(y, U, z) -> float:
    return float(np.linalg.norm(np.asarray(y) - np.asarray(U) @ np.asarray(z)))


def build_cluster_schedule(
    cd: ClusteredDictionary,
    k_x: int,
    k_c: int,
    tau: int = 30,
    t_detail: int = 600,
    *,
    step_size: float = 1.0,
    detail_step_size: float | None = None,
    k_hold: int | None = 20,
    early_exit: bool = False,
) -> AihtSchedule:
    """Two-phase schedule for the clustered dictionary model.

    Layers ``0..tau-1`` run IHT over U at sparsity ``k_c``. Layer ``tau``
    pads into the (c + m)-dimensional system of [U, A]. The remaining
    ``t_detail`` layers run IHT over [U, A] with the centers detected in
    phase one passed through and every other cluster, center and details,
    forced to zero. With ``early_exit`` phase one stops once
    ||y - U z|| <= 10 eps.

    The detail-phase sparsity starts at the largest number of details the
    ``k_c`` active clusters can hold and drops by one every ``k_hold``
    layers until it reaches ``k_x``; ``k_hold=None`` keeps it at ``k_x``
    throughout. ``detail_step_size`` defaults to 1.5 / ||[U, A]||_2^2.
    """
    if tau < 1 or t_detail < 1:
        raise InvalidScheduleError("tau and t_detail must both be >= 1")
    if k_c > k_x:
        raise InvalidScheduleError("k_c must not exceed k_x")
    spec = cd.spec
    U, A = cd.centers, cd.details
    c, m, n = spec.c, spec.m, spec.n
    membership = spec.membership

    phase_one = AihtLayer(np.eye(c) - step_size * (U.T @ U), step_size * U.T, k_c, synthesis=U)

    UA = np.hstack([U, A])
    pad = AihtLayer(
        np.vstack([np.eye(c), np.zeros((m, c))]),
        np.zeros((c + m, n)),
        0,
        omega_on=frozenset(range(c)),
        synthesis=UA,
    )

    def centers_on(activation):
        return frozenset(int(j) for j in np.flatnonzero(activation[:c]))

    def pruned_off(activation):
        # rejected centers are held at zero too, so the detected set stays fixed
        active = activation[:c] != 0
        pruned = np.flatnonzero(~active[membership]) + c
        return frozenset(np.flatnonzero(~active).tolist() + pruned.tolist())

    gram = UA.T @ UA
    mu2 = 1.5 / np.linalg.norm(gram, 2) if detail_step_size is None else detail_step_size
    psi2 = np.eye(c + m) - mu2 * gram
    gamma2 = mu2 * UA.T
    k_start = sum(sorted(spec.cluster_sizes, reverse=True)[:k_c]) if k_hold else k_x
    details = []
    for t in range(t_detail):
        k_t = max(k_x, k_start - t // k_hold) if k_hold else k_x
        details.append(AihtLayer(psi2, gamma2, k_t, omega_on=centers_on, omega_off=pruned_off, synthesis=UA))
    layers = (phase_one,) * tau + (pad,) + tuple(details)
    decoder = np.concatenate([np.full(c, -1), np.arange(m)])
    threshold = 10.0 * spec.epsilon
    monitor = (lambda y, z: cluster_residual_monitor(y, U, z) <= threshold) if early_exit else None
    return AihtSchedule(layers, tau, decoder, m, monitor)


def cluster_aiht_recover(y, cd: ClusteredDictionary, k_x: int, k_c: int, **schedule_kwargs) -> RecoveryResult:
    """Full pipeline: schedule, run, then least squares on the decoded support."""
    schedule = build_cluster_schedule(cd, k_x, k_c, **schedule_kwargs)
    res = run_aiht(y, schedule)
    support = res.estimate.support
    x = least_squares_on_support(y, cd.dictionary, support)
    info = dict(res.info)
    info["detail_estimate"] = res.estimate
    return RecoveryResult(x, res.iterations_used, res.converged, res.objective_trace, info)
