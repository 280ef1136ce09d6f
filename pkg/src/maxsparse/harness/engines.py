"""Support-scoring engines behind one interface.

An engine maps a batch of observations Y (B x n) and a sparsity level d
to per-coordinate scores (B x m); larger means more likely in the support.
Solver engines score by estimate magnitude.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .. import netlab
from ..datagen import Corpus, evaluate, make_corpus
from ..model import _as_matrix
from ..solvers import SolverConfig, iht, iht_many, ista, ista_many, omp
from .build import derive_seed
from .spec import ExperimentSpec

__all__ = ["Engine", "MissingCheckpointError", "make_engine", "tune_ista_lambda"]


class MissingCheckpointError(FileNotFoundError):
    pass


@dataclass
class Engine:
    name: str
    score: Callable[[np.ndarray, int], np.ndarray]
    single: Callable[[np.ndarray, int], object]  # one sample, for timing
    hashes: dict = field(default_factory=dict)
    info: dict = field(default_factory=dict)


def _iht_step(spec, A):
    text = spec.solvers.get("iht_step", "auto")
    return 1.0 / np.linalg.norm(A, 2) ** 2 if text == "auto" else float(text)


def tune_ista_lambda(A, spec: ExperimentSpec, d: int, lambdas, config: SolverConfig) -> float:
    """Pick the lambda with the best s-acc on a held-out tuning corpus at this d."""
    count = int(spec.solvers.get("tune_count", 200))
    tune = make_corpus(A, count, (d, d), spec.law("test_law" if "test_law" in spec.corpus else "law"),
                       derive_seed(spec.seed, "tune", d))
    best, best_key = None, None
    for lam in lambdas:
        X, _ = ista_many(tune.Y.T, A, lam, config)
        rep = evaluate(np.abs(X.T), tune)
        key = (rep.s_acc, rep.l_acc)
        if best_key is None or key > best_key:
            best, best_key = lam, key
    return best


def make_engine(name: str, phi, spec: ExperimentSpec, *, network: netlab.Network | None = None) -> Engine:
    A = _as_matrix(phi)
    max_it = int(spec.solvers.get("max_iterations", 1000))
    tol = float(spec.solvers.get("tolerance", 1e-7))

    if name == "iht":
        step = _iht_step(spec, A)

        def score(Y, d):
            X, _ = iht_many(Y.T, A, SolverConfig(k=d, max_iterations=max_it, step_size=step, tolerance=tol))
            return np.abs(X.T)

        return Engine(name, score, lambda y, d: iht(y, A, SolverConfig(k=d, max_iterations=max_it, step_size=step, tolerance=tol)),
                      info={"step_size": step})

    if name == "ista":
        lambdas = spec.ista_lambdas()
        ista_it = int(spec.solvers.get("ista_max_iterations", 20_000))
        cfg = SolverConfig(k=1, max_iterations=ista_it, tolerance=tol)
        chosen: dict[int, float] = {}

        def lam_for(d):
            if d not in chosen:
                chosen[d] = lambdas[0] if len(lambdas) == 1 else tune_ista_lambda(A, spec, d, lambdas, cfg)
            return chosen[d]

        def score(Y, d):
            X, _ = ista_many(Y.T, A, lam_for(d), cfg)
            return np.abs(X.T)

        return Engine(name, score, lambda y, d: ista(y, A, lam_for(d), cfg, record_trace=False), info={"lambda": chosen})

    if name == "omp":

        def score(Y, d):
            return np.abs(np.array([omp(y, A, d).estimate.values for y in Y]))

        return Engine(name, score, lambda y, d: omp(y, A, d))

    if name == "random":

        def score(Y, d):
            rng = np.random.default_rng(derive_seed(spec.seed, "random", d))
            return rng.random((len(Y), A.shape[1]))

        return Engine(name, score, lambda y, d: None)

    if name == "network" or name.startswith("network:"):
        if network is None:
            path = name.split(":", 1)[1] if ":" in name else spec.network.get("checkpoint")
            if not path or not Path(path).exists():
                raise MissingCheckpointError(f"engine {name!r} needs an existing checkpoint, got {path!r}")
            network = netlab.load_checkpoint(path)
        net = network
        if net.config.input_dim != A.shape[0] or net.config.output_dim != A.shape[1]:
            raise ValueError(f"network shape {net.config.input_dim}x{net.config.output_dim} does not match dictionary {A.shape}")

        def score(Y, d):
            return netlab.predict_scores(net, Y)

        return Engine(name, score, lambda y, d: netlab.predict_scores(net, y[None, :]),
                      hashes={"checkpoint": netlab.checkpoint_hash(net)})

    raise ValueError(f"unknown engine {name!r}")


def corpus_for(phi, spec: ExperimentSpec, d: int, law=None) -> Corpus:
    noise = spec.corpus.get("noise_std")
    return make_corpus(
        phi, spec.trials, (d, d), law or spec.law("test_law" if "test_law" in spec.corpus else "law"),
        derive_seed(spec.seed, "test", d), float(noise) if noise else None,
    )
