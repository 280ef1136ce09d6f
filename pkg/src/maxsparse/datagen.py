"""Synthetic sparse corpora and support-recovery metrics."""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .model import Dictionary, SparseSignal, _as_matrix, _minimal_support, content_hash

__all__ = [
    "AmplitudeLaw",
    "uniform_gapped",
    "gaussian_bimodal",
    "Corpus",
    "MetricReport",
    "make_corpus",
    "top_d_support",
    "strict_accuracy",
    "loose_accuracy",
    "evaluate",
    "per_sample",
    "spot_check_uniqueness",
    "save_corpus",
    "load_corpus",
]


@dataclass(frozen=True)
class AmplitudeLaw:
    """Nonzero amplitude distribution.

    ``uniform_gapped``: random sign times U[low, high].
    ``gaussian_bimodal``: N(+-mean, std^2) with the sign of the mean drawn fairly.
    """

    kind: str
    low: float = 0.1
    high: float = 0.5
    mean: float = 0.3
    std: float = 0.1

    def __post_init__(self):
        if self.kind == "uniform_gapped":
            if not 0 < self.low < self.high:
                raise ValueError("uniform_gapped needs 0 < low < high")
        elif self.kind == "gaussian_bimodal":
            if self.std <= 0:
                raise ValueError("gaussian_bimodal needs std > 0")
        else:
            raise ValueError(f"unknown amplitude law {self.kind!r}")

    def sample(self, rng, size):
        signs = rng.choice([-1.0, 1.0], size=size)
        if self.kind == "uniform_gapped":
            return signs * rng.uniform(self.low, self.high, size=size)
        return rng.normal(signs * self.mean, self.std)

    def describe(self) -> str:
        if self.kind == "uniform_gapped":
            return f"uniform_gapped(low={self.low!r},high={self.high!r})"
        return f"gaussian_bimodal(mean={self.mean!r},std={self.std!r})"

    @classmethod
    def parse(cls, text: str) -> "AmplitudeLaw":
        kind, _, rest = text.strip().partition("(")
        kwargs = {}
        for item in filter(None, rest.rstrip(")").split(",")):
            key, _, val = item.partition("=")
            kwargs[key.strip()] = float(val)
        return cls(kind.strip(), **kwargs)


def uniform_gapped(low: float = 0.1, high: float = 0.5) -> AmplitudeLaw:
    return AmplitudeLaw("uniform_gapped", low=low, high=high)


def gaussian_bimodal(mean: float = 0.3, std: float = 0.1) -> AmplitudeLaw:
    return AmplitudeLaw("gaussian_bimodal", mean=mean, std=std)


@dataclass
class Corpus:
    """Row-stacked samples: ``X`` (count x m), ``Y`` (count x n), ``S`` labels."""

    X: np.ndarray
    Y: np.ndarray
    dictionary_hash: str
    law: AmplitudeLaw
    d_range: tuple[int, int]
    seed: int | None = None
    noise_std: float | None = None
    meta: dict = field(default_factory=dict)

    @property
    def S(self) -> np.ndarray:
        return (self.X != 0).astype(np.int8)

    @property
    def d(self) -> np.ndarray:
        return np.count_nonzero(self.X, axis=1)

    def __len__(self):
        return len(self.X)

    def __getitem__(self, i):
        return SparseSignal(self.X[i]), self.Y[i], self.S[i]

    def __iter__(self):
        for i in range(len(self)):
            yield self[i]

    def subset(self, mask) -> "Corpus":
        return Corpus(self.X[mask], self.Y[mask], self.dictionary_hash, self.law, self.d_range, self.seed, self.noise_std)


def make_corpus(phi, count: int, d_range, law: AmplitudeLaw, seed, noise_std: float | None = None) -> Corpus:
    """Random-support sparse signals and their (optionally noisy) observations."""
    A = _as_matrix(phi)
    n, m = A.shape
    lo, hi = int(d_range[0]), int(d_range[1])
    if not 0 <= lo <= hi or hi >= n:
        raise ValueError(f"d_range {d_range} must satisfy 0 <= lo <= hi < n={n}")
    rng = np.random.default_rng(seed)
    d = rng.integers(lo, hi + 1, size=count)
    ranks = np.argsort(rng.random((count, m)), axis=1)
    rows = np.repeat(np.arange(count), d)
    cols = np.concatenate([ranks[i, : d[i]] for i in range(count)]) if count else np.zeros(0, int)
    X = np.zeros((count, m))
    X[rows, cols] = law.sample(rng, rows.size)
    Y = X @ A.T
    if noise_std:
        Y = Y + rng.normal(0.0, noise_std, size=Y.shape)
    return Corpus(X, Y, content_hash(A), law, (lo, hi), seed, noise_std)


# metrics -------------------------------------------------------------------


def top_d_support(scores, d: int, magnitude: bool = False) -> np.ndarray:
    """Indices of the d largest scores (|scores| with ``magnitude``), lowest index first on ties.

    Accepts one score vector or a (batch, m) array.
    """
    s = np.asarray(scores, dtype=float)
    if magnitude:
        s = np.abs(s)
    order = np.argsort(-s, axis=-1, kind="stable")
    return order[..., :d]


def _truth_matrix(truths):
    if isinstance(truths, Corpus):
        return truths.X
    return np.asarray(truths)


def per_sample(predictions, truths, window):
    """Per-sample (strict success, loose fraction, d) arrays."""
    P = np.atleast_2d(np.asarray(predictions, dtype=float))
    T = np.atleast_2d(_truth_matrix(truths)) != 0
    if P.shape != T.shape:
        raise ValueError(f"predictions {P.shape} vs truths {T.shape}")
    d = T.sum(axis=1)
    order = np.argsort(-P, axis=1, kind="stable")
    rank = np.empty_like(order)
    rank[np.arange(len(P))[:, None], order] = np.arange(P.shape[1])
    strict = np.all(~T | (rank < d[:, None]), axis=1)
    inside = np.sum(T & (rank < window), axis=1)
    loose = np.where(d > 0, inside / np.maximum(d, 1), 1.0)
    return strict.astype(float), loose, d


def strict_accuracy(predictions, truths) -> float:
    """Fraction of samples whose top-d scores are exactly the true support."""
    return float(per_sample(predictions, truths, 0)[0].mean())


def loose_accuracy(predictions, truths, window: int | None = None) -> float:
    """Mean fraction of the true support found among the top ``window`` scores.

    ``window`` defaults to n when ``truths`` is a Corpus (observation width)
    and must otherwise be given.
    """
    if window is None:
        if not isinstance(truths, Corpus):
            raise ValueError("window is required unless truths is a Corpus")
        window = truths.Y.shape[1]
    return float(per_sample(predictions, truths, window)[1].mean())


@dataclass(frozen=True)
class MetricReport:
    s_acc: float
    l_acc: float
    per_d: dict

    def __post_init__(self):
        if not 0 <= self.s_acc <= self.l_acc + 1e-12 <= 1 + 1e-12:
            raise ValueError(f"inconsistent metrics s_acc={self.s_acc}, l_acc={self.l_acc}")


def evaluate(predictions, truths, window: int | None = None) -> MetricReport:
    if window is None:
        window = truths.Y.shape[1] if isinstance(truths, Corpus) else None
    strict, loose, d = per_sample(predictions, truths, window)
    per_d = {
        int(k): {"s_acc": float(strict[d == k].mean()), "l_acc": float(loose[d == k].mean()), "count": int(np.sum(d == k))}
        for k in np.unique(d)
    }
    return MetricReport(float(strict.mean()), float(loose.mean()), per_d)


def spot_check_uniqueness(corpus: Corpus, phi, count: int = 10, max_d: int = 2, seed=0) -> bool:
    """Confirm on a few small-d samples that no sparser support reproduces y."""
    A = _as_matrix(phi)
    rng = np.random.default_rng(seed)
    idx = np.flatnonzero((corpus.d <= max_d) & (corpus.d > 0))
    for i in rng.choice(idx, size=min(count, idx.size), replace=False):
        found = _minimal_support(corpus.Y[i], A, int(corpus.d[i]), 1e-8)
        if found is None or tuple(found[0]) != tuple(np.flatnonzero(corpus.X[i])):
            return False
    return True


# file format -----------------------------------------------------------------


def save_corpus(path, corpus: Corpus) -> None:
    """Header comments plus one ``d <tab> indices <tab> amplitudes`` line per sample."""
    lines = [
        f"# dictionary_hash={corpus.dictionary_hash}",
        f"# law={corpus.law.describe()}",
        f"# d_range={corpus.d_range[0]},{corpus.d_range[1]}",
        f"# seed={corpus.seed}",
        f"# count={len(corpus)}",
        f"# noise_std={corpus.noise_std}",
    ]
    for x in corpus.X:
        supp = np.flatnonzero(x)
        lines.append(
            f"{supp.size}\t{' '.join(map(str, supp))}\t{' '.join(f'{v:.17g}' for v in x[supp])}"
        )
    Path(path).write_text("\n".join(lines) + "\n")


def load_corpus(path, phi, verify: bool = True) -> Corpus:
    """Rebuild a corpus; observations are recomputed as Phi x, so noise is not restored."""
    A = _as_matrix(phi)
    header, records = {}, []
    for line in Path(path).read_text().splitlines():
        if line.startswith("#"):
            key, _, val = line[1:].strip().partition("=")
            header[key] = val
        elif line.strip():
            records.append(line.split("\t"))
    if verify and header["dictionary_hash"] != content_hash(A):
        raise ValueError("corpus was generated with a different dictionary")
    X = np.zeros((len(records), A.shape[1]))
    for row, (d, idx, amps) in enumerate(records):
        if int(d):
            X[row, [int(i) for i in idx.split()]] = [float(a) for a in amps.split()]
    noise = header.get("noise_std", "None")
    Y = X @ A.T
    lo, hi = (int(v) for v in header["d_range"].split(","))
    seed = None if header.get("seed") in (None, "None") else int(header["seed"])
    return Corpus(X, Y, header["dictionary_hash"], AmplitudeLaw.parse(header["law"]), (lo, hi), seed,
                  None if noise == "None" else float(noise))
