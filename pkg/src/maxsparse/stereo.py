"""Photometric stereo with sparse outliers.

A Lambertian point under q lights gives o = rho L n + e with e sparse
(shadows, specularities). Projecting onto null(L^T) removes the surface
term, y = P o = P e, so outlier support is a sparse recovery problem over
the dictionary P. Normals are then fit from the least-suspicious rows.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np

from .model import Dictionary, RankDeficientError, SparseLabError

__all__ = [
    "LightingRig",
    "OutlierLaw",
    "Scene",
    "DegenerateInliersError",
    "random_rig",
    "nullspace_dictionary",
    "synthesize_scene",
    "angular_error",
    "fit_normals",
    "estimate_normals",
    "naive_least_squares",
    "random4_baseline",
    "oracle_engine",
    "save_scene",
    "load_scene",
]


class DegenerateInliersError(SparseLabError, np.linalg.LinAlgError):
    pass


@dataclass(frozen=True)
class LightingRig:
    L: np.ndarray

    def __post_init__(self):
        L = np.array(self.L, dtype=float)
        if L.ndim != 2 or L.shape[1] != 3 or L.shape[0] < 4:
            raise ValueError(f"rig must be q x 3 with q >= 4, got {L.shape}")
        if not np.allclose(np.linalg.norm(L, axis=1), 1.0, atol=1e-10):
            raise ValueError("lighting directions must be unit vectors")
        if np.linalg.matrix_rank(L) < 3:
            raise RankDeficientError("lighting directions do not span R^3")
        L.setflags(write=False)
        object.__setattr__(self, "L", L)

    @property
    def q(self) -> int:
        return self.L.shape[0]


def random_rig(q: int, seed, max_polar_deg: float = 60.0) -> LightingRig:
    """Directions spread over a cap around the viewing axis (+z)."""
    rng = np.random.default_rng(seed)
    cos_min = np.cos(np.radians(max_polar_deg))
    z = rng.uniform(cos_min, 1.0, size=q)
    phi = rng.uniform(0.0, 2 * np.pi, size=q)
    r = np.sqrt(1 - z**2)
    L = np.column_stack([r * np.cos(phi), r * np.sin(phi), z])
    return LightingRig(L / np.linalg.norm(L, axis=1, keepdims=True))


def nullspace_dictionary(rig: LightingRig):
    """Return (Dictionary, projector); projector rows span null(L^T) orthonormally.

    Columns are left at their physical norms; ``meta["column_norm_range"]``
    records the spread.
    """
    U, s, _ = np.linalg.svd(rig.L, full_matrices=True)
    if s[-1] < 1e-10 * s[0]:
        raise RankDeficientError("rig is rank deficient")
    P = U[:, 3:].T.copy()
    norms = np.linalg.norm(P, axis=0)
    meta = {"kind": "nullspace", "column_norm_range": (float(norms.min()), float(norms.max()))}
    return Dictionary(P, meta), P


@dataclass(frozen=True)
class OutlierLaw:
    """Per-point outlier count drawn uniformly from [min_count, max_count];
    magnitudes sign * U[low, high] (``signed``) or U[low, high]."""

    min_count: int = 3
    max_count: int = 3
    low: float = 0.2
    high: float = 1.0
    signed: bool = True

    def __post_init__(self):
        if not 0 <= self.min_count <= self.max_count:
            raise ValueError("need 0 <= min_count <= max_count")
        if not 0 <= self.low <= self.high:
            raise ValueError("need 0 <= low <= high")


@dataclass
class Scene:
    normals: np.ndarray  # (N, 3)
    albedo: np.ndarray  # (N,)
    observations: np.ndarray  # (N, q)
    outliers: np.ndarray  # (N, q) sparse e

    def __len__(self):
        return len(self.albedo)

    @property
    def outlier_mask(self) -> np.ndarray:
        return self.outliers != 0


def synthesize_scene(point_count: int, rig: LightingRig, law: OutlierLaw, seed) -> Scene:
    if law.max_count > rig.q - 4:
        raise ValueError(f"up to {law.max_count} outliers leave fewer than 4 clean rows of {rig.q}")
    rng = np.random.default_rng(seed)
    v = rng.standard_normal((point_count, 3))
    v[:, 2] = np.abs(v[:, 2])
    normals = v / np.linalg.norm(v, axis=1, keepdims=True)
    albedo = rng.uniform(0.5, 1.5, size=point_count)
    counts = rng.integers(law.min_count, law.max_count + 1, size=point_count)
    ranks = np.argsort(rng.random((point_count, rig.q)), axis=1)
    E = np.zeros((point_count, rig.q))
    mags = rng.uniform(law.low, law.high, size=(point_count, rig.q))
    if law.signed:
        mags *= rng.choice([-1.0, 1.0], size=mags.shape)
    for i in range(point_count):
        idx = ranks[i, : counts[i]]
        E[i, idx] = mags[i, : counts[i]]
    O = albedo[:, None] * (normals @ rig.L.T) + E
    return Scene(normals, albedo, O, E)


def angular_error(a, b) -> np.ndarray:
    """Angle in degrees between rows of ``a`` and ``b``."""
    a = np.atleast_2d(a)
    b = np.atleast_2d(b)
    # atan2 keeps precision near 0 and 180 degrees where arccos does not
    cross = np.linalg.norm(np.cross(a, b), axis=1)
    return np.degrees(np.arctan2(cross, np.sum(a * b, axis=1)))


def fit_normals(L, O, rows) -> np.ndarray:
    """Least squares rho n from the selected rows of each point; returns unit normals.

    ``rows`` is (N, r) indices into the q lights, r >= 3.
    """
    L = np.asarray(L, dtype=float)
    out = np.empty((len(O), 3))
    for i, (o, idx) in enumerate(zip(O, rows)):
        Ls = L[idx]
        if np.linalg.matrix_rank(Ls, tol=1e-10) < 3:
            raise DegenerateInliersError(f"point {i}: selected lights {list(idx)} are rank deficient")
        g, *_ = np.linalg.lstsq(Ls, o[idx], rcond=None)
        out[i] = g / np.linalg.norm(g)
    return out


def oracle_engine(scene: Scene) -> Callable[[np.ndarray], np.ndarray]:
    """Scores equal to the true outlier indicator (rows of y must match the scene)."""
    mask = scene.outlier_mask.astype(float)
    return lambda Y: mask


def estimate_normals(scene: Scene, rig: LightingRig, support_engine, inlier_count: int = 4):
    """Fit normals from the ``inlier_count`` lights with the lowest outlier score.

    ``support_engine`` maps Y = O P^T (N x (q - 3)) to per-light outlier
    scores (N x q). Returns (normals, angular errors in degrees).
    """
    _, P = nullspace_dictionary(rig)
    scores = np.asarray(support_engine(scene.observations @ P.T), dtype=float)
    if scores.shape != scene.observations.shape:
        raise ValueError(f"engine returned {scores.shape}, expected {scene.observations.shape}")
    rows = np.argsort(scores, axis=1, kind="stable")[:, :inlier_count]
    normals = fit_normals(rig.L, scene.observations, rows)
    return normals, angular_error(normals, scene.normals)


def naive_least_squares(scene: Scene, rig: LightingRig):
    g = np.linalg.lstsq(rig.L, scene.observations.T, rcond=None)[0].T
    normals = g / np.linalg.norm(g, axis=1, keepdims=True)
    return normals, angular_error(normals, scene.normals)


def random4_baseline(scene: Scene, rig: LightingRig, seed) -> np.ndarray:
    """Angular errors from 4 uniformly random lights per point (redrawn if degenerate)."""
    rng = np.random.default_rng(seed)
    rows = np.argsort(rng.random((len(scene), rig.q)), axis=1)[:, :4]
    for i in range(len(rows)):
        while np.linalg.matrix_rank(rig.L[rows[i]], tol=1e-10) < 3:
            rows[i] = rng.permutation(rig.q)[:4]
    normals = fit_normals(rig.L, scene.observations, rows)
    return angular_error(normals, scene.normals)


def save_scene(path, scene: Scene, rig: LightingRig) -> None:
    """Plain text: rig rows, then one tab-separated record per point."""
    lines = [f"# q={rig.q}", f"# points={len(scene)}"]
    lines += ["# light " + " ".join(f"{v:.17g}" for v in row) for row in rig.L]
    lines.append("# columns: normal(3)\talbedo\tobservation(q)\toutlier_indices")
    for n, rho, o, e in zip(scene.normals, scene.albedo, scene.observations, scene.outliers):
        lines.append(
            "\t".join([
                " ".join(f"{v:.17g}" for v in n),
                f"{rho:.17g}",
                " ".join(f"{v:.17g}" for v in o),
                " ".join(str(i) for i in np.flatnonzero(e)),
            ])
        )
    Path(path).write_text("\n".join(lines) + "\n")


def load_scene(path):
    """Inverse of :func:`save_scene`; outlier values are rebuilt from o - rho L n."""
    lights, records = [], []
    for line in Path(path).read_text().splitlines():
        if line.startswith("# light "):
            lights.append([float(v) for v in line[8:].split()])
        elif line and not line.startswith("#"):
            records.append(line.split("\t"))
    rig = LightingRig(np.array(lights))
    N = np.array([[float(v) for v in r[0].split()] for r in records])
    rho = np.array([float(r[1]) for r in records])
    O = np.array([[float(v) for v in r[2].split()] for r in records])
    E = np.zeros_like(O)
    clean = rho[:, None] * (N @ rig.L.T)
    for i, r in enumerate(records):
        idx = [int(v) for v in r[3].split()] if len(r) > 3 else []
        E[i, idx] = O[i, idx] - clean[i, idx]
    return Scene(N, rho, O, E), rig
