"""Instance generators and independent oracles shared by the test modules."""
import itertools

import numpy as np

from maxsparse.datagen import uniform_gapped
from maxsparse.dictgen import gaussian_unit_columns


def qr_residual(y, A, support):
    """Residual norm of the least-squares fit on ``support`` via a QR factorization."""
    if not support:
        return float(np.linalg.norm(y))
    Q, _ = np.linalg.qr(A[:, list(support)])
    return float(np.linalg.norm(y - Q @ (Q.T @ y)))


def qr_solve(y, A, support):
    Q, R = np.linalg.qr(A[:, list(support)])
    return np.linalg.solve(R, Q.T @ y)


def enumerate_min_supports(y, A, k_max, tol=1e-8):
    """All feasible supports of the smallest feasible size (QR-based, no package code)."""
    if np.linalg.norm(y) <= tol:
        return [()]
    for k in range(1, k_max + 1):
        hits = [s for s in itertools.combinations(range(A.shape[1]), k) if qr_residual(y, A, s) <= tol]
        if hits:
            return hits
    return []


def l0_instance(seed, n=8, m=12):
    """Gaussian dictionary and a 1- or 2-sparse signal (d alternates with the seed)."""
    phi = gaussian_unit_columns(n, m, seed)
    rng = np.random.default_rng(10_000 + seed)
    d = 1 + seed % 2
    supp = np.sort(rng.choice(m, d, replace=False))
    x = np.zeros(m)
    x[supp] = uniform_gapped().sample(rng, d)
    return phi, x, tuple(int(i) for i in supp), d


def sparse_signal(rng, m, d, low=0.1, high=0.5):
    supp = np.sort(rng.choice(m, d, replace=False))
    x = np.zeros(m)
    x[supp] = rng.uniform(low, high, d) * rng.choice([-1.0, 1.0], d)
    return x, tuple(int(i) for i in supp)


def orthonormal_columns(n, m, seed):
    Q, _ = np.linalg.qr(np.random.default_rng(seed).standard_normal((n, m)))
    return Q
