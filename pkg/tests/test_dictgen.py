import numpy as np
import pytest

from maxsparse.dictgen import (
    ClusteredDictSpec,
    cluster_support,
    clustered,
    decaying_spectrum,
    gaussian_unit_columns,
    load_matrix,
    normalize_columns,
    rank_perturbed,
    read_matrix_meta,
    save_matrix,
)
from maxsparse.rip import IHT_RIP_BOUND, delta_k_exhaustive


def test_gaussian_unit_columns_and_determinism():
    a = gaussian_unit_columns(4, 6, 0)
    np.testing.assert_allclose(np.linalg.norm(a.entries, axis=0), 1.0, atol=1e-12)
    assert np.array_equal(a.entries, gaussian_unit_columns(4, 6, 0).entries)
    assert not np.array_equal(a.entries, gaussian_unit_columns(4, 6, 1).entries)


def test_gaussian_coherence_statistic():
    # worst seed over 100 was 0.1876 when computed
    worst = 0.0
    for seed in range(100):
        A = gaussian_unit_columns(20, 100, seed).entries
        G = np.abs(A.T @ A)
        worst = max(worst, G[~np.eye(100, dtype=bool)].mean())
    assert worst < 0.5
    assert worst == pytest.approx(0.18764368770876794, rel=1e-9)


def test_rank_perturbed_limits_and_norms():
    phi, delta = rank_perturbed(10, 30, 1e6, 1, 0)
    np.testing.assert_allclose(np.linalg.norm(phi.entries, axis=0), 1.0, atol=1e-12)
    An, _ = normalize_columns(phi.meta["details"])
    cos = np.sum(An * phi.entries, axis=0)
    assert np.max(np.arccos(np.clip(cos, -1, 1))) < 1e-3
    assert np.linalg.matrix_rank(delta) == 1
    assert np.linalg.norm(delta, 2) == pytest.approx(1.0)


def test_rank_perturbed_reconstruction():
    phi, delta = rank_perturbed(10, 30, 0.01, 2, 4)
    scales = phi.meta["norm_scales"]
    np.testing.assert_allclose((0.01 * phi.meta["details"] + delta) * scales, phi.entries, atol=1e-12)


def test_rank_one_inflates_delta2():
    phi, _ = rank_perturbed(10, 30, 0.01, 1, 0)
    An, _ = normalize_columns(phi.meta["details"])
    d_phi = delta_k_exhaustive(phi, 2).delta
    d_a = delta_k_exhaustive(An, 2).delta
    assert d_phi > IHT_RIP_BOUND
    assert d_a < d_phi
    assert (d_phi, d_a) == pytest.approx((0.9996080601773127, 0.846143520852678), rel=1e-9)


def test_decaying_spectrum():
    ratios, floors = [], []
    for seed in range(20):
        phi = decaying_spectrum(20, 100, seed)
        np.testing.assert_allclose(np.linalg.norm(phi.entries, axis=0), 1.0, atol=1e-12)
        sv = np.linalg.svd(phi.meta["raw"], compute_uv=False)
        assert np.all(np.diff(sv) < 0)
        ratios.append(sv[0] / sv[4])
        floors.append(sv[-1])
    assert min(ratios) > 10
    assert min(floors) > 1e-8


def test_clustered_structure():
    spec = ClusteredDictSpec.uniform(24, 8, 6, 0.01)
    cd = clustered(spec, 11)
    A = cd.dictionary.entries
    np.testing.assert_allclose(cd.reconstruct(), A, atol=1e-10)
    np.testing.assert_allclose(np.linalg.norm(cd.centers, axis=0), 1.0, atol=1e-12)
    np.testing.assert_allclose(np.linalg.norm(cd.details, axis=0), 1.0, atol=1e-12)
    assert np.all((cd.v >= 0.5) & (cd.v <= 1.5))
    for j in range(8):
        B = A[:, j * 6:(j + 1) * 6]
        assert (B.T @ B).min() > 0.99


def test_cluster_coefficients_identity():
    spec = ClusteredDictSpec.uniform(24, 8, 6, 0.01)
    cd = clustered(spec, 2)
    x = np.zeros(48)
    x[[3, 40]] = [0.7, -0.6]
    z = cd.cluster_coefficients(x)
    resid = cd.dictionary.entries @ x - cd.centers @ z
    # what remains is the eps-scaled detail part
    assert np.linalg.norm(resid) < 10 * 0.01
    assert np.flatnonzero(z).tolist() == [0, 6]


def test_cluster_support():
    spec = ClusteredDictSpec.uniform(12, 6, 2, 0.01)
    x = np.zeros(12)
    x[[4, 5, 10]] = 1.0
    assert cluster_support(x, spec) == {2, 5}
    assert cluster_support(np.zeros(12), spec) == set()
    assert cluster_support(np.ones(12), spec) == set(range(6))


def test_spec_validation():
    with pytest.raises(ValueError):
        ClusteredDictSpec(10, (3, 0), 0.1)
    with pytest.raises(ValueError):
        ClusteredDictSpec(10, (3,), 0.0)
    with pytest.raises(ValueError):
        rank_perturbed(10, 30, 0.01, 10, 0)
    with pytest.raises(ValueError):
        decaying_spectrum(10, 10, 0)


def test_matrix_file_round_trip(tmp_path):
    phi = decaying_spectrum(5, 8, 3)
    path = tmp_path / "phi.txt"
    save_matrix(path, phi, {"family": "decaying_spectrum", "hash": phi.hash})
    assert np.array_equal(load_matrix(path), phi.entries)
    assert read_matrix_meta(path)["hash"] == phi.hash
