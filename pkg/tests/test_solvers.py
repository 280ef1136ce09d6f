import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from helpers import enumerate_min_supports, l0_instance, sparse_signal
from maxsparse.dictgen import gaussian_unit_columns, rank_perturbed
from maxsparse.model import GateOverlapError, brute_force_l0
from maxsparse.rip import cor3_transform
from maxsparse.solvers import (
    LayerWeights,
    SingularScalingError,
    SolverConfig,
    apply_layer,
    gated_hard_threshold,
    generalized_layer_solve,
    hard_threshold,
    iht,
    iht_many,
    iht_weights,
    ista,
    ista_many,
    omp,
    soft_threshold,
    weighted_iht,
)


def test_hard_threshold_examples():
    assert hard_threshold([3, -5, 1, 0], 2).tolist() == [3, -5, 0, 0]
    # tie: the lower index is kept
    assert hard_threshold([1, -1, 1], 1).tolist() == [1, 0, 0]
    assert hard_threshold([2, 1], 0).tolist() == [0, 0]
    assert hard_threshold([2, 1], 5).tolist() == [2, 1]


def test_gated_threshold_examples():
    x = np.array([5.0, 4.0, 3.0, 0.1])
    assert gated_hard_threshold(x, 1, omega_on=[3], omega_off=[0]).tolist() == [0, 4, 0, 0.1]
    assert gated_hard_threshold(x, 0, omega_on=[2]).tolist() == [0, 0, 3, 0]
    with pytest.raises(GateOverlapError):
        gated_hard_threshold(x, 1, omega_on=[1], omega_off=[1])


@given(arrays(np.float64, st.integers(1, 20), elements=st.floats(-10, 10)), st.integers(0, 25))
def test_hard_threshold_properties(x, k):
    h = hard_threshold(x, k)
    assert np.count_nonzero(h) <= k
    assert np.all((h == 0) | (h == x))
    np.testing.assert_array_equal(hard_threshold(h, k), h)
    if 0 < k < x.size and np.count_nonzero(h):
        dropped = np.abs(x[h == 0])
        assert dropped.max(initial=0) <= np.abs(h[h != 0]).min()


@given(arrays(np.float64, 8, elements=st.floats(-5, 5)), st.floats(0, 3))
def test_soft_threshold_is_shrinkage(v, tau):
    s = soft_threshold(v, tau)
    assert np.all(np.abs(s) <= np.abs(v) + 1e-15)
    assert np.all(s[np.abs(v) <= tau] == 0)


def test_iht_step_sign_single_iteration():
    # one step from zero with k = m gives mu Phi^T y
    phi = gaussian_unit_columns(7, 7, 0)
    y = np.arange(1.0, 8.0)
    res = iht(y, phi, SolverConfig(k=7, max_iterations=1, step_size=0.3))
    np.testing.assert_allclose(res.estimate.values, 0.3 * phi.entries.T @ y, atol=1e-12)


def test_iht_trace_and_fixed_point():
    phi = gaussian_unit_columns(20, 40, 2)
    x, supp = sparse_signal(np.random.default_rng(2), 40, 1)
    mu = 1.0 / np.linalg.norm(phi.entries, 2) ** 2
    res = iht(phi @ x, phi, SolverConfig(k=1, step_size=mu), record_iterates=True)
    assert res.estimate.support == supp
    assert len(res.objective_trace) == res.iterations_used + 1
    assert len(res.info["iterates"]) == res.iterations_used + 1
    assert res.info["spectral_norm"] == pytest.approx(np.linalg.norm(phi.entries, 2))
    # the true signal is a fixed point of the layer map
    np.testing.assert_allclose(apply_layer(x, phi @ x, iht_weights(phi, mu), 1), x, atol=1e-12)


def test_iht_warns_when_k_exceeds_n():
    phi = gaussian_unit_columns(3, 5, 0)
    with pytest.warns(UserWarning):
        iht(np.ones(3), phi, SolverConfig(k=4, max_iterations=3))


def test_iht_divergence_is_reported_not_raised():
    phi = gaussian_unit_columns(5, 10, 0)
    res = iht(np.ones(5), phi, SolverConfig(k=5, max_iterations=5000, step_size=50.0))
    assert not res.converged
    assert np.all(np.isfinite(res.estimate.values))


def test_generalized_layer_equals_iht():
    phi = gaussian_unit_columns(12, 20, 5)
    x, _ = sparse_signal(np.random.default_rng(5), 20, 2)
    cfg = SolverConfig(k=2, max_iterations=200, step_size=0.2)
    a = iht(phi @ x, phi, cfg)
    b = generalized_layer_solve(phi @ x, phi, iht_weights(phi, 0.2), cfg)
    np.testing.assert_array_equal(a.estimate.values, b.estimate.values)
    assert a.objective_trace == b.objective_trace


def test_generalized_layer_warns_off_constraint():
    phi = gaussian_unit_columns(6, 8, 0)
    w = iht_weights(phi, 0.5)
    bad = LayerWeights(w.psi + 0.01, w.gamma)
    with pytest.warns(UserWarning, match="fixed point"):
        generalized_layer_solve(np.ones(6), phi, bad, SolverConfig(k=2, max_iterations=3))
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        generalized_layer_solve(np.ones(6), phi, w, SolverConfig(k=2, max_iterations=3))


def test_iht_and_omp_against_brute_force():
    # frozen counts over seeds 0..199
    omp_ok = iht_ok = 0
    for seed in range(200):
        phi, x, supp, d = l0_instance(seed)
        y = phi @ x
        assert brute_force_l0(y, phi, 2).support == supp == enumerate_min_supports(y, phi.entries, 2)[0]
        omp_ok += omp(y, phi, d).estimate.support == supp
        mu = 1.0 / np.linalg.norm(phi.entries, 2) ** 2
        iht_ok += iht(y, phi, SolverConfig(k=d, step_size=mu)).estimate.support == supp
    assert omp_ok == 189
    assert iht_ok == 153


def test_omp_two_sparse_agreement():
    agree = 0
    for s in range(200):
        phi = gaussian_unit_columns(8, 12, s)
        x, supp = sparse_signal(np.random.default_rng(900 + s), 12, 2)
        agree += omp(phi @ x, phi, 2).estimate.support == brute_force_l0(phi @ x, phi, 2).support
    assert agree == 168


def test_omp_stops_early_and_validates():
    phi = gaussian_unit_columns(6, 9, 1)
    res = omp(phi.entries[:, 4] * 0.3, phi, 3)
    assert res.estimate.support == (4,)
    assert res.iterations_used == 1
    assert res.converged
    with pytest.raises(ValueError):
        omp(np.ones(6), phi, 7)


def test_ista_lambda_grid_counts():
    cfg = SolverConfig(k=1, max_iterations=5000, tolerance=1e-9)
    counts = {}
    for lam in (1e-4, 1e-3, 1e-2, 1e-1):
        ok = 0
        for s in range(100):
            phi = gaussian_unit_columns(20, 40, s)
            x, supp = sparse_signal(np.random.default_rng(700 + s), 40, 3)
            X, _ = ista_many((phi @ x)[:, None], phi, lam, cfg)
            top = tuple(sorted(np.argsort(-np.abs(X[:, 0]), kind="stable")[:3].tolist()))
            ok += top == supp
        counts[lam] = ok
    assert counts == {1e-4: 80, 1e-3: 100, 1e-2: 99, 1e-1: 80}


def test_ista_penalized_objective_monotone():
    phi = gaussian_unit_columns(10, 20, 3)
    x, _ = sparse_signal(np.random.default_rng(3), 20, 2)
    res = ista(phi @ x, phi, 0.01, SolverConfig(k=1, max_iterations=500))
    p = np.array(res.info["penalized_trace"])
    assert np.all(np.diff(p) <= 1e-12)
    quiet = ista(phi @ x, phi, 0.01, SolverConfig(k=1, max_iterations=500), record_trace=False)
    np.testing.assert_array_equal(quiet.estimate.values, res.estimate.values)
    assert quiet.iterations_used == res.iterations_used
    assert quiet.objective_trace == (res.objective_trace[0], res.objective_trace[-1])


def test_batched_variants_match_single():
    phi = gaussian_unit_columns(10, 20, 4)
    rng = np.random.default_rng(4)
    X = np.column_stack([sparse_signal(rng, 20, 2)[0] for _ in range(6)])
    Y = phi @ X
    cfg = SolverConfig(k=2, max_iterations=300, step_size=0.2)
    est, iters = iht_many(Y, phi, cfg)
    for j in range(6):
        single = iht(Y[:, j], phi, cfg)
        np.testing.assert_allclose(est[:, j], single.estimate.values, atol=1e-12)
        assert iters[j] == single.iterations_used
    est2, _ = ista_many(Y, phi, 0.01, SolverConfig(k=1, max_iterations=300))
    for j in range(6):
        np.testing.assert_allclose(
            est2[:, j], ista(Y[:, j], phi, 0.01, SolverConfig(k=1, max_iterations=300)).estimate.values, atol=1e-12
        )


def test_weighted_iht_identity_transform_is_iht():
    phi = gaussian_unit_columns(8, 12, 0)
    y = phi.entries[:, [1, 5]] @ [0.3, -0.2]
    cfg = SolverConfig(k=2, max_iterations=100, step_size=0.3)
    a = iht(y, phi, cfg)
    b = weighted_iht(y, phi, np.eye(8), np.ones(12), cfg)
    np.testing.assert_allclose(a.estimate.values, b.estimate.values, atol=1e-12)


def test_weighted_iht_estimate_in_original_coordinates():
    phi, delta = rank_perturbed(10, 30, 0.05, 1, 3)
    W, D = cor3_transform(phi, delta, 0.05, phi.meta["norm_scales"])
    x = np.zeros(30)
    x[7] = 0.4
    scaled = W @ phi.entries * np.diag(D)
    mu = 1.0 / np.linalg.norm(scaled, 2) ** 2
    res = weighted_iht(phi @ x, phi, W, D, SolverConfig(k=1, step_size=mu), record_iterates=True)
    assert res.estimate.support == (7,)
    np.testing.assert_allclose(res.estimate.values, np.diag(D) * res.info["iterates"][-1], atol=1e-12)
    np.testing.assert_allclose(res.estimate.values, x, atol=1e-8)


def test_weighted_iht_singular_scaling():
    phi = gaussian_unit_columns(4, 6, 0)
    with pytest.raises(SingularScalingError):
        weighted_iht(np.ones(4), phi, np.eye(4), np.array([1, 1, 0, 1, 1, 1.0]), SolverConfig(k=1))


def test_iht_failures_on_rank_perturbed():
    fails = 0
    for s in range(100):
        phi, _ = rank_perturbed(10, 30, 0.01, 1, s)
        x, supp = sparse_signal(np.random.default_rng(500 + s), 30, 2)
        mu = 1.0 / np.linalg.norm(phi.entries, 2) ** 2
        fails += iht(phi @ x, phi, SolverConfig(k=2, step_size=mu)).estimate.support != supp
    assert fails == 89


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_iht_output_is_k_sparse(seed):
    phi = gaussian_unit_columns(6, 10, seed)
    y = np.random.default_rng(seed).standard_normal(6)
    res = iht(y, phi, SolverConfig(k=3, max_iterations=50, step_size=0.2))
    assert len(res.estimate.support) <= 3
