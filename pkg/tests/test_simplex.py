"""Simplex projection: solver agreement, frozen examples, vjp, entropy."""

import numpy as np
import pytest

from sparsemarg.reference import central_difference, sparsemax_bruteforce
from sparsemarg.rng import make_rng
from sparsemarg.simplex import (
    SparseDistribution,
    entropy,
    softmax,
    sparsemax,
    sparsemax_fullsort,
    sparsemax_vjp,
)


def test_uniform_on_constant_scores():
    dist = sparsemax([0.0, 0.0, 0.0])
    np.testing.assert_allclose(dist.densify(), [1 / 3, 1 / 3, 1 / 3])
    assert dist.threshold == pytest.approx(-1 / 3)


def test_point_mass_on_dominant_score():
    dist = sparsemax([10.0, 0.0, 0.0])
    np.testing.assert_allclose(dist.densify(), [1.0, 0.0, 0.0])
    assert dist.threshold == pytest.approx(9.0)
    assert dist.support_size == 1


def test_frozen_two_support_example():
    # Expected values frozen from the exhaustive-support QP oracle.
    dist = sparsemax([1.0, 0.5, -0.2])
    np.testing.assert_allclose(dist.densify(), [0.75, 0.25, 0.0], atol=1e-15)
    assert dist.threshold == pytest.approx(0.25)


def test_matches_bruteforce_qp_oracle():
    rng = make_rng(3)
    for _ in range(300):
        k = int(rng.integers(2, 11))
        s = rng.normal(size=k) * float(rng.choice([0.1, 1.0, 10.0]))
        got = sparsemax(s).densify()
        np.testing.assert_allclose(got, sparsemax_bruteforce(s), atol=1e-10)


def test_doubling_solver_equals_full_sort():
    rng = make_rng(4)
    for _ in range(300):
        k = int(rng.integers(1, 200))
        s = rng.normal(size=k) * 3.0
        a = sparsemax(s)
        b = sparsemax_fullsort(s)
        assert a.indices.tolist() == b.indices.tolist()
        np.testing.assert_allclose(a.probs, b.probs, atol=1e-12)


def test_translation_invariance():
    rng = make_rng(5)
    for _ in range(100):
        s = rng.normal(size=8)
        c = float(rng.normal()) * 10
        a = sparsemax(s)
        b = sparsemax(s + c)
        assert a.indices.tolist() == b.indices.tolist()
        np.testing.assert_allclose(a.probs, b.probs, atol=1e-12)


def test_permutation_equivariance():
    rng = make_rng(6)
    for _ in range(100):
        s = rng.normal(size=7)
        perm = rng.permutation(7)
        direct = sparsemax(s[perm]).densify()
        np.testing.assert_allclose(direct, sparsemax(s).densify()[perm], atol=1e-15)


def test_order_preservation():
    rng = make_rng(7)
    for _ in range(200):
        s = rng.normal(size=6)
        p = sparsemax(s).densify()
        for i in range(6):
            for j in range(6):
                if s[i] > s[j] and p[j] > 0:
                    assert p[i] >= p[j]


def test_rejects_non_finite_scores():
    with pytest.raises(ValueError):
        sparsemax([np.nan, 0.0])
    with pytest.raises(ValueError):
        sparsemax([np.inf, 0.0])


def test_vjp_constant_upstream_is_zero():
    s = np.array([0.1, 0.2, 0.3])
    dist = sparsemax(s)
    assert dist.support_size == 3
    np.testing.assert_allclose(sparsemax_vjp(s, dist, [1.0, 1.0, 1.0]), 0.0, atol=1e-15)


def test_vjp_frozen_two_support_example():
    # Frozen from central finite differences with h = 1e-6.
    s = np.array([1.0, 0.5, -0.2])
    dist = sparsemax(s)
    got = sparsemax_vjp(s, dist, [1.0, 0.0, 5.0])
    np.testing.assert_allclose(got, [0.5, -0.5, 0.0], atol=1e-12)


def test_vjp_singleton_support_is_zero():
    s = np.array([5.0, 0.0])
    dist = sparsemax(s)
    np.testing.assert_allclose(sparsemax_vjp(s, dist, [3.0, 7.0]), 0.0)


def test_vjp_matches_finite_differences_on_stable_points():
    rng = make_rng(8)
    checked = 0
    for _ in range(300):
        k = int(rng.integers(2, 9))
        s = rng.normal(size=k)
        dist = sparsemax(s)
        # Only differentiable where the support is stable under +-h.
        if sparsemax(s + 1e-4).support_size != dist.support_size:
            continue
        u = rng.normal(size=k)
        fd = central_difference(lambda x: u @ sparsemax(x).densify(), s, 1e-6)
        np.testing.assert_allclose(sparsemax_vjp(s, dist, u), fd, atol=1e-7)
        checked += 1
    assert checked > 100


def test_softmax_basics():
    np.testing.assert_allclose(softmax([0.0, 0.0]), [0.5, 0.5])
    np.testing.assert_allclose(softmax([1000.0, 0.0]), [1.0, 0.0], atol=1e-12)
    np.testing.assert_allclose(softmax([np.log(2.0), 0.0]), [2 / 3, 1 / 3])


def test_entropy_values():
    assert entropy(sparsemax([10.0, 0.0])) == 0.0
    assert entropy(sparsemax([0.0] * 4)) == pytest.approx(np.log(4))
    # Frozen from high-precision -sum(p log p) on [0.75, 0.25].
    assert entropy(sparsemax([1.0, 0.5])) == pytest.approx(0.5623351446188083, abs=1e-15)


def test_distribution_validation():
    with pytest.raises(ValueError):
        SparseDistribution(np.array([1, 0]), np.array([0.5, 0.5]), 0.0, 3)
    with pytest.raises(ValueError):
        SparseDistribution(np.array([0, 1]), np.array([0.5, 0.4]), 0.0, 3)
    with pytest.raises(ValueError):
        SparseDistribution(np.array([0, 1]), np.array([1.0, 0.0]), 0.0, 3)
