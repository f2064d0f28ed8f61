import itertools
import math

import numpy as np
import pytest

from dpplatent.dpp import (
    canonical_order,
    cardinality_pmf,
    elementary_symmetric,
    enumerate_finite_dpp,
    finite_log_normalizer,
    finite_log_weight,
    kernel_matrix,
    log_density_continuous,
    log_det_psd,
    marginal_kernel,
    sample_finite_dpp,
)
from dpplatent.kernel import GaussianSpectralKernel, HammingKernel


def random_psd(rng, N, rank=None):
    A = rng.normal(size=(N, rank or N))
    return A @ A.T / N


def test_log_det_psd_examples():
    assert log_det_psd(np.eye(3)) == 0.0
    assert log_det_psd(np.diag([0.5, 0.25])) == pytest.approx(math.log(0.125), abs=1e-12)
    assert log_det_psd(np.ones((3, 3))) == -math.inf
    assert log_det_psd(np.zeros((0, 0))) == 0.0
    dup = np.array([[1.0, 0.5, 1.0], [0.5, 1.0, 0.5], [1.0, 0.5, 1.0]])
    assert log_det_psd(dup) == -math.inf
    with pytest.raises(ValueError):
        log_det_psd(np.array([[np.nan]]))


def test_log_det_psd_tolerance():
    # pivot below 1e-12 of the largest diagonal counts as singular
    assert log_det_psd(np.diag([1.0, 1e-13, 1.0])) == -math.inf
    assert log_det_psd(np.diag([1.0, 1e-11, 1.0])) == pytest.approx(math.log(1e-11))
    assert log_det_psd(np.array([[1e-20]])) == pytest.approx(math.log(1e-20))


@pytest.mark.parametrize("N", [1, 2, 3, 4, 5, 8])
def test_log_det_psd_matches_slogdet(N):
    rng = np.random.default_rng(N)
    for _ in range(10):
        C = random_psd(rng, N) + 0.1 * np.eye(N)
        assert log_det_psd(C) == pytest.approx(np.linalg.slogdet(C)[1], abs=1e-10)


def test_continuous_density_examples():
    k = GaussianSpectralKernel(1.0, 1.0, 1)
    assert log_density_continuous(np.zeros((0, 1)), k) == pytest.approx(-0.868876, abs=1e-6)
    # log(1/(2 pi)) - 0.868876 = -2.706753
    assert log_density_continuous(np.array([[0.0]]), k) == pytest.approx(-2.706753, abs=1e-6)
    assert log_density_continuous(np.array([[0.0], [0.0]]), k) == -math.inf


def test_continuous_density_permutation_invariant():
    k = GaussianSpectralKernel(0.8, 0.6, 2)
    rng = np.random.default_rng(0)
    X = rng.normal(size=(5, 2))
    base = log_density_continuous(X, k)
    for perm in itertools.islice(itertools.permutations(range(5)), 20):
        assert log_density_continuous(X[list(perm)], k) == pytest.approx(base, abs=1e-10)
    np.testing.assert_array_equal(X[canonical_order(X)], X[::-1][canonical_order(X[::-1])])
    assert sorted(map(tuple, X)) == list(map(tuple, X[canonical_order(X)]))


def test_finite_log_weight_examples():
    k = HammingKernel(1.0, 1)
    assert finite_log_weight(np.array([[0, 1]]), k) == pytest.approx(-0.145413, abs=1e-6)
    assert math.exp(finite_log_weight(np.array([[0, 1]]), k)) == pytest.approx(1 - math.exp(-2))
    k3 = HammingKernel(2.0, 3)
    assert finite_log_weight(np.array([[1, 1], [0, 0], [1, 1]]), k3) == -math.inf
    assert finite_log_weight(np.zeros((3, 0)), k3) == 0.0


def test_finite_normalizer_examples():
    assert finite_log_normalizer(np.eye(2)) == pytest.approx(math.log(4))
    assert finite_log_normalizer(np.zeros((0, 0))) == 0.0
    with pytest.raises(ValueError):
        finite_log_normalizer(np.eye(21))
    rng = np.random.default_rng(1)
    C = random_psd(rng, 6)
    total = sum(np.linalg.det(C[np.ix_(A, A)]) if A else 1.0
                for k in range(7) for A in itertools.combinations(range(6), k))
    assert finite_log_normalizer(C) == pytest.approx(math.log(total), abs=1e-8)


def test_marginal_kernel_examples():
    np.testing.assert_allclose(marginal_kernel(np.eye(3)), np.eye(3) / 2)
    np.testing.assert_allclose(marginal_kernel(np.zeros((2, 2))), 0.0)
    rng = np.random.default_rng(2)
    M = marginal_kernel(random_psd(rng, 5))
    w = np.linalg.eigvalsh(M)
    assert w.min() >= -1e-12 and w.max() < 1


def test_enumeration_examples():
    subsets, p = enumerate_finite_dpp(np.eye(2))
    np.testing.assert_allclose(p, 0.25)
    subsets, p = enumerate_finite_dpp(np.array([[3.0]]))
    assert dict(zip(subsets, p)) == pytest.approx({(): 0.25, (0,): 0.75})
    with pytest.raises(ValueError):
        enumerate_finite_dpp(np.eye(16))


def test_diagonal_kernel_factorizes():
    d = np.array([0.3, 1.0, 2.5, 4.0])
    subsets, p = enumerate_finite_dpp(np.diag(d))
    q = d / (1 + d)
    for A, pa in zip(subsets, p):
        expected = np.prod([q[i] if i in A else 1 - q[i] for i in range(4)])
        assert pa == pytest.approx(expected, abs=1e-10)


def test_kernel_matrix_over_items():
    k = HammingKernel(2.0, 2)
    items = [np.array([0, 1]), np.array([1, 1])]
    C = kernel_matrix(items, k)
    assert C[0, 1] == pytest.approx(math.exp(-0.25))


def test_sampler_examples_and_errors():
    rng = np.random.default_rng(3)
    draws = sample_finite_dpp(np.eye(2), rng, size=20000)
    freq = {A: 0 for A in [(), (0,), (1,), (0, 1)]}
    for A in draws:
        freq[tuple(A)] += 1
    for v in freq.values():
        assert v / 20000 == pytest.approx(0.25, abs=0.015)
    with pytest.raises(ValueError):
        sample_finite_dpp(np.diag([1.0, -1.0]), rng)
    assert sample_finite_dpp(np.zeros((0, 0)), rng) == []


def test_sampler_low_rank_kernel():
    # rank-2 kernel never yields more than two items
    rng = np.random.default_rng(4)
    C = random_psd(rng, 6, rank=2)
    assert max(len(A) for A in sample_finite_dpp(C, rng, size=2000)) <= 2


def test_elementary_symmetric_and_cardinality():
    np.testing.assert_allclose(elementary_symmetric([1.0, 2.0, 3.0], 3), [1, 6, 11, 6])
    np.testing.assert_allclose(cardinality_pmf([1.0], 1), [0.5, 0.5])
    np.testing.assert_allclose(cardinality_pmf([0.0, 0.0], 2), [1.0, 0.0, 0.0])
    lam = 2.0 ** -np.arange(1, 65)
    pmf = cardinality_pmf(lam, 10)
    assert pmf[0] == pytest.approx(0.419422, abs=1e-6)
    assert pmf[1] == pytest.approx(0.419422, abs=1e-6)
    assert pmf[2] == pytest.approx(0.139807, abs=1e-6)
    assert pmf.sum() == pytest.approx(1.0, abs=1e-8)
    with pytest.raises(ValueError):
        cardinality_pmf([-0.1], 1)


def test_cardinality_from_kernel_spectrum():
    k = GaussianSpectralKernel(1.0, 1.0, 1)
    lam = k.eigenvalues()
    assert lam.sum() == pytest.approx(1.0, abs=1e-10)
    pmf = cardinality_pmf(lam, 8)
    assert pmf.sum() == pytest.approx(1.0, abs=1e-8)
