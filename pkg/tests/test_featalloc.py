import itertools
import math

import numpy as np
import pytest
from conftest import ScriptedRng
from scipy.stats import multivariate_normal

from dpplatent.dpp import log_det_psd
from dpplatent.featalloc import (
    FeaturePriorConfig,
    FeatureState,
    add_delete_feature,
    beta_conditional,
    block_refresh,
    fit_features,
    gibbs_flip_entries,
    gibbs_update_beta,
    gibbs_update_variances,
    log_collapsed_posterior,
    log_marginal_likelihood,
    log_prior_Z,
    log_set_prior,
    make_feature_kernel,
    random_feature_matrix,
    simulate_feature_data,
)
from dpplatent.kernel import HammingKernel
from dpplatent.trace import Schedule, write_trace


def column_sets(n):
    return [np.array(c, dtype=np.int8) for c in itertools.product((0, 1), repeat=n) if any(c)]


def test_config_validation():
    with pytest.raises(ValueError):
        FeaturePriorConfig(a0=0.0)
    with pytest.raises(ValueError):
        FeaturePriorConfig(fixed_K=11)
    with pytest.raises(ValueError):
        FeaturePriorConfig(prior_mode="strict")
    with pytest.raises(ValueError):
        FeaturePriorConfig(n_starts=0)


# -- prior --------------------------------------------------------------------------


def test_log_prior_examples():
    k = HammingKernel(theta=2.0, n=3)
    assert log_prior_Z([[1, 1], [0, 0], [1, 1]], k) == -math.inf
    assert log_prior_Z([[1], [0], [1]], k) == 0.0
    assert log_prior_Z([[1, 1], [0, 1], [1, 1]], k) == pytest.approx(-0.932752, abs=1e-6)


def test_log_prior_column_permutation_invariance():
    rng = np.random.default_rng(0)
    k = HammingKernel(theta=1.5, n=8)
    Z = random_feature_matrix(8, 4, rng)
    perm = [2, 0, 3, 1]
    assert log_prior_Z(Z[:, perm], k) == pytest.approx(log_prior_Z(Z, k), abs=1e-12)


def test_set_prior_modes_differ_by_esp():
    config_u = FeaturePriorConfig(K_max=3, prior_mode="unrestricted")
    config_n = FeaturePriorConfig(K_max=3, prior_mode="normalized")
    k = make_feature_kernel(config_u, 3)
    for K in (1, 2, 3):
        diff = log_set_prior(0.0, K, k, config_u) - log_set_prior(0.0, K, k, config_n)
        assert diff == pytest.approx(float(k.log_esp(3)[K]), abs=1e-12)


# -- likelihood and conjugate updates -------------------------------------------------


def test_marginal_likelihood_direct():
    rng = np.random.default_rng(1)
    Z = random_feature_matrix(6, 2, rng)
    Y = rng.standard_normal((6, 3))
    s2, t2 = 0.7, 1.9
    cov = s2 * np.eye(6) + t2 * Z @ Z.T
    direct = sum(multivariate_normal(np.zeros(6), cov).logpdf(Y[:, j]) for j in range(3))
    assert log_marginal_likelihood(Z, Y, s2, t2) == pytest.approx(direct, abs=1e-10)
    assert log_marginal_likelihood(np.zeros((6, 0)), Y, s2, t2) == pytest.approx(
        multivariate_normal(np.zeros(6), s2 * np.eye(6)).logpdf(Y.T).sum(), abs=1e-10)


def test_beta_conditional_hand_example():
    mean, L = beta_conditional([[1]], [[2.0]], 1.0, 1.0)
    assert mean[0, 0] == pytest.approx(1.0)
    assert 1.0 / (L[0, 0] ** 2) == pytest.approx(0.5)


def test_beta_conditional_is_ridge():
    rng = np.random.default_rng(2)
    Z = random_feature_matrix(10, 3, rng).astype(float)
    Y = rng.standard_normal((10, 4))
    s2, t2 = 0.3, 2.0
    ridge = np.linalg.solve(Z.T @ Z + s2 / t2 * np.eye(3), Z.T @ Y)
    np.testing.assert_allclose(beta_conditional(Z, Y, s2, t2)[0], ridge, atol=1e-10)


def test_beta_prior_domination():
    Z = np.array([[1], [1]], dtype=np.int8)
    state = FeatureState(Z, np.zeros((1, 1)), 1.0, 1e-14)
    beta = gibbs_update_beta(state, np.array([[5.0], [5.0]]), np.random.default_rng(3))
    assert abs(beta[0, 0]) < 1e-5


def test_beta_draw_moments():
    Z = np.array([[1, 0], [1, 1], [0, 1]], dtype=np.int8)
    Y = np.array([[1.0], [2.0], [0.5]])
    state = FeatureState(Z, np.zeros((2, 1)), 0.5, 2.0)
    mean, L = beta_conditional(Z, Y, 0.5, 2.0)
    cov = np.linalg.inv(L @ L.T)
    rng = np.random.default_rng(4)
    N = 20000
    draws = np.array([gibbs_update_beta(state, Y, rng)[:, 0] for _ in range(N)])
    assert np.all(np.abs(draws.mean(axis=0) - mean[:, 0]) < 4 * np.sqrt(np.diag(cov) / N))
    np.testing.assert_allclose(np.cov(draws.T), cov, atol=0.05 * np.max(cov))


def test_variance_exact_fit_rate_is_prior():
    Z = np.array([[1], [0], [1]], dtype=np.int8)
    beta = np.array([[2.0, -1.0]])
    Y = Z @ beta
    config = FeaturePriorConfig(a0=2.0, b0=3.0)
    state = FeatureState(Z, beta, 1.0, 1.0)
    rng = np.random.default_rng(5)
    prec = np.array([1.0 / gibbs_update_variances(state, Y, rng, config)[0] for _ in range(20000)])
    shape, rate = 2.0 + 0.5 * 6, 3.0
    assert abs(prec.mean() - shape / rate) < 4 * math.sqrt(shape) / rate / math.sqrt(20000)


def test_variance_tau_prior_when_no_features():
    state = FeatureState(np.zeros((3, 0), dtype=np.int8), np.zeros((0, 2)), 1.0, 1.0)
    config = FeaturePriorConfig(a1=3.0, b1=2.0)
    rng = np.random.default_rng(6)
    prec = np.array([1.0 / gibbs_update_variances(state, np.zeros((3, 2)), rng, config)[1] for _ in range(20000)])
    assert abs(prec.mean() - 1.5) < 4 * math.sqrt(3.0) / 2.0 / math.sqrt(20000)


# -- entry flips ----------------------------------------------------------------------


def test_flip_to_duplicate_rejected():
    Z = np.array([[1, 1], [0, 1]], dtype=np.int8)
    state = FeatureState(Z.copy(), np.zeros((2, 1)), 1.0, 1.0)
    k = HammingKernel(theta=1.0, n=2)
    # several flips here would empty or duplicate a column
    for _ in range(200):
        gibbs_flip_entries(state, np.zeros((2, 1)), k, np.random.default_rng(_), prior_only=True)
        assert len({c.tobytes() for c in state.Z.T}) == 2
        assert np.all(state.Z.sum(axis=0) > 0)


def test_flip_forced_by_likelihood():
    Z_true = np.array([[1, 0], [0, 1], [1, 1], [0, 1]], dtype=np.int8)
    beta = np.array([[3.0], [-2.0]])
    Y = Z_true @ beta
    Z = Z_true.copy()
    Z[2, 0] = 0
    state = FeatureState(Z, beta.copy(), 1e-4, 1.0)
    gibbs_flip_entries(state, Y, HammingKernel(theta=1.0, n=4), np.random.default_rng(7))
    np.testing.assert_array_equal(state.Z, Z_true)


def test_flip_determinant_locality():
    # incremental distance update inside the sweep equals a full re-evaluation
    rng = np.random.default_rng(8)
    k = HammingKernel(theta=1.2, n=7)
    Z = random_feature_matrix(7, 4, rng)
    state = FeatureState(Z, rng.standard_normal((4, 1)), 0.5, 1.0)
    Y = rng.standard_normal((7, 1))
    for _ in range(20):
        gibbs_flip_entries(state, Y, k, rng)
        state.check()
        assert log_prior_Z(state.Z, k) == pytest.approx(log_det_psd(k.gram(state.Z)), abs=1e-9)


def test_flip_law_matches_enumeration():
    n = 4
    rng = np.random.default_rng(9)
    kernel = HammingKernel(theta=1.0, n=n)
    beta, s2 = np.array([[1.0], [-0.5]]), 0.5
    Y = np.array([[1.0], [0.4], [-0.6], [0.1]])
    cols = column_sets(n)
    index, logp = {}, []
    for a, b in itertools.permutations(range(len(cols)), 2):
        Z = np.column_stack([cols[a], cols[b]])
        index[Z.tobytes()] = len(logp)
        R = Y - Z @ beta
        logp.append(log_prior_Z(Z, kernel) - 0.5 * float(np.sum(R * R)) / s2)
    p = np.exp(np.array(logp) - max(logp))
    p /= p.sum()
    state = FeatureState(np.column_stack([cols[0], cols[1]]), beta.copy(), s2, 1.0)
    counts = np.zeros(p.size)
    sweeps = 150000
    for _ in range(sweeps):
        gibbs_flip_entries(state, Y, kernel, rng)
        counts[index[state.Z.tobytes()]] += 1
    assert 0.5 * np.abs(counts / sweeps - p).sum() < 0.02


# -- add / delete ---------------------------------------------------------------------


def feature_set_law(n, config):
    kernel = make_feature_kernel(config, n)
    cols = [tuple(c) for c in column_sets(n)]
    index, logp = {}, []
    for K in range(1, config.K_max + 1):
        for sub in itertools.combinations(cols, K):
            Z = np.array(sub, dtype=np.int8).T
            index[frozenset(sub)] = len(logp)
            logp.append(log_set_prior(log_prior_Z(Z, kernel), K, kernel, config))
    p = np.exp(np.array(logp) - max(logp))
    return index, p / p.sum()


def prior_set_tv(config, sweeps, seed):
    n = 3
    index, p = feature_set_law(n, config)
    trace = fit_features(np.zeros((n, 1)), config, Schedule(sweeps, 1000), np.random.default_rng(seed), prior_only=True)
    counts = np.zeros(p.size)
    for Z in trace.values("Z"):
        counts[index[frozenset(tuple(c) for c in Z.T)]] += 1
    return 0.5 * np.abs(counts / len(trace) - p).sum()


def test_prior_set_law_normalized():
    assert prior_set_tv(FeaturePriorConfig(K_max=3, prior_mode="normalized"), 100000, 10) < 0.02


def test_delete_at_one_rejected():
    # K_max = 1 makes every move a delete attempt at K = 1
    state = FeatureState(np.array([[1], [0]], dtype=np.int8), np.zeros((1, 1)), 1.0, 1.0)
    config = FeaturePriorConfig(K_max=1)
    k = make_feature_kernel(config, 2)
    for s in range(50):
        assert add_delete_feature(state, np.zeros((2, 1)), k, config, np.random.default_rng(s), True) == "rejected"
    assert state.K == 1


def test_add_duplicate_column_rejected():
    state = FeatureState(np.array([[1], [0]], dtype=np.int8), np.zeros((1, 1)), 1.0, 1.0)
    config = FeaturePriorConfig(K_max=3)
    k = make_feature_kernel(config, 2)
    # up move, then Bernoulli entries (1, 0) duplicating the existing column
    rng = ScriptedRng(uniforms=[0.0, 0.0, 0.99, 1e-300])
    assert add_delete_feature(state, np.zeros((2, 1)), k, config, rng, prior_only=True) == "rejected"
    assert state.K == 1


# -- block refresh and driver ------------------------------------------------------------


def test_block_refresh_keeps_invariants():
    rng = np.random.default_rng(11)
    Z_true = random_feature_matrix(30, 3, rng)
    Y = simulate_feature_data(Z_true, 2 * rng.standard_normal((3, 5)), 0.5, rng)
    config = FeaturePriorConfig()
    k = make_feature_kernel(config, 30)
    state = FeatureState(random_feature_matrix(30, 2, rng), np.zeros((2, 5)), 1.0, 1.0)
    for _ in range(50):
        block_refresh(state, Y, k, config, rng)
        state.check()
        assert 1 <= state.K <= config.K_max


def test_collapsed_posterior_prefers_truth():
    rng = np.random.default_rng(12)
    Z_true = random_feature_matrix(40, 3, rng)
    Y = simulate_feature_data(Z_true, 2 * rng.standard_normal((3, 10)), 0.5, rng)
    config = FeaturePriorConfig()
    k = make_feature_kernel(config, 40)
    truth = FeatureState(Z_true, np.zeros((3, 10)), 0.25, 4.0)
    other = FeatureState(random_feature_matrix(40, 3, rng), np.zeros((3, 10)), 0.25, 4.0)
    assert log_collapsed_posterior(truth, Y, k, config) > log_collapsed_posterior(other, Y, k, config)


def test_zero_data_collapses_k():
    config = FeaturePriorConfig(a0=1000.0, b0=10.0, n_starts=1, pilot_iterations=20)
    trace = fit_features(np.zeros((20, 5)), config, Schedule(400, 100), np.random.default_rng(13))
    ks = np.array(trace.values("K"))
    assert np.bincount(ks).argmax() == 1


def test_fixed_k_never_changes():
    rng = np.random.default_rng(14)
    Y = rng.standard_normal((12, 3))
    trace = fit_features(Y, FeaturePriorConfig(fixed_K=2, n_starts=1, pilot_iterations=5), Schedule(60, 10), rng)
    assert set(trace.values("K")) == {2}


def test_fit_rejects_bad_input():
    with pytest.raises(ValueError):
        fit_features(np.array([[np.inf]]))
    with pytest.raises(ValueError):
        fit_features(np.zeros((3, 1)), FeaturePriorConfig(K_max=8))


def test_fit_deterministic(tmp_path):
    rng = np.random.default_rng(15)
    Y = simulate_feature_data(random_feature_matrix(15, 2, rng), rng.standard_normal((2, 3)), 0.3, rng)
    config = FeaturePriorConfig(n_starts=2, pilot_iterations=10)
    for name in ("a", "b"):
        write_trace(tmp_path / name, fit_features(Y, config, Schedule(80, 20), np.random.default_rng(16), seed=16))
    assert (tmp_path / "a").read_bytes() == (tmp_path / "b").read_bytes()


def test_prior_repulsion_vs_independence():
    # similarity exp(-H / theta^2): repulsion grows with theta
    n, K, theta = 6, 3, 2.0
    kernel = HammingKernel(theta=theta, n=n)
    cols = column_sets(n)
    w, d_min = [], []
    for idx in itertools.combinations(range(len(cols)), K):
        Z = np.column_stack([cols[i] for i in idx])
        w.append(math.exp(log_prior_Z(Z, kernel)))
        d_min.append(min(int((Z[:, i] != Z[:, j]).sum()) for i, j in itertools.combinations(range(K), 2)))
    exact = {"hamming": np.average(d_min, weights=w), "identity": np.mean(d_min)}

    found = {}
    for similarity in exact:
        config = FeaturePriorConfig(K_max=K, fixed_K=K, theta=theta, similarity=similarity)
        trace = fit_features(np.zeros((n, 1)), config, Schedule(10000, 500), np.random.default_rng(17), prior_only=True)
        found[similarity] = np.mean([
            min(int((Z[:, i] != Z[:, j]).sum()) for i, j in itertools.combinations(range(K), 2))
            for Z in trace.values("Z")])
        assert abs(found[similarity] - exact[similarity]) < 0.05
    assert found["hamming"] > found["identity"]


# -- simulation -------------------------------------------------------------------------


def test_simulate_examples():
    rng = np.random.default_rng(18)
    Z = np.array([[1, 0], [0, 0], [1, 1]])
    B = np.array([[1.0, 2.0], [-1.0, 0.5]])
    np.testing.assert_array_equal(simulate_feature_data(Z, B, 0.0, rng), Z @ B)
    Y = simulate_feature_data(np.zeros((100, 1)), np.ones((1, 100)), 0.7, rng)
    v = Y.var(ddof=0)
    # var of a sample variance of normals is 2 sigma^4 / N
    assert abs(v - 0.49) < 3 * math.sqrt(2 * 0.49**2 / Y.size)
    with pytest.raises(ValueError):
        simulate_feature_data(np.zeros((3, 2)), np.zeros((3, 1)), 1.0, rng)
