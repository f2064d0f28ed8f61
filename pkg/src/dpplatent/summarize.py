"""Posterior summaries of mixture and feature traces, and recovery scores.

All summaries are invariant to relabeling of components or features
within a sample. Mixture samples already hold original data units, so
densities need no further back-transformation.
"""

from __future__ import annotations

import math

import numpy as np
from scipy.optimize import linear_sum_assignment

from .featalloc import beta_conditional
from .trace import PosteriorTrace

__all__ = [
    "k_distribution",
    "k_mode",
    "coclustering_matrix",
    "point_estimate_partition",
    "density_on_grid",
    "adjusted_rand_index",
    "match_and_score_features",
    "feature_point_estimate",
]


def _require(trace: PosteriorTrace, model: str | None = None):
    if model is not None and trace.model != model:
        raise ValueError(f"expected a {model} trace, got {trace.model!r}")
    if len(trace) == 0:
        raise ValueError("trace has no samples")


def k_distribution(trace: PosteriorTrace) -> np.ndarray:
    """Empirical pmf of K, indexed by K (entry 0 is K = 0)."""
    _require(trace)
    ks = np.asarray(trace.values("K"), dtype=int)
    return np.bincount(ks) / ks.size


def k_mode(pmf) -> int:
    """Posterior mode of K; ties go to the smaller K."""
    pmf = np.asarray(pmf, dtype=float)
    if pmf.size == 0:
        raise ValueError("empty pmf")
    # argmax returns the first maximum
    return int(np.argmax(pmf))


def _coincidence(labels):
    labels = np.asarray(labels)
    return (labels[:, None] == labels[None, :]).astype(float)


def coclustering_matrix(trace: PosteriorTrace) -> np.ndarray:
    """Fraction of samples in which items ``i`` and ``j`` share a component."""
    _require(trace, "mixture")
    allocs = trace.values("allocations")
    out = np.zeros((len(allocs[0]),) * 2)
    for a in allocs:
        out += _coincidence(a)
    return out / len(allocs)


def point_estimate_partition(trace: PosteriorTrace, return_index: bool = False):
    """Retained allocation vector closest to the co-clustering matrix.

    Distance is the squared Frobenius norm between the sample's 0/1
    coincidence matrix and :func:`coclustering_matrix`. Ties go to the
    earliest sample. Labels are those of the chosen sample (``1..K``).
    """
    pi = coclustering_matrix(trace)
    allocs = trace.values("allocations")
    dists = [float(np.sum((_coincidence(a) - pi) ** 2)) for a in allocs]
    best = int(np.argmin(dists))
    if return_index:
        return np.asarray(allocs[best]).copy(), best
    return np.asarray(allocs[best]).copy()


def density_on_grid(trace: PosteriorTrace, grid) -> np.ndarray:
    """Posterior mean mixture density at ``grid`` (1-D or 2-D data).

    Parameters
    ----------
    grid : array
        ``(m,)`` or ``(m, 1)`` points for 1-D data, ``(m, 2)`` for 2-D.
    """
    _require(trace, "mixture")
    D = int(np.asarray(trace.samples[0]["means"]).shape[1])
    if D > 2:
        raise ValueError(f"density_on_grid supports 1-D and 2-D data, got D={D}")
    x = np.asarray(grid, dtype=float)
    if x.ndim == 1 and D == 1:
        x = x[:, None]
    if x.ndim != 2 or x.shape[1] != D:
        raise ValueError(f"grid must have shape (m, {D})")
    out = np.zeros(x.shape[0])
    for s in trace.samples:
        mu = np.asarray(s["means"], dtype=float)
        prec = np.asarray(s["precisions"], dtype=float)
        w = np.asarray(s["weights"], dtype=float)
        # diagonal Gaussians: (m, K)
        d2 = np.einsum("mkd,kd->mk", (x[:, None, :] - mu[None]) ** 2, prec)
        log_norm = 0.5 * np.sum(np.log(prec), axis=1) - 0.5 * D * math.log(2.0 * math.pi)
        out += np.exp(-0.5 * d2 + log_norm) @ w
    return out / len(trace)


def adjusted_rand_index(a, b) -> float:
    """Adjusted Rand index of two labelings of the same items."""
    a, b = np.asarray(a), np.asarray(b)
    if a.shape != b.shape or a.ndim != 1:
        raise ValueError(f"partitions must be 1-D of equal length, got {a.shape} and {b.shape}")
    n = a.size
    _, ia = np.unique(a, return_inverse=True)
    _, ib = np.unique(b, return_inverse=True)
    table = np.zeros((ia.max() + 1, ib.max() + 1))
    np.add.at(table, (ia, ib), 1)

    def pairs(x):
        return float(np.sum(x * (x - 1) / 2.0))

    index = pairs(table)
    sa, sb = pairs(table.sum(axis=1)), pairs(table.sum(axis=0))
    total = n * (n - 1) / 2.0
    expected = sa * sb / total if total else 0.0
    top = 0.5 * (sa + sb)
    if top == expected:
        # both partitions trivial in the same way
        return 1.0
    return (index - expected) / (top - expected)


def match_and_score_features(Z_hat, Z_true):
    """Column matching of ``Z_hat`` to ``Z_true`` minimizing Hamming mismatch.

    The smaller matrix is padded with all-zero columns, so an unmatched
    column costs its number of ones.

    Returns
    -------
    pairs : list of (int, int)
        ``(hat_column, true_column)`` for every matched pair of real columns.
    error : float
        Total mismatch over ``n * max(K_hat, K_true)``.
    """
    A, B = np.asarray(Z_hat, dtype=int), np.asarray(Z_true, dtype=int)
    if A.ndim != 2 or B.ndim != 2 or A.shape[0] != B.shape[0]:
        raise ValueError(f"need matrices with equal row counts, got {A.shape} and {B.shape}")
    n, K = A.shape[0], max(A.shape[1], B.shape[1])
    if K == 0:
        return [], 0.0
    Ap = np.zeros((n, K), dtype=int)
    Bp = np.zeros((n, K), dtype=int)
    Ap[:, : A.shape[1]] = A
    Bp[:, : B.shape[1]] = B
    cost = Ap.T @ (1 - Bp) + (1 - Ap).T @ Bp
    rows, cols = linear_sum_assignment(cost)
    pairs = [(int(r), int(c)) for r, c in zip(rows, cols) if r < A.shape[1] and c < B.shape[1]]
    return pairs, float(cost[rows, cols].sum()) / (n * K)


def feature_point_estimate(trace: PosteriorTrace, Y=None):
    """Point estimate ``(Z_hat, beta_hat, index)`` of a feature trace.

    ``Z_hat`` is the retained Z whose ``Z Z^T`` is closest (Frobenius) to
    the posterior mean of ``Z Z^T``. ``beta_hat`` is the posterior mean of
    beta given ``Z_hat`` and the chosen sample's variances; without ``Y``
    the chosen sample's beta is returned instead.
    """
    _require(trace, "features")
    grams = [np.asarray(Z, dtype=float) @ np.asarray(Z, dtype=float).T for Z in trace.values("Z")]
    mean = np.mean(grams, axis=0)
    best = int(np.argmin([float(np.sum((g - mean) ** 2)) for g in grams]))
    s = trace.samples[best]
    Z = np.asarray(s["Z"]).copy()
    if Y is None or Z.shape[1] == 0:
        return Z, np.asarray(s["beta"]).copy(), best
    beta, _ = beta_conditional(Z, Y, s["sigma2"], s["tau2"])
    return Z, beta, best
