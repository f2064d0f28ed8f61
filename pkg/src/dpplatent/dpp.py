"""Determinantal point process probabilities, oracles and exact sampling.

Point configurations are plain arrays: ``(K, D)`` real arrays for the
continuous process and ``(n, K)`` binary matrices (one item per column) for
the Hamming kernel. Everything here is order invariant in the items.
"""

from __future__ import annotations

import itertools
import math

import numpy as np

from .kernel import GaussianSpectralKernel, HammingKernel

__all__ = [
    "PIVOT_RTOL",
    "canonical_order",
    "log_det_psd",
    "log_density_continuous",
    "finite_log_weight",
    "kernel_matrix",
    "finite_log_normalizer",
    "marginal_kernel",
    "enumerate_finite_dpp",
    "sample_finite_dpp",
    "elementary_symmetric",
    "cardinality_pmf",
]

#: relative pivot threshold below which a Gram matrix counts as singular
PIVOT_RTOL = 1e-12


def canonical_order(points) -> np.ndarray:
    """Row order that sorts a ``(K, D)`` configuration lexicographically."""
    pts = np.asarray(points, dtype=float)
    if pts.shape[0] == 0:
        return np.zeros(0, dtype=int)
    pts = pts.reshape(pts.shape[0], -1)
    return np.lexsort(pts.T[::-1])


def log_det_psd(matrix) -> float:
    """Log-determinant of a symmetric PSD matrix via Cholesky.

    Returns ``-inf`` when the matrix is numerically singular, i.e. the
    factorization fails or a squared pivot falls below ``PIVOT_RTOL`` times
    the largest diagonal entry. No jitter is ever added.
    """
    A = np.asarray(matrix, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError("expected a square matrix")
    n = A.shape[0]
    if n == 0:
        return 0.0
    if n <= 4:
        return _log_det_small(A)
    if not np.all(np.isfinite(A)):
        raise ValueError("matrix has non-finite entries")
    dmax = float(np.max(np.diag(A)))
    if dmax <= 0.0:
        return -math.inf
    try:
        L = np.linalg.cholesky(A)
    except np.linalg.LinAlgError:
        return -math.inf
    piv = np.diag(L)
    if not np.all(np.isfinite(piv)) or float(np.min(piv)) ** 2 < PIVOT_RTOL * dmax:
        return -math.inf
    return 2.0 * float(np.sum(np.log(piv)))


def _log_det_small(A):
    # plain-Python Cholesky: far cheaper than LAPACK calls for tiny matrices
    n = len(A)
    M = A.tolist()
    dmax = -math.inf
    for i in range(n):
        if not all(map(math.isfinite, M[i])):
            raise ValueError("matrix has non-finite entries")
        dmax = max(dmax, M[i][i])
    if dmax <= 0.0:
        return -math.inf
    L = [[0.0] * n for _ in range(n)]
    out = 0.0
    for j in range(n):
        Lj = L[j]
        piv2 = M[j][j] - sum(x * x for x in Lj[:j])
        if not piv2 > 0.0 or piv2 < PIVOT_RTOL * dmax:
            return -math.inf
        piv = math.sqrt(piv2)
        Lj[j] = piv
        out += math.log(piv2)
        for i in range(j + 1, n):
            Li = L[i]
            Li[j] = (M[i][j] - sum(Li[k] * Lj[k] for k in range(j))) / piv
    return out


def log_density_continuous(points, kernel: GaussianSpectralKernel, spectrum: str = "weighted") -> float:
    """Log density of a configuration w.r.t. the unit-rate Poisson process."""
    return log_det_psd(kernel.gram(points)) - kernel.log_normalizer(spectrum)


def finite_log_weight(Z, kernel: HammingKernel) -> float:
    """Unnormalized log weight ``log det C_Z`` of the columns of ``Z``."""
    Z = np.asarray(Z)
    if Z.ndim != 2 or Z.shape[1] == 0:
        return 0.0
    return log_det_psd(kernel.gram(Z))


def kernel_matrix(items, kernel) -> np.ndarray:
    """Kernel matrix over an explicit list of ground-set items."""
    items = list(items)
    N = len(items)
    C = np.empty((N, N))
    for i in range(N):
        for j in range(i, N):
            C[i, j] = C[j, i] = kernel.kernel_value(items[i], items[j])
    return C


def _check_small(C, limit):
    C = np.asarray(C, dtype=float)
    if C.ndim != 2 or C.shape[0] != C.shape[1]:
        raise ValueError("expected a square matrix")
    if C.shape[0] > limit:
        raise ValueError(f"ground set of size {C.shape[0]} exceeds the supported size {limit}")
    return C


def _check_psd(C, what="kernel"):
    if C.shape[0] == 0:
        return
    if not np.allclose(C, C.T, rtol=0, atol=1e-12 * max(1.0, np.abs(C).max())):
        raise ValueError(f"{what} matrix is not symmetric")
    w = np.linalg.eigvalsh(C)
    if w[0] < -1e-10 * max(1.0, abs(w[-1])):
        raise ValueError(f"{what} matrix is not positive semidefinite (min eigenvalue {w[0]:.3g})")


def finite_log_normalizer(C) -> float:
    """``log det(C + I)`` for an explicit ground-set kernel (N <= 20)."""
    C = _check_small(C, 20)
    if C.shape[0] == 0:
        return 0.0
    sign, logdet = np.linalg.slogdet(C + np.eye(C.shape[0]))
    if sign <= 0:
        raise ValueError("C + I is not positive definite")
    return float(logdet)


def marginal_kernel(C) -> np.ndarray:
    """Marginal kernel ``M = C (I + C)^{-1}``; minors of M are inclusion probabilities."""
    C = _check_small(C, 20)
    _check_psd(C)
    N = C.shape[0]
    if N == 0:
        return np.zeros((0, 0))
    M = np.eye(N) - np.linalg.inv(np.eye(N) + C)
    return 0.5 * (M + M.T)


def enumerate_finite_dpp(C):
    """Exact L-ensemble law over all subsets of a ground set (N <= 15).

    Returns
    -------
    subsets : list of tuple
        Every subset of ``range(N)`` as a sorted tuple, in order of size.
    probs : ndarray
        ``det(C_A) / det(C + I)`` for each subset.
    """
    C = _check_small(C, 15)
    N = C.shape[0]
    subsets, weights = [], []
    for k in range(N + 1):
        for A in itertools.combinations(range(N), k):
            subsets.append(A)
            weights.append(np.linalg.det(C[np.ix_(A, A)]) if k else 1.0)
    weights = np.maximum(np.array(weights), 0.0)
    return subsets, weights / math.exp(finite_log_normalizer(C))


def sample_finite_dpp(C, rng: np.random.Generator, size: int | None = None):
    """Exact draw(s) from the L-ensemble with kernel ``C`` (spectral algorithm).

    Each eigenvector is kept independently with probability
    ``lambda / (1 + lambda)``; items are then drawn one at a time from the
    projection DPP spanned by the kept eigenvectors. With ``size`` set, the
    eigendecomposition is shared across a list of ``size`` draws.
    """
    C = np.asarray(C, dtype=float)
    if C.ndim != 2 or C.shape[0] != C.shape[1]:
        raise ValueError("expected a square matrix")
    N = C.shape[0]
    if N == 0:
        return [] if size is None else [[] for _ in range(size)]
    lam, vecs = np.linalg.eigh(C)
    if lam[0] < -1e-10 * max(1.0, abs(lam[-1])):
        raise ValueError("kernel matrix is not positive semidefinite")
    lam = np.clip(lam, 0.0, None)
    p_keep = lam / (1.0 + lam)
    if size is None:
        return _projection_draw(vecs[:, rng.random(N) < p_keep], rng)
    return [_projection_draw(vecs[:, rng.random(N) < p_keep], rng) for _ in range(size)]


def _projection_draw(V, rng):
    # projection kernel V V^T; conditioning on item i is a rank-one Schur update
    K = V @ V.T
    out = []
    for _ in range(V.shape[1]):
        cdf = np.cumsum(np.clip(np.diag(K), 0.0, None))
        i = min(int(np.searchsorted(cdf, rng.random() * cdf[-1], side="right")), K.shape[0] - 1)
        out.append(i)
        K = K - np.outer(K[:, i], K[i]) / K[i, i]
    return sorted(out)


def elementary_symmetric(values, k_max: int) -> np.ndarray:
    """``e_0 .. e_{k_max}`` of ``values`` by the one-at-a-time recurrence."""
    e = np.zeros(k_max + 1)
    e[0] = 1.0
    for v in values:
        e[1:] = e[1:] + v * e[:-1]
    return e


def cardinality_pmf(eigenvalues, k_max: int) -> np.ndarray:
    """Law of ``|X|`` for an L-ensemble: ``P(K) = e_K(lambda) / prod(1 + lambda)``.

    ``eigenvalues`` should already be truncated so the omitted spectral mass
    is negligible; the result then sums to one up to that tail.
    """
    lam = np.asarray(eigenvalues, dtype=float)
    if np.any(lam < 0):
        raise ValueError("eigenvalues must be nonnegative")
    e = elementary_symmetric(lam, k_max)
    return e * math.exp(-float(np.sum(np.log1p(lam))))
