"""DPP kernel functions.

Two kernels are provided:

* :class:`GaussianSpectralKernel` -- a continuous L-ensemble kernel on R^D
  factored as ``C(x, x') = q(x) c(x, x') q(x')`` with a Gaussian quality
  function and a squared-exponential similarity. Its spectrum is known in
  closed form, which gives the normalizing constant of the continuous DPP
  density.
* :class:`HammingKernel` -- a similarity on binary vectors, used as the
  prior kernel on the columns of a feature-allocation matrix.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import mpmath
import numpy as np

__all__ = ["GaussianSpectralKernel", "IndependentQualityKernel", "HammingKernel"]

_LOG_2PI = math.log(2.0 * math.pi)


def _check_positive(value, name):
    value = float(value)
    if not (math.isfinite(value) and value > 0.0):
        raise ValueError(f"{name} must be a finite positive number, got {value!r}")
    return value


@dataclass(frozen=True)
class GaussianSpectralKernel:
    """Gaussian quality / squared-exponential similarity kernel on R^D.

    Parameters
    ----------
    sigma_q : float
        Bandwidth of the quality function ``q``.
    theta : float
        Lengthscale of the similarity ``c``.
    dim : int
        Dimension of the state space.
    """

    sigma_q: float
    theta: float
    dim: int = 1

    def __post_init__(self):
        object.__setattr__(self, "sigma_q", _check_positive(self.sigma_q, "sigma_q"))
        object.__setattr__(self, "theta", _check_positive(self.theta, "theta"))
        if int(self.dim) != self.dim or self.dim < 1:
            raise ValueError(f"dim must be a positive integer, got {self.dim!r}")
        object.__setattr__(self, "dim", int(self.dim))

    # -- spectral constants ------------------------------------------------
    @property
    def a(self) -> float:
        return 1.0 / (4.0 * self.sigma_q**2)

    @property
    def b(self) -> float:
        return 1.0 / self.theta**2

    @property
    def c(self) -> float:
        a, b = self.a, self.b
        return math.sqrt(a * a + 2.0 * a * b)

    @property
    def ratio(self) -> float:
        """Per-dimension geometric decay ``b / (a + b + c)`` of the spectrum."""
        return self.b / (self.a + self.b + self.c)

    @property
    def lead(self) -> float:
        """Per-dimension leading factor ``sqrt(2a / (a + b + c))``."""
        return math.sqrt(2.0 * self.a / (self.a + self.b + self.c))

    @property
    def max_eigenvalue(self) -> float:
        return self.lead**self.dim

    def _as_point(self, x):
        x = np.asarray(x, dtype=float).reshape(-1)
        if x.shape[0] != self.dim:
            raise ValueError(f"expected a point of dimension {self.dim}, got {x.shape[0]}")
        return x

    # -- kernel evaluation -------------------------------------------------
    def log_quality(self, x) -> float:
        x = self._as_point(x)
        s = self.sigma_q
        return float(-0.5 * self.dim * _LOG_2PI - self.dim * math.log(s) - np.dot(x, x) / (2.0 * s * s))

    def quality(self, x) -> float:
        """Gaussian quality ``prod_d N(x_d | 0, sigma_q^2)``."""
        return math.exp(self.log_quality(x))

    def similarity(self, x, y) -> float:
        x, y = self._as_point(x), self._as_point(y)
        d = x - y
        return math.exp(-float(np.dot(d, d)) / self.theta**2)

    def kernel_value(self, x, y) -> float:
        return self.quality(x) * self.similarity(x, y) * self.quality(y)

    def gram(self, points) -> np.ndarray:
        """Kernel matrix ``C_X`` for a ``(K, D)`` array of points."""
        pts = np.asarray(points, dtype=float)
        if pts.size == 0:
            return np.zeros((0, 0))
        pts = pts.reshape(pts.shape[0], -1)
        if pts.shape[1] != self.dim:
            raise ValueError(f"expected points of dimension {self.dim}, got {pts.shape[1]}")
        s2 = self.sigma_q**2
        sq = np.einsum("kd,kd->k", pts, pts)
        logq = -0.5 * self.dim * _LOG_2PI - self.dim * math.log(self.sigma_q) - sq / (2.0 * s2)
        diff = pts[:, None, :] - pts[None, :, :]
        d2 = np.einsum("ijd,ijd->ij", diff, diff)
        return np.exp(logq[:, None] + logq[None, :] - d2 / self.theta**2)

    # -- spectrum ----------------------------------------------------------
    # Two spectra are available. "weighted" is the closed form for the
    # similarity c under the N(0, sigma_q^2) weight (trace 1 per dimension).
    # "lebesgue" is the spectrum of the integral operator of C itself, i.e.
    # the same closed form with a = 1/(2 sigma_q^2) scaled by the integral of q^2.
    def _spectral_params(self, spectrum):
        if spectrum == "weighted":
            return self.lead, self.ratio
        if spectrum == "lebesgue":
            a, b = 1.0 / (2.0 * self.sigma_q**2), self.b
            A = a + b + math.sqrt(a * a + 2.0 * a * b)
            scale = 1.0 / (2.0 * math.sqrt(math.pi) * self.sigma_q)
            return scale * math.sqrt(2.0 * a / A), b / A
        raise ValueError(f"unknown spectrum {spectrum!r}; use 'weighted' or 'lebesgue'")

    def eigenvalue(self, h, spectrum: str = "weighted") -> float:
        """Eigenvalue for the multi-index ``h`` (entries >= 1)."""
        h = np.atleast_1d(np.asarray(h))
        if h.shape != (self.dim,):
            raise ValueError(f"multi-index must have length {self.dim}")
        if np.any(h < 1) or np.any(h != np.floor(h)):
            raise ValueError("multi-index entries must be integers >= 1")
        lead, r = self._spectral_params(spectrum)
        return float(np.prod(lead * r ** (h - 1.0)))

    def trace(self, spectrum: str = "weighted") -> float:
        """Sum of all eigenvalues, in closed form."""
        lead, r = self._spectral_params(spectrum)
        return (lead / (1.0 - r)) ** self.dim

    def power_sum(self, j: int, spectrum: str = "weighted") -> float:
        """``sum_h lambda_h ** j``; factorizes across dimensions."""
        lead, r = self._spectral_params(spectrum)
        return (lead**j / (1.0 - r**j)) ** self.dim

    def log_normalizer(self, spectrum: str = "weighted", tol: float = 1e-14) -> float:
        """``sum_h log(1 + lambda_h)`` over all multi-indices ``h``.

        Expanding ``log(1 + x) = sum_j (-1)^(j+1) x^j / j`` turns the sum over
        multi-indices into power sums, which are products of per-dimension
        geometric series. Needs every eigenvalue < 1 (always true for the
        weighted spectrum); otherwise the leading eigenvalues are summed
        explicitly and only the tail goes through the expansion.
        """
        lead, r = self._spectral_params(spectrum)
        D = self.dim
        lam_max = lead**D
        if lam_max < 0.999:
            return _alternating_log_series(lead, r, D, tol)
        return self._hybrid_log_normalizer(lead, r)

    def _hybrid_log_normalizer(self, lead, r, floor=1e-4, n_terms=5):
        lam = self._enumerate(lead, r, floor)
        head = float(np.sum(np.log1p(lam)))
        j = np.arange(1, n_terms + 1)
        tail = 0.0
        for jj in j[::-1]:
            s = (lead**jj / (1.0 - r**jj)) ** self.dim - float(np.sum(lam**jj))
            tail += (-1.0) ** (jj + 1) * max(s, 0.0) / jj
        return head + tail

    def _enumerate(self, lead, r, floor):
        """Eigenvalues >= ``floor`` (partial products are pruned, as factors <= 1)."""
        D = self.dim
        if lead**D < floor:
            return np.zeros(0)
        if r <= 0.0:
            return np.array([lead**D])
        # per-dimension factors; a partial product below floor / lead^(D-1) cannot recover
        hmax = int(math.floor(math.log(floor / lead**D) / math.log(r)))
        per_dim = lead * r ** np.arange(hmax + 1)
        lam = per_dim
        for remaining in range(D - 2, -1, -1):
            lam = np.outer(lam, per_dim).ravel()
            lam = lam[lam * lead**remaining >= floor]
        return np.sort(lam[lam >= floor])[::-1]

    def eigenvalues(self, spectrum: str = "weighted", tail_tol: float = 1e-10) -> np.ndarray:
        """All eigenvalues, largest first, truncated so the omitted mass < ``tail_tol``."""
        lead, r = self._spectral_params(spectrum)
        total = (lead / (1.0 - r)) ** self.dim
        floor = lead**self.dim
        while True:
            floor *= 0.1
            lam = self._enumerate(lead, r, floor)
            if total - lam.sum() < tail_tol:
                return lam

    def brute_force_log_normalizer(self, hmax: int = 64, spectrum: str = "weighted") -> float:
        """Direct truncated multi-index sum; test oracle for small ``dim``."""
        lead, r = self._spectral_params(spectrum)
        per_dim = lead * r ** np.arange(hmax)
        total = 0.0
        for idx in itertools.product(range(hmax), repeat=self.dim):
            total += math.log1p(float(np.prod(per_dim[list(idx)])))
        return total


def _alternating_log_series(lead, r, D, tol):
    lam_max = lead**D
    bound = (lead / (1.0 - r)) ** D
    n_terms = 1
    if lam_max > 0.0:
        n_terms = int(math.ceil(math.log(tol / max(bound, tol)) / math.log(lam_max))) + 2
    j = np.arange(1, max(n_terms, 1) + 1, dtype=float)
    terms = np.exp(D * (j * math.log(lead) - np.log1p(-(r**j)))) / j
    signs = np.where(j % 2 == 1, 1.0, -1.0)
    # smallest terms first
    return float(np.sum((signs * terms)[::-1]))


@dataclass(frozen=True)
class IndependentQualityKernel:
    """Identity similarity with the same Gaussian quality: a Poisson process
    with intensity ``q(x)^2``. Used as the no-repulsion baseline.
    """

    sigma_q: float
    theta: float = 1.0  # unused; kept so both kernels share a constructor
    dim: int = 1

    def __post_init__(self):
        object.__setattr__(self, "sigma_q", _check_positive(self.sigma_q, "sigma_q"))

    def gram(self, points) -> np.ndarray:
        pts = np.asarray(points, dtype=float)
        if pts.size == 0:
            return np.zeros((0, 0))
        pts = pts.reshape(pts.shape[0], -1)
        logq = -0.5 * self.dim * _LOG_2PI - self.dim * math.log(self.sigma_q) - np.einsum("kd,kd->k", pts, pts) / (
            2.0 * self.sigma_q**2
        )
        return np.diag(np.exp(2.0 * logq))

    def log_normalizer(self, spectrum: str = "lebesgue") -> float:
        """Integrated intensity ``int q^2 = (2 sqrt(pi) sigma_q)^-D``."""
        return (2.0 * math.sqrt(math.pi) * self.sigma_q) ** (-self.dim)


@dataclass(frozen=True)
class HammingKernel:
    """``C(z, z') = exp(-H(z, z') / theta^2)`` on binary vectors of length ``n``."""

    theta: float
    n: int
    _cache: dict = field(default_factory=dict, init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "theta", _check_positive(self.theta, "theta"))
        if int(self.n) != self.n or self.n < 1:
            raise ValueError(f"n must be a positive integer, got {self.n!r}")
        object.__setattr__(self, "n", int(self.n))

    @classmethod
    def default_for(cls, n: int) -> "HammingKernel":
        """Lengthscale giving similarity 0.5 for columns differing in 10% of rows."""
        return cls(theta=math.sqrt(0.1 * n / math.log(2.0)), n=n)

    @property
    def rho(self) -> float:
        """Similarity per differing bit, ``exp(-1 / theta^2)``."""
        return math.exp(-1.0 / self.theta**2)

    def _as_binary(self, z):
        z = np.asarray(z).reshape(-1)
        if z.shape[0] != self.n:
            raise ValueError(f"expected a binary vector of length {self.n}, got {z.shape[0]}")
        return z.astype(np.int8)

    def kernel_value(self, z, zp) -> float:
        z, zp = self._as_binary(z), self._as_binary(zp)
        return math.exp(-int(np.count_nonzero(z != zp)) / self.theta**2)

    def gram(self, Z) -> np.ndarray:
        """Kernel matrix over the columns of the ``(n, K)`` binary matrix ``Z``."""
        Z = np.asarray(Z)
        if Z.ndim != 2 or Z.shape[0] != self.n:
            raise ValueError(f"expected an ({self.n}, K) binary matrix")
        Zf = Z.astype(float)
        ones = Zf.sum(axis=0)
        dist = ones[:, None] + ones[None, :] - 2.0 * Zf.T @ Zf
        return np.exp(-dist / self.theta**2)

    def log_esp(self, k_max: int) -> np.ndarray:
        """Log elementary symmetric polynomials ``log e_K``, ``K = 0..k_max``.

        The ground set is every NON-ZERO binary vector of length ``n``. On the
        full hypercube the kernel is a Kronecker power of ``[[1, rho], [rho, 1]]``
        with eigenvalues ``(1+rho)^(n-m) (1-rho)^m`` (multiplicity ``C(n, m)``),
        so ``sum_K e_K t^K = prod_m (1 + lambda_m t)^C(n, m)``; every term is
        positive, so there is no cancellation. Vertex transitivity then gives
        ``e_K(without one vertex) = (N-K)/N e_K``.
        """
        key = int(k_max)
        if key in self._cache:
            return self._cache[key]
        n = self.n
        with mpmath.workdps(40):
            rho = mpmath.exp(-1 / mpmath.mpf(self.theta) ** 2)
            N = mpmath.mpf(2) ** n
            e = [mpmath.mpf(1)] + [mpmath.mpf(0)] * key
            for m in range(n + 1):
                lam = (1 + rho) ** (n - m) * (1 - rho) ** m
                if lam == 0:
                    continue
                mult = math.comb(n, m)
                # coefficients of (1 + lam t)^mult up to degree key
                f = [mpmath.binomial(mult, j) * lam**j for j in range(key + 1)]
                e = [mpmath.fsum(e[i] * f[K - i] for i in range(K + 1)) for K in range(key + 1)]
            out = []
            for K in range(key + 1):
                val = e[K] * (N - K) / N
                out.append(float(mpmath.log(val)) if val > 0 else -math.inf)
        res = np.array(out)
        self._cache[key] = res
        return res
