"""Latent feature allocation ``Y = Z beta + E`` with a DPP prior on the columns of Z.

Columns of the binary ``(n, K)`` matrix Z are items of the ground set of
non-zero binary vectors, scored by a Hamming kernel. Rows of ``beta`` are
``N(0, tau2)`` and the noise is ``N(0, sigma2)``; ``1/sigma2 ~ Ga(a0, b0)``
and ``1/tau2 ~ Ga(a1, b1)``.

With random K the default prior on the set of columns is
``p(K) det(C_Z) / e_K``, i.e. a DPP restricted to K atoms mixed over
``p(K)``. ``e_K`` is available in closed form (see
:meth:`HammingKernel.log_esp`). ``prior_mode="unrestricted"`` drops it and
uses ``p(K) det(C_Z)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .dpp import log_det_psd
from .kernel import HammingKernel
from .trace import PosteriorTrace, Schedule
from .transdim import log_acceptance_up, up_probability

__all__ = [
    "FeaturePriorConfig",
    "FeatureState",
    "make_feature_kernel",
    "log_prior_Z",
    "log_p_K",
    "log_set_prior",
    "log_marginal_likelihood",
    "bernoulli_log_mass",
    "beta_conditional",
    "gibbs_update_beta",
    "gibbs_update_variances",
    "gibbs_flip_entries",
    "add_delete_feature",
    "block_refresh",
    "ResidualProposal",
    "product_bernoulli_log_mass",
    "initial_feature_state",
    "fit_features",
    "log_collapsed_posterior",
    "simulate_feature_data",
    "random_feature_matrix",
]

_LOG_2PI = math.log(2.0 * math.pi)


@dataclass(frozen=True)
class FeaturePriorConfig:
    """Prior and sampler settings of the feature-allocation model.

    Parameters
    ----------
    theta : float, optional
        Hamming lengthscale; ``None`` picks ``sqrt(0.1 n / log 2)``.
    a0, b0, a1, b1 : float
        Gamma shape/rate for ``1/sigma2`` and ``1/tau2``.
    K_prior : {"uniform", "poisson"}
        ``p(K)`` on ``1..K_max`` (Poisson truncated to that range).
    K_rate : float
        Poisson rate.
    fixed_K : int, optional
        Skip add/delete moves; the DPP-K mode.
    prior_mode : {"normalized", "unrestricted"}
        Whether ``det(C_Z)`` is divided by ``e_K``.
    similarity : {"hamming", "identity"}
        ``"identity"`` is the independence baseline (distinct columns, no repulsion).
    n_starts, pilot_iterations : int
        With data, run ``n_starts`` pilot chains of ``pilot_iterations``
        sweeps from independent starts and continue the one with the
        highest collapsed log posterior. Exact-fit reparameterizations of
        Z (e.g. one feature split over two columns) are local modes that
        no tractable proposal leaves quickly, so a single start can stall.
    """

    theta: float | None = None
    a0: float = 1.0
    b0: float = 1.0
    a1: float = 1.0
    b1: float = 1.0
    K_prior: str = "uniform"
    K_rate: float = 3.0
    K_max: int = 10
    fixed_K: int | None = None
    K_init: int | None = None
    prior_mode: str = "normalized"
    similarity: str = "hamming"
    n_starts: int = 4
    pilot_iterations: int = 100

    def __post_init__(self):
        for name in ("a0", "b0", "a1", "b1", "K_rate"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v > 0):
                raise ValueError(f"{name} must be a positive finite number, got {v!r}")
        if self.theta is not None and not (math.isfinite(self.theta) and self.theta > 0):
            raise ValueError("theta must be positive")
        if int(self.K_max) != self.K_max or self.K_max < 1:
            raise ValueError("K_max must be a positive integer")
        for name in ("fixed_K", "K_init"):
            v = getattr(self, name)
            if v is not None and (int(v) != v or not 1 <= v <= self.K_max):
                raise ValueError(f"{name} must be an integer in 1..K_max")
        for name, low in (("n_starts", 1), ("pilot_iterations", 0)):
            v = getattr(self, name)
            if isinstance(v, bool) or int(v) != v or v < low:
                raise ValueError(f"{name} must be an integer >= {low}")
        if self.K_prior not in ("uniform", "poisson"):
            raise ValueError(f"unknown K_prior {self.K_prior!r}")
        if self.prior_mode not in ("normalized", "unrestricted"):
            raise ValueError(f"unknown prior_mode {self.prior_mode!r}")
        if self.similarity not in ("hamming", "identity"):
            raise ValueError(f"unknown similarity {self.similarity!r}")


def make_feature_kernel(config: FeaturePriorConfig, n: int) -> HammingKernel:
    if config.similarity == "identity":
        # similarity exp(-1/theta^2) underflows to exactly 0 off the diagonal
        return HammingKernel(theta=0.01, n=n)
    if config.theta is None:
        return HammingKernel.default_for(n)
    return HammingKernel(theta=config.theta, n=n)


@dataclass
class FeatureState:
    Z: np.ndarray  # (n, K) int8
    beta: np.ndarray  # (K, S)
    sigma2: float
    tau2: float

    @property
    def K(self) -> int:
        return self.Z.shape[1]

    def check(self):
        """Raise ``AssertionError`` if an invariant is broken."""
        assert self.beta.shape[0] == self.K
        assert np.all((self.Z == 0) | (self.Z == 1))
        assert np.all(self.Z.sum(axis=0) > 0)
        assert len({col.tobytes() for col in self.Z.T}) == self.K
        assert self.sigma2 > 0 and self.tau2 > 0


# -- prior ---------------------------------------------------------------------


def log_prior_Z(Z, kernel: HammingKernel) -> float:
    """Unnormalized ``log det C_Z`` over the columns of Z (``-inf`` for duplicates)."""
    Z = np.asarray(Z)
    if Z.ndim != 2 or Z.shape[1] == 0:
        return 0.0
    return log_det_psd(kernel.gram(Z))


def log_p_K(K: int, config: FeaturePriorConfig) -> float:
    if not 1 <= K <= config.K_max:
        return -math.inf
    if config.K_prior == "uniform":
        return -math.log(config.K_max)
    lam = config.K_rate
    ks = np.arange(1, config.K_max + 1)
    logw = ks * math.log(lam) - np.array([math.lgamma(k + 1) for k in ks])
    lse = float(np.max(logw) + np.log(np.sum(np.exp(logw - np.max(logw)))))
    return K * math.log(lam) - math.lgamma(K + 1) - lse


def log_set_prior(log_det: float, K: int, kernel: HammingKernel, config: FeaturePriorConfig) -> float:
    """Log prior of an unordered set of K columns given ``log det C_Z``."""
    out = log_p_K(K, config) + log_det
    if config.prior_mode == "normalized":
        out -= float(kernel.log_esp(config.K_max)[K])
    return out


# -- likelihood ------------------------------------------------------------------


def log_marginal_likelihood(Z, Y, sigma2: float, tau2: float) -> float:
    """``log p(Y | Z, sigma2, tau2)`` with beta integrated out.

    Columns of Y are independent ``N(0, sigma2 I + tau2 Z Z^T)``; evaluated
    through the ``K x K`` matrix ``A = Z^T Z + (sigma2 / tau2) I``.
    """
    Y = np.asarray(Y, dtype=float)
    n, S = Y.shape
    Zf = np.asarray(Z, dtype=float)
    K = Zf.shape[1]
    yy = float(np.sum(Y * Y))
    logdet = n * math.log(sigma2)
    quad = yy
    if K:
        r = sigma2 / tau2
        A = Zf.T @ Zf + r * np.eye(K)
        L = np.linalg.cholesky(A)
        B = Zf.T @ Y
        W = np.linalg.solve(L, B)
        quad -= float(np.sum(W * W))
        logdet += 2.0 * float(np.sum(np.log(np.diag(L)))) - K * math.log(r)
    return -0.5 * (S * logdet + quad / sigma2 + n * S * _LOG_2PI)


def bernoulli_log_mass(z, rate: float) -> float:
    """Log mass of ``z`` under i.i.d. Bernoulli(rate) conditioned on ``z != 0``."""
    z = np.asarray(z)
    n = z.shape[0]
    m = int(z.sum())
    if m == 0:
        return -math.inf
    return m * math.log(rate) + (n - m) * math.log1p(-rate) - math.log1p(-((1.0 - rate) ** n))


def _proposal_rate(Z) -> float:
    if Z.shape[1] == 0:
        return 0.5
    return float(np.clip(Z.mean(), 0.1, 0.9))


def _base_residual(Z, keep, Y, sigma2, tau2):
    """``Y`` minus the kept columns' share of the posterior-mean fit of all of Z.

    Using the full-Z fit (not a refit of the kept columns alone) stops kept
    columns from soaking up signal that belongs to the removed ones.
    """
    if Z.shape[1] == 0:
        return np.asarray(Y, dtype=float)
    mean, _ = beta_conditional(Z, Y, sigma2, tau2)
    return Y - Z[:, keep] @ mean[keep]


class ResidualProposal:
    """Data-driven proposal for one new column.

    ``R`` is the part of Y left unexplained (see :func:`_base_residual`).
    A seed row ``i`` is drawn with probability proportional to ``|R_i|^2``
    and every row is projected on the direction of ``R_i``. Rows sharing
    the seed's missing feature sit near a level ``c``, the others near 0
    (loading rows are nearly orthogonal when S is large), so the two-point
    Gaussian log-odds ``c (proj - c/2) / sigma2`` gives per-row inclusion
    probabilities, clipped to ``[clip, 1 - clip]``. The proposal is the
    mixture over seeds, each conditioned on a non-zero column.
    """

    def __init__(self, R, sigma2: float, clip: float = 1e-3):
        R = np.asarray(R, dtype=float)
        G = R @ R.T
        sq = np.maximum(np.diag(G).copy(), 1e-300)
        norms = np.sqrt(sq)
        proj = G / norms[:, None]
        near = proj > 0.5 * norms[:, None]
        c = np.sum(proj * near, axis=1) / np.maximum(near.sum(axis=1), 1)
        logit = c[:, None] * (proj - 0.5 * c[:, None]) / sigma2
        p = 0.5 * (1.0 + np.tanh(0.5 * np.clip(logit, -50.0, 50.0)))
        self.p = np.clip(p, clip, 1.0 - clip)
        self.log_w = np.log(sq / sq.sum())
        self._log_p = np.log(self.p)
        self._log_1mp = np.log1p(-self.p)
        self._log_norm = np.log1p(-np.exp(np.sum(self._log_1mp, axis=1)))

    def sample(self, rng, dtype=np.int8):
        i = int(rng.choice(self.p.shape[0], p=np.exp(self.log_w)))
        return _draw_nonzero(self.p[i], rng, dtype)

    def log_mass(self, z) -> float:
        z = np.asarray(z).astype(bool)
        if not z.any():
            return -math.inf
        per_seed = self.log_w + np.where(z, self._log_p, self._log_1mp).sum(axis=1) - self._log_norm
        m = float(per_seed.max())
        return m + math.log(float(np.sum(np.exp(per_seed - m))))


def product_bernoulli_log_mass(z, p) -> float:
    """Log mass of ``z`` under independent Bernoulli(p_i), conditioned on ``z != 0``."""
    z = np.asarray(z).astype(bool)
    if not z.any():
        return -math.inf
    return float(np.sum(np.log(np.where(z, p, 1.0 - p)))) - math.log1p(-float(np.prod(1.0 - p)))


def _draw_nonzero(p, rng, dtype):
    z = np.zeros(p.shape[0], dtype=dtype)
    while not z.any():
        z = (rng.random(p.shape[0]) < p).astype(dtype)
    return z


# -- Gibbs updates ---------------------------------------------------------------


def beta_conditional(Z, Y, sigma2: float, tau2: float):
    """Mean ``(K, S)`` and Cholesky factor of the precision of ``beta | Z, Y``."""
    Zf = np.asarray(Z, dtype=float)
    K = Zf.shape[1]
    P = Zf.T @ Zf / sigma2 + np.eye(K) / tau2
    L = np.linalg.cholesky(P)
    mean = np.linalg.solve(P, Zf.T @ np.asarray(Y, dtype=float) / sigma2)
    return mean, L


def gibbs_update_beta(state: FeatureState, Y, rng, prior_only: bool = False) -> np.ndarray:
    """Draw every column of beta from its Gaussian full conditional."""
    K, S = state.K, Y.shape[1]
    if K == 0:
        state.beta = np.zeros((0, S))
    elif prior_only:
        state.beta = math.sqrt(state.tau2) * rng.standard_normal((K, S))
    else:
        mean, L = beta_conditional(state.Z, Y, state.sigma2, state.tau2)
        # L L^T = P, so L^{-T} eps has covariance P^{-1}
        state.beta = mean + np.linalg.solve(L.T, rng.standard_normal((K, S)))
    return state.beta


def gibbs_update_variances(state: FeatureState, Y, rng, config: FeaturePriorConfig, prior_only: bool = False):
    """``1/sigma2`` and ``1/tau2`` from their Gamma full conditionals."""
    n, S = Y.shape
    if prior_only:
        prec = rng.gamma(config.a0, 1.0 / config.b0)
    else:
        R = Y - state.Z @ state.beta
        prec = rng.gamma(config.a0 + 0.5 * n * S, 1.0 / (config.b0 + 0.5 * float(np.sum(R * R))))
    state.sigma2 = 1.0 / max(prec, np.finfo(float).tiny)
    prec = rng.gamma(config.a1 + 0.5 * state.K * S, 1.0 / (config.b1 + 0.5 * float(np.sum(state.beta**2))))
    state.tau2 = 1.0 / max(prec, np.finfo(float).tiny)
    return state.sigma2, state.tau2


def gibbs_flip_entries(state: FeatureState, Y, kernel: HammingKernel, rng, prior_only: bool = False) -> int:
    """MH flip of every ``z_ik`` once, in a random scan order; returns acceptances.

    The ratio is the row-i likelihood change times the ``det C_Z`` ratio.
    Flips emptying a column or duplicating another are rejected.
    """
    Z = state.Z
    n, K = Z.shape
    if K == 0:
        return 0
    beta = state.beta
    R = None if prior_only else Y - Z @ beta
    bb = np.sum(beta * beta, axis=1)
    col_sums = Z.sum(axis=0)
    Zf = Z.astype(float)
    ones = Zf.sum(axis=0)
    dist = ones[:, None] + ones[None, :] - 2.0 * Zf.T @ Zf
    inv_t2 = 1.0 / kernel.theta**2
    cur = log_det_psd(np.exp(-dist * inv_t2))
    accepted = 0
    for flat in rng.permutation(n * K):
        i, k = divmod(int(flat), K)
        old = Z[i, k]
        if old == 1 and col_sums[k] == 1:
            continue  # would leave an all-zero column
        # Hamming distances from column k change by +1 where row i agreed
        delta = np.where(Z[i] == old, 1.0, -1.0)
        delta[k] = 0.0
        nd = dist.copy()
        nd[k] += delta
        nd[:, k] += delta
        new_ld = log_det_psd(np.exp(-nd * inv_t2)) if K > 1 else 0.0
        if new_ld == -math.inf:
            continue
        log_r = new_ld - cur
        if R is not None:
            s = 1.0 - 2.0 * old  # +1 turns the feature on
            # ||r - s b||^2 - ||r||^2
            log_r -= 0.5 * (-2.0 * s * float(R[i] @ beta[k]) + bb[k]) / state.sigma2
        if log_r >= 0 or math.log(rng.random()) < log_r:
            Z[i, k] = 1 - old
            col_sums[k] += 1 if old == 0 else -1
            dist = nd
            cur = new_ld
            if R is not None:
                R[i] -= (1.0 - 2.0 * old) * beta[k]
            accepted += 1
    return accepted


# -- trans-dimensional move --------------------------------------------------------


def _add_log_rho(Z_x, ld_x, Z_y, ld_y, z_new, Y, state, kernel, config, prior_only):
    K = Z_x.shape[1]
    q_x = up_probability(K, 1, config.K_max)
    q_y = up_probability(K + 1, 1, config.K_max)
    log_lik = 0.0
    if not prior_only:
        log_lik = log_marginal_likelihood(Z_y, Y, state.sigma2, state.tau2) - log_marginal_likelihood(
            Z_x, Y, state.sigma2, state.tau2
        )
    return log_acceptance_up(
        log_set_prior(ld_x, K, kernel, config) if K >= 1 else 0.0,
        log_set_prior(ld_y, K + 1, kernel, config),
        K,
        log_q_up_x=math.log(q_x),
        log_q_down_y=math.log1p(-q_y) if q_y < 1.0 else -math.inf,
        log_sel_up_x=-math.log(K + 1),
        log_sel_down_y=-math.log(K + 1),
        log_aux=_add_log_mass(z_new, Z_x, Y, state, prior_only),
        log_lik_ratio=log_lik,
    )


def _add_log_mass(z, Z_x, Y, state, prior_only):
    # half Bernoulli(rate), half residual-driven when data are used
    lb = bernoulli_log_mass(z, _proposal_rate(Z_x))
    if prior_only:
        return lb
    R = _base_residual(Z_x, np.arange(Z_x.shape[1]), Y, state.sigma2, state.tau2)
    lr = ResidualProposal(R, state.sigma2).log_mass(z)
    return float(np.logaddexp(lb, lr)) - math.log(2.0)


def add_delete_feature(state: FeatureState, Y, kernel: HammingKernel, config: FeaturePriorConfig, rng,
                       prior_only: bool = False) -> str:
    """Add a random Bernoulli column or delete a uniformly chosen one.

    beta is integrated out of the acceptance ratio and redrawn from its
    full conditional after an accepted move, which makes the pair a valid
    MH update on ``(Z, beta)`` jointly.

    Returns ``"add"``, ``"delete"`` or ``"rejected"``.
    """
    Z = state.Z
    n, K = Z.shape
    q_x = up_probability(K, 1, config.K_max)
    ld_x = log_prior_Z(Z, kernel)
    if rng.random() < q_x:
        if prior_only or rng.random() < 0.5:
            z = _draw_nonzero(np.full(n, _proposal_rate(Z)), rng, Z.dtype)
        else:
            R = _base_residual(Z, np.arange(K), Y, state.sigma2, state.tau2)
            z = ResidualProposal(R, state.sigma2).sample(rng, Z.dtype)
        Z_y = np.column_stack([Z, z])
        ld_y = log_prior_Z(Z_y, kernel)
        log_rho = _add_log_rho(Z, ld_x, Z_y, ld_y, z, Y, state, kernel, config, prior_only)
        if math.log(rng.random()) < log_rho:
            state.Z = Z_y
            gibbs_update_beta(state, Y, rng, prior_only)
            return "add"
        return "rejected"
    if K <= 1:
        return "rejected"
    j = int(rng.integers(K))
    Z_x = np.delete(Z, j, axis=1)
    ld_new = log_prior_Z(Z_x, kernel)
    log_rho = _add_log_rho(Z_x, ld_new, Z, ld_x, Z[:, j], Y, state, kernel, config, prior_only)
    if math.log(rng.random()) < -log_rho:
        state.Z = Z_x
        gibbs_update_beta(state, Y, rng, prior_only)
        return "delete"
    return "rejected"


BLOCK_JUMP = 2  # largest change of K in one block move


def _block_sizes(m, K, config):
    # replacement sizes m' reachable from removing m of K columns
    if config.fixed_K is not None:
        return [m]
    return [
        mp
        for mp in range(m - BLOCK_JUMP, m + BLOCK_JUMP + 1)
        if 1 <= mp and 1 <= K - m + mp <= config.K_max
    ]


def _log_set_mass(cols, proposal):
    # i.i.d. draws of distinct columns: every order gives the same product
    return math.lgamma(len(cols) + 1) + sum(proposal.log_mass(z) for z in cols)


def block_refresh(state: FeatureState, Y, kernel: HammingKernel, config: FeaturePriorConfig, rng) -> bool:
    """Replace ``m`` random columns by ``m'`` residual-driven ones.

    ``m`` is uniform on ``1..K`` and ``m'`` differs from it by at most
    ``BLOCK_JUMP``.

    An MH move on the set of columns with beta integrated out and redrawn
    on acceptance. New columns are i.i.d. draws from one
    :class:`ResidualProposal` of the residual left by the kept columns
    (duplicates are rejected by the prior), so the move
    can turn e.g. ``{a or b, a and not b, b and not a}`` into ``{a, b}``,
    which no single-column move reaches. Under ``fixed_K``, ``m' = m``.
    """
    Z = state.Z
    K = Z.shape[1]
    if K == 0:
        return False
    m = int(rng.integers(1, K + 1))
    sizes = _block_sizes(m, K, config)
    mp = sizes[int(rng.integers(len(sizes)))]
    J = np.sort(rng.choice(K, size=m, replace=False))
    keep = np.setdiff1d(np.arange(K), J)
    s2, t2 = state.sigma2, state.tau2
    prop = ResidualProposal(_base_residual(Z, keep, Y, s2, t2), s2)
    new_cols = [prop.sample(rng, Z.dtype) for _ in range(mp)]
    Z_new = np.column_stack([Z[:, keep]] + new_cols)
    K_new = Z_new.shape[1]
    ld_new = log_prior_Z(Z_new, kernel)
    if ld_new == -math.inf:
        return False
    prop_new = ResidualProposal(_base_residual(Z_new, np.arange(keep.size), Y, s2, t2), s2)
    log_fwd = (-math.log(K) - math.log(math.comb(K, m)) - math.log(len(sizes))
               + _log_set_mass(new_cols, prop))
    log_bwd = (-math.log(K_new) - math.log(math.comb(K_new, mp))
               - math.log(len(_block_sizes(mp, K_new, config)))
               + _log_set_mass([Z[:, j] for j in J], prop_new))
    log_r = (
        log_set_prior(ld_new, K_new, kernel, config)
        - log_set_prior(log_prior_Z(Z, kernel), K, kernel, config)
        + log_marginal_likelihood(Z_new, Y, s2, t2)
        - log_marginal_likelihood(Z, Y, s2, t2)
        + log_bwd
        - log_fwd
    )
    if math.log(rng.random()) < log_r:
        state.Z = Z_new
        gibbs_update_beta(state, Y, rng)
        return True
    return False


# -- driver ------------------------------------------------------------------------


def random_feature_matrix(n, K, rng, rate=0.5) -> np.ndarray:
    """``(n, K)`` int8 matrix of distinct non-zero Bernoulli(rate) columns."""
    if K > 2**n - 1:
        raise ValueError(f"cannot place {K} distinct non-zero columns in {n} rows")
    cols, seen = [], set()
    while len(cols) < K:
        z = (rng.random(n) < rate).astype(np.int8)
        key = z.tobytes()
        if z.any() and key not in seen:
            seen.add(key)
            cols.append(z)
    return np.column_stack(cols) if cols else np.zeros((n, 0), dtype=np.int8)


def initial_feature_state(Y, config: FeaturePriorConfig, rng, prior_only: bool = False) -> FeatureState:
    n, S = Y.shape
    K = config.fixed_K or config.K_init or 1
    Z = random_feature_matrix(n, K, rng)
    state = FeatureState(Z, np.zeros((K, S)), 1.0, 1.0)
    gibbs_update_beta(state, Y, rng, prior_only)
    return state


def _record(state):
    return {
        "K": state.K,
        "Z": state.Z.astype(np.int64),
        "beta": state.beta.copy(),
        "sigma2": float(state.sigma2),
        "tau2": float(state.tau2),
    }


def _sweep(state, Y, kernel, config, rng, prior_only):
    gibbs_update_beta(state, Y, rng, prior_only)
    gibbs_update_variances(state, Y, rng, config, prior_only)
    gibbs_flip_entries(state, Y, kernel, rng, prior_only)
    if not prior_only:
        block_refresh(state, Y, kernel, config, rng)
    if config.fixed_K is None:
        add_delete_feature(state, Y, kernel, config, rng, prior_only)


def log_collapsed_posterior(state: FeatureState, Y, kernel: HammingKernel, config: FeaturePriorConfig) -> float:
    """``log p(Z, sigma2, tau2 | Y)`` up to a constant, beta integrated out.

    The variances are scored through their precisions.
    """

    def log_gamma(x, a, b):
        return a * math.log(b) - math.lgamma(a) + (a - 1.0) * math.log(x) - b * x

    return (
        log_set_prior(log_prior_Z(state.Z, kernel), state.K, kernel, config)
        + log_marginal_likelihood(state.Z, Y, state.sigma2, state.tau2)
        + log_gamma(1.0 / state.sigma2, config.a0, config.b0)
        + log_gamma(1.0 / state.tau2, config.a1, config.b1)
    )


def _best_pilot(Y, kernel, config, rng) -> FeatureState:
    best, best_lp = None, -math.inf
    for _ in range(config.n_starts):
        state = initial_feature_state(Y, config, rng)
        for _ in range(config.pilot_iterations):
            _sweep(state, Y, kernel, config, rng, False)
        lp = log_collapsed_posterior(state, Y, kernel, config)
        if best is None or lp > best_lp:
            best, best_lp = state, lp
    return best


def fit_features(Y, config: FeaturePriorConfig | None = None, schedule: Schedule | None = None, rng=None, *,
                 prior_only: bool = False, seed=None, callback=None) -> PosteriorTrace:
    """Run the feature-allocation sampler.

    Each iteration updates beta, the variances, every entry of Z, tries one
    block refresh (with data), and then (unless ``fixed_K``) attempts one
    add/delete move. With data the chain starts from the best of
    ``config.n_starts`` pilot runs; pilot sweeps are not recorded.

    Parameters
    ----------
    Y : (n, S) array
        Data; only its shape is used when ``prior_only``.
    """
    config = config or FeaturePriorConfig()
    schedule = schedule or Schedule(2000, 500, 1)
    rng = rng if rng is not None else np.random.default_rng(seed)
    Y = np.asarray(Y, dtype=float)
    if Y.ndim != 2 or Y.shape[0] < 1 or Y.shape[1] < 1:
        raise ValueError("Y must be an (n, S) matrix with n, S >= 1")
    if not np.all(np.isfinite(Y)):
        raise ValueError("Y contains non-finite values")
    n, S = Y.shape
    if config.K_max > 2**n - 1:
        raise ValueError(f"K_max={config.K_max} exceeds the {2**n - 1} distinct non-zero columns of length {n}")
    kernel = make_feature_kernel(config, n)
    if prior_only:
        state = initial_feature_state(Y, config, rng, prior_only)
    else:
        state = _best_pilot(Y, kernel, config, rng)
    samples = []
    for it in range(schedule.iterations):
        _sweep(state, Y, kernel, config, rng, prior_only)
        if callback is not None:
            callback(it, state)
        if schedule.keep(it):
            samples.append(_record(state))
    meta = {"n": n, "S": S, "prior_only": bool(prior_only), "theta": kernel.theta}
    cfg = {k: getattr(config, k) for k in config.__dataclass_fields__}
    return PosteriorTrace("features", samples, schedule.as_dict(), seed, cfg, meta)


def simulate_feature_data(Z_true, beta_true, sigma: float, rng) -> np.ndarray:
    """``Y = Z beta + N(0, sigma^2)`` noise."""
    Z = np.asarray(Z_true, dtype=float)
    B = np.asarray(beta_true, dtype=float)
    if Z.ndim != 2 or B.ndim != 2 or Z.shape[1] != B.shape[0]:
        raise ValueError(f"shape mismatch: Z is {Z.shape}, beta is {B.shape}")
    if not (sigma >= 0 and math.isfinite(sigma)):
        raise ValueError("sigma must be a nonnegative finite number")
    return Z @ B + sigma * rng.standard_normal((Z.shape[0], B.shape[1]))
