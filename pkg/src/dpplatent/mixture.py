"""Repulsive mixture of normals with a DPP prior on the component means.

Model (data standardized per dimension before fitting)::

    y_i | s_i = k ~ N(mu_k, diag(1 / tau_k))
    s_i | w       ~ w
    w | K         ~ Dir(delta, ..., delta)
    tau_kd        ~ Ga(a0, b0)                 (shape, rate)
    {mu_1..mu_K}  ~ DPP(C; theta, sigma_q),  K >= 1
    theta ~ N+(a1, b1^2),  sigma_q ~ N+(a2, b2^2)

The number of components changes through birth and death of empty
components. Allocations are 0-based internally and 1-based in traces.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .dpp import log_det_psd
from .kernel import GaussianSpectralKernel, IndependentQualityKernel
from .trace import PosteriorTrace, Schedule
from .transdim import MovePair, log_acceptance_up, register_move, up_probability

__all__ = [
    "MixturePriorConfig",
    "MixtureState",
    "WeightSplit",
    "make_kernel",
    "allocation_probabilities",
    "gibbs_allocations",
    "update_weights",
    "update_precisions",
    "mh_update_means",
    "mh_update_kernel_hyperparams",
    "birth_death_move",
    "initial_state",
    "fit_mixture",
    "simulate_mixture_data",
]


@dataclass(frozen=True)
class MixturePriorConfig:
    """Prior, proposal and sampler settings of the mixture model.

    Parameters
    ----------
    delta : float
        Dirichlet symmetry parameter.
    a0, b0 : float
        Gamma shape and rate of each precision (mean ``a0 / b0``).
    a1, b1, a2, b2 : float
        Location and scale of the positive-truncated normal hyperpriors on
        ``theta`` and ``sigma_q``.
    K_max : int
        Cap on the number of components.
    fix_hyperparams : bool
        Keep ``theta`` and ``sigma_q`` at their initial values.
    similarity : {"gaussian", "identity"}
        ``"identity"`` drops repulsion (independence baseline, same quality).
    spectrum : {"lebesgue", "weighted"}
        Eigenvalue set used for the normalizer in hyperparameter updates.
    """

    delta: float = 1.0
    a0: float = 1.0
    b0: float = 1.0
    a1: float = 1.0
    b1: float = 0.5
    a2: float = 1.0
    b2: float = 0.5
    K_max: int = 20
    fix_hyperparams: bool = False
    theta_init: float = 1.0
    sigma_q_init: float = 1.0
    K_init: int | None = None
    mean_step: float = 0.1
    hyper_step: float = 0.2
    birth_attempts: int = 5
    similarity: str = "gaussian"
    spectrum: str = "lebesgue"

    def __post_init__(self):
        for name in ("delta", "a0", "b0", "b1", "b2", "theta_init", "sigma_q_init", "mean_step", "hyper_step"):
            v = getattr(self, name)
            if not (isinstance(v, (int, float)) and math.isfinite(v) and v > 0):
                raise ValueError(f"{name} must be a positive finite number, got {v!r}")
        for name in ("a1", "a2"):
            if not math.isfinite(getattr(self, name)):
                raise ValueError(f"{name} must be finite")
        if int(self.K_max) != self.K_max or self.K_max < 1:
            raise ValueError("K_max must be a positive integer")
        if self.K_init is not None and not 1 <= self.K_init <= self.K_max:
            raise ValueError("K_init must lie in 1..K_max")
        if int(self.birth_attempts) != self.birth_attempts or self.birth_attempts < 1:
            raise ValueError("birth_attempts must be a positive integer")
        if self.similarity not in ("gaussian", "identity"):
            raise ValueError(f"unknown similarity {self.similarity!r}")
        if self.spectrum not in ("lebesgue", "weighted"):
            raise ValueError(f"unknown spectrum {self.spectrum!r}")


def make_kernel(config: MixturePriorConfig, theta: float, sigma_q: float, dim: int):
    if config.similarity == "identity":
        return IndependentQualityKernel(sigma_q, theta, dim)
    return GaussianSpectralKernel(sigma_q, theta, dim)


@dataclass
class MixtureState:
    """Full sampler state in standardized units.

    ``log_det`` caches ``log det C_mu`` at the current hyperparameters.
    """

    means: np.ndarray  # (K, D)
    weights: np.ndarray  # (K,)
    precisions: np.ndarray  # (K, D)
    allocations: np.ndarray  # (n,), 0-based
    theta: float
    sigma_q: float
    log_det: float = field(default=0.0)

    @property
    def K(self) -> int:
        return self.means.shape[0]

    @property
    def dim(self) -> int:
        return self.means.shape[1]

    def counts(self) -> np.ndarray:
        return np.bincount(self.allocations, minlength=self.K)

    def check(self):
        """Raise ``AssertionError`` if an invariant is broken."""
        K = self.K
        assert K >= 1
        assert self.weights.shape == (K,) and np.all(self.weights > 0)
        assert abs(self.weights.sum() - 1.0) < 1e-9
        assert self.precisions.shape == self.means.shape and np.all(self.precisions > 0)
        assert self.allocations.size == 0 or (self.allocations.min() >= 0 and self.allocations.max() < K)
        assert self.theta > 0 and self.sigma_q > 0
        assert math.isfinite(self.log_det)


def _log_dirichlet(w, delta):
    K = w.shape[0]
    out = math.lgamma(K * delta) - K * math.lgamma(delta)
    if delta != 1.0:
        out += (delta - 1.0) * float(np.sum(np.log(w)))
    return out


def _component_stats(state, data):
    K, D = state.K, state.dim
    n_k = np.bincount(state.allocations, minlength=K).astype(float)
    sums = np.empty((K, D))
    sumsq = np.empty((K, D))
    for d in range(D):
        sums[:, d] = np.bincount(state.allocations, weights=data[:, d], minlength=K)
        sumsq[:, d] = np.bincount(state.allocations, weights=data[:, d] ** 2, minlength=K)
    return n_k, sums, sumsq


# -- Gibbs updates -------------------------------------------------------------


def _allocation_logits(state, data):
    tau = state.precisions
    # log w_k + sum_d [0.5 log tau_kd - 0.5 tau_kd (y_id - mu_kd)^2]
    sq = (data[:, None, :] - state.means[None, :, :]) ** 2
    return np.log(state.weights)[None, :] + 0.5 * np.sum(np.log(tau)[None] - tau[None] * sq, axis=2)


def allocation_probabilities(state: MixtureState, data) -> np.ndarray:
    """Full conditional ``p(s_i = k) ∝ w_k N(y_i | mu_k, 1/tau_k)`` as an ``(n, K)`` array."""
    logits = _allocation_logits(state, np.asarray(data, dtype=float).reshape(-1, state.dim))
    logits -= logits.max(axis=1, keepdims=True)
    p = np.exp(logits)
    return p / p.sum(axis=1, keepdims=True)


def gibbs_allocations(state: MixtureState, data, rng) -> np.ndarray:
    """Draw every ``s_i`` from its full conditional; updates ``state`` in place."""
    n = data.shape[0]
    if n == 0 or state.K == 1:
        state.allocations = np.zeros(n, dtype=np.int64)
        return state.allocations
    logits = _allocation_logits(state, data)
    logits -= logits.max(axis=1, keepdims=True)
    cdf = np.cumsum(np.exp(logits), axis=1)
    u = rng.random(n) * cdf[:, -1]
    s = np.sum(cdf < u[:, None], axis=1)
    state.allocations = np.minimum(s, state.K - 1).astype(np.int64)
    return state.allocations


def update_weights(state: MixtureState, rng, delta: float = 1.0) -> np.ndarray:
    """``w ~ Dir(delta + n_1, ..., delta + n_K)``."""
    g = rng.gamma(delta + state.counts())
    # underflow to zero is only possible for tiny shapes
    g = np.maximum(g, np.finfo(float).tiny)
    state.weights = g / g.sum()
    return state.weights


def update_precisions(state: MixtureState, data, rng, a0: float = 1.0, b0: float = 1.0) -> np.ndarray:
    """``tau_kd ~ Ga(a0 + n_k / 2, b0 + SS_kd / 2)`` with ``SS`` about the current mean."""
    n_k, sums, sumsq = _component_stats(state, data)
    ss = sumsq - 2.0 * state.means * sums + n_k[:, None] * state.means**2
    ss = np.maximum(ss, 0.0)
    shape = a0 + 0.5 * n_k[:, None] * np.ones(state.dim)
    rate = b0 + 0.5 * ss
    state.precisions = np.maximum(rng.gamma(shape, 1.0 / rate), np.finfo(float).tiny)
    return state.precisions


# -- Metropolis-Hastings updates ---------------------------------------------------


def mh_update_means(state: MixtureState, data, kernel, rng, step: float = 0.1) -> int:
    """Random-walk MH on each mean in turn; returns the number of acceptances.

    The ratio is the likelihood ratio times the Gram determinant ratio;
    the normalizer cancels at fixed hyperparameters.
    """
    n_k, sums, _ = _component_stats(state, data)
    accepted = 0
    for k in range(state.K):
        old = state.means[k].copy()
        new = old + step * rng.standard_normal(state.dim)
        # sum_i (y - m')^2 - (y - m)^2 = n_k (m'^2 - m^2) - 2 (m' - m) S_k
        d_ss = n_k[k] * (new**2 - old**2) - 2.0 * (new - old) * sums[k]
        d_loglik = -0.5 * float(np.sum(state.precisions[k] * d_ss))
        state.means[k] = new
        ld = log_det_psd(kernel.gram(state.means))
        log_r = d_loglik + ld - state.log_det
        if ld > -math.inf and math.log(rng.random()) < log_r:
            state.log_det = ld
            accepted += 1
        else:
            state.means[k] = old
    return accepted


def _log_trunc_normal(x, loc, scale):
    # truncation constant omitted; it cancels at fixed hyperprior parameters
    return -0.5 * ((x - loc) / scale) ** 2


def _hyper_log_target(state, config, theta, sigma_q):
    kernel = make_kernel(config, theta, sigma_q, state.dim)
    ld = log_det_psd(kernel.gram(state.means))
    lp = ld - kernel.log_normalizer(config.spectrum)
    lp += _log_trunc_normal(theta, config.a1, config.b1) + _log_trunc_normal(sigma_q, config.a2, config.b2)
    return lp, ld


def mh_update_kernel_hyperparams(state: MixtureState, config: MixturePriorConfig, rng) -> int:
    """Log-scale random-walk MH on ``theta`` then ``sigma_q``; returns acceptances."""
    if config.fix_hyperparams:
        return 0
    accepted = 0
    current, _ = _hyper_log_target(state, config, state.theta, state.sigma_q)
    for name in ("theta", "sigma_q"):
        if name == "theta" and config.similarity == "identity":
            continue  # the baseline does not depend on theta
        old = getattr(state, name)
        new = old * math.exp(config.hyper_step * rng.standard_normal())
        if not (new > 0 and math.isfinite(new)):
            continue
        args = {"theta": state.theta, "sigma_q": state.sigma_q, name: new}
        prop, ld = _hyper_log_target(state, config, args["theta"], args["sigma_q"])
        # log-scale proposal: Jacobian log(new) - log(old)
        log_r = prop - current + math.log(new) - math.log(old)
        if ld > -math.inf and math.log(rng.random()) < log_r:
            setattr(state, name, new)
            state.log_det = ld
            current = prop
            accepted += 1
    return accepted


# -- birth and death of empty components ---------------------------------------


class WeightSplit(MovePair):
    """Weight part of a birth: ``w' = (w (1 - u), u)``.

    Coordinates are the free simplex coordinates (all but the last weight),
    so the Jacobian of ``(w_1..w_{K-1}, u) -> (w'_1..w'_K)`` is
    ``(1 - u)^(K-1)``.
    """

    name = "weight-split"

    def transform(self, x, u):
        x = np.ravel(x)
        u = float(np.ravel(u)[0])
        return np.concatenate([x * (1.0 - u), [u]])

    def inverse(self, y, x_size):
        y = np.ravel(y)
        u = y[x_size:]
        return y[:x_size] / (1.0 - u[0]), u

    def log_jacobian(self, x, u) -> float:
        return np.ravel(x).size * math.log1p(-float(np.ravel(u)[0]))

    def sample_aux(self, x, rng):
        return np.array([rng.beta(1.0, np.ravel(x).size + 1)])

    def log_aux_density(self, x, u) -> float:
        K = np.ravel(x).size + 1
        u = float(np.ravel(u)[0])
        if not 0.0 < u < 1.0:
            return -math.inf
        return math.log(K) + (K - 1) * math.log1p(-u)

    def random_input(self, rng):
        K = int(rng.integers(1, 7))
        w = rng.dirichlet(np.ones(K))
        return w[:-1], self.sample_aux(w[:-1], rng)


register_move("weight-split")(WeightSplit)

_SPLIT = WeightSplit()


def _birth_death_log_rho(K, w_x, u, w_y, log_det_x, log_det_y, n_empty_y, n_data, box_log_vol, config,
                         count_factor):
    # log rho for the up move x (size K) -> y (size K + 1)
    q_x = up_probability(K, 1, config.K_max)
    q_y = up_probability(K + 1, 1, config.K_max)
    log_aux = _SPLIT.log_aux_density(w_x[:-1], [u]) - box_log_vol
    log_lik = _log_dirichlet(w_y, config.delta) - _log_dirichlet(w_x, config.delta) + n_data * math.log1p(-u)
    return log_acceptance_up(
        log_det_x,
        log_det_y,
        K,
        log_q_up_x=math.log(q_x),
        log_q_down_y=math.log1p(-q_y) if q_y < 1.0 else -math.inf,
        log_sel_up_x=-math.log(K + 1),
        log_sel_down_y=-math.log(n_empty_y),
        log_aux=log_aux,
        log_jacobian=_SPLIT.log_jacobian(w_x[:-1], [u]),
        log_lik_ratio=log_lik,
        count_factor=count_factor,
    )


def birth_death_move(state: MixtureState, n_data: int, kernel, config: MixturePriorConfig, rng, box,
                     count_factor: bool = True) -> str:
    """One birth or death proposal for an empty component.

    Parameters
    ----------
    n_data : int
        Number of allocated observations (0 when the likelihood is off).
    box : (low, high)
        Birth proposal box for new means, in standardized units.

    Returns
    -------
    str
        One of ``"birth"``, ``"death"``, ``"rejected"``.
    """
    low, high = (np.asarray(b, dtype=float) for b in box)
    box_log_vol = float(np.sum(np.log(high - low)))
    K = state.K
    q_x = up_probability(K, 1, config.K_max)
    counts = state.counts()
    if rng.random() < q_x:
        u = float(rng.beta(1.0, K))
        if not 0.0 < u < 1.0:
            return "rejected"
        mu = low + (high - low) * rng.random(state.dim)
        tau = np.maximum(rng.gamma(config.a0, 1.0 / config.b0, size=state.dim), np.finfo(float).tiny)
        means = np.vstack([state.means, mu])
        w_y = np.concatenate([state.weights * (1.0 - u), [u]])
        ld = log_det_psd(kernel.gram(means))
        n_empty_y = int(np.sum(counts == 0)) + 1
        log_rho = _birth_death_log_rho(K, state.weights, u, w_y, state.log_det, ld, n_empty_y, n_data,
                                       box_log_vol, config, count_factor)
        if math.log(rng.random()) < log_rho:
            state.means = means
            state.weights = w_y
            state.precisions = np.vstack([state.precisions, tau])
            state.log_det = ld
            return "birth"
        return "rejected"
    empty = np.flatnonzero(counts == 0)
    if K <= 1 or empty.size == 0:
        return "rejected"
    j = int(empty[rng.integers(empty.size)])
    u = float(state.weights[j])
    keep = np.arange(K) != j
    w_x = state.weights[keep] / (1.0 - u)
    means = state.means[keep]
    ld = log_det_psd(kernel.gram(means))
    mu = state.means[j]
    log_rho = _birth_death_log_rho(K - 1, w_x, u, np.concatenate([w_x * (1.0 - u), [u]]), ld, state.log_det,
                                   empty.size, n_data, box_log_vol, config, count_factor)
    if np.any(mu < low) or np.any(mu > high):
        log_rho = math.inf  # the reverse birth could not have produced this mean
    if math.log(rng.random()) < -log_rho:
        state.means = means
        state.weights = w_x / w_x.sum()
        state.precisions = state.precisions[keep]
        state.allocations = state.allocations - (state.allocations > j)
        state.log_det = ld
        return "death"
    return "rejected"


# -- driver ------------------------------------------------------------------------


def _standardize(data):
    loc = data.mean(axis=0)
    scale = data.std(axis=0)
    scale = np.where(scale > 0, scale, 1.0)
    return (data - loc) / scale, loc, scale


def _birth_box(z, dim):
    if z is None or z.shape[0] < 2:
        return np.full(dim, -4.0), np.full(dim, 4.0)
    lo, hi = z.min(axis=0), z.max(axis=0)
    span = hi - lo
    if np.any(span <= 0):
        return np.full(dim, -4.0), np.full(dim, 4.0)
    return lo - 0.05 * span, hi + 0.05 * span


def initial_state(z, config: MixturePriorConfig, dim: int, rng) -> MixtureState:
    """Starting state: ``K_init`` means at spread-out data quantiles (or the origin)."""
    n = 0 if z is None else z.shape[0]
    # start overfitted: surplus components empty out and die, which mixes
    # far better than growing from one component
    K = config.K_init or max(1, min(config.K_max, 10, n))
    if z is None or z.shape[0] == 0:
        means = np.linspace(-1.0, 1.0, K)[:, None] * np.ones(dim) if K > 1 else np.zeros((1, dim))
        alloc = np.zeros(0, dtype=np.int64)
    else:
        qs = (np.arange(K) + 0.5) / K
        means = np.quantile(z, qs, axis=0).reshape(K, dim)
        # break ties so the Gram matrix is nonsingular
        means = means + 1e-3 * np.arange(K)[:, None]
        alloc = np.argmin(((z[:, None, :] - means[None]) ** 2).sum(axis=2), axis=1).astype(np.int64)
    kernel = make_kernel(config, config.theta_init, config.sigma_q_init, dim)
    state = MixtureState(
        means=means,
        weights=np.full(K, 1.0 / K),
        precisions=np.ones((K, dim)),
        allocations=alloc,
        theta=float(config.theta_init),
        sigma_q=float(config.sigma_q_init),
        log_det=log_det_psd(kernel.gram(means)),
    )
    if not math.isfinite(state.log_det):
        raise ValueError("initial means give a singular Gram matrix")
    return state


def _record(state, loc, scale):
    return {
        "K": state.K,
        "means": state.means * scale + loc,
        "weights": state.weights.copy(),
        "precisions": state.precisions / scale**2,
        "allocations": state.allocations + 1,
        "theta": float(state.theta),
        "sigma_q": float(state.sigma_q),
    }


def fit_mixture(data, config: MixturePriorConfig | None = None, schedule: Schedule | None = None, rng=None, *,
                prior_only: bool = False, dim: int | None = None, count_factor: bool = True, seed=None,
                callback=None) -> PosteriorTrace:
    """Run the mixture sampler and return the retained samples.

    Each iteration updates allocations, weights, precisions, means,
    kernel hyperparameters, then attempts ``birth_attempts`` birth/death
    moves. Reported means and precisions are in the original data units.

    Parameters
    ----------
    data : (n, D) array or None
        Observations; ignored (and optional) when ``prior_only``.
    prior_only : bool
        Drop the likelihood, so the chain targets the prior.
    dim : int, optional
        Dimension when no data are given.
    count_factor : bool
        Negative-control switch for the ``1/(K+1)`` factor; keep True.
    seed : int, optional
        Only recorded in the trace header.
    callback : callable, optional
        Called as ``callback(it, state)`` after every iteration.
    """
    config = config or MixturePriorConfig()
    schedule = schedule or Schedule(2000, 500, 1)
    rng = rng if rng is not None else np.random.default_rng(seed)
    if data is None:
        if not prior_only:
            raise ValueError("data are required unless prior_only is set")
        D = int(dim or 1)
        y = None
    else:
        y = np.asarray(data, dtype=float)
        if y.ndim == 1:
            y = y[:, None]
        if y.ndim != 2 or y.shape[0] < 1:
            raise ValueError("data must be an (n, D) matrix with n >= 1")
        if not np.all(np.isfinite(y)):
            raise ValueError("data contain non-finite values")
        D = y.shape[1]
    if y is not None and not prior_only:
        z, loc, scale = _standardize(y)
    else:
        z, loc, scale = None, np.zeros(D), np.ones(D)
    box = _birth_box(z, D)
    fit_data = z if z is not None else np.zeros((0, D))
    state = initial_state(z, config, D, rng)
    samples = []
    for it in range(schedule.iterations):
        gibbs_allocations(state, fit_data, rng)
        update_weights(state, rng, config.delta)
        update_precisions(state, fit_data, rng, config.a0, config.b0)
        kernel = make_kernel(config, state.theta, state.sigma_q, D)
        mh_update_means(state, fit_data, kernel, rng, config.mean_step)
        if mh_update_kernel_hyperparams(state, config, rng):
            kernel = make_kernel(config, state.theta, state.sigma_q, D)
        for _ in range(config.birth_attempts):
            birth_death_move(state, fit_data.shape[0], kernel, config, rng, box, count_factor)
        if callback is not None:
            callback(it, state)
        if schedule.keep(it):
            samples.append(_record(state, loc, scale))
    meta = {
        "n": 0 if y is None else int(y.shape[0]),
        "D": D,
        "prior_only": bool(prior_only),
        "loc": loc.tolist(),
        "scale": scale.tolist(),
        "box_low": box[0].tolist(),
        "box_high": box[1].tolist(),
    }
    cfg = {k: getattr(config, k) for k in config.__dataclass_fields__}
    return PosteriorTrace("mixture", samples, schedule.as_dict(), seed, cfg, meta)


def simulate_mixture_data(means, sds, weights, n: int, rng):
    """Draw ``n`` points from a diagonal normal mixture.

    Returns
    -------
    data : (n, D) ndarray
    allocations : (n,) int ndarray, 1-based component labels
    """
    means = np.asarray(means, dtype=float)
    if means.ndim == 1:
        means = means[:, None]
    K, D = means.shape
    sds = np.broadcast_to(np.asarray(sds, dtype=float).reshape(K, -1), (K, D))
    w = np.asarray(weights, dtype=float)
    if w.shape != (K,) or np.any(w < 0) or not np.isclose(w.sum(), 1.0, rtol=0, atol=1e-9):
        raise ValueError("weights must be a probability vector with one entry per component")
    if np.any(sds <= 0) or not np.all(np.isfinite(sds)) or not np.all(np.isfinite(means)):
        raise ValueError("standard deviations must be positive and parameters finite")
    if int(n) != n or n < 0:
        raise ValueError("n must be a nonnegative integer")
    s = rng.choice(K, size=int(n), p=w / w.sum())
    y = means[s] + sds[s] * rng.standard_normal((int(n), D))
    return y, s + 1
