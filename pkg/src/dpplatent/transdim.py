"""Reversible-jump moves for densities with respect to the unit-rate Poisson process.

A size-K configuration under the unit-rate Poisson process behaves like K
i.i.d. uniform points with an extra ``1/K!``, so a move from K to K+1 points
picks up a factor ``1/(K+1)`` on top of the usual reversible-jump ratio::

    log rho = log f(y) - log f(x) - log(K+1)
              + log(1 - q(y)) - log q(x)
              + log q_down(y) - log q_up(x)
              - log q_aux(u | x) + log |J| + log-likelihood ratio

The same form covers finite ground sets, with counting measure in place of
Lebesgue measure for the auxiliary draw.

Selection-probability convention used throughout the package: ``q_up(x)``
is ``1/(K+1)``, the chance that the new item takes a given slot of the
exchangeable ordered representation, and ``q_down(y)`` is the chance the
down move picks that same item (``1/(K+1)`` for a uniform pick).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

__all__ = [
    "MovePair",
    "PointBirth",
    "DiscreteBirth",
    "MoveReport",
    "TransdimTarget",
    "PointState",
    "RandomWalkMove",
    "SwapMove",
    "REGISTERED_MOVES",
    "register_move",
    "up_probability",
    "log_acceptance_up",
    "acceptance_probabilities",
    "validate_move_pair",
    "ROUNDTRIP_TOL",
    "step",
]

#: move-pair factories checked by the validation suite, keyed by name
REGISTERED_MOVES: dict[str, Callable[[], "MovePair"]] = {}


def register_move(name):
    def deco(factory):
        REGISTERED_MOVES[name] = factory
        return factory

    return deco


class MovePair:
    """An up move ``y = T(x, u)`` and its matching down move ``(x, u) = T^{-1}(y)``.

    Subclasses work on flat free-coordinate vectors, so round trips and
    Jacobians can be checked numerically.
    """

    name = "move"
    continuous = True

    def transform(self, x, u):
        raise NotImplementedError

    def inverse(self, y, x_size):
        """Split ``y`` back into ``(x, u)``; ``x_size`` is the length of ``x``."""
        raise NotImplementedError

    def log_jacobian(self, x, u) -> float:
        return 0.0

    def sample_aux(self, x, rng):
        raise NotImplementedError

    def log_aux_density(self, x, u) -> float:
        raise NotImplementedError

    def random_input(self, rng):
        """A random valid ``(x, u)`` pair, for validation."""
        raise NotImplementedError


class PointBirth(MovePair):
    """Append a point drawn uniformly from a box; the down move removes it."""

    name = "point-birth"

    def __init__(self, low, high):
        self.low = np.atleast_1d(np.asarray(low, dtype=float))
        self.high = np.atleast_1d(np.asarray(high, dtype=float))
        if self.low.shape != self.high.shape or np.any(self.high <= self.low):
            raise ValueError("birth window needs low < high in every dimension")
        self.dim = self.low.shape[0]
        self._log_volume = float(np.sum(np.log(self.high - self.low)))

    def transform(self, x, u):
        return np.concatenate([np.ravel(x), np.ravel(u)])

    def inverse(self, y, x_size):
        y = np.ravel(y)
        return y[:x_size], y[x_size:]

    def sample_aux(self, x, rng):
        return self.low + (self.high - self.low) * rng.random(self.dim)

    def log_aux_density(self, x, u) -> float:
        u = np.ravel(u)
        if np.any(u < self.low) or np.any(u > self.high):
            return -math.inf
        return -self._log_volume

    def random_input(self, rng):
        K = int(rng.integers(0, 6))
        x = rng.uniform(self.low, self.high, size=(K, self.dim)).ravel()
        return x, self.sample_aux(x, rng)


class DiscreteBirth(MovePair):
    """Add a ground-set item chosen uniformly from ``range(n_items)``."""

    name = "discrete-birth"
    continuous = False

    def __init__(self, n_items: int):
        self.n_items = int(n_items)

    def transform(self, x, u):
        return np.concatenate([np.asarray(x, dtype=int).ravel(), np.asarray(u, dtype=int).ravel()])

    def inverse(self, y, x_size):
        y = np.asarray(y, dtype=int).ravel()
        return y[:x_size], y[x_size:]

    def sample_aux(self, x, rng):
        return np.array([int(rng.integers(self.n_items))])

    def log_aux_density(self, x, u) -> float:
        return -math.log(self.n_items)

    def random_input(self, rng):
        K = int(rng.integers(0, min(self.n_items, 6)))
        x = rng.choice(self.n_items, size=K, replace=False)
        return x, self.sample_aux(x, rng)


register_move("point-birth-1d")(lambda: PointBirth([-5.0], [5.0]))
register_move("point-birth-2d")(lambda: PointBirth([-3.0, -1.0], [2.0, 4.0]))
register_move("discrete-birth")(lambda: DiscreteBirth(7))


#: round trips are exact up to float rounding: relative error of a few ulp
ROUNDTRIP_TOL = 4.0 * np.finfo(float).eps


@dataclass
class MoveReport:
    name: str
    n_checks: int
    max_roundtrip_error: float
    max_jacobian_error: float
    failures: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return (self.max_roundtrip_error <= ROUNDTRIP_TOL and self.max_jacobian_error < 1e-5
                and not self.failures)


def _numerical_log_jacobian(move, x, u, h=1e-6):
    z = np.concatenate([x, u]).astype(float)
    n = z.shape[0]
    J = np.empty((n, n))
    for i in range(n):
        e = np.zeros(n)
        e[i] = h
        zp, zm = z + e, z - e
        J[:, i] = (move.transform(zp[: x.size], zp[x.size :]) - move.transform(zm[: x.size], zm[x.size :])) / (2 * h)
    if n == 0:
        return 0.0
    return float(np.linalg.slogdet(J)[1])


def validate_move_pair(move: MovePair, rng, n_checks: int = 100) -> MoveReport:
    """Round-trip and finite-difference Jacobian checks on random inputs.

    Failures are collected in the report rather than raised.
    """
    rt_err, jac_err, failures = 0.0, 0.0, []
    for _ in range(n_checks):
        x, u = move.random_input(rng)
        x, u = np.ravel(x), np.ravel(u)
        try:
            y = move.transform(x, u)
            x2, u2 = move.inverse(y, x.size)
            err = max(
                float(np.max(np.abs(x2 - x) / np.maximum(1.0, np.abs(x)), initial=0.0)),
                float(np.max(np.abs(u2 - u) / np.maximum(1.0, np.abs(u)), initial=0.0)),
            )
            rt_err = max(rt_err, err)
            if move.continuous:
                jac_err = max(jac_err, abs(_numerical_log_jacobian(move, x, u) - move.log_jacobian(x, u)))
        except Exception as exc:  # reported, not raised
            failures.append(repr(exc))
    return MoveReport(move.name, n_checks, rt_err, jac_err, failures)


def up_probability(K: int, k_min: int, k_max: int, p: float = 0.5) -> float:
    """Probability of proposing an up move at size ``K``."""
    if K >= k_max:
        return 0.0
    if K <= k_min:
        return 1.0
    return p


def log_acceptance_up(
    log_f_x: float,
    log_f_y: float,
    K: int,
    *,
    log_q_up_x: float,
    log_q_down_y: float,
    log_sel_up_x: float,
    log_sel_down_y: float,
    log_aux: float,
    log_jacobian: float = 0.0,
    log_lik_ratio: float = 0.0,
    count_factor: bool = True,
) -> float:
    """``log rho`` for an up move from a size-``K`` state ``x`` to ``y``.

    The matching down move from ``y`` is accepted with ``min(1, 1/rho)``.
    ``count_factor=False`` drops the ``1/(K+1)``; only useful as a negative control.
    """
    if not math.isfinite(log_jacobian):
        raise ValueError("non-finite Jacobian")
    if log_f_y == -math.inf or log_q_down_y == -math.inf or log_sel_down_y == -math.inf:
        return -math.inf
    if log_f_x == -math.inf or log_aux == -math.inf:
        return math.inf
    out = (
        log_f_y
        - log_f_x
        + log_q_down_y
        - log_q_up_x
        + log_sel_down_y
        - log_sel_up_x
        - log_aux
        + log_jacobian
        + log_lik_ratio
    )
    if count_factor:
        out -= math.log(K + 1)
    return out


def acceptance_probabilities(log_rho: float) -> tuple[float, float]:
    """``(A_up, A_down) = (min(1, rho), min(1, 1/rho))``."""
    if log_rho == math.inf:
        return 1.0, 0.0
    if log_rho == -math.inf:
        return 0.0, 1.0
    return min(1.0, math.exp(min(log_rho, 0.0))), min(1.0, math.exp(min(-log_rho, 0.0)))


# -- a generic sampler for point-configuration targets ------------------------


@dataclass
class TransdimTarget:
    """Log density of a configuration plus an optional log-likelihood."""

    log_density: Callable[[np.ndarray], float]
    log_likelihood: Optional[Callable[[np.ndarray], float]] = None

    def __call__(self, config) -> float:
        lp = self.log_density(config)
        if self.log_likelihood is not None and lp > -math.inf:
            lp += self.log_likelihood(config)
        return lp


@dataclass
class PointState:
    """A configuration (rows are items) with its cached log target."""

    points: np.ndarray
    log_target: float

    @property
    def size(self) -> int:
        return self.points.shape[0]


class RandomWalkMove:
    """Fixed-dimension move: Gaussian random walk on one uniformly chosen point."""

    name = "random-walk"

    def __init__(self, scale: float):
        self.scale = float(scale)

    def propose(self, points, rng):
        if points.shape[0] == 0:
            return None
        out = points.copy()
        j = int(rng.integers(points.shape[0]))
        out[j] = out[j] + self.scale * rng.standard_normal(points.shape[1])
        return out


class SwapMove:
    """Fixed-dimension move on a finite ground set: replace one item by a uniform one."""

    name = "swap"

    def __init__(self, n_items: int):
        self.n_items = int(n_items)

    def propose(self, points, rng):
        if points.shape[0] == 0:
            return None
        out = points.copy()
        out[int(rng.integers(points.shape[0]))] = int(rng.integers(self.n_items))
        return out


def _birth_death(state, target, move, rng, k_min, k_max, p_up, count_factor):
    pts = state.points
    K = pts.shape[0]
    q_x = up_probability(K, k_min, k_max, p_up)
    if rng.random() < q_x:
        # up move
        u = move.sample_aux(pts, rng)
        new = np.vstack([pts, np.reshape(u, (1, -1)).astype(pts.dtype)])
        log_f_y = target(new)
        log_rho = log_acceptance_up(
            state.log_target,
            log_f_y,
            K,
            log_q_up_x=math.log(q_x),
            log_q_down_y=math.log1p(-up_probability(K + 1, k_min, k_max, p_up)),
            log_sel_up_x=-math.log(K + 1),
            log_sel_down_y=-math.log(K + 1),
            log_aux=move.log_aux_density(pts, u),
            count_factor=count_factor,
        )
        if math.log(rng.random()) < log_rho:
            return PointState(new, log_f_y)
        return state
    # down move
    if K <= k_min:
        return state
    j = int(rng.integers(K))
    new = np.delete(pts, j, axis=0)
    log_f_x = target(new)
    q_new = up_probability(K - 1, k_min, k_max, p_up)
    if q_new == 0.0:
        return state
    log_rho = log_acceptance_up(
        log_f_x,
        state.log_target,
        K - 1,
        log_q_up_x=math.log(q_new),
        log_q_down_y=math.log1p(-q_x),
        log_sel_up_x=-math.log(K),
        log_sel_down_y=-math.log(K),
        log_aux=move.log_aux_density(new, pts[j]),
        count_factor=count_factor,
    )
    if math.log(rng.random()) < -log_rho:
        return PointState(new, log_f_x)
    return state


def step(
    state: PointState,
    target: TransdimTarget,
    moves,
    rng: np.random.Generator,
    *,
    k_min: int = 0,
    k_max: int = 50,
    p_up: float = 0.5,
    count_factor: bool = True,
) -> PointState:
    """One transition: a move is chosen uniformly from ``moves`` and accepted by MH.

    Jump moves (:class:`MovePair`) go up with probability ``up_probability``
    and down otherwise; fixed-dimension moves use a symmetric proposal.
    The returned state never has log target ``-inf``.
    """
    if not moves:
        raise ValueError("empty move list")
    move = moves[int(rng.integers(len(moves)))] if len(moves) > 1 else moves[0]
    if isinstance(move, MovePair):
        return _birth_death(state, target, move, rng, k_min, k_max, p_up, count_factor)
    proposal = move.propose(state.points, rng)
    if proposal is None:
        return state
    lp = target(proposal)
    if lp > -math.inf and math.log(rng.random()) < lp - state.log_target:
        return PointState(proposal, lp)
    return state
