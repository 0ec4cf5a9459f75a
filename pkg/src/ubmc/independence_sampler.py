"""Coupled independence samplers over product-interval state spaces.

The target is a posterior on a box ``prod_k [-u*_k, u*_k]`` with bounded
forward map, so the acceptance probability of the independence sampler is
bounded below by a deterministic floor ``alpha_star > 0``.  Splitting the
kernel at that floor exposes a regeneration branch: with probability
``alpha_star`` a step jumps to a fresh prior draw regardless of the
current state.  Sharing the split's randomness between two chains in
different dimensions couples them across the discretization hierarchy:
the minorization branch resynchronizes the pair, and the residual branch
keeps them synchronized unless the two acceptance tests disagree, which
happens with probability vanishing in the lower dimension.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import Callable, NamedTuple

import numpy as np

from .couplings import LevelSchedule
from .estimator import LevelDifferenceGenerator, SurvivalDistribution
from .rng import Stream

__all__ = [
    "UniformPriorModel",
    "Branch",
    "StepRandomness",
    "AcceptanceFloorError",
    "is_acceptance",
    "propose",
    "draw_randomness",
    "split_step",
    "sampler_step",
    "coupled_is_step",
    "unbiased_is_delta",
    "delta_generator",
    "make_schedule",
    "pad_to",
]


class AcceptanceFloorError(RuntimeError):
    """An acceptance probability fell below the declared floor.

    The floor is a model property the coupling depends on; observing a
    smaller acceptance means the model's ``alpha_star`` is wrong.
    """

    def __init__(self, observed: float, floor: float):
        self.observed = observed
        self.floor = floor
        super().__init__(
            f"acceptance probability {observed} below declared floor {floor}"
        )


class Branch(Enum):
    """Which branch of the split kernel a step took."""

    MINORIZE = "minorize"
    RESIDUAL_ACCEPT = "residual-accept"
    RESIDUAL_REJECT = "residual-reject"


class StepRandomness(NamedTuple):
    """All randomness of one split step, shared across coupled chains."""

    u1: float
    u2: float
    xi1: np.ndarray
    xi2: np.ndarray


@dataclass
class UniformPriorModel:
    """Inverse problem with uniform series prior and bounded forward map.

    ``half_widths(k)`` returns the box half-width ``u*_k`` (positive,
    nonincreasing, 1-indexed); ``forward(j, state)`` evaluates the
    level-``j`` observation operator on a length-``j`` coefficient vector;
    ``alpha_star`` is the deterministic acceptance floor and
    ``work_exponent`` the cost exponent of one step at dimension ``j``.
    """

    half_widths: Callable[[int], float]
    forward: Callable[[int, np.ndarray], np.ndarray]
    y: np.ndarray
    alpha_star: float
    work_exponent: float = 1.0

    def __post_init__(self):
        if not 0.0 < self.alpha_star <= 1.0:
            raise ValueError("alpha_star must lie in (0, 1]")
        self.y = np.asarray(self.y, dtype=float)
        self._widths_cache: list[float] = []

    def widths(self, j: int) -> np.ndarray:
        cache = self._widths_cache
        while len(cache) < j:
            k = len(cache) + 1
            w = float(self.half_widths(k))
            if w <= 0.0:
                raise ValueError("box half-widths must be positive")
            if cache and w > cache[-1]:
                raise ValueError("box half-widths must be nonincreasing")
            cache.append(w)
        return np.asarray(cache[:j])

    def misfit(self, j: int, state: np.ndarray) -> float:
        """``|y - G_j(state)|^2``."""
        g = np.asarray(self.forward(j, state), dtype=float)
        if not np.all(np.isfinite(g)):
            raise ValueError(f"forward map returned non-finite values at j={j}")
        r = self.y - g
        return float(r @ r)


def pad_to(state: np.ndarray, n: int) -> np.ndarray:
    """Embed a coefficient vector into dimension ``n`` by zero-padding."""
    state = np.asarray(state, dtype=float)
    if state.size >= n:
        return state[:n]
    return np.pad(state, (0, n - state.size))


def propose(model: UniformPriorModel, j: int, rng: np.random.Generator) -> np.ndarray:
    """Fresh prior draw on the level-``j`` box."""
    return (2.0 * rng.random(j) - 1.0) * model.widths(j)


def is_acceptance(model: UniformPriorModel, j: int, x: np.ndarray, xi: np.ndarray) -> float:
    """``1 ^ exp(|y - G_j(x)|^2 / 2 - |y - G_j(xi)|^2 / 2)``."""
    log_ratio = 0.5 * model.misfit(j, x) - 0.5 * model.misfit(j, xi)
    return 1.0 if log_ratio >= 0.0 else math.exp(log_ratio)


def draw_randomness(
    model: UniformPriorModel, j: int, rng: np.random.Generator
) -> StepRandomness:
    """Draw the shared randomness of one split step at top dimension ``j``."""
    return StepRandomness(
        u1=rng.random(),
        u2=rng.random(),
        xi1=propose(model, j, rng),
        xi2=propose(model, j, rng),
    )


def split_step(
    model: UniformPriorModel, j: int, x: np.ndarray, w: StepRandomness
) -> tuple[np.ndarray, Branch]:
    """One split-kernel step at dimension ``j`` driven by ``w``.

    With ``u1 <= alpha_star`` the chain jumps to the (projected) first
    proposal; otherwise the residual Metropolis test with corrected
    acceptance ``(alpha - alpha_star) / (1 - alpha_star)`` decides between
    the second proposal and staying put.  The marginal law is exactly one
    independence-sampler step.
    """
    floor = model.alpha_star
    if w.u1 <= floor:
        return w.xi1[:j].copy(), Branch.MINORIZE
    alpha = is_acceptance(model, j, x, w.xi2[:j])
    if alpha < floor - 1e-12:
        raise AcceptanceFloorError(alpha, floor)
    if w.u2 <= (alpha - floor) / (1.0 - floor):
        return w.xi2[:j].copy(), Branch.RESIDUAL_ACCEPT
    return x, Branch.RESIDUAL_REJECT


def sampler_step(
    model: UniformPriorModel, j: int, x: np.ndarray, rng: np.random.Generator
) -> np.ndarray:
    """One plain independence-sampler step (propose, accept-or-stay)."""
    xi = propose(model, j, rng)
    if rng.random() <= is_acceptance(model, j, x, xi):
        return xi
    return x


def coupled_is_step(
    model: UniformPriorModel,
    dims: tuple[int, int],
    states: tuple[np.ndarray, np.ndarray],
    w: StepRandomness,
) -> tuple[tuple[np.ndarray, np.ndarray], tuple[Branch, Branch]]:
    """Joint step of the low- and high-dimensional chains under shared ``w``.

    The low chain sees the projections of both proposals and the same two
    uniforms, so the pair takes the minorization branch together and can
    only desynchronize when the residual acceptance tests disagree.
    """
    j_lo, j_hi = dims
    if j_lo > j_hi:
        raise ValueError("need j_lo <= j_hi")
    x_lo, x_hi = states
    new_hi, b_hi = split_step(model, j_hi, x_hi, w)
    new_lo, b_lo = split_step(model, j_lo, x_lo, w)
    return (new_lo, new_hi), (b_lo, b_hi)


def unbiased_is_delta(
    model: UniformPriorModel,
    schedule: LevelSchedule,
    level: int,
    f: Callable[[np.ndarray], float],
    x0: np.ndarray,
    stream: Stream,
) -> tuple[float, float]:
    """One coupled level difference of the independence-sampler hierarchy.

    Level 0 runs ``a_0`` split steps at dimension ``j_0`` and returns
    ``f(end)``.  Level ``i >= 1`` embeds the start by zero-padding, runs
    the top chain alone at dimension ``j_i`` for ``a_i - a_{i-1}`` steps,
    resets the bottom chain to the start, then evolves the pair jointly
    for ``a_{i-1}`` steps; all step randomness is drawn at the top
    dimension, in forward order.  ``f`` receives states padded to the top
    dimension.  Work is ``a_i * j_i^theta`` in the model's cost units.
    """
    return _delta(model, schedule, level, f, x0, stream.generator())


def delta_generator(
    model: UniformPriorModel,
    schedule: LevelSchedule,
    f: Callable[[np.ndarray], float],
    x0: np.ndarray,
) -> LevelDifferenceGenerator:
    def gen(level: int, rng: np.random.Generator):
        return _delta(model, schedule, level, f, x0, rng)

    return gen


def _delta(model, schedule, level, f, x0, rng):
    if level == 0:
        j0, a0 = schedule.dims_at(0), schedule.steps_at(0)
        x = pad_to(x0, j0)
        for _ in range(a0):
            x, _ = split_step(model, j0, x, draw_randomness(model, j0, rng))
        return f(x), a0 * float(j0) ** model.work_exponent
    j_lo, j_hi = schedule.dims_at(level - 1), schedule.dims_at(level)
    a_lo, a_hi = schedule.steps_at(level - 1), schedule.steps_at(level)
    top = pad_to(x0, j_hi)
    for _ in range(a_hi - a_lo):
        top, _ = split_step(model, j_hi, top, draw_randomness(model, j_hi, rng))
    bottom = pad_to(x0, j_lo)
    for _ in range(a_lo):
        w = draw_randomness(model, j_hi, rng)
        (bottom, top), _ = coupled_is_step(model, (j_lo, j_hi), (bottom, top), w)
    return (
        f(pad_to(top, j_hi)) - f(pad_to(bottom, j_hi)),
        a_hi * float(j_hi) ** model.work_exponent,
    )


def make_schedule(
    q: float,
    beta: float,
    kappa: float,
    theta: float,
    alpha_star: float,
    t: float,
) -> tuple[LevelSchedule, SurvivalDistribution]:
    """Schedule with dimensions ``i^q``, logarithmic steps, polynomial law.

    ``beta`` is the forward-approximation decay, ``kappa`` the decay of
    the observable's dependence on high modes, ``theta`` the per-step cost
    exponent.  With ``r = min(beta, kappa)`` the admissible region is
    ``q > 3 / (r - theta)`` and ``t`` in ``(1 + theta q, r q - 2)``; the
    step counts ``a_i = ceil((q beta / c*) log(i + 2))`` with
    ``c* = -log(1 - alpha_star)`` balance the synchronization-failure and
    discretization contributions to the level differences.
    """
    r = min(beta, kappa)
    if r <= 1.0:
        raise ValueError("requires min(beta, kappa) > 1")
    if theta >= r:
        raise ValueError("requires theta < min(beta, kappa)")
    if not q > 3.0 / (r - theta):
        raise ValueError(f"requires q > 3 / (r - theta) = {3.0 / (r - theta)}")
    t_lo, t_hi = 1.0 + theta * q, r * q - 2.0
    if not t_lo < t < t_hi:
        raise ValueError(f"requires t in (1 + theta q, r q - 2) = ({t_lo}, {t_hi})")
    if not 0.0 < alpha_star < 1.0:
        raise ValueError("alpha_star must lie in (0, 1) for the log-step rule")
    c_star = -math.log1p(-alpha_star)
    rate = q * beta / c_star

    dims_cache: list[int] = []

    def dims(i: int) -> int:
        while len(dims_cache) <= i:
            k = len(dims_cache)
            v = math.ceil(max(k, 1) ** q)
            if dims_cache:
                v = max(v, dims_cache[-1] + 1)
            dims_cache.append(v)
        return dims_cache[i]

    steps_cache: list[int] = []

    def steps(i: int) -> int:
        while len(steps_cache) <= i:
            k = len(steps_cache)
            v = max(1, math.ceil(rate * math.log(k + 2.0)))
            if steps_cache:
                v = max(v, steps_cache[-1] + 1)
            steps_cache.append(v)
        return steps_cache[i]

    return LevelSchedule(steps, dims), SurvivalDistribution.polynomial(t)
