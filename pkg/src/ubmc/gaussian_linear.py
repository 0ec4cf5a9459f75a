"""Conjugate linear Gaussian inverse problem with spectral truncations.

The forward operator and the prior covariance commute, so the posterior
is Gaussian with explicit per-coordinate mean and variance

    m_l = l^-2p y_l / (l^2a + l^-4p),      c_l = 1 / (l^2a + l^-4p).

Level differences come from truncating the coordinate expansion of a
posterior draw at growing dimensions ``j_i``, sharing the standard
normals between the two truncations of one difference.  Two couplings are
provided: plain truncation (valid for Holder functions) and the variant
that completes the truncation with a prior draw on the remaining
coordinates, which decays faster and, for linear functions, needs only
the new coordinates of each level.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Mapping

import numpy as np

from .estimator import LevelDifferenceGenerator, SurvivalDistribution
from .rng import Stream

__all__ = [
    "GaussianLinearModel",
    "posterior_spectral",
    "truncation_delta",
    "prior_tail_delta",
    "truncation_gap_second_moment",
    "tail_gap_second_moment",
    "truncation_generator",
    "tail_generator",
    "make_schedule",
]

_GOLDEN = (1.0 + math.sqrt(5.0)) / 2.0


def _default_data(c_minus: float, c_plus: float) -> Callable[[int], float]:
    # Deterministic, reproducible coefficients equidistributed in
    # (c_minus, c_plus): the golden-ratio rotation never repeats.
    span = c_plus - c_minus
    return lambda l: c_minus + span * ((l * _GOLDEN) % 1.0)


@dataclass(frozen=True)
class GaussianLinearModel:
    """Spectral data of the inverse problem.

    ``p >= 0`` is the forward-operator decay (eigenvalues of the squared
    operator fall like ``l^-4p``), ``a > 1/2`` the prior decay
    (``l^-2a``), and ``data`` a deterministic accessor for the observed
    coefficients, bounded in ``(c_minus, c_plus)``.
    """

    p: float
    a: float
    data: Callable[[int], float] = None
    c_minus: float = 0.5
    c_plus: float = 1.5

    def __post_init__(self):
        if self.p < 0.0:
            raise ValueError("p must be >= 0")
        if self.a <= 0.5:
            raise ValueError("a must exceed 1/2")
        if not self.c_minus < self.c_plus:
            raise ValueError("need c_minus < c_plus")
        if self.data is None:
            object.__setattr__(
                self, "data", _default_data(self.c_minus, self.c_plus)
            )

    def observed(self, l: int) -> float:
        y = self.data(l)
        if not self.c_minus <= y <= self.c_plus:
            raise ValueError(f"data coefficient y_{l} = {y} outside bounds")
        return y


def posterior_spectral(model: GaussianLinearModel, l: int) -> tuple[float, float]:
    """Exact posterior law of coordinate ``l``: ``(mean, variance)``."""
    if l < 1:
        raise ValueError("coordinates are 1-indexed")
    precision = float(l) ** (2 * model.a) + float(l) ** (-4 * model.p)
    mean = float(l) ** (-2 * model.p) * model.observed(l) / precision
    return mean, 1.0 / precision


def _posterior_arrays(model: GaussianLinearModel, j: int):
    l = np.arange(1, j + 1, dtype=float)
    precision = l ** (2 * model.a) + l ** (-4 * model.p)
    y = np.array([model.observed(k) for k in range(1, j + 1)])
    mean = l ** (-2 * model.p) * y / precision
    return mean, 1.0 / precision


def _dims_pair(dims, level: int) -> tuple[int, int]:
    get = dims if callable(dims) else dims.__getitem__
    j_hi = int(get(level))
    j_lo = int(get(level - 1)) if level > 0 else 0
    if level > 0 and j_hi <= j_lo:
        raise ValueError("dimension sequence must be strictly increasing")
    if j_hi < 1:
        raise ValueError("dimensions must be positive")
    return j_lo, j_hi


def truncation_delta(
    model: GaussianLinearModel,
    dims,
    level: int,
    f: Callable[[np.ndarray], float],
    rng: np.random.Generator,
) -> tuple[float, float]:
    """Level difference of ``f`` under the plain truncation coupling.

    One draw of the first ``j_level`` posterior coordinates is shared by
    both truncations, so only coordinates in ``(j_{level-1}, j_level]``
    differ; the bottom state is zero-padded to the top dimension before
    ``f`` is applied.  Returns ``(delta, work)`` with work counted as the
    number of Gaussian draws.
    """
    j_lo, j_hi = _dims_pair(dims, level)
    mean, var = _posterior_arrays(model, j_hi)
    top = mean + np.sqrt(var) * rng.standard_normal(j_hi)
    if level == 0:
        return f(top), float(j_hi)
    bottom = top.copy()
    bottom[j_lo:] = 0.0
    return f(top) - f(bottom), float(j_hi)


def prior_tail_delta(
    model: GaussianLinearModel,
    dims,
    level: int,
    coefficients: Mapping[int, float],
    rng: np.random.Generator,
) -> tuple[float, float]:
    """Level difference of a linear function under the prior-completed coupling.

    The truncation is completed by a prior draw on the remaining
    coordinates; because the function is linear and shares its normals
    across the two levels of one difference, everything outside
    ``(j_{level-1}, j_level]`` cancels and the difference reduces to

        sum_l f_l (m_l + (sqrt(c_l) - l^-a) zeta_l)

    over the new coordinates (level 0 additionally carries the prior-tail
    terms of the finitely many coefficients above ``j_0``).  No infinite
    tail is ever simulated; only linear functions, given by their
    coefficient map, are admissible.
    """
    if not isinstance(coefficients, Mapping):
        raise TypeError(
            "prior-tail differences are only defined for linear functions; "
            "pass the coefficient map {coordinate: weight}"
        )
    j_lo, j_hi = _dims_pair(dims, level)
    delta = 0.0
    draws = 0
    for l in range(j_lo + 1, j_hi + 1):
        w = coefficients.get(l, 0.0)
        zeta = rng.standard_normal()
        draws += 1
        if w == 0.0:
            continue
        mean, var = posterior_spectral(model, l)
        if level == 0:
            # No lower level to cancel against: the full posterior coordinate.
            delta += w * (mean + math.sqrt(var) * zeta)
        else:
            # The lower level carries the prior draw on this coordinate,
            # leaving the shared zeta weighted by sqrt(c_l) - l^-a.
            delta += w * (mean + (math.sqrt(var) - float(l) ** (-model.a)) * zeta)
    if level == 0:
        # Prior tail above j_0: only coefficients actually present matter.
        for l, w in sorted(coefficients.items()):
            if l <= j_hi or w == 0.0:
                continue
            delta += w * float(l) ** (-model.a) * rng.standard_normal()
            draws += 1
    return delta, float(draws)


def truncation_gap_second_moment(
    model: GaussianLinearModel, j_lo: int, j_hi: int
) -> float:
    """``E |u^hi - u^lo|^2`` for the plain truncation coupling (exact sum)."""
    total = 0.0
    for l in range(j_lo + 1, j_hi + 1):
        mean, var = posterior_spectral(model, l)
        total += mean**2 + var
    return total


def tail_gap_second_moment(model: GaussianLinearModel, j_lo: int, j_hi: int) -> float:
    """``E |u^hi - u^lo|^2`` for the prior-completed coupling (exact sum)."""
    total = 0.0
    for l in range(j_lo + 1, j_hi + 1):
        mean, var = posterior_spectral(model, l)
        total += mean**2 + (math.sqrt(var) - float(l) ** (-model.a)) ** 2
    return total


def truncation_generator(
    model: GaussianLinearModel, dims, f: Callable[[np.ndarray], float]
) -> LevelDifferenceGenerator:
    def gen(level: int, rng: np.random.Generator):
        return truncation_delta(model, dims, level, f, rng)

    return gen


def tail_generator(
    model: GaussianLinearModel, dims, coefficients: Mapping[int, float]
) -> LevelDifferenceGenerator:
    def gen(level: int, rng: np.random.Generator):
        return prior_tail_delta(model, dims, level, coefficients, rng)

    return gen


def _strictly_increasing(fn: Callable[[int], int]) -> Callable[[int], int]:
    cache: list[int] = []

    def wrapped(i: int) -> int:
        while len(cache) <= i:
            k = len(cache)
            v = int(fn(k))
            if cache:
                v = max(v, cache[-1] + 1)
            cache.append(max(v, 1))
        return cache[i]

    return wrapped


def make_schedule(
    variant: str,
    geometry: str,
    *,
    a: float,
    p: float = 0.0,
    s: float = 1.0,
    q: float | None = None,
    eps: float,
) -> tuple[Callable[[int], int], SurvivalDistribution]:
    """Dimension sequence and truncation law with finite variance and work.

    ``variant`` selects the coupling the schedule is designed for:

    * ``"holder"``: plain truncation, any ``s``-Holder function; requires
      the stronger regularity ``a > (1 + s) / (2 s)``.
    * ``"linear-tail"``: prior-completed coupling, linear functions only;
      requires just ``a > 1/2``.

    ``geometry`` is ``"dyadic"`` (``j_i = 2^i``, geometric truncation law)
    or ``"polynomial"`` (``j_i ~ i^q``, polynomial law).  ``eps`` must lie
    in the variant's admissible interval; for the dyadic geometries the
    closed right endpoint is accepted even though the expected work is
    finite only strictly inside it.

    The polynomial geometry uses the same survival exponent
    ``s(q - 1 - 2 a q) + 2 + eps`` for both variants (with ``s = 1`` for
    linear functions); for the prior-completed coupling this choice is
    conservative rather than rate-matched, and ``s`` enters only through
    it.
    """
    if variant not in ("holder", "linear-tail"):
        raise ValueError("variant must be 'holder' or 'linear-tail'")
    if geometry not in ("dyadic", "polynomial"):
        raise ValueError("geometry must be 'dyadic' or 'polynomial'")
    if variant == "holder":
        if not 0.0 < s <= 1.0:
            raise ValueError("Holder exponent s must lie in (0, 1]")
        bound = (1.0 + s) / (2.0 * s)
        if not a > bound:
            raise ValueError(f"requires a > (1 + s) / (2 s) = {bound}")
    else:
        if not a > 0.5:
            raise ValueError("requires a > 1/2")
        s = 1.0  # linear functions are 1-Holder
    if p < 0.0:
        raise ValueError("p must be >= 0")

    if geometry == "dyadic":
        if variant == "holder":
            decay = s * (1.0 - 2.0 * a)  # log2 of the squared-difference rate
            eps_ub = (2.0 + 2.0 * s - 4.0 * a * s) / (s * (1.0 - 2.0 * a))
        else:
            decay = 1.0 - 4.0 * p - 4.0 * a
            eps_ub = (4.0 - 8.0 * p - 8.0 * a) / (1.0 - 4.0 * p - 4.0 * a)
        if not 0.0 < eps <= eps_ub:
            raise ValueError(f"requires 0 < eps <= {eps_ub}")
        rate = 2.0 ** ((2.0 - eps) * decay / 2.0)
        dims = _strictly_increasing(lambda i: 2**i)
        return dims, SurvivalDistribution.geometric(rate)

    if q is None:
        raise ValueError("polynomial geometry needs the growth exponent q")
    q_lb = (s - 3.0) / (1.0 + s - 2.0 * a * s)
    if not q > q_lb:
        raise ValueError(f"requires q > (s - 3) / (1 + s - 2 a s) = {q_lb}")
    eps_ub = s - 3.0 - q * (1.0 + s - 2.0 * a * s)
    if not 0.0 < eps < eps_ub:
        raise ValueError(f"requires 0 < eps < s - 3 - q (1 + s - 2 a s) = {eps_ub}")
    exponent = -(s * (q - 1.0 - 2.0 * a * q) + 2.0 + eps)
    dims = _strictly_increasing(lambda i: math.ceil(max(i, 1) ** q))
    return dims, SurvivalDistribution.polynomial(exponent)
