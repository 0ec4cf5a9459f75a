"""Randomized-truncation estimator for telescoping level expansions.

A quantity of interest is written as a sum of level differences
``sum_i delta_i`` whose expectations telescope to the target.  Drawing a
random truncation level ``N`` with survival probabilities
``Fbar_i = P(N >= i) > 0`` and returning

    Z = sum_{i<=N} delta_i / Fbar_i

gives an unbiased estimator whenever each level difference is generated
independently.  This module houses the truncation law, the single-draw and
batched estimators, and the second-moment / expected-work identities used
to tune them.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Protocol, Sequence

import numpy as np

from .rng import Stream

__all__ = [
    "SurvivalDistribution",
    "UnbiasedDraw",
    "BatchResult",
    "LevelDifferenceGenerator",
    "EstimatorError",
    "NonFiniteDeltaError",
    "sample_truncation",
    "estimate_once",
    "estimate_batch",
    "second_moment_formula",
    "expected_work",
]

# Iteration guard for truncation sampling: a survival function whose tail
# does not decay past the drawn uniform within this many levels is treated
# as malformed.
MAX_LEVEL = 10**9

# Sub-stream keys used by estimate_once: the truncation draw and each level
# difference consume distinct children so deltas are mutually independent.
_KEY_TRUNCATION = 0
_KEY_LEVEL_BASE = 1


class EstimatorError(Exception):
    """Estimator-level failure (malformed truncation law, bad draw)."""


class NonFiniteDeltaError(EstimatorError):
    """A level difference came back NaN or infinite.

    Silently dropping such a draw would bias the estimator, so the level
    is reported and the draw aborted.
    """

    def __init__(self, level: int, value):
        self.level = level
        self.value = value
        super().__init__(f"non-finite level difference at level {level}: {value!r}")


class LevelDifferenceGenerator(Protocol):
    """Contract for one level difference.

    A generator is a callable ``(level, rng) -> (value, work)`` where
    ``rng`` is a ``numpy.random.Generator`` private to that invocation.
    Successive invocations receive independent streams, which is what
    makes the deltas of one draw mutually independent.  ``value`` is a
    float, or a fixed-length 1-d array for vector-valued targets.
    """

    def __call__(self, level: int, rng: np.random.Generator): ...


class SurvivalDistribution:
    """Truncation law ``Fbar_i = P(N >= i)`` with sampling and mass queries.

    Three families are supported:

    * ``geometric``: ``Fbar_i = rate**(exponent*i)`` for ``rate`` in (0,1);
    * ``polynomial``: ``Fbar_i = (i+1)**(-exponent)`` (so ``Fbar_0 = 1``);
    * ``tabulated``: an explicit nonincreasing table, optionally continued
      by a geometric tail with ratio ``tail_ratio``; a missing tail means
      the support ends at the last positive entry.

    All families satisfy ``Fbar_0 = 1`` and ``Fbar_{i+1} <= Fbar_i``.  A
    tabulated law with ``tail_ratio == 1`` is *improper* (it never decays);
    it can still be evaluated, but sampling it raises.
    """

    def __init__(self, kind, *, rate=None, exponent=None, table=None, tail_ratio=None):
        self.kind = kind
        self.rate = rate
        self.exponent = exponent
        self.tail_ratio = tail_ratio
        self.table = None
        if kind == "geometric":
            if not (rate is not None and 0.0 < rate < 1.0):
                raise ValueError("geometric survival needs rate in (0, 1)")
            if not (exponent is not None and exponent > 0.0):
                raise ValueError("geometric survival needs exponent > 0")
        elif kind == "polynomial":
            if not (exponent is not None and exponent > 0.0):
                raise ValueError("polynomial survival needs exponent > 0")
        elif kind == "tabulated":
            values = np.asarray(table, dtype=float)
            if values.ndim != 1 or values.size == 0:
                raise ValueError("table must be a nonempty 1-d sequence")
            if not math.isclose(values[0], 1.0, rel_tol=0, abs_tol=1e-12):
                raise ValueError("table must start at Fbar_0 = 1")
            if np.any(np.diff(values) > 1e-15):
                raise ValueError("table must be nonincreasing")
            if np.any(values < 0):
                raise ValueError("table entries must be nonnegative")
            positive = values > 0
            if not np.all(positive[: int(positive.sum())]):
                raise ValueError("table may not resurrect after reaching zero")
            if tail_ratio is not None:
                if not (0.0 < tail_ratio <= 1.0):
                    raise ValueError("tail_ratio must be in (0, 1]")
                if values[-1] == 0.0:
                    raise ValueError("geometric tail requires a positive last entry")
            self.table = values
        else:
            raise ValueError(f"unknown survival family {kind!r}")

    # -- constructors ------------------------------------------------------

    @classmethod
    def geometric(cls, rate: float, exponent: float = 1.0) -> "SurvivalDistribution":
        return cls("geometric", rate=float(rate), exponent=float(exponent))

    @classmethod
    def polynomial(cls, exponent: float) -> "SurvivalDistribution":
        return cls("polynomial", exponent=float(exponent))

    @classmethod
    def tabulated(cls, values, tail_ratio: float | None = None) -> "SurvivalDistribution":
        return cls("tabulated", table=values, tail_ratio=tail_ratio)

    # -- queries -----------------------------------------------------------

    @property
    def proper(self) -> bool:
        """Whether ``Fbar_i`` decays to zero, i.e. N is almost-surely finite."""
        if self.kind == "tabulated":
            return self.tail_ratio is None or self.tail_ratio < 1.0
        return True

    def survival(self, i: int) -> float:
        """``Fbar_i = P(N >= i)``."""
        if i < 0:
            return 1.0
        if self.kind == "geometric":
            return self.rate ** (self.exponent * i)
        if self.kind == "polynomial":
            return (i + 1.0) ** (-self.exponent)
        values = self.table
        if i < values.size:
            return float(values[i])
        if self.tail_ratio is None:
            return 0.0
        return float(values[-1] * self.tail_ratio ** (i - values.size + 1))

    def survival_array(self, n: int) -> np.ndarray:
        """``[Fbar_0, ..., Fbar_{n-1}]``."""
        i = np.arange(n)
        if self.kind == "geometric":
            return self.rate ** (self.exponent * i)
        if self.kind == "polynomial":
            return (i + 1.0) ** (-self.exponent)
        values = self.table
        out = np.zeros(n)
        head = min(n, values.size)
        out[:head] = values[:head]
        if n > values.size and self.tail_ratio is not None:
            j = np.arange(1, n - values.size + 1)
            out[values.size:] = values[-1] * self.tail_ratio**j
        return out

    def pmf(self, i: int) -> float:
        """``P(N = i)``."""
        return self.survival(i) - self.survival(i + 1)

    def quantile_level(self, u: float) -> int:
        """``max{ i : Fbar_i > u }`` for ``u`` in (0, 1).

        This is the inverse-survival transform used by :func:`sample_truncation`;
        ties ``u == Fbar_i`` resolve by the strict inequality.
        """
        if not 0.0 < u < 1.0:
            raise ValueError("u must lie strictly in (0, 1)")
        if self.kind == "geometric":
            guess = math.log(u) / (self.exponent * math.log(self.rate))
        elif self.kind == "polynomial":
            guess = u ** (-1.0 / self.exponent) - 1.0
        else:
            return self._quantile_tabulated(u)
        if guess > MAX_LEVEL:
            raise EstimatorError(
                f"truncation sample exceeded the {MAX_LEVEL} level cap; "
                "survival tail is too heavy"
            )
        # The closed form can be off by one unit in floating point; settle it
        # against the exact predicate.
        n = max(0, int(math.ceil(guess)) - 1)
        while self.survival(n + 1) > u:
            n += 1
        while n > 0 and self.survival(n) <= u:
            n -= 1
        return n

    def _quantile_tabulated(self, u: float) -> int:
        values = self.table
        n = int(np.searchsorted(-values, -u, side="left")) - 1
        if n < values.size - 1 or self.tail_ratio is None:
            return max(n, 0)
        if u >= values[-1]:
            return max(n, 0)
        if self.tail_ratio == 1.0:
            raise EstimatorError(
                "improper survival (constant tail) cannot be sampled"
            )
        # Continue through the geometric tail in closed form.
        j = math.log(u / values[-1]) / math.log(self.tail_ratio)
        n = values.size - 1 + max(0, int(math.ceil(j)) - 1)
        if n > MAX_LEVEL:
            raise EstimatorError(
                f"truncation sample exceeded the {MAX_LEVEL} level cap; "
                "survival tail is too heavy"
            )
        while self.survival(n + 1) > u:
            n += 1
        while n > values.size - 1 and self.survival(n) <= u:
            n -= 1
        return n

    def sample(self, rng: np.random.Generator) -> int:
        """Draw one truncation level ``N``."""
        u = rng.random()
        while u <= 0.0:  # random() returns [0, 1); 0 has measure zero
            u = rng.random()
        return self.quantile_level(u)

    def sample_many(self, n: int, rng: np.random.Generator) -> np.ndarray:
        """Draw ``n`` independent truncation levels (vectorized)."""
        u = rng.random(n)
        u[u <= 0.0] = 0.5  # measure-zero guard
        if self.kind == "tabulated" and self.tail_ratio is None:
            table = self.table
            return np.maximum(np.searchsorted(-table, -u, side="left") - 1, 0)
        # Tabulate down to negligible mass, fall back to the scalar path for
        # the (essentially never hit) residual tail.
        limit = 1e-17
        size = 64
        while self.survival(size - 1) > limit and size < 2**20:
            size *= 2
        table = self.survival_array(size)
        out = np.maximum(np.searchsorted(-table, -u, side="left") - 1, 0)
        deep = u < table[-1]
        if np.any(deep):
            out[deep] = [self.quantile_level(ui) for ui in u[deep]]
        return out

    def __repr__(self) -> str:
        if self.kind == "geometric":
            return f"SurvivalDistribution.geometric(rate={self.rate}, exponent={self.exponent})"
        if self.kind == "polynomial":
            return f"SurvivalDistribution.polynomial(exponent={self.exponent})"
        return (
            f"SurvivalDistribution.tabulated(<{self.table.size} values>, "
            f"tail_ratio={self.tail_ratio})"
        )


@dataclass
class UnbiasedDraw:
    """One realization of the randomized-truncation estimator.

    ``work`` is the sum of the per-level work units reported by the
    generator, and equals the total effort of the draw by construction.
    """

    value: float | np.ndarray
    level: int
    work: float
    levels_detail: list[tuple] | None = None


@dataclass
class BatchResult:
    """Aggregate of independent draws; see :func:`estimate_batch`."""

    mean: float | np.ndarray
    variance: float | np.ndarray
    total_work: float
    draws: list[UnbiasedDraw] = field(repr=False, default_factory=list)

    @property
    def std_error(self):
        n = len(self.draws)
        return np.sqrt(self.variance / n) if n > 0 else np.nan


def sample_truncation(survival: SurvivalDistribution, rng: np.random.Generator) -> int:
    """Draw the truncation level ``N`` with ``P(N = i) = Fbar_i - Fbar_{i+1}``."""
    return survival.sample(rng)


def estimate_once(
    gen: LevelDifferenceGenerator,
    survival: SurvivalDistribution,
    stream: Stream,
    keep_levels: bool = False,
) -> UnbiasedDraw:
    """Generate one unbiased draw ``Z = sum_{i<=N} delta_i / Fbar_i``.

    The truncation level and every level difference consume disjoint
    children of ``stream``, so the deltas are mutually independent of each
    other and of ``N``.
    """
    if not survival.proper:
        raise EstimatorError("cannot draw from an improper survival distribution")
    n = sample_truncation(survival, stream.child(_KEY_TRUNCATION).generator())
    value = None
    work = 0.0
    detail = [] if keep_levels else None
    for i in range(n + 1):
        rng_i = stream.child(_KEY_LEVEL_BASE, i).generator()
        delta, t_i = gen(i, rng_i)
        delta = np.asarray(delta, dtype=float)
        if not np.all(np.isfinite(delta)):
            raise NonFiniteDeltaError(i, delta)
        term = delta / survival.survival(i)
        value = term if value is None else value + term
        work += t_i
        if detail is not None:
            detail.append((i, delta if delta.ndim else float(delta), t_i))
    if value.ndim == 0:
        value = float(value)
    return UnbiasedDraw(value=value, level=n, work=work, levels_detail=detail)


def estimate_batch(
    gen: LevelDifferenceGenerator,
    survival: SurvivalDistribution,
    replicates: int,
    seed: int,
    keep_levels: bool = False,
) -> BatchResult:
    """Average ``replicates`` independent draws of the estimator.

    Replicate ``r`` always consumes the stream derived as ``(seed, r)``, so
    a batch is reproducible draw-for-draw regardless of execution order,
    and the aggregation below (``math.fsum``) is exact in any summation
    order.
    """
    if replicates < 1:
        raise ValueError("replicates must be >= 1")
    root = Stream(seed)
    draws = [
        estimate_once(gen, survival, root.child(r), keep_levels=keep_levels)
        for r in range(replicates)
    ]
    values = np.asarray([d.value for d in draws], dtype=float)
    if values.ndim == 1:
        mean = math.fsum(values) / replicates
        var = (
            math.fsum((v - mean) ** 2 for v in values) / (replicates - 1)
            if replicates > 1
            else 0.0
        )
    else:
        mean = np.array([math.fsum(col) for col in values.T]) / replicates
        if replicates > 1:
            var = np.array(
                [math.fsum((col - m) ** 2) for col, m in zip(values.T, mean)]
            ) / (replicates - 1)
        else:
            var = np.zeros_like(mean)
    total_work = math.fsum(d.work for d in draws)
    return BatchResult(mean=mean, variance=var, total_work=total_work, draws=draws)


def second_moment_formula(
    nus: Sequence[float],
    survival: SurvivalDistribution,
    truncation: int | None = None,
) -> float:
    """``E[Z^2] = sum_{i<=truncation} nu_i / Fbar_i``.

    ``nu_i`` are the level second-moment coefficients
    ``var(delta_i) + (EY - EY_{i-1})^2 - (EY - EY_i)^2``; computing them is
    the caller's (model's) business.
    """
    nus = np.asarray(nus, dtype=float)
    if truncation is None:
        truncation = nus.size - 1
    if truncation < 0:
        raise ValueError("truncation must be >= 0")
    if truncation >= nus.size:
        raise ValueError("need nu_i up to the requested truncation")
    if not np.all(np.isfinite(nus[: truncation + 1])):
        raise ValueError("nu_i must be finite")
    total = 0.0
    for i in range(truncation + 1):
        fbar = survival.survival(i)
        if fbar <= 0.0:
            raise EstimatorError(f"Fbar_{i} = 0 inside the summation range")
        total += nus[i] / fbar
    return total


def expected_work(
    ts: Sequence[float] | Callable[[int], float],
    survival: SurvivalDistribution,
    truncation: int,
) -> float:
    """``E[work] = sum_{i<=truncation} t_i Fbar_i``."""
    if truncation < 0:
        raise ValueError("truncation must be >= 0")
    get = ts if callable(ts) else ts.__getitem__
    return math.fsum(get(i) * survival.survival(i) for i in range(truncation + 1))
