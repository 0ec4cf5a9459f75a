"""Efficiency tuning for the randomized-truncation estimator.

For an estimator averaged over independent draws, the variance shrinks
like 1/L while the expected work grows like L, so their product

    (sum_i nu_i / Fbar_i - (E Y)^2) * (sum_i Fbar_i t_i)

is the scale-free figure of merit.  This module evaluates it, optimizes
the truncation law against it (the square-root rule and its
partial-knowledge variant), and provides the closed-form optimum and the
step-multiplier ansatz for the contracting Gaussian autoregression.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .estimator import SurvivalDistribution

__all__ = [
    "MseWorkReport",
    "msework_report",
    "contracting_delta_variances",
    "optimal_survival",
    "msework_optimum",
    "contracting_optimal_survival",
    "ergodic_msework_limit",
    "polylog_minus_half",
    "unbiased_msework",
    "optimal_w",
    "step_multiplier",
    "PartialKnowledgeResult",
    "partial_knowledge_optimize",
]

# Relative tolerance of the adaptive level-truncation rule: sums over
# levels stop once a term falls below this fraction of the running sum.
SERIES_RTOL = 1e-14
SERIES_CAP = 10**4


def _steps_fn(steps) -> Callable[[int], float]:
    if callable(steps):
        return steps
    if hasattr(steps, "steps_at"):
        return steps.steps_at
    seq = list(steps)
    return lambda i: seq[i]


@dataclass
class MseWorkReport:
    """Variance term, expected work, and their product for one tuning.

    ``converged`` records whether both partial sums had decayed below the
    series tolerance at the truncation level; ``proper`` whether the
    survival law itself decays (an everywhere-constant law has infinite
    expected work and is flagged, not silently accepted).
    """

    variance_term: float
    expected_work: float
    product: float
    proper: bool
    converged: bool


def msework_report(
    nus: Sequence[float],
    ts: Sequence[float],
    survival: SurvivalDistribution,
    mean: float = 0.0,
) -> MseWorkReport:
    """Evaluate the MSE-work product ``(sum nu/Fbar - mean^2)(sum Fbar t)``."""
    nus = np.asarray(nus, dtype=float)
    ts = np.asarray(ts, dtype=float)
    if nus.shape != ts.shape:
        raise ValueError("nu and t sequences must have equal length")
    fbar = survival.survival_array(nus.size)
    if np.any(fbar <= 0.0):
        raise ValueError("survival vanishes inside the summation range")
    var_terms = nus / fbar
    work_terms = ts * fbar
    variance = math.fsum(var_terms) - mean**2
    work = math.fsum(work_terms)
    converged = bool(
        survival.proper
        and var_terms[-1] <= SERIES_RTOL * max(math.fsum(var_terms), 1e-300)
        and work_terms[-1] <= SERIES_RTOL * max(work, 1e-300)
    )
    return MseWorkReport(
        variance_term=variance,
        expected_work=work,
        product=variance * work,
        proper=survival.proper,
        converged=converged,
    )


def contracting_delta_variances(rho: float, steps, levels: int) -> np.ndarray:
    """Level variances of the coupled autoregression started at zero.

    With the chain started at 0 the level differences are centred, so
    ``nu_0 = 1 - rho^(2 a_0)`` and
    ``nu_i = rho^(2 a_{i-1}) (1 - rho^(2 (a_i - a_{i-1})))`` exactly.
    """
    if not 0.0 < rho < 1.0:
        raise ValueError("rho must lie in (0, 1)")
    a = _steps_fn(steps)
    out = np.empty(levels)
    for i in range(levels):
        a_prev = a(i - 1) if i > 0 else 0
        out[i] = rho ** (2 * a_prev) * (1.0 - rho ** (2 * (a(i) - a_prev)))
    return out


def optimal_survival(nus: Sequence[float], ts: Sequence[float]) -> SurvivalDistribution:
    """Square-root rule ``Fbar_i = sqrt(nu_i / t_i) / sqrt(nu_0 / t_0)``.

    Feasible (and optimal, by Cauchy-Schwarz) exactly when ``nu_i / t_i``
    is nonincreasing; the first offending index is reported otherwise.
    The returned law is tabulated over the supplied levels and continued
    geometrically with the last observed ratio; a constant rule
    (``nu/t`` flat) yields an improper law, which callers must treat as an
    infeasibility warning.
    """
    nus = np.asarray(nus, dtype=float)
    ts = np.asarray(ts, dtype=float)
    if nus.size == 0 or nus.size != ts.size:
        raise ValueError("need equally sized, nonempty nu and t sequences")
    if np.any(nus <= 0.0) or np.any(ts <= 0.0):
        raise ValueError("nu_i and t_i must be positive")
    ratios = nus / ts
    worse = np.nonzero(np.diff(ratios) > ratios[:-1] * 1e-12)[0]
    if worse.size:
        k = int(worse[0]) + 1
        raise ValueError(
            f"nu_i / t_i must be nonincreasing for the square-root rule; "
            f"first violation at index {k}"
        )
    fbar = np.sqrt(ratios / ratios[0])
    fbar[0] = 1.0
    if fbar.size == 1:
        return SurvivalDistribution.tabulated(fbar)
    tail = min(float(fbar[-1] / fbar[-2]), 1.0)
    return SurvivalDistribution.tabulated(fbar, tail_ratio=tail)


def msework_optimum(nus: Sequence[float], ts: Sequence[float]) -> float:
    """Lower bound ``(sum_i sqrt(nu_i t_i))^2`` attained by the square-root rule."""
    nus = np.asarray(nus, dtype=float)
    ts = np.asarray(ts, dtype=float)
    return math.fsum(np.sqrt(nus * ts)) ** 2


def _adaptive_levels(rho: float, m: int) -> int:
    # Stop once nu_i / Fbar_i = (1 - rho^2m) rho^(m i) sqrt(i + 1) is
    # negligible against the running sum.
    total = 0.0
    z = rho**m
    for i in range(SERIES_CAP):
        term = z**i * math.sqrt(i + 1.0)
        total += term
        if term < SERIES_RTOL * total and i >= 1:
            return i + 1
    return SERIES_CAP


def contracting_optimal_survival(
    rho: float, m: int, levels: int | None = None
) -> SurvivalDistribution:
    """Optimal truncation law for the autoregression with ``a_i = m(i+1)``.

    ``nu_i / t_i`` is decreasing for this schedule, so the square-root
    rule applies and reduces to ``Fbar_i = rho^(m i) / sqrt(i + 1)``.
    """
    if levels is None:
        levels = _adaptive_levels(rho, m)
    steps = [m * (i + 1) for i in range(levels)]
    nus = contracting_delta_variances(rho, steps, levels)
    return optimal_survival(nus, np.asarray(steps, dtype=float))


def ergodic_msework_limit(rho: float) -> float:
    """Long-run MSE-work constant of the plain time average, ``(1+rho)/(1-rho)``."""
    if not 0.0 <= rho < 1.0:
        raise ValueError("rho must lie in [0, 1)")
    return (1.0 + rho) / (1.0 - rho)


def polylog_minus_half(z: float) -> float:
    """``Li_{-1/2}(z) = sum_{k>=1} sqrt(k) z^k`` for ``z`` in [0, 1 - 1e-6].

    The series is summed in blocks until both the current term and an
    explicit geometric remainder bound drop below ``1e-14`` of the partial
    sum; arguments closer to 1 than ``1e-6`` are outside the summation
    contract and rejected.
    """
    if not 0.0 <= z <= 1.0 - 1e-6:
        raise ValueError("z must lie in [0, 1 - 1e-6]")
    if z == 0.0:
        return 0.0
    total = 0.0
    block = 4096
    start = 1
    while True:
        k = np.arange(start, start + block, dtype=float)
        total += float(np.sum(np.sqrt(k) * z**k))
        last_k = start + block - 1
        term = math.sqrt(last_k) * z**last_k
        # sqrt(k) <= k / sqrt(last_k) for k >= last_k gives a closed-form
        # remainder bound via the arithmetico-geometric series.
        remainder = (
            z ** (last_k + 1)
            * ((last_k + 1) * (1 - z) + z)
            / ((1 - z) ** 2 * math.sqrt(last_k))
        )
        if term < 1e-14 * total and remainder < 1e-13 * total:
            return total
        start += block
        if start > 10**9:
            raise ValueError("series did not converge within the summation budget")


def unbiased_msework(rho: float, m: int) -> float:
    """Closed-form optimal MSE-work product for ``a_i = m(i+1)``.

    Equals ``(rho^-m sqrt(m (1 - rho^2m)) Li_{-1/2}(rho^m))^2`` in
    single-step work units, the square-root-rule optimum
    ``(sum_i sqrt(nu_i t_i))^2`` evaluated in closed form.
    """
    if not 0.0 < rho < 1.0:
        raise ValueError("rho must lie in (0, 1)")
    if m < 1:
        raise ValueError("m must be a positive integer")
    z = rho**m
    return (math.sqrt(m * (1.0 - z * z)) * polylog_minus_half(z) / z) ** 2


def _w_objective(w: float) -> float:
    z = math.exp(w)
    return (1.0 - z * z) * polylog_minus_half(z) ** 2 * abs(w) / (z * z)


def optimal_w(lo: float = -10.0, hi: float = -1e-3, tol: float = 1e-4) -> float:
    """Minimizer of the step-multiplier objective over ``w < 0``.

    Golden-section search of
    ``(e^-w sqrt(1 - e^2w) Li_{-1/2}(e^w) sqrt(|w|))^2``; the sign under
    the square root follows from ``m (1 - rho^2m) > 0``, so ``|w|`` is the
    correct reading of the continuous-``m`` substitution ``m = w / log rho``.
    """
    invphi = (math.sqrt(5.0) - 1.0) / 2.0
    a, b = lo, hi
    c = b - invphi * (b - a)
    d = a + invphi * (b - a)
    fc, fd = _w_objective(c), _w_objective(d)
    while b - a > tol:
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - invphi * (b - a)
            fc = _w_objective(c)
        else:
            a, c, fc = c, d, fd
            d = a + invphi * (b - a)
            fd = _w_objective(d)
    return 0.5 * (a + b)


def step_multiplier(rho: float, w: float | None = None) -> int:
    """Near-optimal step multiplier ``m = ceil(w / log rho)`` for a given rate."""
    if not 0.0 < rho < 1.0:
        raise ValueError("rho must lie in (0, 1)")
    if w is None:
        w = optimal_w()
    return max(1, math.ceil(w / math.log(rho)))


@dataclass
class PartialKnowledgeResult:
    """Outcome of :func:`partial_knowledge_optimize`.

    ``head`` holds ``Fbar_0 .. Fbar_{i0}``, ``tail_scale`` the constant C
    of the parametric tail ``Fbar_i = C * rho_bound^(a_{i-1})``, and
    ``objective`` the minimized surrogate product.  ``survival`` tabulates
    the combined law up to the optimization horizon.
    """

    head: np.ndarray
    tail_scale: float
    objective: float
    survival: SurvivalDistribution


def partial_knowledge_optimize(
    nu_exact: Sequence[float],
    rho_bound: float,
    steps,
    horizon: int,
    tol: float = 1e-8,
    max_sweeps: int = 500,
) -> PartialKnowledgeResult:
    """Tune the truncation law from exact low-level variances plus a bound.

    The first ``i0 + 1 = len(nu_exact)`` level variances are taken as
    known; beyond ``i0`` only the geometric bound with rate ``rho_bound``
    is available, and the law is restricted to the parametric family
    ``Fbar_i = C * rho_bound^(a_{i-1})`` there.  The surrogate MSE-work
    product is minimized over ``(Fbar_1 .. Fbar_{i0}, C)`` subject to the
    monotonicity chain ``1 >= Fbar_1 >= ... >= Fbar_{i0} >= Fbar_{i0+1}(C)``
    by projected coordinate descent from the square-root-rule start; each
    coordinate's restricted objective is unimodal, so clipping the
    unconstrained minimizer into its interval is exact.
    """
    nu_head = np.asarray(nu_exact, dtype=float)
    i0 = nu_head.size - 1
    if i0 < 1:
        raise ValueError("need exact variances for at least levels 0 and 1")
    if not 0.0 < rho_bound < 1.0:
        raise ValueError("rho_bound must lie in (0, 1)")
    if np.any(nu_head <= 0.0):
        raise ValueError("exact variances must be positive")
    if horizon <= i0:
        raise ValueError("horizon must exceed the exactly-known range")
    a = _steps_fn(steps)
    a_head = np.array([a(i) for i in range(i0 + 1)], dtype=float)
    tail_idx = np.arange(i0 + 1, horizon + 1)
    a_tail = np.array([a(i) for i in tail_idx], dtype=float)
    a_tail_prev = np.array([a(i - 1) for i in tail_idx], dtype=float)
    nu_tail = np.array(
        [
            rho_bound ** (2 * a(i - 1)) * (1.0 - rho_bound ** (2 * (a(i) - a(i - 1))))
            for i in tail_idx
        ]
    )
    tail_shape = rho_bound**a_tail_prev  # Fbar_i / C on the tail
    s_nu = math.fsum(nu_tail / tail_shape)
    s_w = math.fsum(a_tail * tail_shape)

    # Square-root-rule start, projected onto the monotone cone.
    fbar = np.sqrt((nu_head / a_head) / (nu_head[0] / a_head[0]))
    fbar[0] = 1.0
    fbar = np.minimum.accumulate(np.minimum(fbar, 1.0))
    c_cap = fbar[i0] / tail_shape[0]
    c = min(math.sqrt((nu_tail[0] / a_tail[0]) / (nu_head[0] / a_head[0])) / tail_shape[0], c_cap)

    def objective(f, cc):
        var = math.fsum(nu_head / f) + s_nu / cc
        work = math.fsum(a_head * f) + cc * s_w
        return var * work

    obj = objective(fbar, c)
    for _ in range(max_sweeps):
        prev = obj
        for k in range(1, i0 + 1):
            var_rest = math.fsum(np.delete(nu_head, k) / np.delete(fbar, k)) + s_nu / c
            work_rest = math.fsum(np.delete(a_head, k) * np.delete(fbar, k)) + c * s_w
            star = math.sqrt(nu_head[k] * work_rest / (a_head[k] * var_rest))
            upper = fbar[k - 1]
            lower = fbar[k + 1] if k < i0 else c * tail_shape[0]
            fbar[k] = min(max(star, lower), upper)
        var_rest = math.fsum(nu_head / fbar)
        work_rest = math.fsum(a_head * fbar)
        star = math.sqrt(s_nu * work_rest / (s_w * var_rest))
        c = min(star, fbar[i0] / tail_shape[0])
        obj = objective(fbar, c)
        if abs(prev - obj) <= tol * abs(obj):
            break
    table = np.concatenate([fbar, c * tail_shape])
    ratio = min(float(table[-1] / table[-2]), 1.0)
    survival = SurvivalDistribution.tabulated(table, tail_ratio=ratio)
    return PartialKnowledgeResult(
        head=fbar, tail_scale=float(c), objective=float(obj), survival=survival
    )
