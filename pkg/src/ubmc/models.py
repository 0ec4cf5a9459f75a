"""Concrete target models for the estimator pipelines.

Four models exercise every pipeline in the package: a scalar Gaussian
autoregression with a shared-noise contracting coupling, a uniform random
walk on the circle with a maximal one-step coupling, Bayesian logistic
regression driven by a recentred proposal chain, and a one-dimensional
elliptic inverse problem with a uniform series prior.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.special import zeta

from .couplings import CoupledKernel, LevelSchedule, MarkovKernel
from .estimator import SurvivalDistribution
from .rng import Stream

TWO_PI = 2.0 * math.pi

__all__ = [
    "ContractingNormalsModel",
    "contracting_normals_coupling",
    "contracting_delta_batch",
    "contracting_unbiased_block",
    "contracting_unbiased_batch",
    "CircleChainModel",
    "circle_maximal_coupling",
    "circle_arc",
    "LogisticModel",
    "logistic_posterior_logdensity",
    "logistic_reference_fit",
    "EllipticModel",
    "elliptic_forward",
    "elliptic_observation_gap",
]


# ---------------------------------------------------------------------------
# Contracting normals
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ContractingNormalsModel:
    """Scalar autoregression ``X' = rho X + sqrt(1 - rho^2) xi``.

    The stationary law is standard normal; sharing the innovation between
    two copies contracts their gap by exactly ``rho`` per step.
    """

    rho: float

    def __post_init__(self):
        if not 0.0 < self.rho < 1.0:
            raise ValueError("rho must lie in (0, 1)")

    @property
    def noise_scale(self) -> float:
        return math.sqrt(1.0 - self.rho**2)

    def step(self, x: float, rng: np.random.Generator) -> float:
        return self.rho * x + self.noise_scale * rng.standard_normal()

    def step_many(self, xs: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        return self.rho * xs + self.noise_scale * rng.standard_normal(xs.shape)

    def kernel(self) -> MarkovKernel:
        return MarkovKernel(
            step=self.step, work_per_step=1.0, dim=1, step_many=self.step_many
        )

    def coupling(self) -> CoupledKernel:
        def joint(pair, rng):
            return contracting_normals_coupling(pair, rng.standard_normal(), self.rho)

        return CoupledKernel(step=joint, marginal=self.kernel())


def contracting_normals_coupling(pair, noise: float, rho: float) -> tuple[float, float]:
    """Shared-noise joint step; the gap contracts deterministically by ``rho``."""
    x, y = pair
    scale = math.sqrt(1.0 - rho**2)
    return rho * x + scale * noise, rho * y + scale * noise


def contracting_delta_batch(
    rho: float,
    schedule: LevelSchedule,
    level: int,
    count: int,
    rng: np.random.Generator,
    x0: float = 0.0,
    f: Callable[[np.ndarray], np.ndarray] | None = None,
) -> np.ndarray:
    """``count`` independent coupled level differences, vectorized.

    Runs the same lone-prefix / joint-phase simulation as the generic
    coupled driver, one vector lane per replicate.
    """
    scale = math.sqrt(1.0 - rho**2)
    if level == 0:
        top = np.full(count, x0, dtype=float)
        for _ in range(schedule.steps_at(0)):
            top = rho * top + scale * rng.standard_normal(count)
        return top if f is None else f(top)
    a_hi = schedule.steps_at(level)
    a_lo = schedule.steps_at(level - 1)
    top = np.full(count, x0, dtype=float)
    for _ in range(a_hi - a_lo):
        top = rho * top + scale * rng.standard_normal(count)
    bottom = np.full(count, x0, dtype=float)
    for _ in range(a_lo):
        xi = rng.standard_normal(count)
        top = rho * top + scale * xi
        bottom = rho * bottom + scale * xi
    if f is None:
        return top - bottom
    return f(top) - f(bottom)


def contracting_unbiased_block(
    rho: float,
    schedule: LevelSchedule,
    survival: SurvivalDistribution,
    stream: Stream,
    count: int,
    x0: float = 0.0,
    f: Callable[[np.ndarray], np.ndarray] | None = None,
) -> dict:
    """One block of unbiased draws, all lanes sharing one stream.

    The truncation draws use child 0 of the stream, level ``i`` uses child
    ``i + 1``, and replicate lanes are columns, so the block is a pure
    function of (stream, count).  Returns arrays ``level``, ``value``,
    ``work``.
    """
    ns = survival.sample_many(count, stream.child(0).generator())
    z = np.zeros(count)
    w = np.zeros(count)
    for i in range(int(ns.max()) + 1):
        mask = ns >= i
        cnt = int(mask.sum())
        if cnt == 0:
            continue
        rng_i = stream.child(1 + i).generator()
        deltas = contracting_delta_batch(rho, schedule, i, cnt, rng_i, x0=x0, f=f)
        z[mask] += deltas / survival.survival(i)
        w[mask] += schedule.steps_at(i)
    return {"level": ns, "value": z, "work": w}


def contracting_unbiased_batch(
    rho: float,
    schedule: LevelSchedule,
    survival: SurvivalDistribution,
    replicates: int,
    seed: int,
    x0: float = 0.0,
    f: Callable[[np.ndarray], np.ndarray] | None = None,
    block: int = 4096,
) -> dict:
    """Vectorized batch of unbiased draws for the contracting chain.

    Replicates are processed in fixed-size blocks; block ``b`` consumes
    the stream ``(seed, b)``, so results do not depend on how blocks are
    distributed over workers.  Returns arrays ``level``, ``value``,
    ``work``.
    """
    parts = []
    root = Stream(seed)
    for b_start in range(0, replicates, block):
        nb = min(block, replicates - b_start)
        parts.append(
            contracting_unbiased_block(
                rho, schedule, survival, root.child(b_start // block), nb, x0=x0, f=f
            )
        )
    return {
        key: np.concatenate([p[key] for p in parts]) for key in ("level", "value", "work")
    }


# ---------------------------------------------------------------------------
# Circle chain
# ---------------------------------------------------------------------------


def circle_arc(x: float) -> list[tuple[float, float]]:
    """Support of one step from ``x``: the arc ``(x - 2, x + 2) mod 2 pi``.

    Returned as one or two half-open intervals inside ``[0, 2 pi)``.
    """
    lo = (x - 2.0) % TWO_PI
    hi = lo + 4.0
    if hi <= TWO_PI:
        return [(lo, hi)]
    return [(lo, TWO_PI), (0.0, hi - TWO_PI)]


def _intervals_intersect(a, b):
    out = []
    for lo1, hi1 in a:
        for lo2, hi2 in b:
            lo, hi = max(lo1, lo2), min(hi1, hi2)
            if hi > lo:
                out.append((lo, hi))
    return out


def _intervals_difference(a, b):
    out = list(a)
    for lo2, hi2 in b:
        nxt = []
        for lo1, hi1 in out:
            if hi2 <= lo1 or lo2 >= hi1:
                nxt.append((lo1, hi1))
                continue
            if lo1 < lo2:
                nxt.append((lo1, lo2))
            if hi2 < hi1:
                nxt.append((hi2, hi1))
        out = nxt
    return out


def _intervals_measure(intervals) -> float:
    return math.fsum(hi - lo for lo, hi in intervals)


def _intervals_sample(intervals, rng: np.random.Generator) -> float:
    u = rng.random() * _intervals_measure(intervals)
    for lo, hi in intervals:
        width = hi - lo
        if u < width:
            return lo + u
        u -= width
    return intervals[-1][1]  # unreachable up to rounding


@dataclass(frozen=True)
class CircleChainModel:
    """Random walk ``X' = (X + U) mod 2 pi`` with ``U ~ U[-2, 2]``.

    One-step supports from any two states overlap on an arc of length at
    least ``8 - 2 pi``, so the maximal coupling meets with probability at
    least ``(8 - 2 pi) / 4`` regardless of the states.  The stationary law
    is uniform on the circle.
    """

    def step(self, x: float, rng: np.random.Generator) -> float:
        return (x + rng.uniform(-2.0, 2.0)) % TWO_PI

    def kernel(self) -> MarkovKernel:
        return MarkovKernel(step=self.step, work_per_step=1.0, dim=1)

    def coupling(self) -> CoupledKernel:
        def joint(pair, rng):
            return circle_maximal_coupling(pair, rng)

        return CoupledKernel(step=joint, marginal=self.kernel())


def circle_maximal_coupling(pair, rng: np.random.Generator) -> tuple[float, float]:
    """One-step maximal coupling of the circle chain.

    With probability ``|A_x1 ∩ A_x2| / 4`` both chains land on a common
    uniform draw from the overlap arc; otherwise each draws independently
    and uniformly from its residual arc.
    """
    x1, x2 = pair
    a1, a2 = circle_arc(x1), circle_arc(x2)
    overlap = _intervals_intersect(a1, a2)
    p_meet = _intervals_measure(overlap) / 4.0
    if rng.random() <= p_meet:
        y = _intervals_sample(overlap, rng)
        return y, y
    y1 = _intervals_sample(_intervals_difference(a1, overlap), rng)
    y2 = _intervals_sample(_intervals_difference(a2, overlap), rng)
    return y1, y2


# ---------------------------------------------------------------------------
# Bayesian logistic regression
# ---------------------------------------------------------------------------


def _log_sigmoid(z: np.ndarray) -> np.ndarray:
    # log h(z) = -log(1 + exp(-z)), stable for large |z|
    return -np.logaddexp(0.0, -z)


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z, dtype=float)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


@dataclass(frozen=True)
class LogisticModel:
    """Logistic regression with a standard normal prior on the coefficients.

    The posterior density is ``exp(-|beta|^2 / 2) * prod_i h(y_i beta . T_i)``
    with ``h`` the logistic function, labels ``y_i`` in ``{-1, +1}`` and a
    fixed design matrix ``T``.
    """

    design: np.ndarray
    labels: np.ndarray

    @classmethod
    def synthetic(
        cls,
        n_obs: int = 100,
        seed: int = 7,
        beta_true: Sequence[float] = (1.0, -1.0, 0.5),
    ) -> "LogisticModel":
        """Seed-fixed design (two Gaussian columns plus intercept) and labels
        drawn from the model at ``beta_true``."""
        rng = Stream(seed).generator()
        beta_true = np.asarray(beta_true, dtype=float)
        design = np.column_stack(
            [rng.standard_normal((n_obs, beta_true.size - 1)), np.ones(n_obs)]
        )
        probs = _sigmoid(design @ beta_true)
        labels = np.where(rng.random(n_obs) < probs, 1.0, -1.0)
        return cls(design=design, labels=labels)

    @property
    def dim(self) -> int:
        return self.design.shape[1]

    def log_density(self, beta: np.ndarray) -> float:
        return logistic_posterior_logdensity(self, beta)

    def grad_log_density(self, beta: np.ndarray) -> np.ndarray:
        beta = np.asarray(beta, dtype=float)
        z = self.labels * (self.design @ beta)
        # d/dz log h(z) = h(-z)
        return -beta + self.design.T @ (self.labels * _sigmoid(-z))

    def neg_log_density(self, beta: np.ndarray) -> float:
        return -self.log_density(beta)


def logistic_posterior_logdensity(model: LogisticModel, beta) -> float:
    """Posterior log-density up to an additive constant."""
    beta = np.asarray(beta, dtype=float)
    z = model.labels * (model.design @ beta)
    return float(-0.5 * beta @ beta + _log_sigmoid(z).sum())


def logistic_reference_fit(
    model: LogisticModel,
    rwm_steps: int,
    seed: int,
    proposal_scale: float = 0.1,
) -> tuple[np.ndarray, np.ndarray]:
    """Random-walk Metropolis estimate of the posterior mean and covariance.

    The covariance is symmetrized and jittered by ``1e-9`` on the diagonal;
    a non-positive-definite result after jitter raises.
    """
    if rwm_steps < 10**4:
        raise ValueError("need at least 10^4 steps for a usable reference fit")
    rng = Stream(seed).generator()
    d = model.dim
    beta = np.zeros(d)
    logp = model.log_density(beta)
    samples = np.empty((rwm_steps, d))
    for k in range(rwm_steps):
        prop = beta + proposal_scale * rng.standard_normal(d)
        logp_prop = model.log_density(prop)
        if math.log(rng.random() + 1e-300) <= logp_prop - logp:
            beta, logp = prop, logp_prop
        samples[k] = beta
    center = samples.mean(axis=0)
    cov = np.cov(samples.T)
    cov = 0.5 * (cov + cov.T) + 1e-9 * np.eye(d)
    try:
        np.linalg.cholesky(cov)
    except np.linalg.LinAlgError as exc:
        raise ValueError("fitted covariance is not positive definite") from exc
    return center, cov


# ---------------------------------------------------------------------------
# Elliptic inverse problem
# ---------------------------------------------------------------------------


def _trapezoid(y: np.ndarray, x: np.ndarray) -> float:
    return float(0.5 * np.sum((x[1:] - x[:-1]) * (y[1:] + y[:-1])))


@dataclass
class EllipticModel:
    """Diffusion-coefficient inverse problem for ``-(u p')' = h`` on (0, 1).

    The coefficient is ``u(s) = m0 + sum_k u_k e_k(s)`` in the Dirichlet
    sine basis ``e_k(s) = sqrt(2) sin(k pi s)`` with uniform prior
    ``u_k ~ U[-k^-gamma, k^-gamma]``, and the observation operator maps
    ``u`` to the solution evaluated at ``obs_points``.  Separation of
    variables gives the solution in closed form as two quadratures, which
    are approximated by the composite trapezoidal rule on
    ``ceil(j^(gamma/2 - 1/4))`` points at truncation level ``j``.
    """

    gamma: float
    obs_points: tuple[float, ...] = (0.25, 0.5, 0.75)
    m0: float | None = None
    source_antiderivative: Callable[[np.ndarray], np.ndarray] = field(default=None)
    source_oscillation: float = 1.0
    _basis_cache: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if self.gamma <= 3.0:
            raise ValueError("gamma must exceed 3")
        if self.m0 is None:
            # Guarantees u > 0 for every prior draw: sum_k u*_k = zeta(gamma).
            self.m0 = 1.0 + float(zeta(self.gamma, 1))
        if self.source_antiderivative is None:
            # Default source h = 1, antiderivative H(s) = s.
            self.source_antiderivative = lambda s: s
            self.source_oscillation = 1.0
        if not all(0.0 < x < 1.0 for x in self.obs_points):
            raise ValueError("observation points must lie in (0, 1)")

    # -- prior -------------------------------------------------------------

    def half_width(self, k: int) -> float:
        return float(k) ** (-self.gamma)

    def half_widths(self, j: int) -> np.ndarray:
        return np.arange(1, j + 1, dtype=float) ** (-self.gamma)

    @property
    def coefficient_lower_bound(self) -> float:
        """Lower bound on ``u``: ``m0 - sqrt(2) * sum_k u*_k`` (sine basis sup)."""
        return self.m0 - math.sqrt(2.0) * float(zeta(self.gamma, 1))

    @property
    def coefficient_upper_bound(self) -> float:
        return self.m0 + math.sqrt(2.0) * float(zeta(self.gamma, 1))

    def prior_sample(self, j: int, rng: np.random.Generator) -> np.ndarray:
        return (2.0 * rng.random(j) - 1.0) * self.half_widths(j)

    # -- forward map ---------------------------------------------------------

    def quad_points(self, j: int) -> int:
        return max(2, math.ceil(j ** (self.gamma / 2.0 - 0.25)))

    @property
    def work_exponent(self) -> float:
        """Cost exponent of one chain step at truncation ``j``."""
        return self.gamma / 2.0 - 0.25

    def _basis(self, j: int, grid: np.ndarray, key) -> np.ndarray:
        cached = self._basis_cache.get(key)
        if cached is None:
            k = np.arange(1, j + 1)
            cached = math.sqrt(2.0) * np.sin(np.outer(grid, k) * math.pi)
            self._basis_cache[key] = cached
        return cached

    def coefficient_values(self, coeffs: np.ndarray, grid: np.ndarray, key=None) -> np.ndarray:
        j = len(coeffs)
        if key is not None:
            basis = self._basis(j, grid, key)
        else:
            k = np.arange(1, j + 1)
            basis = math.sqrt(2.0) * np.sin(np.outer(grid, k) * math.pi)
        return self.m0 + basis @ np.asarray(coeffs, dtype=float)

    def forward(self, j: int, coeffs, n_points: int | None = None) -> np.ndarray:
        return elliptic_forward(self, j, coeffs, n_points)

    def sup_forward_bound(self) -> float:
        """Deterministic bound on ``|G|``: each solution value is at most
        ``osc(H) / u_min``."""
        return math.sqrt(len(self.obs_points)) * (
            self.source_oscillation / self.coefficient_lower_bound
        )

    def observation_gap(self, j: int, n_draws: int, stream: Stream, factor: int = 2):
        return elliptic_observation_gap(self, j, n_draws, stream, factor)


def elliptic_forward(
    model: EllipticModel, j: int, coeffs, n_points: int | None = None
) -> np.ndarray:
    """Observation vector ``(p(x_1), ..., p(x_d))`` by trapezoidal quadrature.

    ``p(x) = -int_0^x (H + C_u)/u`` with
    ``C_u = -(int_0^1 H/u) / (int_0^1 1/u)``; both integrals use the same
    ``n_points``-point grid (default: the model's level-``j`` rule), and
    each partial integral appends the observation point to the grid.
    """
    coeffs = np.asarray(coeffs, dtype=float)[:j]
    if coeffs.size < j:
        coeffs = np.pad(coeffs, (0, j - coeffs.size))
    n = model.quad_points(j) if n_points is None else int(n_points)
    grid = np.linspace(0.0, 1.0, n)
    u_vals = model.coefficient_values(coeffs, grid, key=(j, n))
    if np.any(u_vals <= 0.0):
        raise ValueError("diffusion coefficient is not positive on the grid")
    h_anti = model.source_antiderivative(grid)
    inv_u = 1.0 / u_vals
    c_u = -_trapezoid(h_anti * inv_u, grid) / _trapezoid(inv_u, grid)
    integrand = (h_anti + c_u) * inv_u
    out = np.empty(len(model.obs_points))
    for idx, x_k in enumerate(model.obs_points):
        cut = int(np.searchsorted(grid, x_k, side="right"))
        xs = grid[:cut]
        ys = integrand[:cut]
        if xs[-1] < x_k:
            u_at = model.coefficient_values(coeffs, np.array([x_k]))[0]
            if u_at <= 0.0:
                raise ValueError("diffusion coefficient is not positive on the grid")
            y_at = (float(model.source_antiderivative(np.array([x_k]))[0]) + c_u) / u_at
            xs = np.append(xs, x_k)
            ys = np.append(ys, y_at)
        out[idx] = -_trapezoid(ys, xs)
    return out


def elliptic_observation_gap(
    model: EllipticModel, j: int, n_draws: int, stream: Stream, factor: int = 2
) -> float:
    """Sup over prior draws of ``|G_j(u) - G_{factor*j}(u)|``.

    Each level uses its own quadrature rule, mirroring how the sampler
    would evaluate the forward map at those truncations.
    """
    worst = 0.0
    for r in range(n_draws):
        coeffs = model.prior_sample(factor * j, stream.child(r).generator())
        gap = np.linalg.norm(
            model.forward(j, coeffs[:j]) - model.forward(factor * j, coeffs)
        )
        worst = max(worst, float(gap))
    return worst
