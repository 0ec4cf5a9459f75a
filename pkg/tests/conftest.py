"""Shared test doubles and statistical helpers."""

import numpy as np
import pytest

from ubmc.rng import Stream


class FixedUniformGenerator:
    """Generator double returning one fixed uniform (for forcing N)."""

    def __init__(self, u: float):
        self.u = u

    def random(self, n=None):
        return self.u if n is None else np.full(n, self.u)


class ForcedTruncationStream:
    """Stream double: the truncation child sees a fixed uniform, level
    children are real derived streams."""

    def __init__(self, u: float, seed: int = 0):
        self.u = u
        self._real = Stream(seed)

    def child(self, *key):
        if key == (0,):
            return self
        return self._real.child(*key)

    def generator(self):
        return FixedUniformGenerator(self.u)


class ScriptedNormals:
    """Generator double replaying a fixed sequence of standard normals."""

    def __init__(self, values):
        self.values = list(values)
        self.calls = 0

    def standard_normal(self, size=None):
        if size is None:
            self.calls += 1
            return self.values.pop(0)
        out = np.array([self.values.pop(0) for _ in range(int(size))])
        self.calls += int(size)
        return out

    def random(self, n=None):
        return 0.5 if n is None else np.full(n, 0.5)


class ConstantStreamDouble:
    """Stream double handing out one scripted generator."""

    def __init__(self, generator):
        self._generator = generator

    def child(self, *key):
        return self

    def generator(self):
        return self._generator


def four_se(values: np.ndarray) -> float:
    values = np.asarray(values, dtype=float)
    return 4.0 * values.std(ddof=1) / np.sqrt(values.size)


def scaled_elliptic_is_model(seed: int = 20240817, scale: float = 40.0, gamma: float = 3.2):
    """Elliptic inverse problem with an amplified observation operator.

    The unscaled solution map varies so little over the prior box that
    acceptance ratios sit within 1e-2 of one; scaling the observations
    keeps every decay exponent while making acceptance (and hence branch
    behaviour) statistically visible at desk scale.  The floor is pilot
    calibrated at half the smallest acceptance seen and remains runtime
    checked.
    """
    from ubmc.independence_sampler import (
        UniformPriorModel,
        is_acceptance,
        pad_to,
        propose,
    )
    from ubmc.models import EllipticModel

    elliptic = EllipticModel(gamma=gamma)
    stream = Stream(seed)
    forward = lambda j, x: scale * elliptic.forward(j, x)
    base = forward(32, elliptic.prior_sample(32, stream.generator()))
    y = base + np.array([0.6, -0.4, 0.5])
    probe = UniformPriorModel(
        half_widths=elliptic.half_width,
        forward=forward,
        y=y,
        alpha_star=1e-9,
        work_exponent=elliptic.work_exponent,
    )
    rng = stream.child(1).generator()
    floor = 1.0
    for _ in range(3000):
        x = pad_to(propose(probe, 16, rng), 16)
        xi = propose(probe, 16, rng)
        floor = min(floor, is_acceptance(probe, 16, x, xi))
    model = UniformPriorModel(
        half_widths=elliptic.half_width,
        forward=forward,
        y=y,
        alpha_star=0.5 * floor,
        work_exponent=elliptic.work_exponent,
    )
    return elliptic, model


@pytest.fixture
def stream():
    return Stream(20240817)
