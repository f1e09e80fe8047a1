"""Factor types for SE(2) pose graphs.

Residuals live in the tangent space: for an expected pose E and an actual
pose A the residual is log(E^-1 * A), so a satisfied factor has residual
zero and angle wrap is handled by the group operations. Jacobians are taken
with respect to right perturbations X * exp(delta) of each involved pose.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Union

import numpy as np

from .geometry import Pose2, Twist2
from .noise import DiagonalNoise

VariableKey = int


def _lookup(values: Mapping[int, Pose2], key: int) -> Pose2:
    try:
        return values[key]
    except (KeyError, IndexError):
        raise KeyError(f"no value for variable {key}") from None


def _differential_of_log(z: Pose2) -> np.ndarray:
    """d/d(delta) of log(z * exp(delta)) at delta = 0, as a 3x3 matrix.

    Writing z = (t, theta) and log translation as Vinv(theta) t, the
    derivative splits into a block Vinv(theta) R(theta) for the translation
    directions and a column d(Vinv)/d(theta) t for the rotation direction.
    """
    theta = z.theta
    if abs(theta) < 1e-4:
        # cubic series of a = sin/t, b = (1-cos)/t and their derivatives
        t2 = theta * theta
        a = 1.0 - t2 / 6.0
        b = 0.5 * theta - theta * t2 / 24.0
        da = -theta / 3.0 + theta * t2 / 30.0
        db = 0.5 - t2 / 8.0
    else:
        s = math.sin(theta)
        c = math.cos(theta)
        a = s / theta
        h = math.sin(0.5 * theta)
        b = 2.0 * h * h / theta
        da = (theta * c - s) / (theta * theta)
        db = (theta * s - (2.0 * h * h)) / (theta * theta)
    det = a * a + b * b
    # Vinv = [[a, b], [-b, a]] / det, R = [[c, -s], [s, c]]
    c = math.cos(theta)
    s = math.sin(theta)
    m00 = (a * c + b * s) / det
    m01 = (-a * s + b * c) / det
    m10 = (-b * c + a * s) / det
    m11 = (b * s + a * c) / det
    # W = d(Vinv)/d(theta) t = (dVinv) applied to the translation of z
    dda = (da * det - a * (2.0 * a * da + 2.0 * b * db)) / (det * det)
    ddb = (db * det - b * (2.0 * a * da + 2.0 * b * db)) / (det * det)
    w0 = dda * z.x + ddb * z.y
    w1 = -ddb * z.x + dda * z.y
    return np.array([[m00, m01, w0], [m10, m11, w1], [0.0, 0.0, 1.0]])


def _adjoint(p: Pose2) -> np.ndarray:
    """Adjoint of SE(2): exp(Ad_p v) = p exp(v) p^-1."""
    c = math.cos(p.theta)
    s = math.sin(p.theta)
    return np.array([[c, -s, p.y], [s, c, -p.x], [0.0, 0.0, 1.0]])


@dataclass(frozen=True)
class PriorFactor:
    """Pins one pose to a fixed value."""

    key: VariableKey
    prior: Pose2
    noise: DiagonalNoise

    def keys(self) -> tuple[VariableKey, ...]:
        return (self.key,)

    def residual(self, values: Mapping[int, Pose2]) -> Twist2:
        return self.prior.between(_lookup(values, self.key)).log()

    def jacobians(self, values: Mapping[int, Pose2]) -> dict[VariableKey, np.ndarray]:
        z = self.prior.between(_lookup(values, self.key))
        return {self.key: _differential_of_log(z)}


@dataclass(frozen=True)
class MeasurementFactor:
    """Unary absolute-pose observation of one variable."""

    key: VariableKey
    measured: Pose2
    noise: DiagonalNoise

    def keys(self) -> tuple[VariableKey, ...]:
        return (self.key,)

    def residual(self, values: Mapping[int, Pose2]) -> Twist2:
        return self.measured.between(_lookup(values, self.key)).log()

    def jacobians(self, values: Mapping[int, Pose2]) -> dict[VariableKey, np.ndarray]:
        z = self.measured.between(_lookup(values, self.key))
        return {self.key: _differential_of_log(z)}


@dataclass(frozen=True)
class BetweenFactor:
    """Relative-pose constraint between two variables."""

    key_from: VariableKey
    key_to: VariableKey
    relative: Pose2
    noise: DiagonalNoise

    def __post_init__(self) -> None:
        if self.key_from == self.key_to:
            raise ValueError(f"between factor must join two distinct variables, got {self.key_from}")

    def keys(self) -> tuple[VariableKey, ...]:
        return (self.key_from, self.key_to)

    def residual(self, values: Mapping[int, Pose2]) -> Twist2:
        actual = _lookup(values, self.key_from).between(_lookup(values, self.key_to))
        return self.relative.between(actual).log()

    def jacobians(self, values: Mapping[int, Pose2]) -> dict[VariableKey, np.ndarray]:
        x_from = _lookup(values, self.key_from)
        x_to = _lookup(values, self.key_to)
        actual = x_from.between(x_to)
        z = self.relative.between(actual)
        d = _differential_of_log(z)
        return {
            self.key_to: d,
            self.key_from: -d @ _adjoint(actual.inverse()),
        }


Factor = Union[PriorFactor, MeasurementFactor, BetweenFactor]


@dataclass
class FactorGraph:
    """Ordered collection of factors over densely keyed pose variables."""

    num_variables: int = 0
    factors: list[Factor] = field(default_factory=list)

    def add_variable(self) -> VariableKey:
        key = self.num_variables
        self.num_variables += 1
        return key

    def add(self, factor: Factor) -> None:
        for key in factor.keys():
            if not 0 <= key < self.num_variables:
                raise KeyError(f"factor references unknown variable {key}")
        self.factors.append(factor)

    def is_gauge_fixed(self) -> bool:
        """True when at least one factor constrains an absolute pose."""
        return any(isinstance(f, (PriorFactor, MeasurementFactor)) for f in self.factors)

    def total_error(self, values: Mapping[int, Pose2]) -> float:
        """Half the sum of squared whitened residuals over all factors."""
        return 0.5 * sum(f.noise.mahalanobis_sq(f.residual(values)) for f in self.factors)
