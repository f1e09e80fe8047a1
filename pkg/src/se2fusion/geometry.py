"""SE(2) poses and tangent-space helpers."""

from __future__ import annotations

import math
from dataclasses import dataclass

_TWO_PI = 2.0 * math.pi

# Below this rotation magnitude the exp/log V-matrix terms switch to their
# Taylor forms to avoid 0/0.
SMALL_ANGLE = 1e-6


def normalize_angle(theta: float) -> float:
    """Wrap an angle to the half-open interval (-pi, pi]."""
    if not math.isfinite(theta):
        raise ValueError(f"angle must be finite, got {theta!r}")
    r = math.fmod(theta, _TWO_PI)
    if r <= -math.pi:
        r += _TWO_PI
    elif r > math.pi:
        r -= _TWO_PI
    return r


@dataclass(frozen=True)
class Twist2:
    """Tangent vector (vx, vy, omega) of SE(2)."""

    vx: float
    vy: float
    omega: float

    def __post_init__(self) -> None:
        for v in (self.vx, self.vy, self.omega):
            if not math.isfinite(v):
                raise ValueError(f"twist components must be finite, got {v!r}")

    def as_tuple(self) -> tuple[float, float, float]:
        return (self.vx, self.vy, self.omega)


def _v_coeffs(omega: float) -> tuple[float, float]:
    # a = sin(w)/w, b = (1 - cos(w))/w, with 1 - cos(w) = 2 sin^2(w/2)
    if abs(omega) < SMALL_ANGLE:
        w2 = omega * omega
        return 1.0 - w2 / 6.0, 0.5 * omega - omega * w2 / 24.0
    s = math.sin(0.5 * omega)
    return math.sin(omega) / omega, 2.0 * s * s / omega


@dataclass(frozen=True)
class Pose2:
    """Planar pose (x, y, theta). theta is stored wrapped to (-pi, pi]."""

    x: float
    y: float
    theta: float

    def __post_init__(self) -> None:
        if not (math.isfinite(self.x) and math.isfinite(self.y)):
            raise ValueError(f"pose translation must be finite, got ({self.x!r}, {self.y!r})")
        object.__setattr__(self, "theta", normalize_angle(self.theta))

    @staticmethod
    def identity() -> Pose2:
        return Pose2(0.0, 0.0, 0.0)

    def compose(self, other: Pose2) -> Pose2:
        """Group product self * other (other expressed in this pose's frame)."""
        c = math.cos(self.theta)
        s = math.sin(self.theta)
        return Pose2(
            self.x + c * other.x - s * other.y,
            self.y + s * other.x + c * other.y,
            self.theta + other.theta,
        )

    def inverse(self) -> Pose2:
        c = math.cos(self.theta)
        s = math.sin(self.theta)
        return Pose2(-(c * self.x + s * self.y), s * self.x - c * self.y, -self.theta)

    def between(self, other: Pose2) -> Pose2:
        """Relative pose taking this pose to other: self^-1 * other."""
        c = math.cos(self.theta)
        s = math.sin(self.theta)
        dx = other.x - self.x
        dy = other.y - self.y
        return Pose2(c * dx + s * dy, c * dy - s * dx, other.theta - self.theta)

    @staticmethod
    def exp(v: Twist2) -> Pose2:
        """Exponential map from a tangent vector to a pose."""
        a, b = _v_coeffs(v.omega)
        return Pose2(a * v.vx - b * v.vy, b * v.vx + a * v.vy, v.omega)

    def log(self) -> Twist2:
        """Logarithm map; inverse of exp for theta in (-pi, pi]."""
        a, b = _v_coeffs(self.theta)
        det = a * a + b * b
        return Twist2(
            (a * self.x + b * self.y) / det,
            (a * self.y - b * self.x) / det,
            self.theta,
        )

    def retract(self, v: Twist2) -> Pose2:
        """Right-perturbation update self * exp(v)."""
        return self.compose(Pose2.exp(v))

    def as_tuple(self) -> tuple[float, float, float]:
        return (self.x, self.y, self.theta)
