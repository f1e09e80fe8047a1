"""Shared oracles and random generators for the tests.

The matrix oracle represents poses as 3x3 homogeneous matrices and is kept
independent of the library's own composition code on purpose.
"""

import math

import numpy as np

from se2fusion import Pose2, Twist2


def make_rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(key=seed))


def pose_matrix(p: Pose2) -> np.ndarray:
    c, s = math.cos(p.theta), math.sin(p.theta)
    return np.array([[c, -s, p.x], [s, c, p.y], [0.0, 0.0, 1.0]])


def matrix_pose(m: np.ndarray) -> Pose2:
    return Pose2(m[0, 2], m[1, 2], math.atan2(m[1, 0], m[0, 0]))


def random_pose(rng: np.random.Generator, span: float = 10.0) -> Pose2:
    x, y = rng.uniform(-span, span, size=2)
    return Pose2(x, y, rng.uniform(-math.pi, math.pi))


def random_twist(rng: np.random.Generator, span: float = 5.0, max_omega: float = 3.0) -> Twist2:
    vx, vy = rng.uniform(-span, span, size=2)
    return Twist2(vx, vy, rng.uniform(-max_omega, max_omega))


def pose_diff(a: Pose2, b: Pose2) -> float:
    from se2fusion import normalize_angle

    return max(abs(a.x - b.x), abs(a.y - b.y), abs(normalize_angle(a.theta - b.theta)))


def fd_jacobians(factor, values: dict, step: float = 1e-6) -> dict:
    """Central finite differences of the residual in each variable's tangent."""
    out = {}
    for key in factor.keys():
        cols = []
        for axis in range(3):
            tangent = [0.0, 0.0, 0.0]
            tangent[axis] = step
            plus = dict(values)
            plus[key] = values[key].retract(Twist2(*tangent))
            tangent[axis] = -step
            minus = dict(values)
            minus[key] = values[key].retract(Twist2(*tangent))
            rp = np.array(factor.residual(plus).as_tuple())
            rm = np.array(factor.residual(minus).as_tuple())
            cols.append((rp - rm) / (2.0 * step))
        out[key] = np.column_stack(cols)
    return out


def jacobian_rel_error(factor, values: dict) -> float:
    """Max relative deviation of analytic jacobians from finite differences."""
    analytic = factor.jacobians(values)
    numeric = fd_jacobians(factor, values)
    worst = 0.0
    for key, ja in analytic.items():
        ja = np.asarray(ja, dtype=float)
        scale = max(1.0, float(np.max(np.abs(ja))))
        worst = max(worst, float(np.max(np.abs(ja - numeric[key]))) / scale)
    return worst
