"""Deterministic trajectory and sensor simulator.

Generates a waypoint-following ground-truth path at a constant speed with a
bounded turn rate, then corrupts it into noisy absolute-pose measurements
(with an outlier mixture) and noisy high-rate odometry increments. All
randomness comes from one counter-based generator (numpy Philox keyed by the
seed), so a config reproduces its output bit for bit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .dataset import TrajectoryRecord, compute_errors
from .errors import ValidationError
from .geometry import Pose2, Twist2, normalize_angle
from .noise import DiagonalNoise, MEASUREMENT_DEFAULT, ODOMETRY_DEFAULT
from .odometry import OdometrySample

FRAME_RATE_HZ = 10.0

# Max heading change per frame. With the margins below this keeps the
# turning circle inside the extent for any waypoint sequence.
TURN_RATE = 0.12


@dataclass(frozen=True)
class SimConfig:
    seed: int
    n_frames: int = 1000
    odom_rate_multiplier: int = 5
    extent: tuple[float, float] = (300.0, 150.0)
    mean_speed: float = 1.0
    measurement_noise: DiagonalNoise = MEASUREMENT_DEFAULT
    odometry_step_noise: DiagonalNoise = ODOMETRY_DEFAULT
    outlier_rate: float = 0.05
    outlier_sigma_scale: float = 4.0
    bad_prior_offset: Pose2 | None = None

    def __post_init__(self):
        if not isinstance(self.seed, int) or not 0 <= self.seed < 2**64:
            raise ValidationError(f"seed must be a 64-bit unsigned integer, got {self.seed!r}")
        if not isinstance(self.n_frames, int) or self.n_frames < 2:
            raise ValidationError(f"n_frames must be an integer >= 2, got {self.n_frames!r}")
        if not isinstance(self.odom_rate_multiplier, int) or self.odom_rate_multiplier < 1:
            raise ValidationError(
                f"odom_rate_multiplier must be an integer >= 1, got {self.odom_rate_multiplier!r}"
            )
        w, h = self.extent
        if not (math.isfinite(w) and math.isfinite(h) and w > 0 and h > 0):
            raise ValidationError(f"extent must be positive, got {self.extent!r}")
        if not (math.isfinite(self.mean_speed) and self.mean_speed > 0):
            raise ValidationError(f"mean_speed must be positive, got {self.mean_speed!r}")
        if not (0.0 <= self.outlier_rate < 1.0):
            raise ValidationError(f"outlier_rate must be in [0, 1), got {self.outlier_rate!r}")
        if not self.outlier_sigma_scale > 1.0:
            raise ValidationError(
                f"outlier_sigma_scale must be > 1, got {self.outlier_sigma_scale!r}"
            )
        if 2.0 * _waypoint_margin(self.mean_speed) >= min(w, h):
            raise ValidationError(
                f"extent {self.extent!r} is too small for mean_speed {self.mean_speed}"
            )


@dataclass(frozen=True)
class SimOutput:
    ground_truth: TrajectoryRecord
    odometry: tuple[OdometrySample, ...]
    measurements: TrajectoryRecord
    prior: Pose2


def _waypoint_margin(speed: float) -> float:
    # keeps waypoints far enough inside that a worst-case turn-around
    # (capture, then a full U-turn) cannot leave the extent
    return 3.6 * (speed / TURN_RATE) + 2.0 * speed


def _ground_truth_path(cfg: SimConfig, rng: np.random.Generator) -> list[Pose2]:
    w, h = cfg.extent
    margin = _waypoint_margin(cfg.mean_speed)
    lo = (-0.5 * w + margin, -0.5 * h + margin)
    hi = (0.5 * w - margin, 0.5 * h - margin)
    capture = 1.6 * cfg.mean_speed / TURN_RATE
    x, y, theta = 0.0, 0.0, 0.0
    wx, wy = rng.uniform(low=lo, high=hi)
    poses = [Pose2(x, y, theta)]
    for _ in range(1, cfg.n_frames):
        if math.hypot(wx - x, wy - y) < capture:
            wx, wy = rng.uniform(low=lo, high=hi)
        heading_err = normalize_angle(math.atan2(wy - y, wx - x) - theta)
        theta = normalize_angle(theta + min(TURN_RATE, max(-TURN_RATE, heading_err)))
        x += cfg.mean_speed * math.cos(theta)
        y += cfg.mean_speed * math.sin(theta)
        poses.append(Pose2(x, y, theta))
    return poses


def generate(cfg: SimConfig) -> SimOutput:
    rng = np.random.Generator(np.random.Philox(key=cfg.seed))
    n = cfg.n_frames
    m = cfg.odom_rate_multiplier
    poses = _ground_truth_path(cfg, rng)
    frame_ts = [k / FRAME_RATE_HZ for k in range(n)]

    meas_sig = np.array(cfg.measurement_noise.sigmas())
    noise = rng.normal(size=(n, 3)) * meas_sig
    outlier = rng.random(n) < cfg.outlier_rate
    noise[outlier] *= cfg.outlier_sigma_scale
    measurements = TrajectoryRecord(
        tuple(
            (
                frame_ts[k],
                Pose2(
                    poses[k].x + noise[k, 0],
                    poses[k].y + noise[k, 1],
                    normalize_angle(poses[k].theta + noise[k, 2]),
                ),
            )
            for k in range(n)
        )
    )

    step_sig = np.array(cfg.odometry_step_noise.sigmas()) / math.sqrt(m)
    odo_noise = rng.normal(size=((n - 1) * m, 3)) * step_sig
    samples = []
    for k in range(1, n):
        frame_delta = poses[k - 1].between(poses[k])
        v = frame_delta.log()
        sub = Pose2.exp(Twist2(v.vx / m, v.vy / m, v.omega / m))
        for j in range(1, m + 1):
            dx, dy, dth = odo_noise[(k - 1) * m + j - 1]
            samples.append(
                OdometrySample(
                    timestamp=(k - 1 + j / m) / FRAME_RATE_HZ,
                    delta=Pose2(sub.x + dx, sub.y + dy, normalize_angle(sub.theta + dth)),
                )
            )

    prior = poses[0]
    if cfg.bad_prior_offset is not None:
        prior = poses[0].compose(cfg.bad_prior_offset)
    return SimOutput(
        ground_truth=TrajectoryRecord(tuple(zip(frame_ts, poses))),
        odometry=tuple(samples),
        measurements=measurements,
        prior=prior,
    )


def raw_measurement_rmse(out: SimOutput) -> tuple[float, float]:
    """RMSE of the raw measurements against ground truth (meters, degrees)."""
    report = compute_errors(out.measurements, out.ground_truth)
    return (report.rmse_translation, report.rmse_rotation)
